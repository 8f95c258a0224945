//! Brute-force reference solvers.
//!
//! These search over uptime on a grid and solve the remaining problem
//! directly, without using any of the structure the main solvers rely on.
//! They are slow and only accurate to the grid, but they share no code
//! with the solvers they check.

use rayon::prelude::*;

use crate::error::{check_rate, Error, Result};
use crate::model::TypeDistribution;

mod simplex;

pub use simplex::{LinearProgram, LpOutcome, Relation};

/// Largest type count accepted by the LP oracle.
pub const LP_MAX_TYPES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    /// Points in each pass over the current uptime window.
    pub q_points: usize,
    /// Zoom-in passes after the initial one.
    pub refine_rounds: usize,
    /// Feasibility tolerance handed to the LP.
    pub lp_tol: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { q_points: 2001, refine_rounds: 3, lp_tol: 1e-9 }
    }
}

impl GridSpec {
    pub fn new(q_points: usize, refine_rounds: usize, lp_tol: f64) -> Result<Self> {
        if q_points < 3 {
            return Err(Error::InvalidInput(format!("q_points must be at least 3, got {q_points}")));
        }
        if !(lp_tol > 0.0 && lp_tol.is_finite()) {
            return Err(Error::InvalidTolerance(lp_tol));
        }
        Ok(GridSpec { q_points, refine_rounds, lp_tol })
    }

    /// 101 points, for the slower LP oracle.
    pub fn coarse() -> Self {
        GridSpec { q_points: 101, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrimalMode {
    FirstBest,
    Participation,
}

/// Best grid point found by an oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct GridOptimum {
    pub welfare: f64,
    pub uptime: f64,
    pub usage: Vec<f64>,
    pub contribution: Vec<f64>,
}

/// Maximizes a function of `Q ∈ [0, 1]` by repeated grid passes, each
/// zooming in on two cells either side of the best point. Returns the
/// best `(Q, value, payload)`; ties go to the lowest `Q`.
fn zoom_max<T, F>(f: F, grid: GridSpec) -> Option<(f64, f64, T)>
where
    T: Send,
    F: Fn(f64) -> Option<(f64, T)> + Sync,
{
    let cells = grid.q_points.max(3) - 1;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut best: Option<(f64, f64, T)> = None;
    for _ in 0..=grid.refine_rounds {
        let h = (hi - lo) / cells as f64;
        let vals: Vec<Option<(f64, T)>> = (0..=cells).into_par_iter().map(|k| f(lo + h * k as f64)).collect();
        let mut pass: Option<(f64, f64, T)> = None;
        for (k, (v, x)) in vals.into_iter().enumerate().filter_map(|(k, v)| v.map(|v| (k, v))) {
            if pass.as_ref().is_none_or(|p| v > p.1) {
                pass = Some((lo + h * k as f64, v, x));
            }
        }
        let Some(p) = pass else { break };
        let centre = p.0;
        if best.as_ref().is_none_or(|b| p.1 > b.1 || (p.1 == b.1 && p.0 < b.0)) {
            best = Some(p);
        }
        lo = (centre - 2.0 * h).max(0.0);
        hi = (centre + 2.0 * h).min(1.0);
    }
    best
}

/// Cheapest way to raise `ρ·q` in contributions when each type may give
/// at most its cap: fill from the lowest cost upwards. Returns welfare and
/// per-type contribution levels, or `None` if the caps fall short.
pub fn greedy_fill(q: f64, d: &TypeDistribution, rho: f64, mode: PrimalMode) -> Option<(f64, Vec<f64>)> {
    let mut need = rho * q;
    let mut order: Vec<usize> = (0..d.len()).filter(|&i| d.types()[i].mass > 0.0).collect();
    order.sort_by(|&a, &b| d.types()[a].c.total_cmp(&d.types()[b].c));
    let mut cost = 0.0;
    let mut p = vec![0.0; d.len()];
    for i in order {
        if need <= 0.0 {
            break;
        }
        let t = &d.types()[i];
        let cap = match mode {
            PrimalMode::FirstBest => 1.0 - q,
            PrimalMode::Participation => (1.0 - q).min(q * t.u / t.c),
        };
        let take = (t.mass * cap).min(need);
        p[i] = take / t.mass;
        cost += take * t.c;
        need -= take;
    }
    if need > 1e-12 * (1.0 + rho) {
        return None;
    }
    Some((q * d.aggregate_usage() - cost, p))
}

/// Optimal welfare under the physical constraints (and participation, in
/// that mode) by grid search over uptime.
pub fn primal_grid_welfare(d: &TypeDistribution, rho: f64, mode: PrimalMode, grid: GridSpec) -> Result<GridOptimum> {
    check_rate(rho)?;
    let (uptime, welfare, contribution) =
        zoom_max(|q| greedy_fill(q, d, rho, mode), grid).expect("Q = 0 is always feasible");
    Ok(GridOptimum { welfare, uptime, usage: vec![uptime; d.len()], contribution })
}

/// Full screening LP at uptime `q` over `(R_i, P_i)` with every pairwise
/// incentive constraint.
fn screening_lp(q: f64, d: &TypeDistribution, rho: f64, tol: f64) -> Option<(f64, Vec<f64>)> {
    let ts = d.types();
    let n = ts.len();
    let mut lp = LinearProgram::new(2 * n).with_tolerance(tol);
    let mut objective = vec![0.0; 2 * n];
    for (i, t) in ts.iter().enumerate() {
        objective[i] = t.mass * t.u;
        objective[n + i] = -t.mass * t.c;
    }
    lp.maximize(objective);
    let mut bal = vec![0.0; 2 * n];
    for (i, t) in ts.iter().enumerate() {
        bal[n + i] = t.mass;
    }
    lp.constrain(bal, Relation::Eq, rho * q);
    for (i, t) in ts.iter().enumerate() {
        let mut row = vec![0.0; 2 * n];
        row[i] = 1.0;
        lp.constrain(row, Relation::Le, q);
        let mut row = vec![0.0; 2 * n];
        row[n + i] = 1.0;
        lp.constrain(row, Relation::Le, 1.0 - q);
        let mut row = vec![0.0; 2 * n];
        row[i] = t.u;
        row[n + i] = -t.c;
        lp.constrain(row, Relation::Ge, 0.0);
        for j in 0..n {
            if i != j {
                let mut row = vec![0.0; 2 * n];
                row[i] = t.u;
                row[n + i] = -t.c;
                row[j] -= t.u;
                row[n + j] += t.c;
                lp.constrain(row, Relation::Ge, 0.0);
            }
        }
    }
    match lp.solve() {
        LpOutcome::Optimal { value, x } => Some((value, x)),
        _ => None,
    }
}

/// Optimal screening welfare by grid search over uptime, solving the full
/// incentive-compatible LP at every grid point.
pub fn lp_screening_welfare(d: &TypeDistribution, rho: f64, grid: GridSpec) -> Result<GridOptimum> {
    check_rate(rho)?;
    if d.len() > LP_MAX_TYPES {
        return Err(Error::TooManyTypes { got: d.len(), max: LP_MAX_TYPES });
    }
    let (uptime, welfare, x) =
        zoom_max(|q| screening_lp(q, d, rho, grid.lp_tol), grid).expect("Q = 0 is always feasible");
    let n = d.len();
    Ok(GridOptimum { welfare, uptime, usage: x[..n].to_vec(), contribution: x[n..].to_vec() })
}

/// Exact optimum of the bounded-payment monopoly problem as an LP over
/// per-buyer `(r_i, p_i)` with all IC and IR constraints and `p_i ≤ 1`.
/// Each buyer is `(valuation, surplus_weight, payment_weight)`.
pub fn monopoly_lp_value(buyers: &[(f64, f64, f64)]) -> Result<f64> {
    let n = buyers.len();
    if n > 4 * LP_MAX_TYPES {
        return Err(Error::TooManyTypes { got: n, max: 4 * LP_MAX_TYPES });
    }
    let mut lp = LinearProgram::new(2 * n);
    let mut objective = vec![0.0; 2 * n];
    for (i, &(v, sw, pw)) in buyers.iter().enumerate() {
        objective[i] = sw * v;
        objective[n + i] = pw - sw;
    }
    lp.maximize(objective);
    for (i, &(v, _, _)) in buyers.iter().enumerate() {
        let mut row = vec![0.0; 2 * n];
        row[i] = 1.0;
        lp.constrain(row, Relation::Le, 1.0);
        let mut row = vec![0.0; 2 * n];
        row[n + i] = 1.0;
        lp.constrain(row, Relation::Le, 1.0);
        let mut row = vec![0.0; 2 * n];
        row[i] = v;
        row[n + i] = -1.0;
        lp.constrain(row, Relation::Ge, 0.0);
        for j in 0..n {
            if i != j {
                let mut row = vec![0.0; 2 * n];
                row[i] = v;
                row[n + i] = -1.0;
                row[j] -= v;
                row[n + j] += 1.0;
                lp.constrain(row, Relation::Ge, 0.0);
            }
        }
    }
    match lp.solve() {
        LpOutcome::Optimal { value, .. } => Ok(value),
        other => Err(Error::Degenerate(format!("monopoly LP did not solve: {other:?}"))),
    }
}

/// Value of a menu when buyers self-select, indifference going to the
/// option the seller likes best.
fn menu_value(menu: &[(f64, f64)], buyers: &[(f64, f64, f64)]) -> f64 {
    buyers
        .iter()
        .map(|&(v, sw, pw)| {
            let mut best_u = 0.0;
            let mut best_s = 0.0;
            for &(r, p) in menu {
                let u = r * v - p;
                let s = sw * u + pw * p;
                if u > best_u + 1e-12 {
                    best_u = u;
                    best_s = s;
                } else if u >= best_u - 1e-12 && s > best_s {
                    best_s = s;
                }
            }
            best_s
        })
        .sum()
}

/// Grid search over posted prices, single lotteries at the payment cap,
/// and two-item menus whose top item is `(1, 1)`, with the payment cap
/// normalized to 1. Every menu is evaluated by letting buyers pick their
/// favourite item, so IC and IR hold by construction.
pub fn menu_grid_oracle(buyers: &[(f64, f64, f64)], resolution: f64) -> Result<f64> {
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(Error::InvalidInput(format!("resolution must be positive, got {resolution}")));
    }
    let cells = (1.0 / resolution).ceil() as usize;
    let h = 1.0 / cells as f64;
    let steps: Vec<f64> = (0..=cells).map(|k| k as f64 * h).collect();
    let mut best = menu_value(&[], buyers);
    for &x in &steps {
        best = best.max(menu_value(&[(1.0, x)], buyers));
        best = best.max(menu_value(&[(x, 1.0)], buyers));
    }
    let two = steps
        .par_iter()
        .map(|&r0| {
            steps
                .iter()
                .filter(|&&p0| p0 <= r0)
                .map(|&p0| menu_value(&[(r0, p0), (1.0, 1.0)], buyers))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .reduce(|| f64::NEG_INFINITY, f64::max);
    Ok(best.max(two))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::*;

    #[test]
    fn primal_oracle_examples() {
        let fb = primal_grid_welfare(&example_one(), 5.5, PrimalMode::FirstBest, GridSpec::default()).unwrap();
        assert!((fb.welfare - 2.15).abs() < 1e-4, "{fb:?}");
        assert!((fb.uptime - 4.0 / 15.0).abs() < 1e-4);
        let part = primal_grid_welfare(&example_one(), 5.5, PrimalMode::Participation, GridSpec::default()).unwrap();
        assert!((part.welfare - 13.75 / 7.0).abs() < 1e-4, "{part:?}");
        assert!((part.uptime - 2.0 / 7.0).abs() < 1e-4);
    }

    #[test]
    fn lp_oracle_example_two() {
        let w = lp_screening_welfare(&example_two(), 1.0, GridSpec::coarse()).unwrap();
        assert!((w.welfare - 0.8 / 3.0).abs() < 1e-4, "{w:?}");
        assert!((w.uptime - 0.3).abs() < 1e-3);
    }

    #[test]
    fn lp_oracle_rejects_large_inputs() {
        let d = TypeDistribution::from_tuples((0..9).map(|i| (format!("t{i}"), 1.0, 1.0, 1.0))).unwrap();
        assert!(matches!(lp_screening_welfare(&d, 1.0, GridSpec::coarse()), Err(Error::TooManyTypes { .. })));
    }

    #[test]
    fn monopoly_oracles_agree_on_posted_price() {
        let buyers = [(0.5, 0.0, 1.0)];
        assert!((monopoly_lp_value(&buyers).unwrap() - 0.5).abs() < 1e-12);
        assert!((menu_grid_oracle(&buyers, 0.01).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn menu_grid_edge_cases() {
        assert_eq!(menu_grid_oracle(&[], 0.01).unwrap(), 0.0);
        let v = menu_grid_oracle(&[(0.7, 2.0, 0.0)], 0.01).unwrap();
        assert!((v - 2.0 * 0.7).abs() < 1e-12);
        assert!(menu_grid_oracle(&[(0.7, 2.0, 0.0)], 0.0).is_err());
    }

    #[test]
    fn participation_oracle_shuts_down_at_high_rate() {
        let d = example_one();
        let cap: f64 = d.types().iter().map(|t| t.mass * t.valuation()).sum();
        let g = primal_grid_welfare(&d, cap * 1.5, PrimalMode::Participation, GridSpec::coarse()).unwrap();
        assert_eq!(g.welfare, 0.0);
        assert_eq!(g.uptime, 0.0);
    }

    #[test]
    fn grid_spec_validation() {
        assert!(GridSpec::new(2, 3, 1e-9).is_err());
        assert!(GridSpec::new(3, 0, 0.0).is_err());
        assert!(GridSpec::new(3, 0, 1e-9).is_ok());
    }

    #[test]
    fn greedy_fill_matches_lp() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let rows: Vec<_> = (0..4)
                .map(|i| (format!("t{i}"), rng.random_range(0.1..10.0), rng.random_range(0.1..10.0), rng.random_range(0.1..1.0)))
                .collect();
            let d = TypeDistribution::from_tuples(rows).unwrap();
            let rho = rng.random_range(0.1..10.0);
            let q: f64 = rng.random_range(0.0..1.0);
            for mode in [PrimalMode::FirstBest, PrimalMode::Participation] {
                let mut lp = LinearProgram::new(4);
                lp.maximize(d.types().iter().map(|t| -t.mass * t.c).collect());
                lp.constrain(d.types().iter().map(|t| t.mass).collect(), Relation::Eq, rho * q);
                for (i, t) in d.types().iter().enumerate() {
                    let mut row = vec![0.0; 4];
                    row[i] = 1.0;
                    let cap = if mode == PrimalMode::FirstBest { 1.0 - q } else { (1.0 - q).min(q * t.valuation()) };
                    lp.constrain(row, Relation::Le, cap);
                }
                let greedy = greedy_fill(q, &d, rho, mode);
                match lp.solve() {
                    LpOutcome::Optimal { value, .. } => {
                        let (w, _) = greedy.expect("greedy infeasible where LP is feasible");
                        let lp_w = q * d.aggregate_usage() + value;
                        assert!((w - lp_w).abs() < 1e-8 * (1.0 + lp_w.abs()), "{w} vs {lp_w}");
                    }
                    _ => assert!(greedy.is_none()),
                }
            }
        }
    }

    #[test]
    fn grid_converges() {
        let d = example_one();
        let w = |n: usize| {
            primal_grid_welfare(&d, 5.5, PrimalMode::Participation, GridSpec::new(n, 0, 1e-9).unwrap()).unwrap().welfare
        };
        let (a, b, c) = (w(11), w(21), w(41));
        assert!((c - b).abs() <= 4.0 * (b - a).abs() + 1e-12);
    }
}
