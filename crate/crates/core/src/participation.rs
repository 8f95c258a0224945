//! Welfare maximization subject to voluntary participation.
//!
//! With participation constraints every type still enjoys full access, and
//! contributes `min(1 − Q, Q·ν)` when its cost is below the multiplier `y`.
//! The optimum is the saddle point of the reduced Lagrangian
//! `ℓ(Q; y) = Q·(ū − ρ·y) + Σ mass·min(1 − Q, Q·ν)·(y − c)⁺`,
//! concave in `Q` and convex in `y`.

use std::fmt;

use crate::error::{check_rate, check_tol, Error, Result};
use crate::first_best::{on_atom, solve_first_best};
use crate::model::{agent_utility, welfare, Mechanism, Multiplier, TypeDistribution};
use crate::scalar::unit_partition;

/// Relative tolerance for treating Lagrangian values as tied.
const TIE_REL: f64 = 1e-12;
const MAX_DOUBLINGS: usize = 200;
const MAX_BISECTIONS: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Class {
    /// Contributes `1 − Q` whenever the machine is down.
    Full,
    /// Contribution pinned by participation: `P = Q·ν`, zero utility.
    Bound,
    /// Does not contribute.
    None,
    /// Cost sits exactly at the multiplier; contribution is rationed.
    Marginal,
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Class::Full => "FULL",
            Class::Bound => "BOUND",
            Class::None => "NONE",
            Class::Marginal => "MARGINAL",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticipationSolution {
    pub y_star: Multiplier,
    pub q_star: f64,
    pub w_star: f64,
    pub mechanism: Mechanism,
    pub classes: Vec<Class>,
    /// Fraction of the saturated contribution assigned to types whose cost
    /// equals `y_star`.
    pub marginal_fraction: f64,
    pub iterations: usize,
}

pub fn reduced_lagrangian(q: f64, y: f64, d: &TypeDistribution, rho: f64) -> f64 {
    let inner: f64 = d
        .types()
        .iter()
        .map(|t| t.mass * saturated(q, t.valuation()) * (y - t.c).max(0.0))
        .sum();
    q * (d.aggregate_usage() - rho * y) + inner
}

/// Largest contribution compatible with the simplex and participation
/// constraints at uptime `q`.
#[inline]
pub(crate) fn saturated(q: f64, nu: f64) -> f64 {
    (1.0 - q).min(q * nu)
}

fn kink_partition(d: &TypeDistribution) -> Vec<f64> {
    unit_partition(d.types().iter().filter(|t| t.mass > 0.0).map(|t| 1.0 / (1.0 + t.valuation())))
}

fn lagrangian_scale(y: f64, d: &TypeDistribution, rho: f64) -> f64 {
    1.0 + d.aggregate_usage() + rho * y + d.types().iter().map(|t| t.mass * (y - t.c).abs()).sum::<f64>()
}

/// Smallest and largest maximizers of `ℓ(·; y)` on `[0, 1]`, with the
/// maximal value. The argmax of a concave function is an interval, and for
/// discrete types its ends lie on the kink partition.
fn argmax_interval(y: f64, d: &TypeDistribution, rho: f64, pts: &[f64]) -> (f64, f64, f64) {
    let tie = TIE_REL * lagrangian_scale(y, d, rho);
    let vals: Vec<f64> = pts.iter().map(|&q| reduced_lagrangian(q, y, d, rho)).collect();
    let best = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let first = vals.iter().position(|&v| v >= best - tie).unwrap_or(0);
    let last = vals.iter().rposition(|&v| v >= best - tie).unwrap_or(0);
    (pts[first], pts[last], best)
}

/// Maximizes `ℓ(·; y)` over `[0, 1]`, returning the smallest maximizer and
/// the maximal value.
pub fn inner_max_q(y: f64, d: &TypeDistribution, rho: f64, tol: f64) -> (f64, f64) {
    let _ = tol;
    let (qa, _, best) = argmax_interval(y, d, rho, &kink_partition(d));
    (qa, best)
}

/// `g(Q) = Σ mass·min(1 − Q, Q·ν) − ρ·Q` over types with `c < y` (or all
/// types when `y` is `None`); `inclusive` also counts types with `c = y`.
fn balance_slack(q: f64, y: Option<f64>, inclusive: bool, d: &TypeDistribution, rho: f64) -> f64 {
    let supply: f64 = d
        .types()
        .iter()
        .filter(|t| match y {
            None => true,
            Some(y) => t.c < y && !on_atom(t.c, y) || inclusive && on_atom(t.c, y),
        })
        .map(|t| t.mass * saturated(q, t.valuation()))
        .sum();
    supply - rho * q
}

/// Maximum over `Q` of `Σ mass·min(1 − Q, Q·ν) − ρ·Q`. A positive value
/// means some mechanism has strictly slack balance, so the dual optimum is
/// attained at a finite multiplier.
pub fn slater_gap(d: &TypeDistribution, rho: f64, tol: f64) -> f64 {
    let _ = tol;
    kink_partition(d)
        .iter()
        .map(|&q| balance_slack(q, None, true, d, rho))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Right derivative of the dual function `φ(y) = max_Q ℓ(Q; y)`.
fn dual_right_slope(y: f64, d: &TypeDistribution, rho: f64, pts: &[f64]) -> f64 {
    let tie = TIE_REL * lagrangian_scale(y, d, rho);
    let vals: Vec<f64> = pts.iter().map(|&q| reduced_lagrangian(q, y, d, rho)).collect();
    let best = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    pts.iter()
        .zip(&vals)
        .filter(|(_, &v)| v >= best - tie)
        .map(|(&q, _)| {
            let supply: f64 = d
                .types()
                .iter()
                .filter(|t| t.c <= y)
                .map(|t| t.mass * saturated(q, t.valuation()))
                .sum();
            supply - rho * q
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `φ` is convex and piecewise linear, so away from cost atoms its
/// minimizer is where the steepest falling and steepest rising pieces
/// active near `y` cross. Returns that crossing when it stays between the
/// neighbouring costs, else `y` unchanged.
fn exact_kink(y: f64, d: &TypeDistribution, rho: f64, pts: &[f64]) -> f64 {
    let tie = TIE_REL * lagrangian_scale(y, d, rho);
    let vals: Vec<f64> = pts.iter().map(|&q| reduced_lagrangian(q, y, d, rho)).collect();
    let best = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let below = |t: &&crate::model::AgentType| t.c < y;
    let line = |q: f64| {
        let slope: f64 = d.types().iter().filter(below).map(|t| t.mass * saturated(q, t.valuation())).sum::<f64>() - rho * q;
        let icpt: f64 =
            q * d.aggregate_usage() - d.types().iter().filter(below).map(|t| t.mass * saturated(q, t.valuation()) * t.c).sum::<f64>();
        (slope, icpt)
    };
    let lines: Vec<(f64, f64)> = pts.iter().zip(&vals).filter(|(_, &v)| v >= best - tie).map(|(&q, _)| line(q)).collect();
    let fall = lines.iter().copied().min_by(|a, b| a.0.total_cmp(&b.0));
    let rise = lines.iter().copied().max_by(|a, b| a.0.total_cmp(&b.0));
    let (Some((bf, af)), Some((br, ar))) = (fall, rise) else { return y };
    if !(bf < 0.0 && br > 0.0) {
        return y;
    }
    let cross = (af - ar) / (br - bf);
    let left = d.types().iter().map(|t| t.c).filter(|&c| c < y).fold(0.0, f64::max);
    let right = d.types().iter().map(|t| t.c).filter(|&c| c > y).fold(f64::INFINITY, f64::min);
    if cross >= left && cross <= right && (cross - y).abs() <= 1e-6 * y.max(1.0) {
        cross
    } else {
        y
    }
}

/// Feasible sub-interval of `[a, b]` where a linear function with end
/// values `ha`, `hb` is `<= 0`. Values within `eta` of zero count as zero.
fn nonpositive_part(a: f64, b: f64, ha: f64, hb: f64, eta: f64) -> Option<(f64, f64)> {
    let clean = |h: f64| if h.abs() <= eta { 0.0 } else { h };
    let (ha, hb) = (clean(ha), clean(hb));
    let root = || a + ha / (ha - hb) * (b - a);
    match (ha <= 0.0, hb <= 0.0) {
        (true, true) => Some((a, b)),
        (true, false) => Some((a, root())),
        (false, true) => Some((root(), b)),
        (false, false) => None,
    }
}

/// Smallest `Q` in `[qa, qb]` at which some rationing of the atom at `y`
/// makes balance hold exactly, with the rationing fraction.
fn recover_uptime(y: f64, qa: f64, qb: f64, d: &TypeDistribution, rho: f64, pts: &[f64]) -> (f64, f64) {
    let mut seg: Vec<f64> = pts.iter().copied().filter(|&q| q > qa && q < qb).collect();
    seg.insert(0, qa);
    if qb > qa {
        seg.push(qb);
    }
    let eta = TIE_REL * (1.0 + rho + d.total_mass());
    let lower = |q: f64| balance_slack(q, Some(y), false, d, rho);
    let upper = |q: f64| balance_slack(q, Some(y), true, d, rho);

    let mut found = None;
    if seg.len() == 1 {
        let q = seg[0];
        if lower(q) <= eta && upper(q) >= -eta {
            found = Some(q);
        }
    }
    for w in seg.windows(2) {
        let (a, b) = (w[0], w[1]);
        let lo = nonpositive_part(a, b, lower(a), lower(b), eta);
        let hi = nonpositive_part(a, b, -upper(a), -upper(b), eta);
        if let (Some(l), Some(h)) = (lo, hi) {
            let start = l.0.max(h.0);
            if start <= l.1.min(h.1) + eta {
                found = Some(start);
                break;
            }
        }
    }
    let q = found.unwrap_or_else(|| {
        seg.iter()
            .copied()
            .min_by(|&x, &y2| lower(x).abs().min(upper(x).abs()).total_cmp(&lower(y2).abs().min(upper(y2).abs())))
            .unwrap_or(qa)
    });
    let (l, u) = (lower(q), upper(q));
    let atom = u - l;
    let fraction = if atom > eta { (-l / atom).clamp(0.0, 1.0) } else { 0.0 };
    (q, fraction)
}

fn classify(m: &Mechanism, d: &TypeDistribution, y: Multiplier, tol: f64) -> Vec<Class> {
    d.types()
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let (r, p) = m.bundle(i);
            if p <= tol {
                Class::None
            } else if agent_utility(t, r, p).abs() <= tol {
                Class::Bound
            } else if (p - (1.0 - m.uptime)).abs() <= tol {
                Class::Full
            } else if y.is_finite() && on_atom(t.c, y.value()) {
                Class::Marginal
            } else {
                Class::Full
            }
        })
        .collect()
}

fn build_mechanism(q: f64, d: &TypeDistribution, include: impl Fn(f64) -> f64) -> Mechanism {
    let contribution = d.types().iter().map(|t| saturated(q, t.valuation()) * include(t.c)).collect();
    Mechanism::new(q, vec![q; d.len()], contribution)
}

pub fn solve_participation(d: &TypeDistribution, rho: f64, tol: f64) -> Result<ParticipationSolution> {
    check_rate(rho)?;
    check_tol(tol)?;
    let pts = kink_partition(d);

    if slater_gap(d, rho, tol) <= tol {
        // Balance can only hold with every type saturated; among the zeros
        // of g pick the best, ties going to the smallest uptime.
        let scale = 1.0 + rho + d.total_mass();
        let mut best: Option<(f64, Mechanism, f64)> = None;
        for &q in &pts {
            if balance_slack(q, None, true, d, rho).abs() > TIE_REL * scale && q != 0.0 {
                continue;
            }
            let m = build_mechanism(q, d, |_| 1.0);
            let w = welfare(&m, d);
            if best.as_ref().is_none_or(|b| w > b.2 + tol) {
                best = Some((q, m, w));
            }
        }
        let (q, mechanism, w) = best.expect("zero uptime is always balanced");
        let classes = classify(&mechanism, d, Multiplier::Infinite, tol);
        return Ok(ParticipationSolution {
            y_star: Multiplier::Infinite,
            q_star: q,
            w_star: w,
            mechanism,
            classes,
            marginal_fraction: 0.0,
            iterations: 0,
        });
    }

    let mut hi = (d.aggregate_usage() + d.aggregate_cost()) / rho + d.max_cost() + 1.0;
    let mut doublings = 0;
    while dual_right_slope(hi, d, rho, &pts) < 0.0 {
        hi *= 2.0;
        doublings += 1;
        if doublings > MAX_DOUBLINGS {
            return Err(Error::Degenerate("dual multiplier diverges despite slack balance".into()));
        }
    }
    let mut lo = 0.0;
    let slope_eps = TIE_REL * (1.0 + rho + d.total_mass());
    let mut iterations = 0;
    while iterations < MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if dual_right_slope(mid, d, rho, &pts) >= -slope_eps {
            hi = mid;
        } else {
            lo = mid;
        }
        iterations += 1;
    }
    let mut y = hi;
    if let Some(c) = d.types().iter().map(|t| t.c).find(|&c| (c - y).abs() <= 1e-11 * y.max(1.0)) {
        y = c;
    } else {
        y = exact_kink(y, d, rho, &pts);
    }

    let (qa, qb, _) = argmax_interval(y, d, rho, &pts);
    let (q, fraction) = recover_uptime(y, qa, qb, d, rho, &pts);
    let mechanism = build_mechanism(q, d, |c| {
        if on_atom(c, y) {
            fraction
        } else if c < y {
            1.0
        } else {
            0.0
        }
    });
    let w = welfare(&mechanism, d);
    let y_star = Multiplier::Finite(y);
    let classes = classify(&mechanism, d, y_star, tol);
    Ok(ParticipationSolution { y_star, q_star: q, w_star: w, mechanism, classes, marginal_fraction: fraction, iterations })
}

/// Structure of the participation optimum when types are ordered so that
/// cheaper contributors also value access more relative to cost.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderedReport {
    /// Type indices sorted by decreasing cost.
    pub order: Vec<usize>,
    /// Positions in `order` spanned by the BOUND types, if any.
    pub bound_span: Option<(usize, usize)>,
    pub contiguous: bool,
    /// Whether the first-best threshold lies within the BOUND cost range.
    pub contains_first_best: bool,
    pub first_best_attained: bool,
    pub y_fb: f64,
}

impl OrderedReport {
    /// The interval property is only claimed when the first-best is out of
    /// reach.
    pub fn passes(&self) -> bool {
        self.first_best_attained || self.contiguous && self.contains_first_best
    }
}

pub fn classify_interval(sol: &ParticipationSolution, d: &TypeDistribution, rho: f64, tol: f64) -> Result<OrderedReport> {
    let ts = d.types();
    let mut order: Vec<usize> = (0..ts.len()).collect();
    order.sort_by(|&a, &b| ts[b].c.total_cmp(&ts[a].c).then(ts[a].valuation().total_cmp(&ts[b].valuation())));
    if let Some(w) = order.windows(2).find(|w| ts[w[1]].valuation() < ts[w[0]].valuation()) {
        return Err(Error::NotOrdered(format!(
            "type '{}' is cheaper than '{}' but has a lower valuation",
            ts[w[1]].id, ts[w[0]].id
        )));
    }
    let fb = solve_first_best(d, rho, tol)?;
    let positions: Vec<usize> = order
        .iter()
        .enumerate()
        .filter(|(_, &i)| sol.classes[i] == Class::Bound)
        .map(|(k, _)| k)
        .collect();
    let bound_span = positions.first().map(|&a| (a, *positions.last().unwrap()));
    let contiguous = bound_span.is_none_or(|(a, b)| b + 1 - a == positions.len());
    let contains_first_best = bound_span.is_some_and(|(a, b)| {
        let (c_hi, c_lo) = (ts[order[a]].c, ts[order[b]].c);
        c_lo <= fb.y_fb + tol && fb.y_fb <= c_hi + tol
    });
    Ok(OrderedReport {
        order,
        bound_span,
        contiguous,
        contains_first_best,
        first_best_attained: sol.w_star >= fb.w_fb - tol,
        y_fb: fb.y_fb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::*;
    use crate::model::{check_feasible, ConstraintFamily, DEFAULT_TOL};
    use proptest::prelude::*;

    const EPS: f64 = 1e-10;
    const NON_IC: [ConstraintFamily; 3] = [ConstraintFamily::Balance, ConstraintFamily::Simplex, ConstraintFamily::Participation];

    #[test]
    fn lagrangian_examples() {
        let d = example_one();
        assert!((reduced_lagrangian(2.0 / 7.0, 45.0 / 14.0, &d, 5.5) - 13.75 / 7.0).abs() < EPS);
        assert_eq!(reduced_lagrangian(0.0, 3.0, &d, 5.5), 0.0);
        assert!((reduced_lagrangian(1.0, 3.0, &d, 5.5) - (17.0 - 16.5)).abs() < EPS);
    }

    #[test]
    fn inner_max_examples() {
        let d = example_one();
        // Flat on [1/9, 1/3] at the saddle multiplier.
        let y = 45.0 / 14.0;
        let (q, v) = inner_max_q(y, &d, 5.5, DEFAULT_TOL);
        assert!((q - 1.0 / 9.0).abs() < EPS);
        assert!((v - 13.75 / 7.0).abs() < EPS);
        let (qa, qb, _) = argmax_interval(y, &d, 5.5, &kink_partition(&d));
        assert!(qa <= 2.0 / 7.0 && 2.0 / 7.0 <= qb);

        let single = TypeDistribution::from_tuples([("a", 1.0, 1.0, 1.0)]).unwrap();
        assert_eq!(inner_max_q(10.0, &single, 3.0, DEFAULT_TOL), (0.0, 0.0));
        let (q, _) = inner_max_q(4.0 / 3.0, &single, 0.5, DEFAULT_TOL);
        assert!((q - 0.5).abs() < EPS);
        let (qa, qb, _) = argmax_interval(4.0 / 3.0, &single, 0.5, &kink_partition(&single));
        assert!(qa <= 2.0 / 3.0 && 2.0 / 3.0 <= qb);
    }

    #[test]
    fn slater_examples() {
        assert!(slater_gap(&example_one(), 5.5, DEFAULT_TOL) > 0.0);
        let single = TypeDistribution::from_tuples([("a", 1.0, 1.0, 1.0)]).unwrap();
        assert_eq!(slater_gap(&single, 3.0, DEFAULT_TOL), 0.0);
    }

    #[test]
    fn example_one_participation() {
        let d = example_one();
        let sol = solve_participation(&d, 5.5, DEFAULT_TOL).unwrap();
        assert!((sol.y_star.value() - 45.0 / 14.0).abs() < 1e-9);
        assert!((sol.q_star - 2.0 / 7.0).abs() < EPS);
        let p = &sol.mechanism.contribution;
        for (got, want) in p.iter().zip([2.0 / 7.0, 4.0 / 7.0, 5.0 / 7.0]) {
            assert!((got - want).abs() < EPS, "{p:?}");
        }
        assert_eq!(sol.classes, vec![Class::Bound, Class::Bound, Class::Full]);
        assert!((sol.w_star - 13.75 / 7.0).abs() < EPS);
        let rep = check_feasible(&sol.mechanism, &d, 5.5, &NON_IC, DEFAULT_TOL);
        assert!(rep.all_pass(), "{rep:?}");
    }

    #[test]
    fn homogeneous_matches_first_best() {
        let d = TypeDistribution::from_tuples([("a", 1.0, 1.0, 1.0)]).unwrap();
        let sol = solve_participation(&d, 0.5, DEFAULT_TOL).unwrap();
        let fb = solve_first_best(&d, 0.5, DEFAULT_TOL).unwrap();
        assert!((sol.q_star - 2.0 / 3.0).abs() < EPS);
        assert!((sol.mechanism.contribution[0] - 1.0 / 3.0).abs() < EPS);
        assert!((sol.w_star - fb.w_fb).abs() < EPS);
    }

    #[test]
    fn hopeless_rate_shuts_down() {
        let d = TypeDistribution::from_tuples([("a", 1.0, 1.0, 1.0), ("b", 1.0, 2.0, 1.0)]).unwrap();
        let sol = solve_participation(&d, 5.0, DEFAULT_TOL).unwrap();
        assert_eq!(sol.y_star, Multiplier::Infinite);
        assert_eq!(sol.q_star, 0.0);
        assert_eq!(sol.w_star, 0.0);
        assert!(sol.mechanism.contribution.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn ordered_examples() {
        let d = example_one();
        let sol = solve_participation(&d, 5.5, DEFAULT_TOL).unwrap();
        let rep = classify_interval(&sol, &d, 5.5, DEFAULT_TOL).unwrap();
        assert_eq!(rep.bound_span, Some((0, 1)));
        assert!(rep.contiguous && rep.contains_first_best && !rep.first_best_attained && rep.passes());

        let single = TypeDistribution::from_tuples([("a", 1.0, 1.0, 1.0)]).unwrap();
        let sol = solve_participation(&single, 0.5, DEFAULT_TOL).unwrap();
        let rep = classify_interval(&sol, &single, 0.5, DEFAULT_TOL).unwrap();
        assert!(rep.bound_span.is_none() && rep.first_best_attained && rep.passes());

        let two = TypeDistribution::from_tuples([("a", 1.0, 2.0, 1.0), ("b", 1.0, 1.0, 1.0)]).unwrap();
        let sol = solve_participation(&two, 0.1, DEFAULT_TOL).unwrap();
        let rep = classify_interval(&sol, &two, 0.1, DEFAULT_TOL).unwrap();
        assert!(rep.contiguous && rep.passes());

        let unordered = TypeDistribution::from_tuples([("a", 1.0, 2.0, 1.0), ("b", 0.1, 1.0, 1.0)]).unwrap();
        let sol = solve_participation(&unordered, 0.1, DEFAULT_TOL).unwrap();
        assert!(matches!(classify_interval(&sol, &unordered, 0.1, DEFAULT_TOL), Err(Error::NotOrdered(_))));
    }

    #[test]
    fn rationed_atom_balances() {
        // Three identical-cost types force the multiplier onto their cost.
        let d = TypeDistribution::from_tuples([("a", 4.0, 1.0, 1.0), ("b", 2.0, 1.0, 1.0), ("c", 1.0, 3.0, 1.0)]).unwrap();
        for rho in [0.5, 1.0, 2.0, 4.0, 8.0] {
            let sol = solve_participation(&d, rho, DEFAULT_TOL).unwrap();
            let rep = check_feasible(&sol.mechanism, &d, rho, &NON_IC, DEFAULT_TOL);
            assert!(rep.all_pass(), "rho={rho} {rep:?}");
        }
    }

    pub(crate) fn arb_dist() -> impl Strategy<Value = TypeDistribution> {
        prop::collection::vec((0.1f64..10.0, 0.1f64..10.0, 0.1f64..1.0), 1..7).prop_map(|v| {
            TypeDistribution::from_tuples(v.into_iter().enumerate().map(|(i, (u, c, m))| (format!("t{i}"), u, c, m)))
                .unwrap()
        })
    }

    proptest! {
        #[test]
        fn solution_invariants(d in arb_dist(), rho in 0.05f64..20.0) {
            let tol = DEFAULT_TOL;
            let sol = solve_participation(&d, rho, tol).unwrap();
            let fb = solve_first_best(&d, rho, tol).unwrap();
            let rep = check_feasible(&sol.mechanism, &d, rho, &NON_IC, tol);
            prop_assert!(rep.all_pass(), "{:?}", rep);
            prop_assert!(sol.w_star <= fb.w_fb + tol);
            prop_assert!((sol.w_star - welfare(&sol.mechanism, &d)).abs() <= tol);
            if let Multiplier::Finite(y) = sol.y_star {
                prop_assert!(y >= fb.y_fb - tol);
                if sol.w_star < fb.w_fb - tol {
                    prop_assert!(y > fb.y_fb);
                }
            }
            for (i, t) in d.types().iter().enumerate() {
                let (r, p) = sol.mechanism.bundle(i);
                let u = agent_utility(t, r, p);
                prop_assert!(u >= -tol);
                if sol.classes[i] == Class::Bound {
                    prop_assert!(u.abs() <= tol);
                }
            }
        }

        #[test]
        fn saddle_inequalities(d in arb_dist(), rho in 0.05f64..20.0) {
            let sol = solve_participation(&d, rho, DEFAULT_TOL).unwrap();
            if let Multiplier::Finite(ys) = sol.y_star {
                let at = reduced_lagrangian(sol.q_star, ys, &d, rho);
                let scale = lagrangian_scale(ys, &d, rho);
                for k in 0..=100 {
                    let q = k as f64 / 100.0;
                    let y = ys * 2.0 * k as f64 / 100.0;
                    prop_assert!(reduced_lagrangian(q, ys, &d, rho) <= at + 1e-9 * scale);
                    prop_assert!(reduced_lagrangian(sol.q_star, y, &d, rho) >= at - 1e-9 * scale);
                }
            }
        }

        #[test]
        fn uptime_nonincreasing_in_rho(d in arb_dist(), rho in 0.05f64..10.0, step in 1.01f64..3.0) {
            let a = solve_participation(&d, rho, DEFAULT_TOL).unwrap();
            let b = solve_participation(&d, rho * step, DEFAULT_TOL).unwrap();
            prop_assert!(a.q_star >= b.q_star - DEFAULT_TOL);
        }
    }
}
