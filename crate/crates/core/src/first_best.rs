//! Welfare maximization under the physical constraints alone.
//!
//! Everyone gets full access (`R = Q`) and contributions follow a cost
//! threshold `y`: types cheaper than `y` contribute whenever the machine is
//! broken, the rest never do. The threshold is the root of
//! `ū − ρ·y = Σ mass·(y − c)⁺`, and uptime follows from balance.

use crate::error::{check_rate, check_tol, Result};
use crate::model::{welfare, Mechanism, TypeDistribution};
use crate::scalar::bracketed_pl_root;

/// Relative distance under which a cost atom is treated as sitting on a
/// threshold.
pub(crate) const ATOM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct FirstBestSolution {
    /// Cost threshold `y_fb`.
    pub y_fb: f64,
    pub q_fb: f64,
    pub w_fb: f64,
    pub mechanism: Mechanism,
    /// Contribution fraction of types whose cost equals `y_fb`.
    pub marginal_fraction: f64,
    pub iterations: usize,
}

/// `(ū − ρ·y) − Σ mass·(y − c)⁺`. Strictly decreasing in `y`.
pub fn fb_threshold_gap(y: f64, d: &TypeDistribution, rho: f64) -> f64 {
    d.aggregate_usage() - rho * y - excess_value(y, d)
}

/// Dual function `max(ū − ρ·y, Σ mass·(y − c)⁺)`, minimized at `y_fb`.
pub fn fb_dual_value(y: f64, d: &TypeDistribution, rho: f64) -> f64 {
    (d.aggregate_usage() - rho * y).max(excess_value(y, d))
}

fn excess_value(y: f64, d: &TypeDistribution) -> f64 {
    d.types().iter().map(|t| t.mass * (y - t.c).max(0.0)).sum()
}

pub(crate) fn on_atom(c: f64, y: f64) -> bool {
    (c - y).abs() <= ATOM_EPS * y.abs().max(1.0)
}

pub fn solve_first_best(d: &TypeDistribution, rho: f64, tol: f64) -> Result<FirstBestSolution> {
    check_rate(rho)?;
    check_tol(tol)?;
    let ubar = d.aggregate_usage();
    let upper = ubar / rho;
    let costs: Vec<f64> = d.types().iter().map(|t| t.c).collect();

    let (mut y, iterations) = bracketed_pl_root(|y| fb_threshold_gap(y, d, rho), 0.0, upper, &costs);
    if let Some(&c) = costs.iter().find(|&&c| on_atom(c, y)) {
        y = c;
    }

    // Any fraction of an atom sitting exactly on the threshold is optimal;
    // we ration it to zero.
    let marginal_fraction = 0.0;
    let contributing: f64 = d
        .types()
        .iter()
        .filter(|t| t.c < y && !on_atom(t.c, y))
        .map(|t| t.mass)
        .sum();
    let q = contributing / (rho + contributing);

    let contribution = d
        .types()
        .iter()
        .map(|t| {
            if on_atom(t.c, y) {
                (1.0 - q) * marginal_fraction
            } else if t.c < y {
                1.0 - q
            } else {
                0.0
            }
        })
        .collect();
    let mechanism = Mechanism::new(q, vec![q; d.len()], contribution);
    let w_fb = welfare(&mechanism, d);

    Ok(FirstBestSolution { y_fb: y, q_fb: q, w_fb, mechanism, marginal_fraction, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::*;
    use crate::model::{balance_residual, check_feasible, ConstraintFamily, DEFAULT_TOL};
    use proptest::prelude::*;

    #[test]
    fn gap_examples() {
        let d = example_one();
        assert!(fb_threshold_gap(2.7, &d, 5.5).abs() < 1e-12);
        assert_eq!(fb_threshold_gap(0.0, &d, 5.5), 17.0);
        let single = TypeDistribution::from_tuples([("a", 1.0, 1.0, 1.0)]).unwrap();
        assert!(fb_threshold_gap(4.0 / 3.0, &single, 0.5).abs() < 1e-12);
    }

    #[test]
    fn dual_examples() {
        let d = example_one();
        assert!((fb_dual_value(2.7, &d, 5.5) - 2.15).abs() < 1e-12);
        assert_eq!(fb_dual_value(0.0, &d, 5.5), 17.0);
        assert!((fb_dual_value(3.0, &d, 5.5) - 2.75).abs() < 1e-12);
    }

    #[test]
    fn example_one_first_best() {
        let sol = solve_first_best(&example_one(), 5.5, DEFAULT_TOL).unwrap();
        assert!((sol.y_fb - 2.7).abs() < 1e-12);
        assert!((sol.q_fb - 4.0 / 15.0).abs() < 1e-12);
        assert!((sol.w_fb - 2.15).abs() < 1e-12);
        let p = &sol.mechanism.contribution;
        assert_eq!(p[0], 0.0);
        assert!((p[1] - 11.0 / 15.0).abs() < 1e-12 && (p[2] - 11.0 / 15.0).abs() < 1e-12);
    }

    #[test]
    fn example_two_first_best() {
        let sol = solve_first_best(&example_two(), 1.0, DEFAULT_TOL).unwrap();
        assert!((sol.q_fb - 0.5).abs() < 1e-12);
        assert!(sol.mechanism.contribution.iter().all(|p| (p - 0.5).abs() < 1e-12));
    }

    #[test]
    fn expensive_singleton_shuts_down() {
        let d = TypeDistribution::from_tuples([("a", 1.0, 2.0, 1.0)]).unwrap();
        let sol = solve_first_best(&d, 1.0, DEFAULT_TOL).unwrap();
        assert!((sol.y_fb - 1.0).abs() < 1e-12);
        assert_eq!(sol.q_fb, 0.0);
        assert_eq!(sol.w_fb, 0.0);
        assert_eq!(sol.mechanism.contribution, vec![0.0]);
    }

    #[test]
    fn threshold_on_cost_atom() {
        // ū − ρy = Σ(y − c)⁺ holds exactly at y = 2 = c(b).
        let d = TypeDistribution::from_tuples([("a", 2.0, 1.0, 1.0), ("b", 3.0, 2.0, 1.0)]).unwrap();
        let sol = solve_first_best(&d, 2.0, DEFAULT_TOL).unwrap();
        assert_eq!(sol.y_fb, 2.0);
        assert_eq!(sol.marginal_fraction, 0.0);
        assert!(balance_residual(&sol.mechanism, &d, 2.0).abs() < 1e-12);
        assert!((sol.w_fb - fb_dual_value(2.0, &d, 2.0)).abs() < 1e-12);
    }

    #[test]
    fn singleton_aggregate_contribution_rises_with_rho() {
        let d = TypeDistribution::from_tuples([("a", 1.0, 1.0, 1.0)]).unwrap();
        let agg = |rho: f64| rho * solve_first_best(&d, rho, DEFAULT_TOL).unwrap().q_fb;
        assert!(agg(0.1) < agg(0.2));
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(solve_first_best(&example_one(), 0.0, DEFAULT_TOL).is_err());
        assert!(solve_first_best(&example_one(), 1.0, 0.0).is_err());
    }

    fn arb_dist() -> impl Strategy<Value = TypeDistribution> {
        prop::collection::vec((0.1f64..10.0, 0.1f64..10.0, 0.05f64..2.0), 1..7).prop_map(|v| {
            TypeDistribution::from_tuples(v.into_iter().enumerate().map(|(i, (u, c, m))| (format!("t{i}"), u, c, m)))
                .unwrap()
        })
    }

    proptest! {
        #[test]
        fn solution_invariants(d in arb_dist(), rho in 0.05f64..20.0) {
            let sol = solve_first_best(&d, rho, DEFAULT_TOL).unwrap();
            let scale = d.aggregate_usage().max(1.0);
            prop_assert!(fb_threshold_gap(sol.y_fb, &d, rho).abs() <= 1e-9 * scale);
            let rep = check_feasible(&sol.mechanism, &d, rho, &[ConstraintFamily::Balance, ConstraintFamily::Simplex], DEFAULT_TOL);
            prop_assert!(rep.all_pass(), "{:?}", rep);
            // Strong duality.
            prop_assert!((fb_dual_value(sol.y_fb, &d, rho) - sol.w_fb).abs() <= 1e-9 * scale);
            // Unique root: sign change across the threshold.
            let eps = 1e-6 * sol.y_fb.max(1.0);
            prop_assert!(fb_threshold_gap(sol.y_fb - eps, &d, rho) > 0.0);
            prop_assert!(fb_threshold_gap(sol.y_fb + eps, &d, rho) < 0.0);
        }

        #[test]
        fn comparative_statics_in_rho(d in arb_dist(), rho in 0.05f64..10.0, step in 1.01f64..3.0) {
            let a = solve_first_best(&d, rho, DEFAULT_TOL).unwrap();
            let b = solve_first_best(&d, rho * step, DEFAULT_TOL).unwrap();
            prop_assert!(a.y_fb > b.y_fb);
            prop_assert!(a.q_fb >= b.q_fb);
            if a.q_fb > 0.0 {
                prop_assert!(a.q_fb > b.q_fb);
            }
        }
    }
}
