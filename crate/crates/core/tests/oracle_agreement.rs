use proptest::prelude::*;
use upkeep::oracle::{lp_screening_welfare, menu_grid_oracle, monopoly_lp_value, primal_grid_welfare, GridSpec, PrimalMode};
use upkeep::participation::solve_participation;
use upkeep::screening::{bounded_monopoly_solve, solve_screening, Buyer};
use upkeep::{solve_first_best, TypeDistribution, DEFAULT_TOL};

fn dist(max_types: usize) -> impl Strategy<Value = TypeDistribution> {
    prop::collection::vec((0.1f64..10.0, 0.1f64..10.0, 0.1f64..1.0), 1..=max_types).prop_map(|v| {
        TypeDistribution::from_tuples(v.into_iter().enumerate().map(|(i, (u, c, m))| (format!("t{i}"), u, c, m))).unwrap()
    })
}

fn buyers(n: usize) -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
    prop::collection::vec((0.0f64..3.0, 0.0f64..2.0, -1.0f64..2.0), n)
}

fn solve(b: &[(f64, f64, f64)]) -> f64 {
    let bs: Vec<Buyer> = b.iter().map(|&(v, s, p)| Buyer { valuation: v, surplus_weight: s, payment_weight: p }).collect();
    bounded_monopoly_solve(&bs).unwrap().value
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn first_best_matches_grid(d in dist(6), rho in 0.05f64..20.0) {
        let fb = solve_first_best(&d, rho, DEFAULT_TOL).unwrap();
        let grid = primal_grid_welfare(&d, rho, PrimalMode::FirstBest, GridSpec::default()).unwrap().welfare;
        prop_assert!((fb.w_fb - grid).abs() <= 1e-6 * (1.0 + fb.w_fb.abs()), "{} vs {}", fb.w_fb, grid);
    }

    #[test]
    fn participation_matches_grid(d in dist(6), rho in 0.05f64..20.0) {
        let p = solve_participation(&d, rho, DEFAULT_TOL).unwrap();
        let grid = primal_grid_welfare(&d, rho, PrimalMode::Participation, GridSpec::default()).unwrap().welfare;
        prop_assert!((p.w_star - grid).abs() <= 1e-6 * (1.0 + p.w_star.abs()), "{} vs {}", p.w_star, grid);
    }

    #[test]
    fn screening_matches_lp(d in dist(5), rho in 0.05f64..10.0) {
        let s = solve_screening(&d, rho, DEFAULT_TOL).unwrap();
        let lp = lp_screening_welfare(&d, rho, GridSpec::coarse()).unwrap().welfare;
        prop_assert!((s.w_star - lp).abs() <= 1e-5 * (1.0 + lp.abs()), "{} vs {}", s.w_star, lp);
    }

    #[test]
    fn monopoly_matches_lp(b in buyers(5)) {
        let exact = monopoly_lp_value(&b).unwrap();
        let v = solve(&b);
        prop_assert!((v - exact).abs() <= 1e-9 * (1.0 + exact.abs()), "{} vs {}", v, exact);
    }

    #[test]
    fn monopoly_matches_menu_grid(b in buyers(4)) {
        let v = solve(&b);
        let g = menu_grid_oracle(&b, 1e-3).unwrap();
        let scale: f64 = b.iter().map(|x| x.1 + x.2.abs()).sum::<f64>() + 1.0;
        prop_assert!(g <= v + 1e-9 * scale);
        prop_assert!(v - g <= 1e-2 * scale, "{} vs {}", v, g);
    }
}
