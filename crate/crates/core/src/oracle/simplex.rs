//! Dense two-phase tableau simplex with Bland's rule. Intended for the
//! small reference problems in this crate, not for performance.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { value: f64, x: Vec<f64> },
    Infeasible,
    Unbounded,
}

/// `max c·x` subject to linear rows and `x >= 0`.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    n: usize,
    objective: Vec<f64>,
    rows: Vec<(Vec<f64>, Relation, f64)>,
    eps: f64,
}

const DEFAULT_EPS: f64 = 1e-9;
const MAX_PIVOTS: usize = 100_000;

impl LinearProgram {
    pub fn new(n: usize) -> Self {
        LinearProgram { n, objective: vec![0.0; n], rows: Vec::new(), eps: DEFAULT_EPS }
    }

    /// Pivot and feasibility tolerance.
    pub fn with_tolerance(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn maximize(&mut self, objective: Vec<f64>) {
        assert_eq!(objective.len(), self.n);
        self.objective = objective;
    }

    pub fn constrain(&mut self, row: Vec<f64>, rel: Relation, rhs: f64) {
        assert_eq!(row.len(), self.n);
        self.rows.push((row, rel, rhs));
    }

    pub fn solve(&self) -> LpOutcome {
        let m = self.rows.len();
        let eps = self.eps;
        let n = self.n;
        // Normalize to nonnegative right-hand sides.
        let rows: Vec<(Vec<f64>, Relation, f64)> = self
            .rows
            .iter()
            .map(|(a, rel, b)| {
                if *b < 0.0 {
                    let flipped = match rel {
                        Relation::Le => Relation::Ge,
                        Relation::Ge => Relation::Le,
                        Relation::Eq => Relation::Eq,
                    };
                    (a.iter().map(|v| -v).collect(), flipped, -b)
                } else {
                    (a.clone(), *rel, *b)
                }
            })
            .collect();
        let n_slack = rows.iter().filter(|r| r.1 != Relation::Eq).count();
        let n_art = rows.iter().filter(|r| r.1 != Relation::Le).count();
        let width = n + n_slack + n_art + 1;
        let rhs = width - 1;
        let art_start = n + n_slack;

        let mut t = vec![vec![0.0; width]; m];
        let mut basis = vec![0usize; m];
        let (mut s, mut a) = (n, art_start);
        for (i, (row, rel, b)) in rows.iter().enumerate() {
            t[i][..n].copy_from_slice(row);
            t[i][rhs] = *b;
            match rel {
                Relation::Le => {
                    t[i][s] = 1.0;
                    basis[i] = s;
                    s += 1;
                }
                Relation::Ge => {
                    t[i][s] = -1.0;
                    s += 1;
                    t[i][a] = 1.0;
                    basis[i] = a;
                    a += 1;
                }
                Relation::Eq => {
                    t[i][a] = 1.0;
                    basis[i] = a;
                    a += 1;
                }
            }
        }

        // Phase one: maximize minus the sum of artificials.
        if n_art > 0 {
            let mut cost = vec![0.0; width];
            for c in cost.iter_mut().take(art_start + n_art).skip(art_start) {
                *c = -1.0;
            }
            if !run(&mut t, &mut basis, &cost, art_start + n_art, eps) {
                return LpOutcome::Unbounded;
            }
            let infeas: f64 = basis.iter().zip(&t).filter(|(&b, _)| b >= art_start).map(|(_, r)| r[rhs]).sum();
            if infeas > 10.0 * eps {
                return LpOutcome::Infeasible;
            }
            // Drive zero-level artificials out of the basis where possible.
            for i in 0..m {
                if basis[i] >= art_start {
                    if let Some(j) = (0..art_start).find(|&j| t[i][j].abs() > eps) {
                        pivot(&mut t, &mut basis, i, j);
                    }
                }
            }
            for row in t.iter_mut() {
                for v in row.iter_mut().take(art_start + n_art).skip(art_start) {
                    *v = 0.0;
                }
            }
        }

        let mut cost = vec![0.0; width];
        cost[..n].copy_from_slice(&self.objective);
        if !run(&mut t, &mut basis, &cost, art_start, eps) {
            return LpOutcome::Unbounded;
        }
        let mut x = vec![0.0; n];
        for (i, &b) in basis.iter().enumerate() {
            if b < n {
                x[b] = t[i][rhs];
            }
        }
        let value = x.iter().zip(&self.objective).map(|(a, b)| a * b).sum();
        LpOutcome::Optimal { value, x }
    }
}

fn pivot(t: &mut [Vec<f64>], basis: &mut [usize], r: usize, c: usize) {
    let p = t[r][c];
    for v in t[r].iter_mut() {
        *v /= p;
    }
    let pivot_row = t[r].clone();
    for (i, row) in t.iter_mut().enumerate() {
        if i != r {
            let f = row[c];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
            }
        }
    }
    basis[r] = c;
}

/// Primal simplex on columns `0..allowed`, entering by Bland's rule.
/// Returns false when the objective is unbounded.
fn run(t: &mut [Vec<f64>], basis: &mut [usize], cost: &[f64], allowed: usize, eps: f64) -> bool {
    let rhs = t.first().map_or(0, |r| r.len() - 1);
    for _ in 0..MAX_PIVOTS {
        // Reduced cost of column j: c_j − Σ c_B·t_ij.
        let entering = (0..allowed).find(|&j| {
            if basis.contains(&j) {
                return false;
            }
            let z: f64 = basis.iter().zip(t.iter()).map(|(&b, row)| cost[b] * row[j]).sum();
            cost[j] - z > eps
        });
        let Some(j) = entering else { return true };
        let ratios: Vec<(usize, f64)> =
            t.iter().enumerate().filter(|(_, row)| row[j] > eps).map(|(i, row)| (i, row[rhs] / row[j])).collect();
        let min = ratios.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
        // Among tied rows prefer the largest pivot for stability, then the
        // lowest basic index.
        let leave = ratios
            .into_iter()
            .filter(|r| r.1 <= min + 1e-12 * (1.0 + min.abs()))
            .max_by(|a, b| t[a.0][j].total_cmp(&t[b.0][j]).then(basis[b.0].cmp(&basis[a.0])));
        let Some((i, _)) = leave else { return false };
        pivot(t, basis, i, j);
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_problem() {
        // max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18 → (2, 6), 36.
        let mut lp = LinearProgram::new(2);
        lp.maximize(vec![3.0, 5.0]);
        lp.constrain(vec![1.0, 0.0], Relation::Le, 4.0);
        lp.constrain(vec![0.0, 2.0], Relation::Le, 12.0);
        lp.constrain(vec![3.0, 2.0], Relation::Le, 18.0);
        match lp.solve() {
            LpOutcome::Optimal { value, x } => {
                assert!((value - 36.0).abs() < 1e-9);
                assert!((x[0] - 2.0).abs() < 1e-9 && (x[1] - 6.0).abs() < 1e-9);
            }
            o => panic!("{o:?}"),
        }
    }

    #[test]
    fn equality_and_infeasibility() {
        let mut lp = LinearProgram::new(2);
        lp.maximize(vec![1.0, 1.0]);
        lp.constrain(vec![1.0, 1.0], Relation::Eq, 1.0);
        lp.constrain(vec![1.0, 0.0], Relation::Ge, 0.25);
        assert!(matches!(lp.solve(), LpOutcome::Optimal { value, .. } if (value - 1.0).abs() < 1e-12));
        lp.constrain(vec![1.0, 0.0], Relation::Ge, 2.0);
        assert_eq!(lp.solve(), LpOutcome::Infeasible);
    }

    #[test]
    fn unbounded() {
        let mut lp = LinearProgram::new(1);
        lp.maximize(vec![1.0]);
        lp.constrain(vec![-1.0], Relation::Le, 0.0);
        assert_eq!(lp.solve(), LpOutcome::Unbounded);
    }
}
