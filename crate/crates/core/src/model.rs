//! Domain types for the collective-upkeep model and the constraint checks
//! shared by every solver.
//!
//! A mechanism is the reduced form `(R, P, Q)`: per-type usage levels,
//! per-type contribution levels and the machine's uptime. Per-type vectors
//! are aligned with the order of [`TypeDistribution::types`].

use std::collections::HashSet;
use std::fmt;

use crate::error::{Error, Result};

/// Default feasibility tolerance.
pub const DEFAULT_TOL: f64 = 1e-9;

/// One agent type: usage benefit `u`, contribution cost `c` and its weight
/// under the type measure.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentType {
    pub id: String,
    pub u: f64,
    pub c: f64,
    pub mass: f64,
}

impl AgentType {
    pub fn new(id: impl Into<String>, u: f64, c: f64, mass: f64) -> Result<Self> {
        let id = id.into();
        let field = |field, requirement, value| Error::InvalidField {
            id: id.clone(),
            field,
            requirement,
            value,
        };
        if !(u.is_finite() && u > 0.0) {
            return Err(field("u", "positive and finite", u));
        }
        if !(c.is_finite() && c > 0.0) {
            return Err(field("c", "positive and finite", c));
        }
        if !(mass.is_finite() && mass >= 0.0) {
            return Err(field("mass", "nonnegative and finite", mass));
        }
        Ok(Self { id, u, c, mass })
    }

    /// Rate of substitution between access and contributions, `u / c`.
    pub fn valuation(&self) -> f64 {
        self.u / self.c
    }

    pub fn utility(&self, r: f64, p: f64) -> f64 {
        agent_utility(self, r, p)
    }
}

/// A discrete weighted type measure. Masses need not sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct TypeDistribution {
    types: Vec<AgentType>,
    total_mass: f64,
}

impl TypeDistribution {
    pub fn new(types: Vec<AgentType>) -> Result<Self> {
        if types.is_empty() {
            return Err(Error::NoTypes);
        }
        let mut seen = HashSet::new();
        for t in &types {
            if !seen.insert(t.id.as_str()) {
                return Err(Error::DuplicateId(t.id.clone()));
            }
        }
        let total_mass: f64 = types.iter().map(|t| t.mass).sum();
        if !(total_mass > 0.0) {
            return Err(Error::ZeroMass);
        }
        Ok(Self { types, total_mass })
    }

    /// Builds a distribution from `(id, u, c, mass)` tuples.
    pub fn from_tuples<S: Into<String>>(rows: impl IntoIterator<Item = (S, f64, f64, f64)>) -> Result<Self> {
        let types = rows
            .into_iter()
            .map(|(id, u, c, m)| AgentType::new(id, u, c, m))
            .collect::<Result<Vec<_>>>()?;
        Self::new(types)
    }

    pub fn types(&self) -> &[AgentType] {
        &self.types
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    /// Aggregate usage benefit `ū = Σ mass·u`.
    pub fn aggregate_usage(&self) -> f64 {
        self.types.iter().map(|t| t.mass * t.u).sum()
    }

    /// Aggregate contribution cost `c̄ = Σ mass·c`.
    pub fn aggregate_cost(&self) -> f64 {
        self.types.iter().map(|t| t.mass * t.c).sum()
    }

    pub fn max_cost(&self) -> f64 {
        self.types.iter().map(|t| t.c).fold(0.0, f64::max)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.types.iter().position(|t| t.id == id)
    }

    /// Same types with every mass multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.types
                .iter()
                .map(|t| AgentType { mass: t.mass * factor, ..t.clone() })
                .collect(),
        )
    }
}

/// Lagrange multiplier on the balance condition; infinite when the dual
/// minimum is not attained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Multiplier {
    Finite(f64),
    Infinite,
}

impl Multiplier {
    pub fn value(self) -> f64 {
        match self {
            Multiplier::Finite(y) => y,
            Multiplier::Infinite => f64::INFINITY,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Multiplier::Finite(_))
    }
}

impl fmt::Display for Multiplier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Multiplier::Finite(y) => write!(f, "{y}"),
            Multiplier::Infinite => f.write_str("inf"),
        }
    }
}

/// Shape of a positive random duration. The mean is fixed by context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DurationLaw {
    #[default]
    Exponential,
    Deterministic,
}

/// Breakage rate plus the simulator's lifespan and contribution-quantum
/// laws. Lifespans have mean `1/ρ`; quanta have mean 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalParams {
    pub rho: f64,
    pub lifespan: DurationLaw,
    pub quantum: DurationLaw,
}

impl PhysicalParams {
    pub fn new(rho: f64) -> Result<Self> {
        crate::error::check_rate(rho)?;
        Ok(Self { rho, lifespan: DurationLaw::Exponential, quantum: DurationLaw::Exponential })
    }

    pub fn with_lifespan(mut self, law: DurationLaw) -> Self {
        self.lifespan = law;
        self
    }

    pub fn with_quantum(mut self, law: DurationLaw) -> Self {
        self.quantum = law;
        self
    }

    pub fn lifespan_mean(&self) -> f64 {
        1.0 / self.rho
    }
}

/// Reduced form `(R, P, Q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mechanism {
    pub uptime: f64,
    pub usage: Vec<f64>,
    pub contribution: Vec<f64>,
}

impl Mechanism {
    pub fn new(uptime: f64, usage: Vec<f64>, contribution: Vec<f64>) -> Self {
        assert_eq!(usage.len(), contribution.len(), "usage and contribution lengths differ");
        Self { uptime, usage, contribution }
    }

    /// The idle mechanism: machine never works, nobody uses or contributes.
    pub fn zero(n: usize) -> Self {
        Self::new(0.0, vec![0.0; n], vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.usage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.usage.is_empty()
    }

    pub fn bundle(&self, i: usize) -> (f64, f64) {
        (self.usage[i], self.contribution[i])
    }

    /// Componentwise convex combination `α·self + (1−α)·other`.
    pub fn mix(&self, other: &Mechanism, alpha: f64) -> Mechanism {
        let blend = |a: &[f64], b: &[f64]| -> Vec<f64> {
            a.iter().zip(b).map(|(x, y)| alpha * x + (1.0 - alpha) * y).collect()
        };
        Mechanism::new(
            alpha * self.uptime + (1.0 - alpha) * other.uptime,
            blend(&self.usage, &other.usage),
            blend(&self.contribution, &other.contribution),
        )
    }

    fn assert_matches(&self, d: &TypeDistribution) {
        assert_eq!(self.len(), d.len(), "mechanism and distribution sizes differ");
    }
}

/// Payoff `r·u − p·c` of a type using a fraction `r` of the time and
/// contributing a fraction `p`.
pub fn agent_utility(t: &AgentType, r: f64, p: f64) -> f64 {
    r * t.u - p * t.c
}

pub fn valuation(t: &AgentType) -> f64 {
    t.valuation()
}

/// Utilitarian welfare `Σ mass·(R·u − P·c)`.
pub fn welfare(m: &Mechanism, d: &TypeDistribution) -> f64 {
    m.assert_matches(d);
    d.types()
        .iter()
        .enumerate()
        .map(|(i, t)| t.mass * agent_utility(t, m.usage[i], m.contribution[i]))
        .sum()
}

/// `ρ·Q − Σ mass·P`; zero iff the machine breaks as often as it is fixed.
pub fn balance_residual(m: &Mechanism, d: &TypeDistribution, rho: f64) -> f64 {
    m.assert_matches(d);
    let contributed: f64 = d
        .types()
        .iter()
        .zip(&m.contribution)
        .map(|(t, p)| t.mass * p)
        .sum();
    rho * m.uptime - contributed
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConstraintFamily {
    Balance,
    Simplex,
    Participation,
    Ic,
}

impl ConstraintFamily {
    pub const ALL: [ConstraintFamily; 4] = [
        ConstraintFamily::Balance,
        ConstraintFamily::Simplex,
        ConstraintFamily::Participation,
        ConstraintFamily::Ic,
    ];
}

/// Residuals for each requested constraint family.
///
/// Per-type entries are signed slacks (negative means violated); the balance
/// entry is the signed residual `ρQ − Σ mass·P`. A family passes when every
/// slack is at least `-tol` (for balance, when `|residual| ≤ tol`).
/// Families that were not requested are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    pub tol: f64,
    pub balance: Option<f64>,
    /// `min(R, Q − R, P, 1 − Q − P)` per type, also folding in `Q ∈ [0, 1]`.
    pub simplex: Option<Vec<f64>>,
    /// Agent utility per type.
    pub participation: Option<Vec<f64>>,
    /// Worst truthful-minus-misreport utility per type.
    pub ic: Option<Vec<f64>>,
}

impl FeasibilityReport {
    pub fn passes(&self, family: ConstraintFamily) -> Option<bool> {
        let tol = self.tol;
        let slack_ok = |v: &Vec<f64>| v.iter().all(|s| *s >= -tol);
        match family {
            ConstraintFamily::Balance => self.balance.map(|r| r.abs() <= tol),
            ConstraintFamily::Simplex => self.simplex.as_ref().map(slack_ok),
            ConstraintFamily::Participation => self.participation.as_ref().map(slack_ok),
            ConstraintFamily::Ic => self.ic.as_ref().map(slack_ok),
        }
    }

    /// True when every requested family passes.
    pub fn all_pass(&self) -> bool {
        ConstraintFamily::ALL
            .iter()
            .all(|f| self.passes(*f).unwrap_or(true))
    }

    /// Families that were requested and failed.
    pub fn failures(&self) -> Vec<ConstraintFamily> {
        ConstraintFamily::ALL
            .iter()
            .copied()
            .filter(|f| self.passes(*f) == Some(false))
            .collect()
    }
}

pub fn check_feasible(
    m: &Mechanism,
    d: &TypeDistribution,
    rho: f64,
    families: &[ConstraintFamily],
    tol: f64,
) -> FeasibilityReport {
    m.assert_matches(d);
    let want = |f| families.contains(&f);
    let q = m.uptime;
    let types = d.types();

    let balance = want(ConstraintFamily::Balance).then(|| balance_residual(m, d, rho));
    let simplex = want(ConstraintFamily::Simplex).then(|| {
        let q_slack = q.min(1.0 - q);
        (0..types.len())
            .map(|i| {
                let (r, p) = m.bundle(i);
                r.min(q - r).min(p).min(1.0 - q - p).min(q_slack)
            })
            .collect()
    });
    let participation = want(ConstraintFamily::Participation).then(|| {
        types
            .iter()
            .enumerate()
            .map(|(i, t)| agent_utility(t, m.usage[i], m.contribution[i]))
            .collect()
    });
    let ic = want(ConstraintFamily::Ic).then(|| {
        types
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let own = agent_utility(t, m.usage[i], m.contribution[i]);
                (0..types.len())
                    .filter(|&j| j != i)
                    .map(|j| own - agent_utility(t, m.usage[j], m.contribution[j]))
                    .fold(f64::INFINITY, f64::min)
            })
            .map(|s: f64| if s.is_finite() { s } else { 0.0 })
            .collect()
    });

    FeasibilityReport { tol, balance, simplex, participation, ic }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// Three types L, M, H with unit masses; breakage rate 5.5.
    pub fn example_one() -> TypeDistribution {
        TypeDistribution::from_tuples([("L", 3.0, 3.0, 1.0), ("M", 4.0, 2.0, 1.0), ("H", 10.0, 1.25, 1.0)])
            .unwrap()
    }

    /// Three types H, M, L with unit costs and masses 1/3; breakage rate 1.
    pub fn example_two() -> TypeDistribution {
        let m = 1.0 / 3.0;
        TypeDistribution::from_tuples([("H", 5.0, 1.0, m), ("M", 1.0, 1.0, m), ("L", 0.1, 1.0, m)]).unwrap()
    }

    pub fn example_two_screening() -> Mechanism {
        Mechanism::new(0.3, vec![0.3, 0.2, 0.0], vec![0.7, 0.2, 0.0])
    }
}
