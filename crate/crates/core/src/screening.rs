//! Welfare maximization when types are private information.
//!
//! For a fixed uptime `Q` and balance multiplier `y`, choosing usage and
//! contributions is a monopoly sale with bounded payments: buyers value the
//! good at `ν`, receive it with probability `R` (at most `Q`) and pay `P`
//! (at most `1 − Q`). After normalizing `r = R/Q`, `p = P/(1 − Q)` and
//! `ν̂ = ν·Q/(1 − Q)`, the seller maximizes
//! `Σ mass·c·(r·ν̂ − p) + Σ mass·y·p` over IC and IR menus with `p ≤ 1`,
//! and the optimum is a posted price or a two-item menu whose top item
//! costs the full cap. The outer problem is a concave-convex saddle in
//! `(Q, y)`.

use crate::error::{check_rate, check_tol, Error, Result};
use crate::model::{check_feasible, welfare, ConstraintFamily, Mechanism, Multiplier, TypeDistribution};
use crate::scalar::golden_section_max;

const TIE_REL: f64 = 1e-12;
const GOLDEN_XTOL: f64 = 1e-11;
const GOLDEN_MAX_ITER: usize = 200;
const MAX_BISECTIONS: usize = 200;
const MAX_DOUBLINGS: usize = 200;
/// Above this many distinct valuations only tier structures near the
/// saddle point are polished.
const FULL_POLISH_GROUPS: usize = 40;
const POLISH_WINDOW: usize = 2;

/// A normalized menu item: allocation probability and payment in units of
/// the payment cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MenuTier {
    pub r: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonopolySolution {
    pub allocation: Vec<f64>,
    pub payment: Vec<f64>,
    pub value: f64,
}

/// Buyer in the bounded-payment monopoly problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Buyer {
    pub valuation: f64,
    pub surplus_weight: f64,
    pub payment_weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreeningSolution {
    pub y_star: Multiplier,
    pub q_star: f64,
    pub w_star: f64,
    pub mechanism: Mechanism,
    /// Distinct nonzero tiers, ordered by increasing access.
    pub tiers: Vec<MenuTier>,
    /// Tier index per type; `None` means the type opts out.
    pub assignment: Vec<Option<usize>>,
    pub iterations: usize,
}

struct Group {
    valuation: f64,
    members: Vec<usize>,
    surplus_weight: f64,
    payment_weight: f64,
}

/// Merges buyers with equal valuations; they must receive equally valued
/// bundles, and we give them the same one.
fn pool(buyers: &[Buyer]) -> Vec<Group> {
    let mut order: Vec<usize> = (0..buyers.len()).collect();
    order.sort_by(|&a, &b| buyers[a].valuation.total_cmp(&buyers[b].valuation));
    let mut groups: Vec<Group> = Vec::new();
    for i in order {
        let b = buyers[i];
        match groups.last_mut() {
            Some(g) if (g.valuation - b.valuation).abs() <= TIE_REL * g.valuation.max(1.0) => {
                g.members.push(i);
                g.surplus_weight += b.surplus_weight;
                g.payment_weight += b.payment_weight;
            }
            _ => groups.push(Group {
                valuation: b.valuation,
                members: vec![i],
                surplus_weight: b.surplus_weight,
                payment_weight: b.payment_weight,
            }),
        }
    }
    groups
}

/// Every extreme point of the bounded-payment menu set that can matter for
/// these valuations, in a fixed order.
fn candidate_menus(vals: &[f64]) -> Vec<Vec<MenuTier>> {
    let mut menus = vec![Vec::new()];
    let mut prices = vec![0.0];
    prices.extend(vals.iter().copied().filter(|&v| v <= 1.0));
    prices.push(1.0);
    menus.extend(prices.into_iter().map(|p| vec![MenuTier { r: 1.0, p }]));
    let mut lows = vec![0.0];
    lows.extend(vals.iter().copied().filter(|&v| v < 1.0));
    for &hi in vals.iter().filter(|&&v| v > 1.0) {
        menus.push(vec![MenuTier { r: 1.0 / hi, p: 1.0 }]);
        for &lo in &lows {
            let r0 = (hi - 1.0) / (hi - lo);
            menus.push(vec![MenuTier { r: r0, p: r0 * lo }, MenuTier { r: 1.0, p: 1.0 }]);
        }
    }
    menus
}

/// Value of a menu when each group picks a utility-maximizing item,
/// resolving indifference in the seller's favour and then towards the
/// larger payment.
fn evaluate_menu(menu: &[MenuTier], groups: &[Group]) -> (f64, Vec<MenuTier>) {
    let out = MenuTier { r: 0.0, p: 0.0 };
    let mut total = 0.0;
    let mut picks = Vec::with_capacity(groups.len());
    for g in groups {
        let utility = |t: &MenuTier| t.r * g.valuation - t.p;
        let score = |t: &MenuTier| g.surplus_weight * utility(t) + g.payment_weight * t.p;
        let best_u = menu.iter().map(utility).fold(0.0, f64::max);
        let tie = TIE_REL * (1.0 + g.valuation);
        let mut pick = out;
        let mut pick_score = if best_u <= tie { score(&out) } else { f64::NEG_INFINITY };
        for t in menu {
            if utility(t) < best_u - tie {
                continue;
            }
            let s = score(t);
            if s > pick_score + TIE_REL * (1.0 + s.abs()) || (s >= pick_score - TIE_REL * (1.0 + s.abs()) && t.p > pick.p) {
                pick = *t;
                pick_score = s;
            }
        }
        total += pick_score;
        picks.push(pick);
    }
    (total, picks)
}

/// Maximizes `Σ sw·(r·ν̂ − p) + Σ pw·p` over IC and IR menus with payments
/// in `[0, 1]`.
pub fn bounded_monopoly_solve(buyers: &[Buyer]) -> Result<MonopolySolution> {
    for b in buyers {
        if !(b.valuation >= 0.0 && b.valuation.is_finite()) {
            return Err(Error::InvalidInput(format!("buyer valuation must be finite and nonnegative, got {}", b.valuation)));
        }
        if !b.surplus_weight.is_finite() || !b.payment_weight.is_finite() {
            return Err(Error::InvalidInput("buyer weights must be finite".into()));
        }
    }
    let groups = pool(buyers);
    let vals: Vec<f64> = groups.iter().map(|g| g.valuation).collect();
    let mut best: Option<(f64, Vec<MenuTier>)> = None;
    for menu in candidate_menus(&vals) {
        let (v, picks) = evaluate_menu(&menu, &groups);
        if best.as_ref().is_none_or(|b| v > b.0 + TIE_REL * (1.0 + v.abs())) {
            best = Some((v, picks));
        }
    }
    let (value, picks) = best.expect("the empty menu is always a candidate");
    let mut allocation = vec![0.0; buyers.len()];
    let mut payment = vec![0.0; buyers.len()];
    for (g, t) in groups.iter().zip(&picks) {
        for &i in &g.members {
            allocation[i] = t.r;
            payment[i] = t.p;
        }
    }
    Ok(MonopolySolution { allocation, payment, value })
}

fn inner_buyers(q: f64, y: f64, d: &TypeDistribution) -> Vec<Buyer> {
    let scale = q / (1.0 - q);
    d.types()
        .iter()
        .map(|t| Buyer { valuation: t.valuation() * scale, surplus_weight: t.mass * t.c, payment_weight: t.mass * y })
        .collect()
}

/// Reduced Lagrangian `max_{(R,P)} Σ mass·[(R·ν − P)·c + y·P] − ρ·Q·y` over
/// IC and IR allocations at uptime `q`, with the optimal mechanism.
pub fn ic_lagrangian(q: f64, y: f64, d: &TypeDistribution, rho: f64) -> (f64, Mechanism) {
    let n = d.len();
    if q <= 0.0 {
        return (0.0, Mechanism::zero(n));
    }
    if q >= 1.0 {
        // No contributions are possible; everyone may use the machine freely.
        return (d.aggregate_usage() - rho * y, Mechanism::new(1.0, vec![1.0; n], vec![0.0; n]));
    }
    let sol = bounded_monopoly_solve(&inner_buyers(q, y, d)).expect("normalized valuations are finite");
    let usage = sol.allocation.iter().map(|r| r * q).collect();
    let contribution = sol.payment.iter().map(|p| p * (1.0 - q)).collect();
    ((1.0 - q) * sol.value - rho * q * y, Mechanism::new(q, usage, contribution))
}

fn contributions(m: &Mechanism, d: &TypeDistribution) -> f64 {
    d.types().iter().zip(&m.contribution).map(|(t, p)| t.mass * p).sum()
}

/// Best uptime for a fixed multiplier, with the induced mechanism.
fn maximize_over_q(y: f64, d: &TypeDistribution, rho: f64) -> (f64, f64, Mechanism) {
    let f = |q: f64| ic_lagrangian(q, y, d, rho).0;
    let (lo, hi) = golden_section_max(f, 0.0, 1.0, GOLDEN_XTOL, GOLDEN_MAX_ITER);
    let mut best: Option<(f64, f64, Mechanism)> = None;
    for q in [0.0, lo, 0.5 * (lo + hi), hi, 1.0] {
        let (v, m) = ic_lagrangian(q, y, d, rho);
        if best.as_ref().is_none_or(|b| v > b.1 + TIE_REL * (1.0 + v.abs())) {
            best = Some((q, v, m));
        }
    }
    best.unwrap()
}

/// Largest value of `Σ mass·P − ρ·Q` over IC and IR mechanisms. A positive
/// value means balance can hold with slack.
pub fn ic_slater_gap(d: &TypeDistribution, rho: f64) -> f64 {
    let revenue = |q: f64| {
        if q <= 0.0 || q >= 1.0 {
            return -rho * q;
        }
        let buyers: Vec<Buyer> = d
            .types()
            .iter()
            .map(|t| Buyer { valuation: t.valuation() * q / (1.0 - q), surplus_weight: 0.0, payment_weight: t.mass })
            .collect();
        (1.0 - q) * bounded_monopoly_solve(&buyers).unwrap().value - rho * q
    };
    let (lo, hi) = golden_section_max(revenue, 0.0, 1.0, GOLDEN_XTOL, GOLDEN_MAX_ITER);
    [0.0, lo, 0.5 * (lo + hi), hi].into_iter().map(revenue).fold(f64::NEG_INFINITY, f64::max)
}

/// Tier layout over valuation groups sorted ascending: groups below `a`
/// opt out; with `Two`, groups in `[a, b)` get a partial bundle and groups
/// from `b` on get `(Q, 1 − Q)`; with `Single`, groups from `a` on share
/// one bundle with full access.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Structure {
    Single { a: usize },
    Two { a: usize, b: usize },
}

/// Affine function of `x = (Q, R̂, P̂)`.
#[derive(Debug, Clone, Copy)]
struct Affine([f64; 3], f64);

impl Affine {
    fn eval(&self, x: &[f64; 3]) -> f64 {
        self.0[0] * x[0] + self.0[1] * x[1] + self.0[2] * x[2] + self.1
    }
    fn sub(self, o: Affine) -> Affine {
        Affine([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]], self.1 - o.1)
    }
    fn scale(self, k: f64) -> Affine {
        Affine([self.0[0] * k, self.0[1] * k, self.0[2] * k], self.1 * k)
    }
    fn add(self, o: Affine) -> Affine {
        self.sub(o.scale(-1.0))
    }
}

#[derive(Debug, Clone, Copy)]
struct Bundle {
    r: Affine,
    p: Affine,
}

const ZERO: Affine = Affine([0.0; 3], 0.0);
const OUT: Bundle = Bundle { r: ZERO, p: ZERO };
const FULL: Bundle = Bundle { r: Affine([1.0, 0.0, 0.0], 0.0), p: Affine([-1.0, 0.0, 0.0], 1.0) };
const PARTIAL: Bundle = Bundle { r: Affine([0.0, 1.0, 0.0], 0.0), p: Affine([0.0, 0.0, 1.0], 0.0) };
const SHARED: Bundle = Bundle { r: Affine([1.0, 0.0, 0.0], 0.0), p: Affine([0.0, 0.0, 1.0], 0.0) };

struct GroupStats {
    valuation: f64,
    members: Vec<usize>,
    mass: f64,
    usage: f64,
    cost: f64,
}

fn type_groups(d: &TypeDistribution) -> Vec<GroupStats> {
    let buyers: Vec<Buyer> = d
        .types()
        .iter()
        .map(|t| Buyer { valuation: t.valuation(), surplus_weight: 0.0, payment_weight: 0.0 })
        .collect();
    pool(&buyers)
        .into_iter()
        .map(|g| {
            let ts = d.types();
            GroupStats {
                valuation: g.valuation,
                mass: g.members.iter().map(|&i| ts[i].mass).sum(),
                usage: g.members.iter().map(|&i| ts[i].mass * ts[i].u).sum(),
                cost: g.members.iter().map(|&i| ts[i].mass * ts[i].c).sum(),
                members: g.members,
            }
        })
        .collect()
}

fn solve3(rows: [&Affine; 3]) -> Option<[f64; 3]> {
    let m = [rows[0].0, rows[1].0, rows[2].0];
    let rhs = [-rows[0].1, -rows[1].1, -rows[2].1];
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let dm = det(&m);
    let norm: f64 = m.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
    if dm.abs() <= 1e-12 * norm * norm * norm {
        return None;
    }
    let mut x = [0.0; 3];
    for (k, xk) in x.iter_mut().enumerate() {
        let mut mk = m;
        for i in 0..3 {
            mk[i][k] = rhs[i];
        }
        *xk = det(&mk) / dm;
    }
    Some(x)
}

/// Welfare-maximizing balanced mechanism with the given tier layout, by
/// enumerating vertices of the three-variable polytope.
fn polish(s: Structure, groups: &[GroupStats], d: &TypeDistribution, rho: f64) -> Option<(f64, Mechanism)> {
    let k = groups.len();
    let (a, b, low) = match s {
        Structure::Single { a } => (a, k, SHARED),
        Structure::Two { a, b } => (a, b, PARTIAL),
    };
    let bundle_of = |g: usize| if g < a { OUT } else if g < b { low } else { FULL };

    // Constraints are `f(x) <= 0`.
    let mut ineq = vec![
        Affine([-1.0, 0.0, 0.0], 0.0),
        Affine([1.0, 0.0, 0.0], -1.0),
        Affine([0.0, 0.0, -1.0], 0.0),
        Affine([1.0, 0.0, 1.0], -1.0),
    ];
    let mut eq = Vec::new();
    match s {
        Structure::Single { .. } => eq.push(Affine([1.0, -1.0, 0.0], 0.0)),
        Structure::Two { .. } => {
            ineq.push(Affine([0.0, -1.0, 0.0], 0.0));
            ineq.push(Affine([-1.0, 1.0, 0.0], 0.0));
        }
    }
    // Single crossing: checking the groups on either side of each boundary
    // suffices because access rises across tiers.
    let prefers = |g: usize, alt: Bundle| {
        let v = groups[g].valuation;
        let own = bundle_of(g);
        alt.r.sub(own.r).scale(v).sub(alt.p.sub(own.p))
    };
    let mut boundary = Vec::new();
    if a > 0 {
        boundary.push(a - 1);
    }
    if a < k {
        boundary.push(a);
    }
    if b > a && b - 1 != a {
        boundary.push(b - 1);
    }
    if b < k && b != a {
        boundary.push(b);
    }
    for g in boundary {
        for alt in [OUT, low, FULL] {
            ineq.push(prefers(g, alt));
        }
    }

    // Balance: Σ mass·P − ρ·Q = 0.
    let mut balance = Affine([-rho, 0.0, 0.0], 0.0);
    let mut objective = ZERO;
    for (g, st) in groups.iter().enumerate() {
        let bd = bundle_of(g);
        balance = balance.add(bd.p.scale(st.mass));
        objective = objective.add(bd.r.scale(st.usage)).sub(bd.p.scale(st.cost));
    }
    eq.insert(0, balance);

    let scale = 1.0 + rho + d.total_mass();
    let feas = 1e-11 * scale;
    let mut best: Option<([f64; 3], f64)> = None;
    let mut consider = |x: [f64; 3]| {
        if eq.iter().any(|e| e.eval(&x).abs() > feas) || ineq.iter().any(|c| c.eval(&x) > feas) {
            return;
        }
        let v = objective.eval(&x);
        let better = match &best {
            None => true,
            Some((bx, bv)) => v > bv + TIE_REL * scale || (v >= bv - TIE_REL * scale && x[0] < bx[0]),
        };
        if better {
            best = Some((x, v));
        }
    };
    match eq.len() {
        2 => {
            for c in &ineq {
                if let Some(x) = solve3([&eq[0], &eq[1], c]) {
                    consider(x);
                }
            }
        }
        _ => {
            for i in 0..ineq.len() {
                for j in i + 1..ineq.len() {
                    if let Some(x) = solve3([&eq[0], &ineq[i], &ineq[j]]) {
                        consider(x);
                    }
                }
            }
        }
    }
    let (x, _) = best?;
    let q = x[0].clamp(0.0, 1.0);
    let mut usage = vec![0.0; d.len()];
    let mut contribution = vec![0.0; d.len()];
    for (g, st) in groups.iter().enumerate() {
        let bd = bundle_of(g);
        let (r, p) = (bd.r.eval(&x).clamp(0.0, q), bd.p.eval(&x).clamp(0.0, 1.0 - q));
        for &i in &st.members {
            usage[i] = r;
            contribution[i] = p;
        }
    }
    let m = Mechanism::new(q, usage, contribution);
    Some((welfare(&m, d), m))
}

fn all_structures(k: usize) -> Vec<Structure> {
    let mut out: Vec<Structure> = (0..=k).map(|a| Structure::Single { a }).collect();
    for a in 0..k {
        for b in a + 1..k {
            out.push(Structure::Two { a, b });
        }
    }
    out
}

/// Tier layout of a mechanism over the valuation groups.
fn structure_of(m: &Mechanism, groups: &[GroupStats]) -> (usize, usize) {
    let k = groups.len();
    let tol = 1e-9;
    let a = groups
        .iter()
        .position(|g| {
            let (r, p) = m.bundle(g.members[0]);
            r > tol || p > tol
        })
        .unwrap_or(k);
    let b = groups
        .iter()
        .position(|g| {
            let (r, p) = m.bundle(g.members[0]);
            (r - m.uptime).abs() <= tol && (p - (1.0 - m.uptime)).abs() <= tol && r > tol
        })
        .unwrap_or(k);
    (a, b.max(a))
}

fn nearby_structures(k: usize, centers: &[(usize, usize)]) -> Vec<Structure> {
    all_structures(k)
        .into_iter()
        .filter(|s| {
            let (a, b) = match *s {
                Structure::Single { a } => (a, k),
                Structure::Two { a, b } => (a, b),
            };
            centers.iter().any(|&(ca, cb)| a.abs_diff(ca) <= POLISH_WINDOW && b.abs_diff(cb) <= POLISH_WINDOW)
        })
        .collect()
}

pub fn solve_screening(d: &TypeDistribution, rho: f64, tol: f64) -> Result<ScreeningSolution> {
    check_rate(rho)?;
    check_tol(tol)?;
    let groups = type_groups(d);
    let k = groups.len();

    let mut iterations = 0;
    let (y_star, centers) = if ic_slater_gap(d, rho) <= tol {
        (Multiplier::Infinite, Vec::new())
    } else {
        let residual = |y: f64| {
            let (_, _, m) = maximize_over_q(y, d, rho);
            (contributions(&m, d) - rho * m.uptime, m)
        };
        let mut hi = (d.aggregate_usage() + d.aggregate_cost()) / rho + d.max_cost() + 1.0;
        let mut doublings = 0;
        while residual(hi).0 < 0.0 {
            hi *= 2.0;
            doublings += 1;
            if doublings > MAX_DOUBLINGS {
                return Err(Error::Degenerate("screening multiplier diverges despite slack balance".into()));
            }
        }
        let mut lo = 0.0;
        let eps = TIE_REL * (1.0 + rho + d.total_mass());
        while iterations < MAX_BISECTIONS && hi - lo > 1e-13 * hi.max(1.0) {
            let mid = 0.5 * (lo + hi);
            if residual(mid).0 >= -eps {
                hi = mid;
            } else {
                lo = mid;
            }
            iterations += 1;
        }
        let delta = 1e-6 * hi.max(1.0);
        let centers = [hi, hi + delta, (hi - delta).max(0.0)]
            .into_iter()
            .map(|y| structure_of(&residual(y).1, &groups))
            .collect::<Vec<_>>();
        (Multiplier::Finite(hi), centers)
    };

    let candidates = if k <= FULL_POLISH_GROUPS || centers.is_empty() { all_structures(k) } else { nearby_structures(k, &centers) };
    let scale = 1.0 + d.aggregate_usage();
    let mut best: Option<(f64, Mechanism, bool)> = None;
    for s in candidates {
        let Some((w, m)) = polish(s, &groups, d, rho) else { continue };
        let rep = check_feasible(&m, d, rho, &ConstraintFamily::ALL, tol);
        if !rep.all_pass() {
            continue;
        }
        let structured = structure_holds(&m, d, tol);
        let better = match &best {
            None => true,
            Some((bw, bm, bs)) => {
                w > bw + TIE_REL * scale
                    || w >= bw - TIE_REL * scale && (structured && !bs || structured == *bs && m.uptime < bm.uptime)
            }
        };
        if better {
            best = Some((w, m, structured));
        }
    }
    let (w, mechanism, _) =
        best.ok_or_else(|| Error::Degenerate("no feasible screening mechanism found".into()))?;
    let (tiers, assignment) = tiers_of(&mechanism, tol);
    Ok(ScreeningSolution { y_star, q_star: mechanism.uptime, w_star: w, mechanism, tiers, assignment, iterations })
}

fn tiers_of(m: &Mechanism, tol: f64) -> (Vec<MenuTier>, Vec<Option<usize>>) {
    let mut bundles: Vec<(f64, f64)> = Vec::new();
    for i in 0..m.len() {
        let (r, p) = m.bundle(i);
        if (r > tol || p > tol) && !bundles.iter().any(|&(br, bp)| (br - r).abs() <= tol && (bp - p).abs() <= tol) {
            bundles.push((r, p));
        }
    }
    bundles.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));
    let assignment = (0..m.len())
        .map(|i| {
            let (r, p) = m.bundle(i);
            bundles.iter().position(|&(br, bp)| (br - r).abs() <= tol && (bp - p).abs() <= tol)
        })
        .collect();
    let q = m.uptime;
    let tiers = bundles
        .into_iter()
        .map(|(r, p)| MenuTier {
            r: if q > 0.0 { r / q } else { 0.0 },
            p: if q < 1.0 { p / (1.0 - q) } else { 0.0 },
        })
        .collect();
    (tiers, assignment)
}

fn structure_holds(m: &Mechanism, d: &TypeDistribution, tol: f64) -> bool {
    let (tiers, assignment) = tiers_of(m, tol);
    let q = m.uptime;
    if tiers.len() > 2 {
        return false;
    }
    let rank = |i: usize| assignment[i].map_or(0, |t| t + 1);
    let ts = d.types();
    for i in 0..ts.len() {
        for j in 0..ts.len() {
            if ts[i].valuation() > ts[j].valuation() && rank(i) < rank(j) {
                return false;
            }
        }
    }
    let top = |t: &MenuTier| (t.r * q, t.p * (1.0 - q));
    match tiers.as_slice() {
        [one] => (top(one).0 - q).abs() <= tol,
        [_, hi] => (top(hi).1 - (1.0 - q)).abs() <= tol,
        _ => true,
    }
}

/// Whether the mechanism has the two-tier form: at most two nonzero
/// bundles, assigned monotonically in valuation, with the top bundle
/// demanding the full contribution when there are two and granting full
/// access when there is one.
pub fn verify_structure(sol: &ScreeningSolution, d: &TypeDistribution, tol: f64) -> bool {
    structure_holds(&sol.mechanism, d, tol)
}
