//! Steady-state simulation of Markovian maintenance policies.
//!
//! A Markovian policy conditions each agent's behaviour only on whether the
//! machine is working. Two microfoundations are simulated:
//!
//! * **Poisson**: agents of each type arrive at rate equal to the type's
//!   mass. While the machine works, an arrival uses it with probability
//!   `σ_W`; while it is broken, an arrival contributes with probability
//!   `σ_B` and the first contribution fixes it.
//! * **Fluid**: a continuum of long-lived agents. A broken machine needs a
//!   random contribution quantum, supplied at the aggregate rate
//!   `Σ mass·σ_B`.
//!
//! In both, lifespans are i.i.d. with mean `1/ρ` and the machine starts
//! working at time 0. Every breakdown is a regeneration point, so
//! estimates are ratio estimators over complete break-to-break cycles,
//! with 95% normal confidence radii from the delta method. The first 10
//! lifespans are discarded as warm-up.
//!
//! Per-type usage and contribution estimates are per unit mass, so they
//! are directly comparable to a mechanism's `R` and `P`.

use std::io::{self, Write};

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{DurationLaw, Mechanism, PhysicalParams, TypeDistribution};

/// Lifespans discarded before statistics are accumulated.
pub const WARMUP_LIFESPANS: usize = 10;

const Z95: f64 = 1.96;

/// Header line of a trace dump.
pub const TRACE_HEADER: &str = "# upkeep-trace v1";

/// State-contingent behaviour per type, aligned with the distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovPolicy {
    /// Probability of using the machine when it is working.
    pub sigma_w: Vec<f64>,
    /// Probability of contributing when it is broken.
    pub sigma_b: Vec<f64>,
}

impl MarkovPolicy {
    pub fn new(sigma_w: Vec<f64>, sigma_b: Vec<f64>) -> Result<Self> {
        if sigma_w.len() != sigma_b.len() {
            return Err(Error::InvalidInput("policy vectors differ in length".into()));
        }
        if let Some(v) = sigma_w.iter().chain(&sigma_b).find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!("policy probability {v} outside [0, 1]")));
        }
        Ok(Self { sigma_w, sigma_b })
    }

    pub fn len(&self) -> usize {
        self.sigma_w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma_w.is_empty()
    }
}

/// `σ_W = R/Q` and `σ_B = P/(1−Q)`, with `σ_W = 0` when `Q = 0` and
/// `σ_B = 0` when `Q = 1`. Ratios are clipped into `[0, 1]` to absorb
/// rounding in the mechanism.
pub fn build_policy(m: &Mechanism) -> MarkovPolicy {
    let q = m.uptime;
    let ratio = |x: f64, denom: f64| if denom > 0.0 { (x / denom).clamp(0.0, 1.0) } else { 0.0 };
    MarkovPolicy {
        sigma_w: m.usage.iter().map(|&r| ratio(r, q)).collect(),
        sigma_b: m.contribution.iter().map(|&p| ratio(p, 1.0 - q)).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Microfoundation {
    Poisson,
    Fluid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MachineState {
    Working,
    Broken,
}

impl MachineState {
    fn label(self) -> &'static str {
        match self {
            MachineState::Working => "WORKING",
            MachineState::Broken => "BROKEN",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Break,
    Fix,
    Arrival,
    Use,
    Contribute,
}

impl EventKind {
    fn label(self) -> &'static str {
        match self {
            EventKind::Break => "BREAK",
            EventKind::Fix => "FIX",
            EventKind::Arrival => "ARRIVAL",
            EventKind::Use => "USE",
            EventKind::Contribute => "CONTRIBUTE",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "BREAK" => EventKind::Break,
            "FIX" => EventKind::Fix,
            "ARRIVAL" => EventKind::Arrival,
            "USE" => EventKind::Use,
            "CONTRIBUTE" => EventKind::Contribute,
            _ => return None,
        })
    }
}

/// Admissibility checks evaluated on the event stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Admissibility {
    pub usage_only_while_working: bool,
    pub contribution_only_while_broken: bool,
    /// Empirical lifespan mean consistent with `1/ρ`.
    pub lifespan_mean: bool,
}

impl Admissibility {
    pub fn all(&self) -> bool {
        self.usage_only_while_working && self.contribution_only_while_broken && self.lifespan_mean
    }
}

/// Empirical reduced form of one simulation run. Every estimate carries a
/// 95% confidence radius, infinite when fewer than two post-warm-up cycles
/// completed.
#[derive(Debug, Clone, PartialEq)]
pub struct SimStats {
    pub q_hat: f64,
    pub q_ci: f64,
    pub r_hat: Vec<f64>,
    pub r_ci: Vec<f64>,
    pub p_hat: Vec<f64>,
    pub p_ci: Vec<f64>,
    /// Breakdowns over the whole run.
    pub n_breaks: usize,
    /// Complete cycles after warm-up.
    pub cycles: usize,
    /// Breakdowns per unit time.
    pub break_rate: f64,
    pub break_rate_ci: f64,
    pub lifespan_mean: f64,
    pub lifespan_ci: f64,
    pub admissibility: Admissibility,
    pub rho: f64,
    pub mass: Vec<f64>,
}

/// Outcome of comparing a simulation against a target mechanism.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedFormReport {
    pub uptime_ok: bool,
    pub usage_ok: Vec<bool>,
    pub contribution_ok: Vec<bool>,
    pub admissible: bool,
    /// `ρ·Q̂ − Σ mass·P̂`.
    pub balance_gap: f64,
    pub balance_ci: f64,
    pub balance_ok: bool,
    /// Breakdown rate consistent with both `ρ·Q̂` and `Σ mass·P̂`.
    pub break_rate_ok: bool,
}

impl ReducedFormReport {
    pub fn passes(&self) -> bool {
        self.uptime_ok
            && self.usage_ok.iter().all(|b| *b)
            && self.contribution_ok.iter().all(|b| *b)
            && self.admissible
            && self.balance_ok
            && self.break_rate_ok
    }
}

/// Absolute slack added to every interval so that exact (zero-variance)
/// estimates compare equal to their targets despite rounding.
const EXACT_SLACK: f64 = 1e-9;

pub fn check_reduced_form(stats: &SimStats, target: &Mechanism, sigma_mult: f64) -> Result<ReducedFormReport> {
    if !(sigma_mult >= 1.0) {
        return Err(Error::InvalidInput(format!("sigma_mult must be at least 1, got {sigma_mult}")));
    }
    if target.len() != stats.r_hat.len() {
        return Err(Error::InvalidInput("target and statistics differ in size".into()));
    }
    let within = |est: f64, ci: f64, goal: f64| (est - goal).abs() <= sigma_mult * ci + EXACT_SLACK;
    let usage_ok = (0..target.len()).map(|i| within(stats.r_hat[i], stats.r_ci[i], target.usage[i])).collect();
    let contribution_ok =
        (0..target.len()).map(|i| within(stats.p_hat[i], stats.p_ci[i], target.contribution[i])).collect();

    let inflow: f64 = stats.mass.iter().zip(&stats.p_hat).map(|(m, p)| m * p).sum();
    let inflow_ci: f64 = stats.mass.iter().zip(&stats.p_ci).filter(|(m, _)| **m > 0.0).map(|(m, c)| m * c).sum();
    let outflow = stats.rho * stats.q_hat;
    let outflow_ci = stats.rho * stats.q_ci;
    let balance_ci = inflow_ci + outflow_ci;
    let balance_gap = outflow - inflow;
    let break_rate_ok = (stats.break_rate - outflow).abs() <= stats.break_rate_ci + outflow_ci + EXACT_SLACK
        && (stats.break_rate - inflow).abs() <= stats.break_rate_ci + inflow_ci + EXACT_SLACK;

    Ok(ReducedFormReport {
        uptime_ok: within(stats.q_hat, stats.q_ci, target.uptime),
        usage_ok,
        contribution_ok,
        admissible: stats.admissibility.all(),
        balance_gap,
        balance_ci,
        balance_ok: balance_gap.abs() <= balance_ci + EXACT_SLACK,
        break_rate_ok,
    })
}

pub fn simulate_poisson(
    pol: &MarkovPolicy,
    d: &TypeDistribution,
    phys: &PhysicalParams,
    horizon: f64,
    seed: Option<u64>,
) -> Result<SimStats> {
    simulate(Microfoundation::Poisson, pol, d, phys, horizon, seed, 0, None)
}

pub fn simulate_fluid(
    pol: &MarkovPolicy,
    d: &TypeDistribution,
    phys: &PhysicalParams,
    horizon: f64,
    seed: Option<u64>,
) -> Result<SimStats> {
    simulate(Microfoundation::Fluid, pol, d, phys, horizon, seed, 0, None)
}

/// Runs one simulation on RNG stream `stream`, writing every event to
/// `trace` when given.
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    kind: Microfoundation,
    pol: &MarkovPolicy,
    d: &TypeDistribution,
    phys: &PhysicalParams,
    horizon: f64,
    seed: Option<u64>,
    stream: u64,
    trace: Option<&mut dyn Write>,
) -> Result<SimStats> {
    let seed = seed.ok_or(Error::MissingSeed)?;
    crate::error::check_rate(phys.rho)?;
    if pol.len() != d.len() {
        return Err(Error::InvalidInput("policy and distribution differ in size".into()));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidInput(format!("horizon must be positive and finite, got {horizon}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let ids: Vec<&str> = d.types().iter().map(|t| t.id.as_str()).collect();
    let mass: Vec<f64> = d.types().iter().map(|t| t.mass).collect();
    let mut rec = match kind {
        Microfoundation::Poisson => Recorder::new(&ids, &mass, vec![0.0; d.len()], vec![0.0; d.len()], trace),
        Microfoundation::Fluid => Recorder::new(&ids, &mass, pol.sigma_w.clone(), pol.sigma_b.clone(), trace),
    };
    rec.header()?;
    match kind {
        Microfoundation::Poisson => run_poisson(&mut rec, pol, &mass, phys, horizon, &mut rng)?,
        Microfoundation::Fluid => run_fluid(&mut rec, pol, &mass, phys, horizon, &mut rng)?,
    }
    Ok(rec.finish(phys.rho))
}

/// Independent replications on disjoint RNG streams `0..reps`, run in
/// parallel. Output order follows the stream index.
pub fn replicate(
    kind: Microfoundation,
    pol: &MarkovPolicy,
    d: &TypeDistribution,
    phys: &PhysicalParams,
    horizon: f64,
    seed: Option<u64>,
    reps: usize,
) -> Result<Vec<SimStats>> {
    (0..reps as u64)
        .into_par_iter()
        .map(|s| simulate(kind, pol, d, phys, horizon, seed, s, None))
        .collect()
}

/// Mean uptime across replications with a 95% radius from their spread.
pub fn pooled_uptime(runs: &[SimStats]) -> (f64, f64) {
    let q: Vec<f64> = runs.iter().map(|s| s.q_hat).collect();
    let (mean, var) = mean_var(&q);
    (mean, Z95 * (var / q.len() as f64).sqrt())
}

fn draw(law: DurationLaw, mean: f64, rng: &mut ChaCha8Rng) -> f64 {
    match law {
        DurationLaw::Deterministic => mean,
        DurationLaw::Exponential => Exp::new(1.0 / mean).expect("positive rate").sample(rng),
    }
}

fn run_poisson(
    rec: &mut Recorder<'_>,
    pol: &MarkovPolicy,
    mass: &[f64],
    phys: &PhysicalParams,
    horizon: f64,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let total: f64 = mass.iter().sum();
    let picker = WeightedIndex::new(mass).map_err(|e| Error::InvalidInput(format!("type masses: {e}")))?;
    let gap = Exp::new(total).map_err(|e| Error::InvalidInput(format!("arrival rate: {e}")))?;
    let mut state = MachineState::Working;
    let mut break_at = draw(phys.lifespan, phys.lifespan_mean(), rng);
    let mut next_arrival = gap.sample(rng);
    loop {
        if state == MachineState::Working && break_at <= next_arrival {
            if break_at > horizon {
                break;
            }
            state = MachineState::Broken;
            rec.event(break_at, EventKind::Break, None, state)?;
            continue;
        }
        if next_arrival > horizon {
            break;
        }
        let t = next_arrival;
        next_arrival = t + gap.sample(rng);
        let i = picker.sample(rng);
        rec.event(t, EventKind::Arrival, Some(i), state)?;
        match state {
            MachineState::Working => {
                if rng.random_bool(pol.sigma_w[i]) {
                    rec.event(t, EventKind::Use, Some(i), state)?;
                }
            }
            MachineState::Broken => {
                if rng.random_bool(pol.sigma_b[i]) {
                    rec.event(t, EventKind::Contribute, Some(i), state)?;
                    state = MachineState::Working;
                    rec.event(t, EventKind::Fix, None, state)?;
                    break_at = t + draw(phys.lifespan, phys.lifespan_mean(), rng);
                }
            }
        }
    }
    rec.close(horizon, state);
    Ok(())
}

fn run_fluid(
    rec: &mut Recorder<'_>,
    pol: &MarkovPolicy,
    mass: &[f64],
    phys: &PhysicalParams,
    horizon: f64,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let rate: f64 = mass.iter().zip(&pol.sigma_b).map(|(m, s)| m * s).sum();
    let mut t = 0.0;
    loop {
        t += draw(phys.lifespan, phys.lifespan_mean(), rng);
        if t > horizon {
            rec.close(horizon, MachineState::Working);
            return Ok(());
        }
        rec.event(t, EventKind::Break, None, MachineState::Broken)?;
        if rate <= 0.0 {
            rec.close(horizon, MachineState::Broken);
            return Ok(());
        }
        t += draw(phys.quantum, 1.0, rng) / rate;
        if t > horizon {
            rec.close(horizon, MachineState::Broken);
            return Ok(());
        }
        rec.event(t, EventKind::Fix, None, MachineState::Working)?;
    }
}

#[derive(Debug, Clone)]
struct Cycle {
    len: f64,
    working: f64,
    usage: Vec<f64>,
    contribution: Vec<f64>,
}

impl Cycle {
    fn new(n: usize) -> Self {
        Cycle { len: 0.0, working: 0.0, usage: vec![0.0; n], contribution: vec![0.0; n] }
    }
}

/// Accumulates time, per-type activity and cycles from the event stream,
/// checks admissibility as events arrive, and optionally writes the trace.
struct Recorder<'a> {
    ids: Vec<String>,
    mass: Vec<f64>,
    flow_w: Vec<f64>,
    flow_b: Vec<f64>,
    trace: Option<&'a mut dyn Write>,
    checker: TraceChecker,
    clock: f64,
    state: MachineState,
    n_breaks: usize,
    current: Cycle,
    totals: Cycle,
    cycles: Vec<Cycle>,
    lifespan_start: f64,
    lifespans: Vec<f64>,
}

impl<'a> Recorder<'a> {
    fn new(ids: &[&str], mass: &[f64], flow_w: Vec<f64>, flow_b: Vec<f64>, trace: Option<&'a mut dyn Write>) -> Self {
        let n = ids.len();
        Recorder {
            ids: ids.iter().map(|s| s.to_string()).collect(),
            mass: mass.to_vec(),
            flow_w,
            flow_b,
            trace,
            checker: TraceChecker::new(MachineState::Working),
            clock: 0.0,
            state: MachineState::Working,
            n_breaks: 0,
            current: Cycle::new(n),
            totals: Cycle::new(n),
            cycles: Vec::new(),
            lifespan_start: 0.0,
            lifespans: Vec::new(),
        }
    }

    fn header(&mut self) -> io::Result<()> {
        if let Some(w) = self.trace.as_mut() {
            writeln!(w, "{TRACE_HEADER}")?;
        }
        Ok(())
    }

    fn in_window(&self) -> bool {
        self.n_breaks >= WARMUP_LIFESPANS
    }

    fn advance(&mut self, t: f64) {
        let dt = t - self.clock;
        self.clock = t;
        let flow = match self.state {
            MachineState::Working => &self.flow_w,
            MachineState::Broken => &self.flow_b,
        };
        let window = self.n_breaks >= WARMUP_LIFESPANS;
        for c in std::iter::once(&mut self.totals).chain(window.then_some(&mut self.current)) {
            c.len += dt;
            if self.state == MachineState::Working {
                c.working += dt;
            }
            let target = match self.state {
                MachineState::Working => &mut c.usage,
                MachineState::Broken => &mut c.contribution,
            };
            for (acc, f) in target.iter_mut().zip(flow) {
                *acc += f * dt;
            }
        }
    }

    fn event(&mut self, t: f64, kind: EventKind, who: Option<usize>, after: MachineState) -> io::Result<()> {
        self.advance(t);
        self.checker.observe(kind, after);
        if let Some(w) = self.trace.as_mut() {
            let id = who.map_or("-", |i| self.ids[i].as_str());
            writeln!(w, "{t:.9}\t{}\t{id}\t{}", kind.label(), after.label())?;
        }
        let window = self.in_window();
        match kind {
            EventKind::Break => {
                self.lifespans.push(t - self.lifespan_start);
                if window {
                    let n = self.ids.len();
                    self.cycles.push(std::mem::replace(&mut self.current, Cycle::new(n)));
                }
                self.n_breaks += 1;
            }
            EventKind::Fix => self.lifespan_start = t,
            EventKind::Use | EventKind::Contribute => {
                let i = who.expect("activity events carry a type");
                let share = 1.0 / self.mass[i];
                let pick = |c: &mut Cycle| {
                    if kind == EventKind::Use {
                        c.usage[i] += share
                    } else {
                        c.contribution[i] += share
                    }
                };
                pick(&mut self.totals);
                if window {
                    pick(&mut self.current);
                }
            }
            EventKind::Arrival => {}
        }
        self.state = after;
        Ok(())
    }

    fn close(&mut self, horizon: f64, state: MachineState) {
        debug_assert_eq!(state, self.state);
        self.advance(horizon);
    }

    fn finish(self, rho: f64) -> SimStats {
        let n = self.ids.len();
        let k = self.cycles.len();
        let (q_hat, q_ci, r_hat, r_ci, p_hat, p_ci, break_rate, break_rate_ci);
        if k >= 2 {
            let lens: Vec<f64> = self.cycles.iter().map(|c| c.len).collect();
            let est = |xs: Vec<f64>| ratio_estimate(&xs, &lens);
            (q_hat, q_ci) = est(self.cycles.iter().map(|c| c.working).collect());
            let per_type = |f: &dyn Fn(&Cycle, usize) -> f64| -> (Vec<f64>, Vec<f64>) {
                (0..n)
                    .map(|i| {
                        if self.mass[i] > 0.0 {
                            est(self.cycles.iter().map(|c| f(c, i)).collect())
                        } else {
                            (0.0, f64::INFINITY)
                        }
                    })
                    .unzip()
            };
            (r_hat, r_ci) = per_type(&|c, i| c.usage[i]);
            (p_hat, p_ci) = per_type(&|c, i| c.contribution[i]);
            (break_rate, break_rate_ci) = est(vec![1.0; k]);
        } else {
            // No regeneration to speak of: plain time averages, no interval.
            let t = self.totals.len;
            q_hat = self.totals.working / t;
            q_ci = f64::INFINITY;
            let avg = |v: &[f64]| -> Vec<f64> {
                v.iter().zip(&self.mass).map(|(x, m)| if *m > 0.0 { x / t } else { 0.0 }).collect()
            };
            r_hat = avg(&self.totals.usage);
            p_hat = avg(&self.totals.contribution);
            r_ci = vec![f64::INFINITY; n];
            p_ci = vec![f64::INFINITY; n];
            break_rate = self.n_breaks as f64 / t;
            break_rate_ci = f64::INFINITY;
        }

        let (lifespan_mean, var) = mean_var(&self.lifespans);
        let lifespan_ci = if self.lifespans.len() >= 2 {
            Z95 * (var / self.lifespans.len() as f64).sqrt()
        } else {
            f64::INFINITY
        };
        let target = 1.0 / rho;
        let lifespan_ok = self.lifespans.is_empty()
            || (lifespan_mean - target).abs() <= 2.0 * lifespan_ci + EXACT_SLACK * target.max(1.0);

        SimStats {
            q_hat,
            q_ci,
            r_hat,
            r_ci,
            p_hat,
            p_ci,
            n_breaks: self.n_breaks,
            cycles: k,
            break_rate,
            break_rate_ci,
            lifespan_mean,
            lifespan_ci,
            admissibility: Admissibility {
                usage_only_while_working: self.checker.usage_ok,
                contribution_only_while_broken: self.checker.contribution_ok,
                lifespan_mean: lifespan_ok,
            },
            rho,
            mass: self.mass,
        }
    }
}

/// `ΣX/ΣL` over i.i.d. cycles with a delta-method 95% radius.
fn ratio_estimate(x: &[f64], len: &[f64]) -> (f64, f64) {
    let k = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sl: f64 = len.iter().sum();
    let r = sx / sl;
    let ss: f64 = x.iter().zip(len).map(|(a, l)| (a - r * l).powi(2)).sum();
    let s = (ss / (k - 1.0)).sqrt();
    (r, Z95 * s / ((sl / k) * k.sqrt()))
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = x.iter().sum::<f64>() / n;
    let var = if x.len() > 1 { x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var)
}

/// Incremental admissibility check on an event stream.
#[derive(Debug, Clone)]
struct TraceChecker {
    state: MachineState,
    usage_ok: bool,
    contribution_ok: bool,
    transitions_ok: bool,
}

impl TraceChecker {
    fn new(initial: MachineState) -> Self {
        TraceChecker { state: initial, usage_ok: true, contribution_ok: true, transitions_ok: true }
    }

    fn observe(&mut self, kind: EventKind, after: MachineState) {
        use MachineState::*;
        let before = self.state;
        match kind {
            EventKind::Use => self.usage_ok &= before == Working && after == Working,
            EventKind::Contribute => self.contribution_ok &= before == Broken,
            EventKind::Break => self.transitions_ok &= before == Working && after == Broken,
            EventKind::Fix => self.transitions_ok &= before == Broken && after == Working,
            EventKind::Arrival => self.transitions_ok &= before == after,
        }
        if kind == EventKind::Contribute {
            self.transitions_ok &= after == Broken;
        }
        self.state = after;
    }
}

/// Result of checking a written trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceReport {
    pub events: usize,
    pub usage_only_while_working: bool,
    pub contribution_only_while_broken: bool,
    /// Every BREAK leaves a working machine and every FIX a broken one.
    pub consistent_transitions: bool,
    /// Timestamps never decrease.
    pub ordered: bool,
}

impl TraceReport {
    pub fn admissible(&self) -> bool {
        self.usage_only_while_working && self.contribution_only_while_broken && self.consistent_transitions && self.ordered
    }
}

/// Re-checks admissibility of a trace produced by [`simulate`]. The
/// machine is assumed to be working before the first event.
pub fn check_trace(text: &str) -> Result<TraceReport> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == TRACE_HEADER => {}
        _ => return Err(Error::Parse { line: 1, message: format!("expected header {TRACE_HEADER:?}") }),
    }
    let mut checker = TraceChecker::new(MachineState::Working);
    let mut events = 0;
    let mut last = f64::NEG_INFINITY;
    let mut ordered = true;
    for (k, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| Error::Parse { line: k + 1, message };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(bad(format!("expected 4 tab-separated fields, got {}", f.len())));
        }
        let t: f64 = f[0].parse().map_err(|_| bad(format!("bad time {:?}", f[0])))?;
        let kind = EventKind::parse(f[1]).ok_or_else(|| bad(format!("unknown event {:?}", f[1])))?;
        let after = match f[3] {
            "WORKING" => MachineState::Working,
            "BROKEN" => MachineState::Broken,
            s => return Err(bad(format!("unknown state {s:?}"))),
        };
        ordered &= t >= last;
        last = t;
        checker.observe(kind, after);
        events += 1;
    }
    Ok(TraceReport {
        events,
        usage_only_while_working: checker.usage_ok,
        contribution_only_while_broken: checker.contribution_ok,
        consistent_transitions: checker.transitions_ok,
        ordered,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::*;

    #[test]
    fn policy_examples() {
        let pol = build_policy(&example_two_screening());
        let expect_w = [1.0, 2.0 / 3.0, 0.0];
        let expect_b = [1.0, 2.0 / 7.0, 0.0];
        for i in 0..3 {
            assert!((pol.sigma_w[i] - expect_w[i]).abs() < 1e-12);
            assert!((pol.sigma_b[i] - expect_b[i]).abs() < 1e-12);
        }
        let zero = build_policy(&Mechanism::zero(3));
        assert_eq!(zero.sigma_w, vec![0.0; 3]);
        assert_eq!(zero.sigma_b, vec![0.0; 3]);
        let full = build_policy(&Mechanism::new(1.0, vec![1.0], vec![0.0]));
        assert_eq!(full.sigma_b, vec![0.0]);
    }

    #[test]
    fn seed_is_required() {
        let d = example_two();
        let pol = build_policy(&example_two_screening());
        let phys = PhysicalParams::new(1.0).unwrap();
        assert!(matches!(simulate_poisson(&pol, &d, &phys, 100.0, None), Err(Error::MissingSeed)));
        assert!(matches!(simulate_fluid(&pol, &d, &phys, 100.0, None), Err(Error::MissingSeed)));
    }

    #[test]
    fn policy_validation() {
        assert!(MarkovPolicy::new(vec![1.2], vec![0.0]).is_err());
        assert!(MarkovPolicy::new(vec![1.0], vec![]).is_err());
    }

    #[test]
    fn never_fixed_machine_stays_down() {
        let d = example_two();
        let pol = MarkovPolicy::new(vec![1.0; 3], vec![0.0; 3]).unwrap();
        let phys = PhysicalParams::new(1.0).unwrap();
        for kind in [Microfoundation::Poisson, Microfoundation::Fluid] {
            let s = simulate(kind, &pol, &d, &phys, 1e5, Some(3), 0, None).unwrap();
            assert_eq!(s.n_breaks, 1);
            assert!(s.q_hat < 1e-3, "{}", s.q_hat);
            assert!(s.q_ci.is_infinite());
        }
    }

    #[test]
    fn deterministic_fluid_cycle_is_exact() {
        let d = TypeDistribution::from_tuples([("a", 1.0, 1.0, 1.0)]).unwrap();
        let pol = MarkovPolicy::new(vec![1.0], vec![1.0]).unwrap();
        let rho = 2.0;
        let phys = PhysicalParams::new(rho)
            .unwrap()
            .with_lifespan(DurationLaw::Deterministic)
            .with_quantum(DurationLaw::Deterministic);
        let s = simulate_fluid(&pol, &d, &phys, 1000.0, Some(1)).unwrap();
        let q = (1.0 / rho) / (1.0 / rho + 1.0);
        assert!((s.q_hat - q).abs() < 1e-9, "{}", s.q_hat);
        assert!(s.q_ci < 1e-9);
        assert!(s.admissibility.all());
    }

    #[test]
    fn same_seed_same_stats() {
        let d = example_two();
        let pol = build_policy(&example_two_screening());
        let phys = PhysicalParams::new(1.0).unwrap();
        let a = simulate_poisson(&pol, &d, &phys, 2000.0, Some(9)).unwrap();
        let b = simulate_poisson(&pol, &d, &phys, 2000.0, Some(9)).unwrap();
        assert_eq!(a, b);
        let c = simulate_poisson(&pol, &d, &phys, 2000.0, Some(10)).unwrap();
        assert_ne!(a.q_hat, c.q_hat);
    }

    #[test]
    fn wrong_target_is_rejected() {
        let d = example_two();
        let m = example_two_screening();
        let pol = build_policy(&m);
        let phys = PhysicalParams::new(1.0).unwrap();
        let s = simulate_poisson(&pol, &d, &phys, 1e5, Some(1)).unwrap();
        assert!(check_reduced_form(&s, &m, 4.0).unwrap().passes());
        let mut off = m.clone();
        off.uptime += 0.1;
        assert!(!check_reduced_form(&s, &off, 4.0).unwrap().passes());
        assert!(check_reduced_form(&s, &m, 0.5).is_err());
    }

    #[test]
    fn zero_policy_matches_zero_mechanism() {
        let d = example_two();
        let m = Mechanism::zero(3);
        let phys = PhysicalParams::new(1.0).unwrap();
        let s = simulate_poisson(&build_policy(&m), &d, &phys, 1e4, Some(1)).unwrap();
        assert!(check_reduced_form(&s, &m, 4.0).unwrap().passes());
    }

    #[test]
    fn trace_round_trip() {
        let d = example_two();
        let pol = build_policy(&example_two_screening());
        let phys = PhysicalParams::new(1.0).unwrap();
        let mut buf = Vec::new();
        simulate(Microfoundation::Poisson, &pol, &d, &phys, 500.0, Some(4), 0, Some(&mut buf)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rep = check_trace(&text).unwrap();
        assert!(rep.events > 100);
        assert!(rep.admissible());
        let forged = format!("{text}1e9\tUSE\tH\tBROKEN\n");
        assert!(!check_trace(&forged).unwrap().usage_only_while_working);
        assert!(check_trace("nonsense").is_err());
    }

    #[test]
    fn replications_use_distinct_streams() {
        let d = example_two();
        let pol = build_policy(&example_two_screening());
        let phys = PhysicalParams::new(1.0).unwrap();
        let runs = replicate(Microfoundation::Fluid, &pol, &d, &phys, 5000.0, Some(2), 4).unwrap();
        assert_eq!(runs.len(), 4);
        assert_ne!(runs[0].q_hat, runs[1].q_hat);
        let again = replicate(Microfoundation::Fluid, &pol, &d, &phys, 5000.0, Some(2), 4).unwrap();
        assert_eq!(runs, again);
        let (q, ci) = pooled_uptime(&runs);
        assert!((q - 0.3).abs() < 4.0 * ci + 1e-3);
    }
}
