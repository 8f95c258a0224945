//! Command-line front end: file ingestion, dispatch and CSV output.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Parser, ValueEnum};
use rayon::prelude::*;

use crate::error::Error;
use crate::first_best::solve_first_best;
use crate::model::{balance_residual, AgentType, Mechanism, PhysicalParams, TypeDistribution, DEFAULT_TOL};
use crate::oracle::{lp_screening_welfare, primal_grid_welfare, GridSpec, PrimalMode, LP_MAX_TYPES};
use crate::participation::solve_participation;
use crate::screening::solve_screening;
use crate::sim::{build_policy, check_reduced_form, simulate, Microfoundation};

pub const EXIT_PARSE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_DEGENERATE: i32 = 4;
pub const EXIT_ORACLE_MISMATCH: i32 = 5;

/// Header of the mechanism table.
pub const TABLE_HEADER: &str = "id,u,c,mass,nu,R,P,utility,class";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Fb,
    Part,
    Ic,
    Simulate,
    Sweep,
    OracleCheck,
}

/// Which solver supplies the mechanism for `simulate` and `oracle-check`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Problem {
    Fb,
    Part,
    Ic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SimKind {
    Poisson,
    Fluid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoGrid {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
    pub log: bool,
}

impl RhoGrid {
    pub fn points(&self) -> Vec<f64> {
        let n = self.count;
        (0..n)
            .map(|k| {
                let s = k as f64 / (n - 1) as f64;
                if k == n - 1 {
                    self.stop
                } else if self.log {
                    self.start * (self.stop / self.start).powf(s)
                } else {
                    self.start + (self.stop - self.start) * s
                }
            })
            .collect()
    }
}

impl FromStr for RhoGrid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        if !(3..=4).contains(&parts.len()) {
            return Err(format!("expected start:stop:count[:log], got {s:?}"));
        }
        let num = |p: &str| p.parse::<f64>().map_err(|_| format!("bad number {p:?}"));
        let start = num(parts[0])?;
        let stop = num(parts[1])?;
        let count = parts[2].parse::<usize>().map_err(|_| format!("bad count {:?}", parts[2]))?;
        let log = match parts.get(3) {
            None | Some(&"lin") | Some(&"linear") => false,
            Some(&"log") => true,
            Some(other) => return Err(format!("unknown spacing {other:?}")),
        };
        Ok(RhoGrid { start, stop, count, log })
    }
}

/// Command-line flags.
#[derive(Debug, Clone, Parser)]
#[command(name = "upkeep", version, about = "Solve and simulate collective-upkeep mechanisms")]
pub struct Cli {
    #[arg(long, value_enum)]
    pub mode: Mode,
    /// Type table with header `id,u,c,mass`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Breakage rate.
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Simulated time.
    #[arg(long)]
    pub horizon: Option<f64>,
    /// `start:stop:count[:log]`.
    #[arg(long)]
    pub rho_grid: Option<RhoGrid>,
    /// Write here instead of standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Mechanism to simulate or cross-check.
    #[arg(long, value_enum, default_value_t = Problem::Ic)]
    pub policy: Problem,
    #[arg(long, value_enum, default_value_t = SimKind::Poisson)]
    pub sim: SimKind,
    /// Append screening columns to sweeps.
    #[arg(long)]
    pub with_ic: bool,
    /// Largest welfare gap accepted by `oracle-check`.
    #[arg(long, default_value_t = 1e-6)]
    pub oracle_tol: f64,
    /// Dump the simulation event trace here.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

/// Validated run configuration with the input already loaded.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mode: Mode,
    pub types: TypeDistribution,
    pub rho: f64,
    pub tol: f64,
    pub seed: Option<u64>,
    pub horizon: Option<f64>,
    pub rho_grid: Option<RhoGrid>,
    pub policy: Problem,
    pub sim: SimKind,
    pub with_ic: bool,
    pub oracle_tol: f64,
    pub trace: Option<PathBuf>,
}

/// Failure with the process exit status it maps to.
#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn validation(message: impl Into<String>) -> Self {
        CliError { code: EXIT_VALIDATION, message: message.into() }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Parse { .. } | Error::Io(_) => EXIT_PARSE,
            Error::Degenerate(_) => EXIT_DEGENERATE,
            _ => EXIT_VALIDATION,
        };
        CliError { code, message: e.to_string() }
    }
}

/// Output of a successful run plus its exit status.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub text: String,
    pub code: i32,
}

/// Renders `x` like C's `%.12g`; infinities print as `inf`.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.11e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..12).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{m}e{sign}{:02}", exp.abs());
    }
    let decimals = (11 - exp).max(0) as usize;
    trim_zeros(&format!("{:.*}", decimals, x)).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn parse_num(s: &str) -> Option<f64> {
    match s.trim() {
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        t => t.parse().ok().filter(|v: &f64| v.is_finite()),
    }
}

/// Reads a type table: `#` comment lines, the header `id,u,c,mass`, then
/// one comma-separated row per type.
pub fn parse_types(text: &str) -> crate::Result<TypeDistribution> {
    let mut rows = data_lines(text);
    let (hline, header) = rows.next().ok_or(Error::Parse { line: 1, message: "missing header".into() })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols != ["id", "u", "c", "mass"] {
        return Err(Error::Parse { line: hline, message: format!("expected header id,u,c,mass, got {header:?}") });
    }
    let mut types = Vec::new();
    for (line, row) in rows {
        let f: Vec<&str> = row.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err(Error::Parse { line, message: format!("expected 4 fields, got {}", f.len()) });
        }
        let num = |i: usize| {
            parse_num(f[i]).ok_or_else(|| Error::Parse { line, message: format!("bad number {:?}", f[i]) })
        };
        types.push(AgentType::new(f[0], num(1)?, num(2)?, num(3)?)?);
    }
    TypeDistribution::new(types)
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// A mechanism table read back from `fb`, `part` or `ic` output.
#[derive(Debug, Clone, PartialEq)]
pub struct MechanismTable {
    pub types: TypeDistribution,
    pub mechanism: Mechanism,
    pub classes: Vec<String>,
    pub y: f64,
    pub welfare: f64,
    pub balance_residual: f64,
}

pub fn parse_mechanism_table(text: &str) -> crate::Result<MechanismTable> {
    let mut lines = data_lines(text);
    match lines.next() {
        Some((_, h)) if h == TABLE_HEADER => {}
        Some((line, h)) => return Err(Error::Parse { line, message: format!("unexpected header {h:?}") }),
        None => return Err(Error::Parse { line: 1, message: "empty table".into() }),
    }
    let (mut types, mut r, mut p, mut classes) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut summary = None;
    for (line, row) in lines {
        if row.starts_with("Q=") {
            summary = Some((line, row));
            break;
        }
        let f: Vec<&str> = row.split(',').collect();
        if f.len() != 9 {
            return Err(Error::Parse { line, message: format!("expected 9 fields, got {}", f.len()) });
        }
        let num = |i: usize| parse_num(f[i]).ok_or_else(|| Error::Parse { line, message: format!("bad number {:?}", f[i]) });
        types.push(AgentType::new(f[0], num(1)?, num(2)?, num(3)?)?);
        r.push(num(5)?);
        p.push(num(6)?);
        classes.push(f[8].to_string());
    }
    let (line, summary) = summary.ok_or(Error::Parse { line: 0, message: "missing summary line".into() })?;
    let mut fields = std::collections::HashMap::new();
    for kv in summary.split(',') {
        let (k, v) = kv.trim().split_once('=').ok_or_else(|| Error::Parse { line, message: format!("bad field {kv:?}") })?;
        let v = match v {
            "inf" => f64::INFINITY,
            v => v.parse().map_err(|_| Error::Parse { line, message: format!("bad number {v:?}") })?,
        };
        fields.insert(k.to_string(), v);
    }
    let get = |k: &str| fields.get(k).copied().ok_or_else(|| Error::Parse { line, message: format!("missing {k}") });
    Ok(MechanismTable {
        types: TypeDistribution::new(types)?,
        mechanism: Mechanism::new(get("Q")?, r, p),
        classes,
        y: get("y")?,
        welfare: get("W")?,
        balance_residual: get("balance_residual")?,
    })
}

impl RunConfig {
    /// Loads the input file and checks that the mode's fields are present.
    pub fn from_cli(cli: &Cli) -> Result<Self, CliError> {
        let path = cli.input.as_ref().ok_or_else(|| CliError::validation("--input is required"))?;
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError { code: EXIT_PARSE, message: format!("{}: {e}", path.display()) })?;
        let types = parse_types(&text)?;
        Self::new(cli, types)
    }

    pub fn new(cli: &Cli, types: TypeDistribution) -> Result<Self, CliError> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(CliError::validation(format!("{name} must be positive and finite, got {v}")))
            }
        };
        let rho = match (cli.mode, cli.rho) {
            (Mode::Sweep, r) => r.unwrap_or(f64::NAN),
            (_, Some(r)) => positive("--rho", r)?,
            (_, None) => return Err(CliError::validation("--rho is required")),
        };
        positive("--tol", cli.tol)?;
        positive("--oracle-tol", cli.oracle_tol)?;
        if cli.mode == Mode::Simulate {
            if cli.seed.is_none() {
                return Err(Error::MissingSeed.into());
            }
            positive("--horizon", cli.horizon.ok_or_else(|| CliError::validation("--horizon is required"))?)?;
        }
        if cli.mode == Mode::Sweep {
            let g = cli.rho_grid.ok_or_else(|| CliError::validation("--rho-grid is required"))?;
            if g.count < 2 {
                return Err(CliError::validation("--rho-grid count must be at least 2"));
            }
            positive("grid start", g.start)?;
            positive("grid stop", g.stop)?;
        }
        Ok(RunConfig {
            mode: cli.mode,
            types,
            rho,
            tol: cli.tol,
            seed: cli.seed,
            horizon: cli.horizon,
            rho_grid: cli.rho_grid,
            policy: cli.policy,
            sim: cli.sim,
            with_ic: cli.with_ic,
            oracle_tol: cli.oracle_tol,
            trace: cli.trace.clone(),
        })
    }
}

struct Solved {
    mechanism: Mechanism,
    y: f64,
    welfare: f64,
    classes: Vec<String>,
}

fn solve(problem: Problem, d: &TypeDistribution, rho: f64, tol: f64) -> crate::Result<Solved> {
    Ok(match problem {
        Problem::Fb => {
            let s = solve_first_best(d, rho, tol)?;
            let classes = d
                .types()
                .iter()
                .zip(&s.mechanism.contribution)
                .map(|(t, &p)| {
                    if t.c < s.y_fb && p > 0.0 {
                        "FULL"
                    } else if crate::first_best::on_atom(t.c, s.y_fb) {
                        "MARGINAL"
                    } else {
                        "NONE"
                    }
                })
                .map(String::from)
                .collect();
            Solved { mechanism: s.mechanism, y: s.y_fb, welfare: s.w_fb, classes }
        }
        Problem::Part => {
            let s = solve_participation(d, rho, tol)?;
            let classes = s.classes.iter().map(|c| c.to_string()).collect();
            Solved { mechanism: s.mechanism, y: s.y_star.value(), welfare: s.w_star, classes }
        }
        Problem::Ic => {
            let s = solve_screening(d, rho, tol)?;
            let classes = s
                .assignment
                .iter()
                .map(|a| match a {
                    None => "OUT".to_string(),
                    Some(k) => format!("TIER{}", k + 1),
                })
                .collect();
            Solved { mechanism: s.mechanism, y: s.y_star.value(), welfare: s.w_star, classes }
        }
    })
}

fn mechanism_table(d: &TypeDistribution, rho: f64, s: &Solved) -> String {
    let mut out = String::new();
    writeln!(out, "{TABLE_HEADER}").unwrap();
    for (i, t) in d.types().iter().enumerate() {
        let (r, p) = s.mechanism.bundle(i);
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            t.id,
            fmt_num(t.u),
            fmt_num(t.c),
            fmt_num(t.mass),
            fmt_num(t.valuation()),
            fmt_num(r),
            fmt_num(p),
            fmt_num(t.utility(r, p)),
            s.classes[i]
        )
        .unwrap();
    }
    writeln!(
        out,
        "Q={}, y={}, W={}, balance_residual={}",
        fmt_num(s.mechanism.uptime),
        fmt_num(s.y),
        fmt_num(s.welfare),
        fmt_num(balance_residual(&s.mechanism, d, rho))
    )
    .unwrap();
    out
}

fn problem_of(mode: Mode) -> Option<Problem> {
    match mode {
        Mode::Fb => Some(Problem::Fb),
        Mode::Part => Some(Problem::Part),
        Mode::Ic => Some(Problem::Ic),
        _ => None,
    }
}

pub fn run(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    let d = &cfg.types;
    let ok = |text| Ok(RunOutput { text, code: 0 });
    match cfg.mode {
        Mode::Fb | Mode::Part | Mode::Ic => {
            let s = solve(problem_of(cfg.mode).unwrap(), d, cfg.rho, cfg.tol)?;
            ok(mechanism_table(d, cfg.rho, &s))
        }
        Mode::Simulate => ok(run_simulation(cfg)?),
        Mode::Sweep => ok(run_sweep(cfg)?),
        Mode::OracleCheck => {
            let s = solve(cfg.policy, d, cfg.rho, cfg.tol)?;
            let grid = GridSpec::default();
            let oracle = match cfg.policy {
                Problem::Fb => primal_grid_welfare(d, cfg.rho, PrimalMode::FirstBest, grid)?.welfare,
                Problem::Part => primal_grid_welfare(d, cfg.rho, PrimalMode::Participation, grid)?.welfare,
                Problem::Ic => {
                    if d.len() > LP_MAX_TYPES {
                        return Err(Error::TooManyTypes { got: d.len(), max: LP_MAX_TYPES }.into());
                    }
                    lp_screening_welfare(d, cfg.rho, GridSpec::coarse())?.welfare
                }
            };
            let delta = s.welfare - oracle;
            let text = format!("W_solver,W_oracle,delta\n{},{},{}\n", fmt_num(s.welfare), fmt_num(oracle), fmt_num(delta));
            let code = if delta.abs() > cfg.oracle_tol { EXIT_ORACLE_MISMATCH } else { 0 };
            Ok(RunOutput { text, code })
        }
    }
}

fn run_simulation(cfg: &RunConfig) -> Result<String, CliError> {
    let d = &cfg.types;
    let s = solve(cfg.policy, d, cfg.rho, cfg.tol)?;
    let pol = build_policy(&s.mechanism);
    let phys = PhysicalParams::new(cfg.rho)?;
    let kind = match cfg.sim {
        SimKind::Poisson => Microfoundation::Poisson,
        SimKind::Fluid => Microfoundation::Fluid,
    };
    let horizon = cfg.horizon.expect("validated");
    let stats = match &cfg.trace {
        Some(path) => {
            let file = std::fs::File::create(path).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
            let mut w = std::io::BufWriter::new(file);
            let stats = simulate(kind, &pol, d, &phys, horizon, cfg.seed, 0, Some(&mut w))?;
            std::io::Write::flush(&mut w).map_err(|e| CliError::validation(e.to_string()))?;
            stats
        }
        None => simulate(kind, &pol, d, &phys, horizon, cfg.seed, 0, None)?,
    };
    let report = check_reduced_form(&stats, &s.mechanism, 4.0)?;
    let mut out = String::from("metric,estimate,ci_radius\n");
    let mut row = |name: &str, v: f64, ci: f64| writeln!(out, "{name},{},{}", fmt_num(v), fmt_num(ci)).unwrap();
    row("Q", stats.q_hat, stats.q_ci);
    for (i, t) in d.types().iter().enumerate() {
        row(&format!("R[{}]", t.id), stats.r_hat[i], stats.r_ci[i]);
    }
    for (i, t) in d.types().iter().enumerate() {
        row(&format!("P[{}]", t.id), stats.p_hat[i], stats.p_ci[i]);
    }
    row("break_rate", stats.break_rate, stats.break_rate_ci);
    row("lifespan_mean", stats.lifespan_mean, stats.lifespan_ci);
    row("n_breaks", stats.n_breaks as f64, 0.0);
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    let a = stats.admissibility;
    row("usage_only_while_working", flag(a.usage_only_while_working), 0.0);
    row("contribution_only_while_broken", flag(a.contribution_only_while_broken), 0.0);
    row("lifespan_mean_ok", flag(a.lifespan_mean), 0.0);
    row("balance_gap", report.balance_gap, report.balance_ci);
    row("reduced_form_pass", flag(report.passes()), 0.0);
    Ok(out)
}

fn run_sweep(cfg: &RunConfig) -> Result<String, CliError> {
    let d = &cfg.types;
    let rhos = cfg.rho_grid.expect("validated").points();
    let rows: Vec<Result<String, CliError>> = rhos
        .par_iter()
        .map(|&rho| {
            let fb = solve(Problem::Fb, d, rho, cfg.tol)?;
            let part = solve(Problem::Part, d, rho, cfg.tol)?;
            let mut line = [rho, fb.y, fb.mechanism.uptime, fb.welfare, part.y, part.mechanism.uptime, part.welfare]
                .iter()
                .map(|&v| fmt_num(v))
                .collect::<Vec<_>>()
                .join(",");
            if cfg.with_ic {
                let ic = solve(Problem::Ic, d, rho, cfg.tol)?;
                for v in [ic.y, ic.mechanism.uptime, ic.welfare] {
                    line.push(',');
                    line.push_str(&fmt_num(v));
                }
            }
            Ok(line)
        })
        .collect();
    let mut out = String::from("rho,y_fb,Q_fb,W_fb,y_star,Q_star,W_star");
    if cfg.with_ic {
        out.push_str(",y_ic,Q_ic,W_ic");
    }
    out.push('\n');
    for r in rows {
        out.push_str(&r?);
        out.push('\n');
    }
    Ok(out)
}

/// Worker count from `UPKEEP_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var("UPKEEP_THREADS").ok()?.trim().parse().ok().filter(|n| *n > 0)
}

/// Parses arguments, runs, writes the output and returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_PARSE } else { 0 };
        }
    };
    let go = || -> Result<RunOutput, CliError> {
        let cfg = RunConfig::from_cli(&cli)?;
        run(&cfg)
    };
    let result = match thread_cap().and_then(|n| rayon::ThreadPoolBuilder::new().num_threads(n).build().ok()) {
        Some(pool) => pool.install(go),
        None => go(),
    };
    match result {
        Ok(out) => {
            let written = match &cli.output {
                Some(path) => std::fs::write(path, &out.text),
                None => std::io::Write::write_all(&mut std::io::stdout(), out.text.as_bytes()),
            };
            if let Err(e) = written {
                eprintln!("upkeep: {e}");
                return EXIT_VALIDATION;
            }
            out.code
        }
        Err(e) => {
            eprintln!("upkeep: {e}");
            e.code
        }
    }
}
