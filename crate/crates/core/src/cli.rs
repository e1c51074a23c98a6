//! Experiment runner behind the `skewlab` binary.
//!
//! A run reads a TOML file with four flat sections:
//!
//! ```toml
//! [system]
//! base = "doubling"            # or "piecewise_linear" (slopes), "perturbed_doubling" (a)
//! alpha = 0.5                  # G(x, y) = alpha y + c0 + c1 x + c_sin sin(2 pi x)
//! c1 = 0.25
//! zeta = 1.0
//! L = 1.0
//! sigma = 1.9
//! eps_rho = 0.01
//! g_holder = 0.25
//! metric = "interval"          # or "circle"
//!
//! [discretization]
//! cells = 256
//! cap = 64                     # 0 disables consolidation
//!
//! [experiment]
//! seed = 1
//! n_max = 20
//!
//! [output]
//! dir = "out"
//! ```
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 numeric failure,
//! 3 a verification produced failing entries.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::analysis::{
    compute_constants, convergence_experiment, correlation_experiment, fit_lasota_yorke, SpectralConstants,
    SpectralInputs,
};
use crate::base_dynamics::{
    check_hypotheses, check_torus, estimate_base_rate, BaseMap, BaseSpec, ExponentMode, HypothesisReport, SystemParams,
    TorusExample,
};
use crate::error::{Error, Result};
use crate::fiber_measure::{w_distance, AtomicMeasure};
use crate::geometry::BaseMetric;
use crate::skew_measure::{product_measure, Observable};
use crate::transfer_operator::{
    compute_invariant, verify_holder_recursion, Discretization, FiberFamily, Report, SkewSystem, TransferOperator,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;
pub const EXIT_FAILED: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "skewlab",
    version,
    about = "Transfer operators of skew products with contracting fibers"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Hypothesis report for the base map, optionally with the torus example.
    Check(Flags),
    /// Iterate to the invariant measure.
    Invariant(Flags),
    /// Convergence to equilibrium of a zero-mass difference.
    Converge(Flags),
    /// Hölder constant of iterates of a constant path.
    Holder(Flags),
    /// Decay of correlations against the invariant measure.
    Correlate(Flags),
    /// Table of spectral and regularity constants.
    Constants(Flags),
    /// `W` distance between the fiber measures `mu` and `nu` of the config.
    Wdist(Flags),
}

#[derive(Debug, Clone, Args)]
pub struct Flags {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub cap: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub zeta: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: Option<SystemSection>,
    #[serde(default)]
    pub discretization: DiscretizationSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub base: String,
    pub slopes: Option<Vec<f64>>,
    pub a: Option<f64>,
    /// Intervals `[lo, hi]` of the region where the base may contract.
    #[serde(default)]
    pub region_a: Vec<[f64; 2]>,
    pub alpha: f64,
    #[serde(default)]
    pub c0: f64,
    #[serde(default)]
    pub c1: f64,
    #[serde(default)]
    pub c_sin: f64,
    pub zeta: f64,
    #[serde(rename = "L", default = "one")]
    pub big_l: f64,
    pub sigma: f64,
    #[serde(default)]
    pub q: usize,
    #[serde(default)]
    pub eps_rho: f64,
    /// Defaults to the declared Hölder constant of the fiber family.
    pub g_holder: Option<f64>,
    #[serde(default)]
    pub exponent_mode: ExponentMode,
    #[serde(default = "circle")]
    pub metric: String,
    #[serde(default)]
    pub force: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizationSection {
    #[serde(default = "default_cells")]
    pub cells: usize,
    #[serde(default = "default_cap")]
    pub cap: usize,
}

impl Default for DiscretizationSection {
    fn default() -> Self {
        DiscretizationSection {
            cells: default_cells(),
            cap: default_cap(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub seed: Option<u64>,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_invariant_iters")]
    pub invariant_iters: usize,
    /// Fiber measures as `[y, w]` pairs.
    pub mu: Option<Vec<[f64; 2]>>,
    pub nu: Option<Vec<[f64; 2]>>,
    #[serde(default = "default_start")]
    pub start: f64,
    #[serde(default = "cos_x")]
    pub f: String,
    #[serde(default = "one_u32")]
    pub f_k: u32,
    #[serde(default = "one")]
    pub f_scale: f64,
    #[serde(default = "fiber_y")]
    pub g: String,
    #[serde(default = "one_u32")]
    pub g_k: u32,
    #[serde(default = "one")]
    pub g_scale: f64,
    pub r: Option<f64>,
    pub d_base: Option<f64>,
    #[serde(default = "default_rate_iters")]
    pub rate_iters: usize,
    #[serde(default = "default_trials")]
    pub rate_trials: usize,
    pub ly_a: Option<f64>,
    pub ly_lambda: Option<f64>,
    pub ly_b2: Option<f64>,
    #[serde(default = "default_ly_trials")]
    pub ly_trials: usize,
    #[serde(default = "default_ly_iters")]
    pub ly_iters: usize,
    pub torus_a: Option<f64>,
    #[serde(default = "default_torus_r")]
    pub torus_r: f64,
    #[serde(default = "default_torus_lambda")]
    pub torus_lambda: f64,
    #[serde(default = "default_cells")]
    pub torus_grid: usize,
    pub torus_eps: Option<f64>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        toml::from_str("").expect("all experiment fields have defaults")
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

fn one() -> f64 {
    1.0
}
fn one_u32() -> u32 {
    1
}
fn circle() -> String {
    "circle".into()
}
fn cos_x() -> String {
    "cos_x".into()
}
fn fiber_y() -> String {
    "y".into()
}
fn default_cells() -> usize {
    256
}
fn default_cap() -> usize {
    64
}
fn default_n_max() -> usize {
    20
}
fn default_tol() -> f64 {
    1e-10
}
fn default_invariant_iters() -> usize {
    200
}
fn default_start() -> f64 {
    0.5
}
fn default_rate_iters() -> usize {
    12
}
fn default_trials() -> usize {
    16
}
fn default_ly_trials() -> usize {
    8
}
fn default_ly_iters() -> usize {
    12
}
fn default_torus_r() -> f64 {
    0.1
}
fn default_torus_lambda() -> f64 {
    2.0
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    fn apply_flags(&mut self, flags: &Flags) {
        if let Some(n) = flags.grid {
            self.discretization.cells = n;
        }
        if let Some(c) = flags.cap {
            self.discretization.cap = c;
        }
        if let Some(n) = flags.iters {
            self.experiment.n_max = n;
        }
        if let Some(s) = flags.seed {
            self.experiment.seed = Some(s);
        }
        if let (Some(z), Some(sys)) = (flags.zeta, self.system.as_mut()) {
            sys.zeta = z;
        }
        if let Some(d) = &flags.out {
            self.output.dir = Some(d.clone());
        }
    }

    fn system(&self) -> Result<&SystemSection> {
        self.system
            .as_ref()
            .ok_or_else(|| Error::Config("missing [system] section".into()))
    }

    fn seed(&self) -> Result<u64> {
        self.experiment
            .seed
            .ok_or_else(|| Error::Config("experiment.seed is required for randomized experiments".into()))
    }

    fn out_dir(&self) -> PathBuf {
        self.output.dir.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn base_map(&self) -> Result<BaseMap> {
        let s = self.system()?;
        let spec = match s.base.as_str() {
            "doubling" => BaseSpec::Doubling,
            "piecewise_linear" => BaseSpec::PiecewiseLinear {
                slopes: s
                    .slopes
                    .clone()
                    .ok_or_else(|| Error::Config("piecewise_linear needs slopes".into()))?,
            },
            "perturbed_doubling" => BaseSpec::PerturbedDoubling {
                a: s.a.ok_or_else(|| Error::Config("perturbed_doubling needs a".into()))?,
            },
            other => return Err(Error::Config(format!("unknown base map '{other}'"))),
        };
        let map = BaseMap::from_spec(&spec)?;
        if s.region_a.is_empty() {
            Ok(map)
        } else {
            let iv: Vec<(f64, f64)> = s.region_a.iter().map(|p| (p[0], p[1])).collect();
            map.with_region_a(&iv)
        }
    }

    pub fn fiber(&self) -> Result<FiberFamily> {
        let s = self.system()?;
        Ok(FiberFamily {
            alpha: s.alpha,
            c0: s.c0,
            c1: s.c1,
            c_sin: s.c_sin,
        })
    }

    pub fn params(&self) -> Result<SystemParams> {
        let s = self.system()?;
        let p = SystemParams {
            zeta: s.zeta,
            alpha: s.alpha,
            big_l: s.big_l,
            sigma: s.sigma,
            q: s.q,
            eps_rho: s.eps_rho,
            g_holder: s.g_holder.unwrap_or(self.fiber()?.declared_holder()),
            exponent_mode: s.exponent_mode,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn skew_system(&self) -> Result<SkewSystem> {
        let s = self.system()?;
        let metric = match s.metric.as_str() {
            "circle" => BaseMetric::Circle,
            "interval" => BaseMetric::Interval,
            other => return Err(Error::Config(format!("unknown metric '{other}'"))),
        };
        let sys = SkewSystem::new(self.base_map()?, self.fiber()?, self.params()?)?.with_metric(metric);
        Ok(if s.force { sys.forced() } else { sys })
    }

    pub fn operator(&self, sys: &SkewSystem) -> Result<TransferOperator> {
        let d = &self.discretization;
        TransferOperator::new(
            sys,
            Discretization {
                cells: d.cells,
                cap: (d.cap > 0).then_some(d.cap),
            },
        )
    }
}

fn atomic(list: &Option<Vec<[f64; 2]>>, name: &str, default: f64) -> Result<AtomicMeasure> {
    match list {
        Some(l) => AtomicMeasure::new(l.iter().map(|p| (p[0], p[1]))),
        None if default.is_nan() => Err(Error::Config(format!("experiment.{name} is required"))),
        None => AtomicMeasure::dirac(default),
    }
}

fn observable(id: &str, k: u32, scale: f64, zeta: f64) -> Result<Observable> {
    let o = match id {
        "constant" => Observable::constant(1.0),
        "cos_x" => Observable::cos_x(k, zeta),
        "sin_x" => Observable::sin_x(k, zeta),
        "y" => Observable::fiber_coordinate(zeta),
        other => return Err(Error::Config(format!("unknown observable '{other}'"))),
    };
    Ok(o.scaled(scale))
}

/// Constants from configured values, estimating what is missing.
pub fn resolve_constants(
    cfg: &ExperimentConfig,
    sys: &SkewSystem,
    op: Option<&TransferOperator>,
) -> Result<SpectralConstants> {
    let e = &cfg.experiment;
    let p = sys.params;
    let (r, d_base) = match (e.r, e.d_base) {
        (Some(r), Some(d)) => (r, d),
        _ => {
            let est = estimate_base_rate(
                &sys.base,
                p.zeta,
                e.rate_iters,
                e.rate_trials,
                cfg.seed()?,
                cfg.discretization.cells,
            )?;
            (e.r.unwrap_or(est.r_hat), e.d_base.unwrap_or(est.d_hat))
        }
    };
    let (a, lambda, b2) = match (e.ly_a, e.ly_lambda, e.ly_b2) {
        (Some(a), Some(l), Some(b)) => (a, l, b),
        _ => {
            let owned;
            let op = match op {
                Some(op) => op,
                None => {
                    owned = cfg.operator(sys)?;
                    &owned
                }
            };
            let ly = fit_lasota_yorke(op, e.ly_trials, e.ly_iters, cfg.seed()?)?;
            (
                e.ly_a.unwrap_or(ly.a),
                e.ly_lambda.unwrap_or(ly.lambda),
                e.ly_b2.unwrap_or(ly.b2),
            )
        }
    };
    compute_constants(SpectralInputs {
        alpha: p.alpha,
        zeta: p.zeta,
        r,
        d_base,
        big_l: p.big_l,
        eps_rho: p.eps_rho,
        g_holder: p.g_holder,
        a,
        lambda,
        b2,
    })
}

/// 17 significant digits.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_csv(dir: &Path, name: &str, header: &str, rows: impl IntoIterator<Item = Vec<String>>) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut text = String::new();
    text.push_str(header);
    text.push('\n');
    for r in rows {
        text.push_str(&r.join(","));
        text.push('\n');
    }
    let path = dir.join(name);
    fs::write(&path, text)?;
    Ok(path)
}

fn print_hypotheses(title: &str, report: &HypothesisReport) {
    println!("{title}");
    for c in &report.conditions {
        println!(
            "  {:<24} {:<4} measured {} threshold {} ({})",
            c.name,
            if c.passed { "ok" } else { "FAIL" },
            c.measured,
            c.threshold,
            c.detail
        );
    }
}

fn print_report(report: &Report) {
    for e in &report.entries {
        println!(
            "  {:<10} {:<4} measured {} bound {} slack {}",
            e.label,
            if e.passed { "ok" } else { "FAIL" },
            e.measured,
            e.bound,
            e.slack
        );
    }
}

fn verdict(ok: bool) -> i32 {
    if ok {
        EXIT_OK
    } else {
        EXIT_FAILED
    }
}

fn check(cfg: &ExperimentConfig) -> Result<i32> {
    let s = cfg.system()?;
    let report = check_hypotheses(&cfg.base_map()?, &cfg.params()?);
    print_hypotheses("base hypotheses", &report);
    let mut ok = report.all_passed();
    let e = &cfg.experiment;
    if let Some(a) = e.torus_a {
        let mut t = TorusExample::new(a, e.torus_r, e.torus_lambda, s.zeta, e.torus_grid);
        if let Some(eps) = e.torus_eps {
            t.eps_rho = eps;
        }
        let tr = check_torus(&t)?;
        print_hypotheses(&format!("torus example a = {a}"), &tr);
        ok &= tr.all_passed();
    }
    Ok(verdict(ok))
}

fn invariant(cfg: &ExperimentConfig) -> Result<i32> {
    let sys = cfg.skew_system()?;
    let op = cfg.operator(&sys)?;
    let e = &cfg.experiment;
    let nu0 = atomic(&e.mu, "mu", e.start)?;
    let res = compute_invariant(&op, &nu0, e.tol, e.invariant_iters)?;
    let dir = cfg.out_dir();
    let mut slack = 0.0;
    let rows = res.log.records().iter().filter_map(|r| {
        slack += r.consolidation_error;
        r.increment
            .map(|inc| vec![r.n.to_string(), num(inc), num(r.strong_norm), num(e.tol), num(slack)])
    });
    let rows: Vec<_> = rows.collect();
    let path = write_csv(&dir, "convergence.csv", "n,weak_norm,strong_norm,bound,slack", rows)?;
    fs::write(dir.join("invariant.txt"), res.measure.to_text())?;
    println!("steps {} converged {}", res.steps, res.converged);
    println!("wrote {} and invariant.txt", path.display());
    Ok(verdict(res.converged))
}

fn converge(cfg: &ExperimentConfig) -> Result<i32> {
    let sys = cfg.skew_system()?;
    let op = cfg.operator(&sys)?;
    let e = &cfg.experiment;
    let c = resolve_constants(cfg, &sys, Some(&op))?;
    let cells = op.cells();
    let mu = product_measure(&atomic(&e.mu, "mu", 0.0)?, cells)?;
    let nu = product_measure(&atomic(&e.nu, "nu", 1.0)?, cells)?;
    let rep = convergence_experiment(&op, &mu, &nu, e.n_max, &c)?;
    let rows = rep.rows.iter().map(|r| {
        vec![
            r.n.to_string(),
            num(r.weak_norm),
            num(r.strong_norm),
            num(r.bound),
            num(r.slack),
        ]
    });
    let path = write_csv(
        &cfg.out_dir(),
        "convergence.csv",
        "n,weak_norm,strong_norm,bound,slack",
        rows,
    )?;
    println!("beta1 {}", rep.beta1);
    println!("D2 {}", rep.d2);
    match rep.fitted_rate {
        Some(r) => println!("fitted_rate {r}"),
        None => println!("fitted_rate none (exact zero {})", rep.exact_zero),
    }
    println!("wrote {}", path.display());
    Ok(verdict(rep.within_bounds(1.0)))
}

fn holder(cfg: &ExperimentConfig) -> Result<i32> {
    let sys = cfg.skew_system()?;
    let op = cfg.operator(&sys)?;
    let e = &cfg.experiment;
    let m = product_measure(&atomic(&e.mu, "mu", e.start)?, op.cells())?;
    let report = verify_holder_recursion(&op, &m, e.n_max, cfg.seed()?)?;
    let rows = report
        .entries
        .iter()
        .enumerate()
        .map(|(k, r)| vec![k.to_string(), num(r.measured), num(r.bound), num(r.slack)]);
    let path = write_csv(&cfg.out_dir(), "holder.csv", "n,measured,bound,slack", rows)?;
    print_report(&report);
    println!("wrote {}", path.display());
    Ok(verdict(report.all_passed()))
}

fn correlate(cfg: &ExperimentConfig) -> Result<i32> {
    let sys = cfg.skew_system()?;
    let op = cfg.operator(&sys)?;
    let e = &cfg.experiment;
    let zeta = sys.zeta();
    let c = resolve_constants(cfg, &sys, Some(&op))?;
    let inv = compute_invariant(&op, &atomic(&e.nu, "nu", e.start)?, e.tol, e.invariant_iters)?;
    let f = observable(&e.f, e.f_k, e.f_scale, zeta)?;
    let g = observable(&e.g, e.g_k, e.g_scale, zeta)?;
    let s = correlation_experiment(&op, &inv.measure, &f, &g, e.n_max, &c)?;
    let rows = s
        .rows
        .iter()
        .map(|r| vec![r.n.to_string(), num(r.c_n), num(r.bound_n), num(r.log_ratio())]);
    let path = write_csv(&cfg.out_dir(), "correlations.csv", "n,C_n,bound_n,log_ratio", rows)?;
    println!(
        "invariant steps {} converged {} residual {}",
        inv.steps, inv.converged, s.invariance_residual
    );
    println!("xi {}", s.xi);
    println!("K {} K1 {}", c.k, c.k1);
    println!("prefactor {} (with K1 {})", s.prefactor, s.prefactor_k1);
    if s.degenerate {
        println!("degenerate series: all C_n below 1e-12, no fit");
    } else {
        match (s.fitted_rate, s.fitted_prefactor) {
            (Some(r), Some(p)) => println!("fitted_rate {r} fitted_prefactor {p}"),
            _ => println!("fitted_rate none"),
        }
    }
    println!("wrote {}", path.display());
    Ok(verdict(s.rows.iter().all(|r| r.c_n <= r.bound_n)))
}

fn constants(cfg: &ExperimentConfig) -> Result<i32> {
    let sys = cfg.skew_system()?;
    let c = resolve_constants(cfg, &sys, None)?;
    let i = c.inputs;
    let mut t = String::new();
    for (name, v) in [
        ("alpha", i.alpha),
        ("zeta", i.zeta),
        ("r", i.r),
        ("D_base", i.d_base),
        ("L", i.big_l),
        ("eps_rho", i.eps_rho),
        ("G_holder", i.g_holder),
        ("A", i.a),
        ("lambda", i.lambda),
        ("B2", i.b2),
        ("alpha_bar", c.alpha_bar),
        ("beta1", c.beta1),
        ("D2", c.d2),
        ("lambda0", c.lambda0),
        ("xi", c.xi),
        ("K1", c.k1),
        ("K", c.k),
        ("beta", c.beta),
        ("D_hold", c.d_hold),
        ("holder_bound", c.holder_bound),
    ] {
        let _ = writeln!(t, "{name:<14}{v}");
    }
    print!("{t}");
    if c.beta_vacuous {
        println!("warning: beta >= 1, Hölder bound vacuous");
    }
    if c.lambda0_vacuous {
        println!("warning: lambda0 >= 1, correlation bound vacuous");
    }
    Ok(EXIT_OK)
}

fn wdist(cfg: &ExperimentConfig, zeta: Option<f64>) -> Result<i32> {
    let zeta = zeta
        .or(cfg.system.as_ref().map(|s| s.zeta))
        .ok_or_else(|| Error::Config("wdist needs --zeta or system.zeta".into()))?;
    let e = &cfg.experiment;
    let mu = atomic(&e.mu, "mu", f64::NAN)?;
    let nu = atomic(&e.nu, "nu", f64::NAN)?;
    println!("{}", num(w_distance(&mu, &nu, zeta)?));
    Ok(EXIT_OK)
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidInput { .. } | Error::Config(_) | Error::Io(_) => EXIT_USAGE,
        Error::NumericFailure { .. }
        | Error::EstimationFailure { .. }
        | Error::InvariantViolation { .. }
        | Error::CapExceeded { .. } => EXIT_NUMERIC,
    }
}

pub fn dispatch(command: &Command) -> Result<i32> {
    let flags = match command {
        Command::Check(f)
        | Command::Invariant(f)
        | Command::Converge(f)
        | Command::Holder(f)
        | Command::Correlate(f)
        | Command::Constants(f)
        | Command::Wdist(f) => f,
    };
    let mut cfg = ExperimentConfig::load(&flags.config)?;
    cfg.apply_flags(flags);
    match command {
        Command::Check(_) => check(&cfg),
        Command::Invariant(_) => invariant(&cfg),
        Command::Converge(_) => converge(&cfg),
        Command::Holder(_) => holder(&cfg),
        Command::Correlate(_) => correlate(&cfg),
        Command::Constants(_) => constants(&cfg),
        Command::Wdist(_) => wdist(&cfg, flags.zeta),
    }
}

/// Parse `args` and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
