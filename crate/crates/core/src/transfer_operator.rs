//! The transfer operator `F_*` of a skew product on disintegrated measures,
//! iteration to the invariant measure, and empirical checks of the weak
//! contraction and Hölder recursion inequalities.
//!
//! For each base cell `gamma_k` with preimages `x_i`,
//! `(F_* mu)|_{gamma_k} = sum_i rho_i(x_i) G(x_i, .)_* mu|_{cell(x_i)}`,
//! followed by consolidation of the resulting fiber to the support cap.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::base_dynamics::{check_hypotheses, BaseMap, HypothesisReport, PreimageTable, SystemParams};
use crate::error::{Error, Result};
use crate::fiber_measure::{consolidate_adaptive, consolidate_min_cost, push_scaled, AtomicMeasure, FiberContraction};
use crate::geometry::{holder_seminorm_estimate, BaseMetric};
use crate::skew_measure::{
    path_holder_constant_with, product_measure, strong_norm_with, weak_norm, DisintegratedMeasure,
};

const MODULE: &str = "transfer_operator";
const FAMILY_SAMPLES: usize = 1024;

/// Fiber maps `G(x, y) = alpha y + c0 + c1 x + c_sin sin(2 pi x)`, the same
/// on every branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiberFamily {
    pub alpha: f64,
    #[serde(default)]
    pub c0: f64,
    #[serde(default)]
    pub c1: f64,
    #[serde(default)]
    pub c_sin: f64,
}

impl FiberFamily {
    pub fn affine(alpha: f64, c0: f64, c1: f64) -> Self {
        FiberFamily {
            alpha,
            c0,
            c1,
            c_sin: 0.0,
        }
    }

    pub fn offset(&self, x: f64) -> f64 {
        self.c0 + self.c1 * x + self.c_sin * (2.0 * std::f64::consts::PI * x).sin()
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.alpha * y + self.offset(x)
    }

    pub fn at(&self, x: f64) -> Result<FiberContraction> {
        FiberContraction::new(self.alpha, self.alpha, self.offset(x))
    }

    pub fn is_x_independent(&self) -> bool {
        self.c1 == 0.0 && self.c_sin == 0.0
    }

    /// Lipschitz constant of the offset in `x`, which bounds its
    /// `zeta`-Hölder constant on sets of diameter at most 1.
    pub fn declared_holder(&self) -> f64 {
        self.c1.abs() + 2.0 * std::f64::consts::PI * self.c_sin.abs()
    }
}

/// Grid and support cap used to discretize the operator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Discretization {
    pub cells: usize,
    /// `None` disables consolidation.
    pub cap: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct SkewSystem {
    pub base: BaseMap,
    pub fiber: FiberFamily,
    pub params: SystemParams,
    /// Metric for Hölder estimates along the base.
    pub metric: BaseMetric,
    /// Skip the hypothesis gate when building operators.
    pub force: bool,
}

impl SkewSystem {
    /// Validates the family against the declared constants: sampled
    /// contraction and range, and per-branch Hölder constant in `x`.
    pub fn new(base: BaseMap, fiber: FiberFamily, params: SystemParams) -> Result<Self> {
        params.validate()?;
        if (fiber.alpha - params.alpha).abs() > 1e-12 {
            return Err(Error::invalid(
                MODULE,
                format!(
                    "fiber contraction {} differs from alpha = {}",
                    fiber.alpha, params.alpha
                ),
            ));
        }
        for k in 0..=FAMILY_SAMPLES {
            let x = k as f64 / FAMILY_SAMPLES as f64;
            fiber
                .at(x)
                .map_err(|e| Error::invalid(MODULE, format!("fiber map at x = {x}: {e}")))?;
        }
        for b in base.branches() {
            let (s, e) = b.domain();
            let samples: Vec<(f64, f64)> = (0..256)
                .map(|j| {
                    let x = s + (e - s) * (j as f64 + 0.5) / 256.0;
                    (x, fiber.offset(x))
                })
                .collect();
            let h = holder_seminorm_estimate(&samples, params.zeta, 1024, 0, BaseMetric::Interval)?;
            if h.seminorm > params.g_holder + 1e-9 {
                return Err(Error::violation(
                    MODULE,
                    format!(
                        "branch {} has |G|_zeta >= {} above the declared {}",
                        b.index(),
                        h.seminorm,
                        params.g_holder
                    ),
                ));
            }
        }
        Ok(SkewSystem {
            base,
            fiber,
            params,
            metric: BaseMetric::Circle,
            force: false,
        })
    }

    pub fn with_metric(mut self, metric: BaseMetric) -> Self {
        self.metric = metric;
        self
    }

    pub fn forced(mut self) -> Self {
        self.force = true;
        self
    }

    pub fn hypotheses(&self) -> HypothesisReport {
        check_hypotheses(&self.base, &self.params)
    }

    pub fn zeta(&self) -> f64 {
        self.params.zeta
    }
}

/// `F_*` on a fixed grid: preimages and fiber maps are precomputed.
#[derive(Debug, Clone)]
pub struct TransferOperator {
    system: SkewSystem,
    disc: Discretization,
    table: PreimageTable,
    maps: Vec<FiberContraction>,
}

/// Bookkeeping of one application of the operator.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepStats {
    /// Largest per-fiber `W` bound of the consolidation error.
    pub consolidation_error: f64,
    pub max_support: usize,
    pub max_radius: f64,
}

impl TransferOperator {
    pub fn new(system: &SkewSystem, disc: Discretization) -> Result<Self> {
        if disc.cells < 2 {
            return Err(Error::invalid(MODULE, "grid needs at least two cells"));
        }
        if !system.force {
            let report = system.hypotheses();
            if let Some(c) = report.conditions.iter().find(|c| !c.passed) {
                return Err(Error::violation(
                    MODULE,
                    format!(
                        "hypothesis {} fails ({} vs {}); set force to proceed",
                        c.name, c.measured, c.threshold
                    ),
                ));
            }
        }
        let table = PreimageTable::new(&system.base, disc.cells)?;
        let maps = (0..disc.cells)
            .flat_map(|k| table.of_cell(k).iter().map(|p| system.fiber.at(p.x)))
            .collect::<Result<_>>()?;
        Ok(TransferOperator {
            system: system.clone(),
            disc,
            table,
            maps,
        })
    }

    pub fn system(&self) -> &SkewSystem {
        &self.system
    }

    pub fn discretization(&self) -> Discretization {
        self.disc
    }

    pub fn zeta(&self) -> f64 {
        self.system.params.zeta
    }

    pub fn cells(&self) -> usize {
        self.disc.cells
    }

    pub fn apply(&self, mu: &DisintegratedMeasure) -> Result<(DisintegratedMeasure, StepStats)> {
        if mu.cells() != self.disc.cells {
            return Err(Error::invalid(
                MODULE,
                format!("measure has {} cells, operator {}", mu.cells(), self.disc.cells),
            ));
        }
        let deg = self.system.base.degree();
        let zeta = self.zeta();
        let out: Vec<(AtomicMeasure, f64, f64)> = (0..self.disc.cells)
            .into_par_iter()
            .map(|k| {
                let mut sum = AtomicMeasure::zero();
                for (i, p) in self.table.of_cell(k).iter().enumerate() {
                    let pushed = push_scaled(mu.fiber(p.cell), &self.maps[k * deg + i], p.weight)?;
                    sum = sum.add_scaled(&pushed, 1.0);
                }
                match self.disc.cap {
                    None => Ok((sum, 0.0, 0.0)),
                    Some(cap) => {
                        let mixed = sum.atoms().iter().any(|a| a.w > 0.0) && sum.atoms().iter().any(|a| a.w < 0.0);
                        let c = if mixed {
                            consolidate_min_cost(&sum, cap, zeta)
                        } else {
                            consolidate_adaptive(&sum, cap, zeta)
                        }
                        .map_err(|e| e.in_cell(k))?;
                        Ok((c.measure, c.error_bound, c.radius))
                    }
                }
            })
            .collect::<Result<_>>()?;
        let mut stats = StepStats::default();
        let mut fibers = Vec::with_capacity(out.len());
        for (f, err, radius) in out {
            stats.consolidation_error = stats.consolidation_error.max(err);
            stats.max_radius = stats.max_radius.max(radius);
            stats.max_support = stats.max_support.max(f.len());
            fibers.push(f);
        }
        Ok((DisintegratedMeasure::from_fibers(fibers)?, stats))
    }
}

/// One application of `F_*` with consolidation to cap 64.
pub fn apply_transfer(system: &SkewSystem, mu: &DisintegratedMeasure) -> Result<DisintegratedMeasure> {
    let op = TransferOperator::new(
        system,
        Discretization {
            cells: mu.cells(),
            cap: Some(64),
        },
    )?;
    Ok(op.apply(mu)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub n: usize,
    pub weak_norm: f64,
    pub strong_norm: f64,
    pub path_holder: f64,
    pub max_support: usize,
    /// Consolidation error bound of the step producing this iterate.
    pub consolidation_error: f64,
    /// `||mu_n - mu_{n-1}||_inf`, absent for the initial measure.
    pub increment: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct IterationLog {
    records: Vec<StepRecord>,
}

impl IterationLog {
    pub fn push(&mut self, r: StepRecord) {
        if let Some(last) = self.records.last() {
            assert!(r.n > last.n, "iteration log indices must increase");
        }
        self.records.push(r);
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn cumulative_consolidation_error(&self) -> f64 {
        self.records.iter().map(|r| r.consolidation_error).sum()
    }
}

#[derive(Debug, Clone)]
pub struct InvariantResult {
    pub measure: DisintegratedMeasure,
    pub log: IterationLog,
    pub converged: bool,
    pub steps: usize,
}

/// Pair budget for path Hölder estimates in logs and checks.
pub const PATH_PAIR_BUDGET: usize = 256;

fn record(
    op: &TransferOperator,
    n: usize,
    mu: &DisintegratedMeasure,
    stats: StepStats,
    increment: Option<f64>,
    seed: u64,
) -> Result<StepRecord> {
    let zeta = op.zeta();
    let metric = op.system.metric;
    Ok(StepRecord {
        n,
        weak_norm: weak_norm(mu, zeta)?,
        strong_norm: strong_norm_with(mu, zeta, metric)?,
        path_holder: path_holder_constant_with(mu, zeta, PATH_PAIR_BUDGET, seed, metric)?.value,
        max_support: mu.max_support(),
        consolidation_error: stats.consolidation_error,
        increment,
    })
}

/// Iterate `F_*` from `m_1 x nu0` until `||mu_{n+1} - mu_n||_inf < tol` or
/// `n_max` steps.
pub fn compute_invariant(
    op: &TransferOperator,
    nu0: &AtomicMeasure,
    tol: f64,
    n_max: usize,
) -> Result<InvariantResult> {
    if !(tol > 0.0) {
        return Err(Error::invalid(MODULE, format!("tolerance {tol} not positive")));
    }
    let mut mu = product_measure(nu0, op.cells())?;
    let mut log = IterationLog::default();
    log.push(record(op, 0, &mu, StepStats::default(), None, 0)?);
    if tol == f64::INFINITY {
        return Ok(InvariantResult {
            measure: mu,
            log,
            converged: true,
            steps: 0,
        });
    }
    for n in 1..=n_max {
        let (next, stats) = op.apply(&mu)?;
        let inc = weak_norm(&next.sub(&mu)?, op.zeta())?;
        log.push(record(op, n, &next, stats, Some(inc), n as u64)?);
        mu = next;
        if inc < tol {
            return Ok(InvariantResult {
                measure: mu,
                log,
                converged: true,
                steps: n,
            });
        }
    }
    Ok(InvariantResult {
        measure: mu,
        log,
        converged: false,
        steps: n_max,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportEntry {
    pub label: String,
    pub measured: f64,
    pub bound: f64,
    pub slack: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub entries: Vec<ReportEntry>,
}

impl Report {
    pub fn check(&mut self, label: impl Into<String>, measured: f64, bound: f64, slack: f64) {
        self.entries.push(ReportEntry {
            label: label.into(),
            measured,
            bound,
            slack,
            passed: measured <= bound + slack,
        });
    }

    pub fn all_passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ReportEntry> {
        self.entries.iter().filter(|e| !e.passed)
    }
}

/// Random measure with up to `max_atoms` atoms per fiber; signed weights in
/// `[-1, 1]`, or a probability on every fiber.
pub fn random_measure(
    cells: usize,
    max_atoms: usize,
    signed: bool,
    rng: &mut impl Rng,
) -> Result<DisintegratedMeasure> {
    let fibers = (0..cells)
        .map(|_| {
            let n = rng.random_range(1..=max_atoms);
            let atoms: Vec<(f64, f64)> = (0..n)
                .map(|_| {
                    let y: f64 = rng.random();
                    let w: f64 = if signed {
                        rng.random_range(-1.0..1.0)
                    } else {
                        rng.random_range(0.01..1.0)
                    };
                    (y, w)
                })
                .collect();
            let mu = AtomicMeasure::new(atoms)?;
            Ok(if signed { mu } else { mu.scaled(1.0 / mu.total_mass()) })
        })
        .collect::<Result<_>>()?;
    DisintegratedMeasure::from_fibers(fibers)
}

/// `||F_* mu||_inf <= ||mu||_inf` and
/// `||F_* mu||_inf <= alpha^zeta ||mu||_inf + |phi_x|_inf` on random signed
/// measures, each with the step's consolidation error as slack.
pub fn verify_weak_contraction(op: &TransferOperator, trials: usize, seed: u64) -> Result<Report> {
    let zeta = op.zeta();
    let alpha_z = op.system.params.alpha.powf(zeta);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = Report::default();
    for t in 0..trials {
        let mu = random_measure(op.cells(), 8, true, &mut rng)?;
        let before = weak_norm(&mu, zeta)?;
        let (image, stats) = op.apply(&mu)?;
        let after = weak_norm(&image, zeta)?;
        let slack = stats.consolidation_error + 1e-9;
        report.check(format!("trial {t} weak"), after, before, slack);
        let phi_sup = mu.marginal().sup_norm();
        report.check(format!("trial {t} alpha"), after, alpha_z * before + phi_sup, slack);
    }
    Ok(report)
}

/// Default slack added to every Hölder recursion bound.
pub const HOLDER_SLACK: f64 = 0.1;

/// Path Hölder constants of `F_*^k mu`, `k <= n`, against
/// `beta^k |mu|_zeta + D / (1 - beta) ||mu||_inf`, with
/// `beta = (alpha L)^zeta` and `D = (eps_rho + |G|_zeta) L^zeta`.
pub fn verify_holder_recursion(
    op: &TransferOperator,
    mu: &DisintegratedMeasure,
    n: usize,
    seed: u64,
) -> Result<Report> {
    let phi = mu.marginal();
    let off = phi.values().iter().fold(0.0_f64, |m, v| m.max((v - 1.0).abs()));
    if off > 1e-6 {
        return Err(Error::invalid(MODULE, format!("marginal deviates from 1 by {off}")));
    }
    let p = op.system.params;
    let zeta = p.zeta;
    let metric = op.system.metric;
    let beta = (p.alpha * p.big_l).powf(zeta);
    let d = (p.eps_rho + p.g_holder) * p.big_l.powf(zeta);
    let weak0 = weak_norm(mu, zeta)?;
    let h0 = path_holder_constant_with(mu, zeta, PATH_PAIR_BUDGET, seed, metric)?.value;
    let mut report = Report::default();
    report.check("k 0", h0, h0, 0.0);
    let mut cur = mu.clone();
    for k in 1..=n {
        cur = op.apply(&cur)?.0;
        let measured = path_holder_constant_with(&cur, zeta, PATH_PAIR_BUDGET, seed + k as u64, metric)?.value;
        let bound = if beta < 1.0 {
            beta.powi(k as i32) * h0 + d / (1.0 - beta) * weak0
        } else {
            f64::INFINITY
        };
        report.check(format!("k {k}"), measured, bound, HOLDER_SLACK);
    }
    Ok(report)
}
