//! Full-branch maps of the circle, their Perron–Frobenius operator on grid
//! densities, and checks of the base hypotheses.
//!
//! A map is a list of increasing branches `f_i : P_i -> [0, 1)` over a
//! partition of `[0, 1)` into consecutive intervals. Densities live on the
//! uniform grid with centers `(k + 1/2) / N`; the transfer operator looks a
//! preimage up in the cell that contains it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{holder_seminorm_estimate, BaseMetric, CirclePoint};

const MODULE: &str = "base_dynamics";
const BISECTION_TOL: f64 = 1e-12;
/// Sample count for pointwise hypothesis checks.
const CHECK_SAMPLES: usize = 4096;

/// How the branch weights `rho_i(x_i)` enter the operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightsMode {
    /// `1 / |f_i'(x_i)|`, which sum to one when Lebesgue is invariant.
    Exact,
    /// `rho_i(x_i) / sum_j rho_j(x_j)`.
    Normalized,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum BranchForm {
    Linear {
        slope: f64,
    },
    /// Branch `k` of the lift `2x + a/(2 pi) sin(2 pi x)`, shifted down by `k`.
    Perturbed {
        a: f64,
        k: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Branch {
    index: usize,
    start: f64,
    end: f64,
    form: BranchForm,
}

impl Branch {
    pub fn index(&self) -> usize {
        self.index
    }

    /// The half-open domain `[start, end)`.
    pub fn domain(&self) -> (f64, f64) {
        (self.start, self.end)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.start <= x && x < self.end
    }

    pub fn forward(&self, x: f64) -> f64 {
        let y = match self.form {
            BranchForm::Linear { slope } => slope * (x - self.start),
            BranchForm::Perturbed { a, k } => perturbed_lift(a, x) - k,
        };
        y.clamp(0.0, 1.0)
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self.form {
            BranchForm::Linear { slope } => slope,
            BranchForm::Perturbed { a, .. } => 2.0 + a * (2.0 * std::f64::consts::PI * x).cos(),
        }
    }

    /// `rho_i(x) = 1 / |f_i'(x)|`.
    pub fn weight(&self, x: f64) -> f64 {
        1.0 / self.derivative(x).abs()
    }

    /// The unique `x` in the branch domain with `f_i(x) = gamma`.
    pub fn inverse(&self, gamma: f64) -> Result<f64> {
        match self.form {
            BranchForm::Linear { slope } => Ok((self.start + gamma / slope).min(self.end)),
            BranchForm::Perturbed { a, k } => {
                let target = gamma + k;
                let (mut lo, mut hi) = (self.start, self.end);
                let (flo, fhi) = (perturbed_lift(a, lo), perturbed_lift(a, hi));
                if !(flo - 1e-12..=fhi + 1e-12).contains(&target) {
                    return Err(Error::numeric(
                        MODULE,
                        format!("branch {} has no preimage of {gamma}", self.index),
                    ));
                }
                let mut steps = 0;
                while hi - lo > BISECTION_TOL {
                    let mid = 0.5 * (lo + hi);
                    if perturbed_lift(a, mid) < target {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    steps += 1;
                    if steps > 200 {
                        return Err(Error::numeric(
                            MODULE,
                            format!("bisection on branch {} did not converge", self.index),
                        ));
                    }
                }
                Ok(0.5 * (lo + hi))
            }
        }
    }
}

fn perturbed_lift(a: f64, x: f64) -> f64 {
    let tau = 2.0 * std::f64::consts::PI;
    2.0 * x + a / tau * (tau * x).sin()
}

/// Gallery of base maps, as named in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseSpec {
    Doubling,
    /// Increasing linear branches with the given slopes; `sum 1/slope = 1`.
    PiecewiseLinear {
        slopes: Vec<f64>,
    },
    /// `2x + (a / 2 pi) sin(2 pi x) mod 1`, `0 <= a < 1`.
    PerturbedDoubling {
        a: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseMap {
    spec: BaseSpec,
    branches: Vec<Branch>,
    region_a: Vec<(f64, f64)>,
    weights_mode: WeightsMode,
}

impl BaseMap {
    pub fn from_spec(spec: &BaseSpec) -> Result<Self> {
        match spec {
            BaseSpec::Doubling => Self::doubling(),
            BaseSpec::PiecewiseLinear { slopes } => Self::piecewise_linear(slopes),
            BaseSpec::PerturbedDoubling { a } => Self::perturbed_doubling(*a),
        }
    }

    pub fn doubling() -> Result<Self> {
        let mut f = Self::piecewise_linear(&[2.0, 2.0])?;
        f.spec = BaseSpec::Doubling;
        Ok(f)
    }

    pub fn piecewise_linear(slopes: &[f64]) -> Result<Self> {
        if slopes.len() < 2 {
            return Err(Error::invalid(MODULE, "a full-branch map needs at least two branches"));
        }
        if slopes.iter().any(|&s| !(s > 1.0 && s.is_finite())) {
            return Err(Error::invalid(MODULE, format!("slopes {slopes:?} must all exceed 1")));
        }
        let total: f64 = slopes.iter().map(|s| 1.0 / s).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(
                MODULE,
                format!("inverse slopes sum to {total}, not 1; the branches are not full"),
            ));
        }
        let mut branches = Vec::with_capacity(slopes.len());
        let mut start = 0.0;
        for (i, &slope) in slopes.iter().enumerate() {
            let end = if i + 1 == slopes.len() {
                1.0
            } else {
                start + 1.0 / slope
            };
            branches.push(Branch {
                index: i,
                start,
                end,
                form: BranchForm::Linear { slope },
            });
            start = end;
        }
        Ok(BaseMap {
            spec: BaseSpec::PiecewiseLinear {
                slopes: slopes.to_vec(),
            },
            branches,
            region_a: Vec::new(),
            weights_mode: WeightsMode::Exact,
        })
    }

    pub fn perturbed_doubling(a: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&a) {
            return Err(Error::invalid(MODULE, format!("perturbation {a} outside [0, 1)")));
        }
        let branches = (0..2)
            .map(|k| Branch {
                index: k,
                start: 0.5 * k as f64,
                end: 0.5 * (k + 1) as f64,
                form: BranchForm::Perturbed { a, k: k as f64 },
            })
            .collect();
        Ok(BaseMap {
            spec: BaseSpec::PerturbedDoubling { a },
            branches,
            region_a: Vec::new(),
            weights_mode: WeightsMode::Normalized,
        })
    }

    /// Declare the region where contraction up to `L` is allowed.
    pub fn with_region_a(mut self, intervals: &[(f64, f64)]) -> Result<Self> {
        for &(lo, hi) in intervals {
            if !(0.0 <= lo && lo < hi && hi <= 1.0) {
                return Err(Error::invalid(MODULE, format!("bad interval [{lo}, {hi}) for A")));
            }
        }
        self.region_a = intervals.to_vec();
        Ok(self)
    }

    pub fn spec(&self) -> &BaseSpec {
        &self.spec
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn degree(&self) -> usize {
        self.branches.len()
    }

    pub fn region_a(&self) -> &[(f64, f64)] {
        &self.region_a
    }

    pub fn weights_mode(&self) -> WeightsMode {
        self.weights_mode
    }

    pub fn in_region_a(&self, x: f64) -> bool {
        self.region_a.iter().any(|&(lo, hi)| lo <= x && x < hi)
    }

    pub fn branch_at(&self, x: f64) -> &Branch {
        self.branches
            .iter()
            .find(|b| b.contains(x))
            .unwrap_or_else(|| self.branches.last().expect("at least two branches"))
    }

    pub fn apply(&self, x: f64) -> f64 {
        let y = self.branch_at(x).forward(x);
        if y >= 1.0 {
            0.0
        } else {
            y
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.branch_at(x).derivative(x)
    }
}

/// All preimages of `gamma` with their operator weights.
pub fn branch_preimages(f: &BaseMap, gamma: CirclePoint) -> Result<Vec<(CirclePoint, f64)>> {
    let g = gamma.coord();
    let mut out = Vec::with_capacity(f.degree());
    for b in f.branches() {
        let x = b.inverse(g)?;
        out.push((x, b.weight(x)));
    }
    if f.weights_mode() == WeightsMode::Normalized {
        let total: f64 = out.iter().map(|p| p.1).sum();
        out.iter_mut().for_each(|p| p.1 /= total);
    }
    out.into_iter().map(|(x, w)| Ok((CirclePoint::wrap(x)?, w))).collect()
}

/// Cell index of `x` on an `n`-cell grid.
pub fn cell_of(x: f64, n: usize) -> usize {
    ((x * n as f64).floor().max(0.0) as usize).min(n - 1)
}

pub fn cell_center(k: usize, n: usize) -> f64 {
    (k as f64 + 0.5) / n as f64
}

/// Piecewise-constant density on the uniform `N`-cell grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    values: Vec<f64>,
}

impl GridDensity {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid(MODULE, "empty grid density"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(MODULE, "non-finite grid density value"));
        }
        Ok(GridDensity { values })
    }

    pub fn constant(n: usize, c: f64) -> Result<Self> {
        Self::new(vec![c; n])
    }

    pub fn from_fn(n: usize, phi: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new((0..n).map(|k| phi(cell_center(k, n))).collect())
    }

    pub fn cells(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn center(&self, k: usize) -> f64 {
        cell_center(k, self.cells())
    }

    /// Integral against Lebesgue: the mean of the cell values.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.cells() as f64
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `H_zeta + |.|_inf` over cell centers, all pairs.
    pub fn holder_norm(&self, zeta: f64, metric: BaseMetric) -> Result<f64> {
        let samples: Vec<(f64, f64)> = (0..self.cells()).map(|k| (self.center(k), self.values[k])).collect();
        Ok(holder_seminorm_estimate(&samples, zeta, usize::MAX, 0, metric)?.combined)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preimage {
    pub x: f64,
    pub cell: usize,
    pub weight: f64,
    pub branch: usize,
}

/// Preimages of every cell center, computed once per grid.
#[derive(Debug, Clone)]
pub struct PreimageTable {
    cells: usize,
    degree: usize,
    entries: Vec<Preimage>,
}

impl PreimageTable {
    pub fn new(f: &BaseMap, cells: usize) -> Result<Self> {
        if cells == 0 {
            return Err(Error::invalid(MODULE, "grid needs at least one cell"));
        }
        let mut entries = Vec::with_capacity(cells * f.degree());
        for k in 0..cells {
            let gamma = CirclePoint::wrap(cell_center(k, cells))?;
            for (i, (x, weight)) in branch_preimages(f, gamma)?.into_iter().enumerate() {
                let x = x.coord();
                entries.push(Preimage {
                    x,
                    cell: cell_of(x, cells),
                    weight,
                    branch: i,
                });
            }
        }
        Ok(PreimageTable {
            cells,
            degree: f.degree(),
            entries,
        })
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn of_cell(&self, k: usize) -> &[Preimage] {
        &self.entries[k * self.degree..(k + 1) * self.degree]
    }

    pub fn perron_frobenius(&self, phi: &GridDensity) -> Result<GridDensity> {
        if phi.cells() != self.cells {
            return Err(Error::invalid(
                MODULE,
                format!("density has {} cells, table has {}", phi.cells(), self.cells),
            ));
        }
        let v = phi.values();
        GridDensity::new(
            (0..self.cells)
                .map(|k| self.of_cell(k).iter().map(|p| v[p.cell] * p.weight).sum())
                .collect(),
        )
    }
}

/// `(P_f phi)(gamma_k) = sum_i phi(cell of x_i) rho_i(x_i)`.
pub fn perron_frobenius(f: &BaseMap, phi: &GridDensity) -> Result<GridDensity> {
    PreimageTable::new(f, phi.cells())?.perron_frobenius(phi)
}

/// Weighted `n`-fold preimages of every cell center, for evaluating `P_f^n`
/// on functions without grid lookup.
struct PreimageTree {
    cells: usize,
    /// `levels[n]` lists `(x, weight)` for `deg^n` leaves per cell, cell-major.
    levels: Vec<Vec<(f64, f64)>>,
}

const MAX_TREE_LEAVES: usize = 1 << 24;

impl PreimageTree {
    fn new(f: &BaseMap, cells: usize, depth: usize) -> Result<Self> {
        let leaves = (f.degree() as f64).powi(depth as i32) * cells as f64;
        if leaves > MAX_TREE_LEAVES as f64 {
            return Err(Error::invalid(
                MODULE,
                format!("{depth} exact iterates on {cells} cells need too many preimages"),
            ));
        }
        let mut levels = vec![(0..cells).map(|k| (cell_center(k, cells), 1.0)).collect::<Vec<_>>()];
        for _ in 0..depth {
            let prev = levels.last().expect("level 0 exists");
            let mut next = Vec::with_capacity(prev.len() * f.degree());
            for &(x, w) in prev {
                for (xi, rho) in branch_preimages(f, CirclePoint::wrap(x)?)? {
                    next.push((xi.coord(), w * rho));
                }
            }
            levels.push(next);
        }
        Ok(PreimageTree { cells, levels })
    }

    fn apply(&self, n: usize, phi: &impl Fn(f64) -> f64) -> Vec<f64> {
        let level = &self.levels[n];
        let per = level.len() / self.cells;
        level
            .chunks(per)
            .map(|leaves| leaves.iter().map(|&(x, w)| w * phi(x)).sum())
            .collect()
    }
}

/// `P_f^n phi` at the cell centers through exact `n`-fold preimages.
pub fn perron_frobenius_exact(f: &BaseMap, phi: impl Fn(f64) -> f64, n: usize, cells: usize) -> Result<GridDensity> {
    let tree = PreimageTree::new(f, cells, n)?;
    GridDensity::new(tree.apply(n, &phi))
}

/// Knot count of random test densities. Odd, so that doubling-type maps do
/// not flatten them to constants in finitely many steps.
pub(crate) const TEST_KNOTS: usize = 7;

/// Periodic piecewise-linear function through equally spaced knots.
#[derive(Debug, Clone)]
pub(crate) struct PeriodicPolyline {
    knots: Vec<f64>,
}

impl PeriodicPolyline {
    /// Centered so that the Lebesgue mean vanishes; `None` if constant.
    pub fn zero_mean(knots: Vec<f64>) -> Option<Self> {
        let mean = knots.iter().sum::<f64>() / knots.len() as f64;
        let knots: Vec<f64> = knots.iter().map(|k| k - mean).collect();
        if knots.iter().all(|k| k.abs() < 1e-12) {
            None
        } else {
            Some(PeriodicPolyline { knots })
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let m = self.knots.len();
        let t = x.rem_euclid(1.0) * m as f64;
        let i = (t.floor() as usize).min(m - 1);
        let s = t - i as f64;
        (1.0 - s) * self.knots[i] + s * self.knots[(i + 1) % m]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseRate {
    pub r_hat: f64,
    pub d_hat: f64,
    /// Fitted slope of `log |P_f^n phi|_zeta` against `n`.
    pub slope: f64,
    pub trials: usize,
    /// Iterates per trial that entered the fit.
    pub fitted_points: usize,
}

/// Empirical `r`, `D` with `|P_f^n phi|_zeta <= D r^n |phi|_zeta` for
/// zero-mean `phi`, from random periodic piecewise-linear test densities.
///
/// Iterates are evaluated through exact preimages on `cells` centers. The
/// rate is a pooled least-squares slope over the tail half of each trial,
/// each trial centered separately.
pub fn estimate_base_rate(
    f: &BaseMap,
    zeta: f64,
    n_max: usize,
    trials: usize,
    seed: u64,
    cells: usize,
) -> Result<BaseRate> {
    if n_max < 2 || trials == 0 || cells < 4 {
        return Err(Error::invalid(
            MODULE,
            "rate estimate needs n_max >= 2, trials >= 1, cells >= 4",
        ));
    }
    let tree = PreimageTree::new(f, cells, n_max)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut series: Vec<Vec<f64>> = Vec::with_capacity(trials);
    let mut attempts = 0;
    while series.len() < trials {
        attempts += 1;
        if attempts > 100 * trials {
            return Err(Error::estimation(
                MODULE,
                "could not draw non-degenerate test densities",
            ));
        }
        let knots: Vec<f64> = (0..TEST_KNOTS).map(|_| rng.random_range(-1.0..1.0)).collect();
        let Some(phi) = PeriodicPolyline::zero_mean(knots) else {
            continue;
        };
        let eval = |x: f64| phi.eval(x);
        let mut h = Vec::with_capacity(n_max + 1);
        for n in 0..=n_max {
            let g = GridDensity::new(tree.apply(n, &eval))?;
            let v = g.holder_norm(zeta, BaseMetric::Circle)?;
            if n > 0 && v < 1e-12 * h[0] {
                break;
            }
            h.push(v);
        }
        series.push(h);
    }
    let (mut sxy, mut sxx) = (0.0, 0.0);
    let mut fitted_points = usize::MAX;
    for h in &series {
        // n = 1.. available iterates, keep the tail half
        let last = h.len() - 1;
        let first = 1 + last / 2;
        let pts: Vec<(f64, f64)> = (first..=last).map(|n| (n as f64, h[n].ln())).collect();
        fitted_points = fitted_points.min(pts.len());
        if pts.len() < 2 {
            continue;
        }
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
        for &(x, y) in &pts {
            sxy += (x - mx) * (y - my);
            sxx += (x - mx) * (x - mx);
        }
    }
    if sxx == 0.0 {
        return Err(Error::estimation(MODULE, "too few nonzero iterates to fit a rate"));
    }
    let slope = sxy / sxx;
    if !(slope < 0.0) {
        return Err(Error::estimation(
            MODULE,
            format!("Hölder norms do not decay (slope {slope})"),
        ));
    }
    let r_hat = slope.exp();
    let mut d_hat: f64 = 0.0;
    for h in &series {
        for (n, v) in h.iter().enumerate() {
            d_hat = d_hat.max(v / (r_hat.powi(n as i32) * h[0]));
        }
    }
    Ok(BaseRate {
        r_hat,
        d_hat,
        slope,
        trials: series.len(),
        fitted_points,
    })
}

/// Which exponent enters the admissibility inequality for `eps_rho`, `L`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExponentMode {
    #[default]
    UseZeta,
    UseAlpha,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub zeta: f64,
    pub alpha: f64,
    #[serde(rename = "L")]
    pub big_l: f64,
    pub sigma: f64,
    pub q: usize,
    pub eps_rho: f64,
    pub g_holder: f64,
    #[serde(default)]
    pub exponent_mode: ExponentMode,
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::invalid(MODULE, what.to_string()));
        if !(self.zeta > 0.0 && self.zeta <= 1.0) {
            return bad(&format!("zeta = {} outside (0, 1]", self.zeta));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(&format!("alpha = {} outside (0, 1)", self.alpha));
        }
        if !(self.big_l >= 1.0 && self.big_l.is_finite()) {
            return bad(&format!("L = {} below 1", self.big_l));
        }
        if !(self.sigma > 1.0 && self.sigma.is_finite()) {
            return bad(&format!("sigma = {} not above 1", self.sigma));
        }
        if !(self.eps_rho > 0.0 && self.eps_rho.is_finite()) {
            return bad(&format!("eps_rho = {} not positive", self.eps_rho));
        }
        if !(self.g_holder >= 0.0 && self.g_holder.is_finite()) {
            return bad(&format!("|G|_zeta = {} negative", self.g_holder));
        }
        Ok(())
    }

    pub fn exponent(&self) -> f64 {
        match self.exponent_mode {
            ExponentMode::UseZeta => self.zeta,
            ExponentMode::UseAlpha => self.alpha,
        }
    }
}

/// Left side of the admissibility inequality
/// `exp(eps) ((deg - q) sigma^-e + q L^e [1 + (L - 1)^e]) / deg < 1`.
pub fn admissibility_lhs(deg: usize, q: usize, sigma: f64, big_l: f64, eps_rho: f64, e: f64) -> f64 {
    let d = deg as f64;
    let q = q as f64;
    let inner = (d - q) * sigma.powf(-e) + q * big_l.powf(e) * (1.0 + (big_l - 1.0).powf(e));
    eps_rho.exp() * inner / d
}

#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub name: String,
    pub measured: f64,
    pub threshold: f64,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct HypothesisReport {
    pub conditions: Vec<Condition>,
}

impl HypothesisReport {
    fn push(&mut self, name: &str, measured: f64, threshold: f64, passed: bool, detail: String) {
        self.conditions.push(Condition {
            name: name.to_string(),
            measured,
            threshold,
            passed,
            detail,
        });
    }

    pub fn all_passed(&self) -> bool {
        self.conditions.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&Condition> {
        self.conditions.iter().find(|c| c.name == name)
    }
}

/// Evaluate the base hypotheses and the Hölder-regularity preconditions.
/// Failures are report entries, never errors.
pub fn check_hypotheses(f: &BaseMap, p: &SystemParams) -> HypothesisReport {
    let mut report = HypothesisReport::default();
    let xs: Vec<f64> = (0..CHECK_SAMPLES).map(|k| cell_center(k, CHECK_SAMPLES)).collect();
    let inv_lip: Vec<f64> = xs.iter().map(|&x| 1.0 / f.derivative(x).abs()).collect();

    let (mut in_a, mut off_a) = (0.0_f64, 0.0_f64);
    for (&x, &l) in xs.iter().zip(&inv_lip) {
        if f.in_region_a(x) {
            in_a = in_a.max(l);
        } else {
            off_a = off_a.max(l);
        }
    }
    report.push(
        "f1_on_A",
        in_a,
        p.big_l,
        in_a <= p.big_l,
        if f.region_a().is_empty() {
            "A is empty".to_string()
        } else {
            "max inverse-branch Lipschitz constant on A".to_string()
        },
    );
    report.push(
        "f1_off_A",
        off_a,
        1.0 / p.sigma,
        off_a < 1.0 / p.sigma,
        "max inverse-branch Lipschitz constant off A, must be < 1/sigma".to_string(),
    );

    let covering = f
        .branches()
        .iter()
        .filter(|b| {
            let (s, e) = b.domain();
            f.region_a().iter().any(|&(lo, hi)| lo < e && s < hi)
        })
        .count();
    let deg = f.degree();
    report.push(
        "f2_cover",
        covering as f64,
        p.q as f64,
        covering <= p.q && p.q < deg,
        format!("{covering} branch domains meet A; q = {}, deg = {deg}", p.q),
    );

    let rho: Vec<(f64, f64)> = xs.iter().zip(&inv_lip).map(|(&x, &l)| (x, l)).collect();
    let (lo, hi) = rho
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(lo, hi), s| (lo.min(s.1), hi.max(s.1)));
    let osc = hi.ln() - lo.ln();
    report.push(
        "f3_log_oscillation",
        osc,
        p.eps_rho,
        osc < p.eps_rho,
        "sup log rho - inf log rho".to_string(),
    );
    match holder_seminorm_estimate(&rho, p.zeta, 4 * CHECK_SAMPLES, 0, BaseMetric::Circle) {
        Ok(h) => report.push(
            "f3_holder",
            h.seminorm,
            p.eps_rho * lo,
            h.seminorm < p.eps_rho * lo,
            "H_zeta(rho) against eps_rho inf rho".to_string(),
        ),
        Err(e) => report.push("f3_holder", f64::NAN, p.eps_rho * lo, false, e.to_string()),
    }

    let with_zeta = admissibility_lhs(deg, p.q, p.sigma, p.big_l, p.eps_rho, p.zeta);
    let with_alpha = admissibility_lhs(deg, p.q, p.sigma, p.big_l, p.eps_rho, p.alpha);
    let lhs = match p.exponent_mode {
        ExponentMode::UseZeta => with_zeta,
        ExponentMode::UseAlpha => with_alpha,
    };
    report.push(
        "admissibility",
        lhs,
        1.0,
        lhs < 1.0,
        format!("exponent zeta: {with_zeta:.6}; exponent alpha: {with_alpha:.6}"),
    );

    let beta = (p.alpha * p.big_l).powf(p.zeta);
    report.push(
        "holder_contraction",
        beta,
        1.0,
        beta < 1.0,
        "(alpha L)^zeta".to_string(),
    );
    let weak = p.alpha * p.big_l.powf(p.zeta);
    report.push(
        "holder_contraction_alt",
        weak,
        1.0,
        weak < 1.0,
        "alpha L^zeta".to_string(),
    );
    report
}

/// Default `eps_rho` for the torus example: large enough for the Hölder
/// condition at `a = 0.05`, `r = 0.1`, below the log-ratio at `a = 0.9`.
pub const DEFAULT_TORUS_EPS: f64 = 1.2;

/// The saddle perturbation of a linear torus endomorphism: a Jacobian
/// `rho = eta_r * g` with `g = lambda (1 - a)` on `B_r(x0)` and
/// `lambda (1 + a)` elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct TorusExample {
    pub a: f64,
    pub r: f64,
    pub lambda: f64,
    pub zeta: f64,
    pub grid: usize,
    pub eps_rho: f64,
    pub degree: usize,
    pub alpha: f64,
    pub exponent_mode: ExponentMode,
}

impl TorusExample {
    pub fn new(a: f64, r: f64, lambda: f64, zeta: f64, grid: usize) -> Self {
        TorusExample {
            a,
            r,
            lambda,
            zeta,
            grid,
            eps_rho: DEFAULT_TORUS_EPS,
            degree: 2,
            alpha: 0.5,
            exponent_mode: ExponentMode::UseZeta,
        }
    }
}

pub fn check_torus_example(a: f64, r: f64, lambda: f64, zeta: f64, grid: usize) -> Result<HypothesisReport> {
    check_torus(&TorusExample::new(a, r, lambda, zeta, grid))
}

fn mollifier(t2: f64) -> f64 {
    if t2 < 1.0 {
        (-1.0 / (1.0 - t2)).exp()
    } else {
        0.0
    }
}

pub fn check_torus(t: &TorusExample) -> Result<HypothesisReport> {
    if !(t.a > 0.0 && t.a < 1.0) {
        return Err(Error::invalid(MODULE, format!("a = {} outside (0, 1)", t.a)));
    }
    if !(t.eps_rho > 0.0) {
        return Err(Error::invalid(MODULE, format!("eps_rho = {} not positive", t.eps_rho)));
    }
    if !(t.lambda > 1.0) || !(t.zeta > 0.0 && t.zeta <= 1.0) || t.degree < 2 {
        return Err(Error::invalid(MODULE, "need lambda > 1, zeta in (0, 1], degree >= 2"));
    }
    if !(t.r > 0.0 && t.r <= 0.2) {
        return Err(Error::invalid(MODULE, format!("radius {} outside (0, 0.2]", t.r)));
    }
    if t.r * (t.grid as f64) < 4.0 {
        return Err(Error::invalid(
            MODULE,
            format!("grid {} too coarse for mollifier radius {}", t.grid, t.r),
        ));
    }
    let n = t.grid as f64;
    let inside = t.lambda * (1.0 - t.a);
    let outside = t.lambda * (1.0 + t.a);

    // discrete kernel, normalised to unit mass
    let kr = (t.r * n).ceil() as i64;
    let mut kernel = Vec::new();
    for di in -kr..=kr {
        for dj in -kr..=kr {
            let z2 = ((di * di + dj * dj) as f64) / (t.r * n).powi(2);
            let v = mollifier(z2);
            if v > 0.0 {
                kernel.push((di, dj, v));
            }
        }
    }
    let mass: f64 = kernel.iter().map(|k| k.2).sum();
    kernel.iter_mut().for_each(|k| k.2 /= mass);

    // rho differs from the outside value only within 2r of x0 = (1/2, 1/2)
    let center = |i: i64| (i as f64 + 0.5) / n;
    let g = |i: i64, j: i64| {
        let (dx, dy) = (center(i) - 0.5, center(j) - 0.5);
        if dx * dx + dy * dy < t.r * t.r {
            inside
        } else {
            outside
        }
    };
    let half = (2.0 * t.r * n).ceil() as i64 + 2;
    let c0 = (0.5 * n).floor() as i64;
    let side = (2 * half + 1) as usize;
    let mut rho = vec![outside; side * side];
    for bi in 0..side {
        for bj in 0..side {
            let (i, j) = (c0 - half + bi as i64, c0 - half + bj as i64);
            rho[bi * side + bj] = kernel.iter().map(|&(di, dj, w)| w * g(i - di, j - dj)).sum();
        }
    }
    let lo = rho.iter().cloned().fold(f64::INFINITY, f64::min).min(outside);
    let hi = rho.iter().cloned().fold(0.0, f64::max).max(outside);
    let osc = hi.ln() - lo.ln();

    // Hölder ratios along axis and diagonal directions at dyadic lags
    let mut holder: f64 = 0.0;
    let dirs: [(i64, i64); 4] = [(1, 0), (0, 1), (1, 1), (1, -1)];
    let mut lag = 1_i64;
    while lag < side as i64 {
        for &(u, v) in &dirs {
            let (du, dv) = (u * lag, v * lag);
            let dist = (((du * du + dv * dv) as f64).sqrt() / n).powf(t.zeta);
            for bi in 0..side as i64 {
                for bj in 0..side as i64 {
                    let (ci, cj) = (bi + du, bj + dv);
                    if ci < 0 || cj < 0 || ci >= side as i64 || cj >= side as i64 {
                        continue;
                    }
                    let d = (rho[(bi as usize) * side + bj as usize] - rho[(ci as usize) * side + cj as usize]).abs();
                    holder = holder.max(d / dist);
                }
            }
        }
        lag *= 2;
    }

    let eps = t.eps_rho;
    let e = match t.exponent_mode {
        ExponentMode::UseZeta => t.zeta,
        ExponentMode::UseAlpha => t.alpha,
    };
    let d = t.degree as f64;
    let ratio = t.a / (1.0 - t.a);
    let admissible =
        eps.exp() * ((d - 1.0) * (1.0 + t.a).powf(-e) + (1.0 / (1.0 - t.a)).powf(e) * (1.0 + ratio.powf(e))) / d;

    let mut report = HypothesisReport::default();
    report.push(
        "torus_log_ratio",
        osc,
        eps,
        osc < eps,
        format!("log((1+a)/(1-a)) = {:.6}", ((1.0 + t.a) / (1.0 - t.a)).ln()),
    );
    report.push(
        "torus_holder",
        holder,
        eps * lo,
        holder < eps * lo,
        "grid H_zeta(rho) against eps_rho inf rho".to_string(),
    );
    report.push(
        "torus_admissibility",
        admissible,
        1.0,
        admissible < 1.0,
        format!("eps_rho = {eps:.6}, degree {}", t.degree),
    );
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cp(x: f64) -> CirclePoint {
        CirclePoint::wrap(x).unwrap()
    }

    #[test]
    fn doubling_preimages_of_half() {
        let f = BaseMap::doubling().unwrap();
        let p = branch_preimages(&f, cp(0.5)).unwrap();
        assert_eq!(p.len(), 2);
        assert!((p[0].0.coord() - 0.25).abs() < 1e-15 && (p[0].1 - 0.5).abs() < 1e-15);
        assert!((p[1].0.coord() - 0.75).abs() < 1e-15 && (p[1].1 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn piecewise_linear_weights() {
        let f = BaseMap::piecewise_linear(&[3.0, 1.5]).unwrap();
        for g in [0.0, 0.3, 0.999] {
            let p = branch_preimages(&f, cp(g)).unwrap();
            assert!((p[0].1 - 1.0 / 3.0).abs() < 1e-15);
            assert!((p[1].1 - 2.0 / 3.0).abs() < 1e-15);
            for (x, _) in p {
                assert!((f.apply(x.coord()) - g).abs() < 1e-10);
            }
        }
        assert!(BaseMap::piecewise_linear(&[2.0, 3.0]).is_err());
    }

    #[test]
    fn perturbed_preimages_of_zero() {
        let a = 0.3;
        let f = BaseMap::perturbed_doubling(a).unwrap();
        let p = branch_preimages(&f, cp(0.0)).unwrap();
        assert!(p[0].0.coord().abs() < 1e-11);
        assert!((p[1].0.coord() - 0.5).abs() < 1e-11);
        let (w0, w1) = (1.0 / (2.0 + a), 1.0 / (2.0 - a));
        assert!((p[0].1 - w0 / (w0 + w1)).abs() < 1e-10);
        assert!((p[1].1 - w1 / (w0 + w1)).abs() < 1e-10);
        for g in [0.1, 0.37, 0.8] {
            for (x, _) in branch_preimages(&f, cp(g)).unwrap() {
                assert!((f.apply(x.coord()) - g).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn pf_fixes_constants_and_kills_cosine() {
        let n = 512;
        for f in [
            BaseMap::doubling().unwrap(),
            BaseMap::piecewise_linear(&[3.0, 1.5]).unwrap(),
        ] {
            let one = perron_frobenius(&f, &GridDensity::constant(n, 1.0).unwrap()).unwrap();
            assert!(one.values().iter().all(|v| (v - 1.0).abs() <= 1e-12));
        }
        let f = BaseMap::doubling().unwrap();
        let c = GridDensity::from_fn(n, |x| (2.0 * std::f64::consts::PI * x).cos()).unwrap();
        let p = perron_frobenius(&f, &c).unwrap();
        assert!(p.sup_norm() < 1e-6, "{}", p.sup_norm());
    }

    #[test]
    fn pf_preserves_positivity_and_integral() {
        let phi = GridDensity::from_fn(512, |x| 1.0 + 0.5 * (6.0 * x).sin()).unwrap();
        let f = BaseMap::piecewise_linear(&[3.0, 1.5]).unwrap();
        let p = perron_frobenius(&f, &phi).unwrap();
        assert!(p.values().iter().all(|&v| v >= 0.0));
        // cells hit by the slope-3/2 branch get uneven weight: O(1/N) error
        assert!((p.integral() - phi.integral()).abs() < 1e-3);
        let f = BaseMap::doubling().unwrap();
        let p = perron_frobenius(&f, &phi).unwrap();
        assert!((p.integral() - phi.integral()).abs() < 1e-12);
    }

    #[test]
    fn doubling_rate_below_one_half() {
        let f = BaseMap::doubling().unwrap();
        let r = estimate_base_rate(&f, 1.0, 8, 4, 1, 256).unwrap();
        assert!(r.r_hat <= 0.55, "{r:?}");
        let f = BaseMap::piecewise_linear(&[3.0, 1.5]).unwrap();
        let r = estimate_base_rate(&f, 1.0, 8, 4, 1, 256).unwrap();
        assert!(r.r_hat < 1.0, "{r:?}");
    }

    #[test]
    fn exact_iterate_matches_grid_iterate_on_doubling() {
        let f = BaseMap::doubling().unwrap();
        let phi = |x: f64| (2.0 * std::f64::consts::PI * x).sin() + 0.3 * (6.0 * std::f64::consts::PI * x).cos();
        let mut g = GridDensity::from_fn(256, phi).unwrap();
        for _ in 0..3 {
            g = perron_frobenius(&f, &g).unwrap();
        }
        let exact = perron_frobenius_exact(&f, phi, 3, 256).unwrap();
        let gap = g
            .values()
            .iter()
            .zip(exact.values())
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(gap < 8.0 / 256.0, "{gap}");
    }

    #[test]
    fn degenerate_test_density_rejected() {
        assert!(PeriodicPolyline::zero_mean(vec![0.0; 8]).is_none());
        assert!(PeriodicPolyline::zero_mean(vec![0.7; 8]).is_none());
        let p = PeriodicPolyline::zero_mean(vec![1.0, -1.0, 0.0, 0.0]).unwrap();
        assert!((p.eval(0.125)).abs() < 1e-15);
        assert!((p.eval(1.0) - p.eval(0.0)).abs() < 1e-15);
    }

    #[test]
    fn admissibility_worked_example() {
        let v = admissibility_lhs(2, 1, 2.0, 1.05, 0.01, 1.0);
        let expected = 0.01_f64.exp() * (0.5 + 1.05 * 1.05) / 2.0;
        assert!((v - expected).abs() < 1e-15);
        assert!((v - 0.809).abs() < 1e-3);
    }

    #[test]
    fn holder_contraction_precondition() {
        let f = BaseMap::doubling().unwrap();
        let p = SystemParams {
            zeta: 1.0,
            alpha: 0.9,
            big_l: 2.0,
            sigma: 1.9,
            q: 0,
            eps_rho: 0.01,
            g_holder: 0.0,
            exponent_mode: ExponentMode::UseZeta,
        };
        let r = check_hypotheses(&f, &p);
        let c = r.get("holder_contraction").unwrap();
        assert!((c.measured - 1.8).abs() < 1e-12 && !c.passed);
    }

    #[test]
    fn doubling_passes_with_sigma_below_two() {
        let f = BaseMap::doubling().unwrap();
        let p = SystemParams {
            zeta: 1.0,
            alpha: 0.5,
            big_l: 1.0,
            sigma: 1.9,
            q: 0,
            eps_rho: 0.01,
            g_holder: 0.25,
            exponent_mode: ExponentMode::UseZeta,
        };
        let r = check_hypotheses(&f, &p);
        assert!(r.all_passed(), "{r:?}");
    }

    #[test]
    fn torus_rejects_coarse_grid() {
        assert!(check_torus_example(0.05, 0.1, 2.0, 1.0, 32).is_err());
    }
}
