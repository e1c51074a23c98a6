//! Closed-form constants of the spectral-gap and regularity estimates,
//! convergence and correlation experiments, and rate fitting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::base_dynamics::{cell_center, PeriodicPolyline, TEST_KNOTS};
use crate::error::{Error, Result};
use crate::fiber_measure::AtomicMeasure;
use crate::skew_measure::{
    integrate, multiply_observable, strong_norm_with, weak_norm, DisintegratedMeasure, Observable,
};
use crate::transfer_operator::TransferOperator;

const MODULE: &str = "analysis";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralInputs {
    pub alpha: f64,
    pub zeta: f64,
    /// Base contraction rate on zero-mean Hölder densities.
    pub r: f64,
    pub d_base: f64,
    pub big_l: f64,
    pub eps_rho: f64,
    pub g_holder: f64,
    /// Lasota–Yorke constants `A`, `lambda`, `B2`.
    pub a: f64,
    pub lambda: f64,
    pub b2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralConstants {
    pub inputs: SpectralInputs,
    /// `1 / (1 - alpha^zeta)`.
    pub alpha_bar: f64,
    /// `max(sqrt r, sqrt alpha^zeta)`.
    pub beta1: f64,
    /// `(alpha^zeta)^(-1/2) + alpha_bar D r^(-1/2)`.
    pub d2: f64,
    pub lambda0: f64,
    pub xi: f64,
    /// `lambda0^(-1/2) [A (A + B2) + B2 D2]`.
    pub k1: f64,
    /// `2 K1`, standing in for `K1 ||S||`.
    pub k: f64,
    /// `(alpha L)^zeta`.
    pub beta: f64,
    /// `(eps_rho + |G|_zeta) L^zeta`.
    pub d_hold: f64,
    /// `d_hold / (1 - beta)`, infinite when `beta >= 1`.
    pub holder_bound: f64,
    pub beta_vacuous: bool,
    pub lambda0_vacuous: bool,
}

pub fn compute_constants(i: SpectralInputs) -> Result<SpectralConstants> {
    let bad = |msg: String| Err(Error::invalid(MODULE, msg));
    if !(i.alpha > 0.0 && i.alpha < 1.0) {
        return bad(format!("alpha = {} outside (0, 1)", i.alpha));
    }
    if !(i.zeta > 0.0 && i.zeta <= 1.0) {
        return bad(format!("zeta = {} outside (0, 1]", i.zeta));
    }
    if !(i.r > 0.0 && i.r < 1.0) {
        return bad(format!("r = {} outside (0, 1)", i.r));
    }
    if !(i.big_l >= 1.0 && i.big_l.is_finite()) {
        return bad(format!("L = {} below 1", i.big_l));
    }
    for (name, v) in [
        ("D", i.d_base),
        ("eps_rho", i.eps_rho),
        ("|G|_zeta", i.g_holder),
        ("A", i.a),
        ("lambda", i.lambda),
        ("B2", i.b2),
    ] {
        if !(v >= 0.0 && v.is_finite()) {
            return bad(format!("{name} = {v} must be finite and nonnegative"));
        }
    }
    let az = i.alpha.powf(i.zeta);
    let alpha_bar = 1.0 / (1.0 - az);
    let beta1 = i.r.sqrt().max(az.sqrt());
    let d2 = 1.0 / az.sqrt() + alpha_bar * i.d_base / i.r.sqrt();
    let lambda0 = beta1.max(i.lambda);
    let xi = lambda0.sqrt();
    let k1 = (i.a * (i.a + i.b2) + i.b2 * d2) / lambda0.sqrt();
    let beta = (i.alpha * i.big_l).powf(i.zeta);
    let d_hold = (i.eps_rho + i.g_holder) * i.big_l.powf(i.zeta);
    let holder_bound = if beta < 1.0 {
        d_hold / (1.0 - beta)
    } else {
        f64::INFINITY
    };
    Ok(SpectralConstants {
        inputs: i,
        alpha_bar,
        beta1,
        d2,
        lambda0,
        xi,
        k1,
        k: 2.0 * k1,
        beta,
        d_hold,
        holder_bound,
        beta_vacuous: beta >= 1.0,
        lambda0_vacuous: lambda0 >= 1.0,
    })
}

/// Least-squares line through `(x, y)`; `None` with fewer than two distinct
/// abscissae.
pub fn fit_line(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Exponential rate `exp(slope)` of `values[n]` against `n` over the tail
/// half of `first..values.len()`, skipping values not above `floor`.
pub fn tail_rate(values: &[f64], first: usize, floor: f64) -> Option<(f64, f64)> {
    let idx: Vec<usize> = (first..values.len()).collect();
    let tail = &idx[idx.len() / 2..];
    let pts: Vec<(f64, f64)> = tail
        .iter()
        .filter(|&&n| values[n] > floor)
        .map(|&n| (n as f64, values[n].ln()))
        .collect();
    fit_line(&pts).map(|(s, c)| (s.exp(), c.exp()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub n: usize,
    pub weak_norm: f64,
    pub strong_norm: f64,
    pub bound: f64,
    /// Accumulated consolidation error bound up to step `n`.
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    /// `exp` of the fitted slope of `log weak_norm`; `None` when the
    /// difference vanishes.
    pub fitted_rate: Option<f64>,
    pub beta1: f64,
    pub d2: f64,
    pub exact_zero: bool,
}

impl ConvergenceReport {
    /// Every `weak_norm` at `n >= 1` within `factor` times its bound.
    pub fn within_bounds(&self, factor: f64) -> bool {
        self.rows
            .iter()
            .filter(|r| r.n >= 1)
            .all(|r| r.weak_norm <= factor * r.bound + r.slack)
    }
}

/// Iterate the zero-mass difference `mu - nu` and compare `||F_*^n (mu - nu)||_inf`
/// with `D2 beta1^n ||mu - nu||_{S inf}`.
pub fn convergence_experiment(
    op: &TransferOperator,
    mu: &DisintegratedMeasure,
    nu: &DisintegratedMeasure,
    n_max: usize,
    constants: &SpectralConstants,
) -> Result<ConvergenceReport> {
    let zeta = op.zeta();
    let metric = op.system().metric;
    let mut diff = mu.sub(nu)?;
    let mass = diff.total_mass();
    if mass.abs() > 1e-9 {
        return Err(Error::invalid(MODULE, format!("difference has total mass {mass}")));
    }
    let strong0 = strong_norm_with(&diff, zeta, metric)?;
    let mut rows = Vec::with_capacity(n_max + 1);
    let mut slack = 0.0;
    for n in 0..=n_max {
        if n > 0 {
            let (next, stats) = op.apply(&diff)?;
            slack += stats.consolidation_error;
            diff = next;
        }
        rows.push(ConvergenceRow {
            n,
            weak_norm: weak_norm(&diff, zeta)?,
            strong_norm: strong_norm_with(&diff, zeta, metric)?,
            bound: constants.d2 * constants.beta1.powi(n as i32) * strong0,
            slack,
        });
    }
    let weak: Vec<f64> = rows.iter().map(|r| r.weak_norm).collect();
    let exact_zero = weak.iter().all(|&w| w == 0.0);
    let fitted_rate = if exact_zero {
        None
    } else {
        tail_rate(&weak, 1, 0.0).map(|r| r.0)
    };
    Ok(ConvergenceReport {
        rows,
        fitted_rate,
        beta1: constants.beta1,
        d2: constants.d2,
        exact_zero,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationRow {
    pub n: usize,
    pub c_n: f64,
    pub bound_n: f64,
}

impl CorrelationRow {
    pub fn log_ratio(&self) -> f64 {
        (self.c_n / self.bound_n).ln()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSeries {
    pub rows: Vec<CorrelationRow>,
    pub fitted_rate: Option<f64>,
    pub fitted_prefactor: Option<f64>,
    /// All `C_n` below `1e-12`: no fit.
    pub degenerate: bool,
    pub xi: f64,
    /// Prefactor `||f mu0||_{S inf} K |g|_zeta` of the bound.
    pub prefactor: f64,
    /// The same prefactor with `K1` in place of `K`.
    pub prefactor_k1: f64,
    /// `||F_* mu0 - mu0||_inf`.
    pub invariance_residual: f64,
}

/// `C_n = |int g dF_*^n(f mu0) - int g dmu0 int f dmu0|` for `n <= n_max`
/// against `||f mu0||_{S inf} K |g|_zeta xi^n`.
pub fn correlation_experiment(
    op: &TransferOperator,
    mu0: &DisintegratedMeasure,
    f: &Observable,
    g: &Observable,
    n_max: usize,
    constants: &SpectralConstants,
) -> Result<CorrelationSeries> {
    let zeta = op.zeta();
    let metric = op.system().metric;
    let residual = weak_norm(&op.apply(mu0)?.0.sub(mu0)?, zeta)?;
    let mut fmu = multiply_observable(mu0, f);
    let strong_f = strong_norm_with(&fmu, zeta, metric)?;
    let centre = integrate(g, mu0) * integrate(f, mu0);
    let prefactor = strong_f * constants.k * g.holder_norm();
    let prefactor_k1 = strong_f * constants.k1 * g.holder_norm();
    let mut rows = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        if n > 0 {
            fmu = op.apply(&fmu)?.0;
        }
        rows.push(CorrelationRow {
            n,
            c_n: (integrate(g, &fmu) - centre).abs(),
            bound_n: prefactor * constants.xi.powi(n as i32),
        });
    }
    let c: Vec<f64> = rows.iter().map(|r| r.c_n).collect();
    let degenerate = c.iter().all(|&v| v < 1e-12);
    let (fitted_rate, fitted_prefactor) = if degenerate {
        (None, None)
    } else {
        match tail_rate(&c, 0, 1e-12 * c[0]) {
            Some((r, p)) => (Some(r), Some(p)),
            None => (None, None),
        }
    };
    Ok(CorrelationSeries {
        rows,
        fitted_rate,
        fitted_prefactor,
        degenerate,
        xi: constants.xi,
        prefactor,
        prefactor_k1,
        invariance_residual: residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LasotaYorke {
    pub a: f64,
    pub lambda: f64,
    pub b2: f64,
    pub residual: f64,
    /// Largest strong norm met along the fitted orbits.
    pub sup_strong: f64,
}

/// Random probability measure whose marginal is `1` plus a periodic polyline
/// of amplitude `1/2`, with up to four atoms per fiber.
fn random_smooth_probability(cells: usize, rng: &mut impl Rng) -> Result<DisintegratedMeasure> {
    let shape = loop {
        let knots = (0..TEST_KNOTS).map(|_| rng.random_range(-1.0..1.0)).collect();
        if let Some(p) = PeriodicPolyline::zero_mean(knots) {
            break p;
        }
    };
    let peak = (0..cells)
        .map(|k| shape.eval(cell_center(k, cells)).abs())
        .fold(0.0, f64::max);
    let fibers = (0..cells)
        .map(|k| {
            let dens = 1.0 + 0.5 * shape.eval(cell_center(k, cells)) / peak.max(1e-300);
            let n = rng.random_range(1..=4);
            let atoms: Vec<(f64, f64)> = (0..n)
                .map(|_| (rng.random::<f64>(), rng.random_range(0.1..1.0)))
                .collect();
            let nu = AtomicMeasure::new(atoms)?;
            Ok(nu.scaled(dens / nu.total_mass()))
        })
        .collect::<Result<_>>()?;
    DisintegratedMeasure::from_fibers(fibers)
}

/// Fit `||F_*^n mu||_{S inf} <= A lambda^n ||mu||_{S inf} + B2 ||mu||_inf`.
///
/// For each `B2` on the grid `1.0, 1.1, .., 5.0` the points
/// `log((s_n - B2 w_0) / s_0)`, `n >= 1`, of all trials are fitted by one
/// line; `lambda = exp(slope)` and `A` is the smallest constant making the
/// envelope hold on every point. Grid values below the final ratio
/// `s_n / w_0` of some orbit are skipped. The `B2` with the least residual
/// wins.
pub fn fit_lasota_yorke(op: &TransferOperator, trials: usize, n_max: usize, seed: u64) -> Result<LasotaYorke> {
    let zeta = op.zeta();
    let metric = op.system().metric;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut orbits: Vec<(f64, f64, Vec<f64>)> = Vec::with_capacity(trials);
    let mut sup_strong: f64 = 0.0;
    for _ in 0..trials {
        let mut mu = random_smooth_probability(op.cells(), &mut rng)?;
        let w0 = weak_norm(&mu, zeta)?;
        let s0 = strong_norm_with(&mu, zeta, metric)?;
        if s0 == 0.0 {
            continue;
        }
        let mut s = Vec::with_capacity(n_max);
        for _ in 0..n_max {
            mu = op.apply(&mu)?.0;
            let v = strong_norm_with(&mu, zeta, metric)?;
            sup_strong = sup_strong.max(v);
            s.push(v);
        }
        orbits.push((w0, s0, s));
    }
    // `A lambda^n` vanishes, so `B2` has to cover the late ratios `s_n / w_0`.
    let b2_floor = orbits
        .iter()
        .filter_map(|(w0, _, s)| s.last().map(|v| v / w0))
        .fold(0.0, f64::max);
    let mut best: Option<LasotaYorke> = None;
    for step in 0..=40 {
        let b2 = 1.0 + 0.1 * step as f64;
        if b2 < b2_floor {
            continue;
        }
        let mut pts = Vec::new();
        for (w0, s0, s) in &orbits {
            for (i, &v) in s.iter().enumerate() {
                let excess = v - b2 * w0;
                if excess > 0.0 {
                    pts.push(((i + 1) as f64, (excess / s0).ln()));
                }
            }
        }
        if pts.len() < 3 {
            continue;
        }
        let Some((slope, icpt)) = fit_line(&pts) else {
            continue;
        };
        if !(slope < 0.0) {
            continue;
        }
        let lambda = slope.exp();
        let residual = pts.iter().map(|&(x, y)| (y - (icpt + slope * x)).powi(2)).sum::<f64>() / pts.len() as f64;
        let mut a: f64 = 0.0;
        for (w0, s0, s) in &orbits {
            a = a.max((s0 - b2 * w0) / s0);
            for (i, &v) in s.iter().enumerate() {
                a = a.max((v - b2 * w0) / (lambda.powi(i as i32 + 1) * s0));
            }
        }
        if best.is_none_or(|b| residual < b.residual) {
            best = Some(LasotaYorke {
                a,
                lambda,
                b2,
                residual,
                sup_strong,
            });
        }
    }
    best.ok_or_else(|| Error::estimation(MODULE, "no B2 on the grid gives a decaying envelope"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs() -> SpectralInputs {
        SpectralInputs {
            alpha: 0.5,
            zeta: 1.0,
            r: 0.25,
            d_base: 2.0,
            big_l: 1.2,
            eps_rho: 0.1,
            g_holder: 1.0,
            a: 1.0,
            lambda: 0.5,
            b2: 1.0,
        }
    }

    #[test]
    fn worked_constants() {
        let c = compute_constants(inputs()).unwrap();
        assert!((c.alpha_bar - 2.0).abs() < 1e-12);
        assert!((c.beta1 - 0.5_f64.sqrt()).abs() < 1e-12);
        assert!((c.d2 - (2.0_f64.sqrt() + 8.0)).abs() < 1e-12);
        assert!((c.beta - 0.6).abs() < 1e-12);
        assert!((c.d_hold - 1.32).abs() < 1e-12);
        assert!((c.holder_bound - 3.3).abs() < 1e-12);
        assert!((c.k - 2.0 * c.k1).abs() < 1e-12);
    }

    #[test]
    fn small_alpha_limit() {
        let mut i = inputs();
        i.alpha = 1e-12;
        let c = compute_constants(i).unwrap();
        assert!((c.alpha_bar - 1.0).abs() < 1e-9);
        assert!((c.beta1 - 0.5).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_inputs_and_flags_vacuous_bounds() {
        let mut i = inputs();
        i.r = 1.0;
        assert!(compute_constants(i).is_err());
        let mut i = inputs();
        i.big_l = 2.5;
        let c = compute_constants(i).unwrap();
        assert!(c.beta_vacuous && c.holder_bound.is_infinite());
    }

    #[test]
    fn rate_fit_recovers_geometric_sequence() {
        let v: Vec<f64> = (0..20).map(|n| 3.0 * 0.7_f64.powi(n)).collect();
        let (r, p) = tail_rate(&v, 1, 0.0).unwrap();
        assert!((r - 0.7).abs() < 1e-12 && (p - 3.0).abs() < 1e-9);
    }
}
