//! Signed measures on `M x K` stored through their disintegration along the
//! vertical fibers of a uniform base grid, the weak and strong norms, the
//! Hölder constant of the fiber path, and observables.
//!
//! Cell `k` stores `mu|_{gamma_k}`, the fiber measure already multiplied by
//! the marginal density, so the marginal `phi_x(gamma_k)` is its total mass.

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;

use crate::base_dynamics::{cell_center, GridDensity};
use crate::error::{Error, Result};
use crate::fiber_measure::{w_distance, w_norm, Atom, AtomicMeasure};
use crate::geometry::{estimation_pairs, holder_seminorm_estimate, BaseMetric, PairMax};

const MODULE: &str = "skew_measure";
const TEXT_HEADER: &str = "skewlab-measure 1";

#[derive(Debug, Clone, PartialEq)]
pub struct DisintegratedMeasure {
    fibers: Vec<AtomicMeasure>,
}

impl DisintegratedMeasure {
    pub fn from_fibers(fibers: Vec<AtomicMeasure>) -> Result<Self> {
        if fibers.is_empty() {
            return Err(Error::invalid(MODULE, "a measure needs at least one base cell"));
        }
        Ok(DisintegratedMeasure { fibers })
    }

    pub fn zero(cells: usize) -> Result<Self> {
        Self::from_fibers(vec![AtomicMeasure::zero(); cells])
    }

    pub fn cells(&self) -> usize {
        self.fibers.len()
    }

    pub fn fiber(&self, k: usize) -> &AtomicMeasure {
        &self.fibers[k]
    }

    pub fn fibers(&self) -> &[AtomicMeasure] {
        &self.fibers
    }

    pub fn center(&self, k: usize) -> f64 {
        cell_center(k, self.cells())
    }

    /// `phi_x` on the grid: the mass of each fiber.
    pub fn marginal(&self) -> GridDensity {
        GridDensity::new(self.fibers.iter().map(|f| f.total_mass()).collect()).expect("fiber masses are finite")
    }

    pub fn total_mass(&self) -> f64 {
        self.fibers.iter().map(|f| f.total_mass()).sum::<f64>() / self.cells() as f64
    }

    pub fn max_support(&self) -> usize {
        self.fibers.iter().map(|f| f.len()).max().unwrap_or(0)
    }

    fn check_grid(&self, other: &Self) -> Result<()> {
        if self.cells() != other.cells() {
            return Err(Error::invalid(
                MODULE,
                format!("grids differ: {} vs {} cells", self.cells(), other.cells()),
            ));
        }
        Ok(())
    }

    /// `self + c * other`.
    pub fn add_scaled(&self, other: &Self, c: f64) -> Result<Self> {
        self.check_grid(other)?;
        let fibers = self
            .fibers
            .iter()
            .zip(&other.fibers)
            .map(|(a, b)| a.add_scaled(b, c))
            .collect();
        Ok(DisintegratedMeasure { fibers })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add_scaled(other, -1.0)
    }

    pub fn scaled(&self, c: f64) -> Self {
        DisintegratedMeasure {
            fibers: self.fibers.iter().map(|f| f.scaled(c)).collect(),
        }
    }

    /// Text checkpoint: a header, the cell count, then one line per cell with
    /// index, `phi_x`, atom count and `y w` pairs. Floats carry 17
    /// significant digits, so parsing restores every bit.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{TEXT_HEADER}");
        let _ = writeln!(s, "cells {}", self.cells());
        for (k, f) in self.fibers.iter().enumerate() {
            let _ = write!(s, "{k} {:.16e} {}", f.total_mass(), f.len());
            for a in f.atoms() {
                let _ = write!(s, " {:.16e} {:.16e}", a.y, a.w);
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::invalid(MODULE, format!("checkpoint: {msg}"));
        let mut lines = text.lines();
        if lines.next() != Some(TEXT_HEADER) {
            return Err(bad("missing header".into()));
        }
        let cells: usize = lines
            .next()
            .and_then(|l| l.strip_prefix("cells "))
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| bad("missing cell count".into()))?;
        let mut fibers = Vec::with_capacity(cells);
        for k in 0..cells {
            let line = lines.next().ok_or_else(|| bad(format!("missing cell {k}")))?;
            let mut tok = line.split_ascii_whitespace();
            let mut next = |what: &str| tok.next().ok_or_else(|| bad(format!("cell {k}: missing {what}")));
            let idx: usize = next("index")?
                .parse()
                .map_err(|_| bad(format!("cell {k}: bad index")))?;
            if idx != k {
                return Err(bad(format!("cell {k} labelled {idx}")));
            }
            let phi: f64 = next("phi")?.parse().map_err(|_| bad(format!("cell {k}: bad phi")))?;
            let n: usize = next("atom count")?
                .parse()
                .map_err(|_| bad(format!("cell {k}: bad count")))?;
            let mut atoms = Vec::with_capacity(n);
            for _ in 0..n {
                let y: f64 = next("position")?
                    .parse()
                    .map_err(|_| bad(format!("cell {k}: bad position")))?;
                let w: f64 = next("weight")?
                    .parse()
                    .map_err(|_| bad(format!("cell {k}: bad weight")))?;
                atoms.push((y, w));
            }
            let fiber = AtomicMeasure::new(atoms)?;
            if fiber.len() != n {
                return Err(bad(format!("cell {k}: atoms not sorted and distinct")));
            }
            if (fiber.total_mass() - phi).abs() > 1e-10 {
                return Err(bad(format!("cell {k}: phi {phi} differs from fiber mass")));
            }
            fibers.push(fiber);
        }
        Self::from_fibers(fibers)
    }
}

/// `m_1 x nu`: every cell carries `nu`, `phi_x = 1`.
pub fn product_measure(nu: &AtomicMeasure, cells: usize) -> Result<DisintegratedMeasure> {
    if nu.atoms().iter().any(|a| a.w < 0.0) || (nu.total_mass() - 1.0).abs() > 1e-12 {
        return Err(Error::invalid(
            MODULE,
            "product measure needs a probability on the fiber",
        ));
    }
    DisintegratedMeasure::from_fibers(vec![nu.clone(); cells])
}

/// `||mu||_inf`: the largest fiber `W` norm.
pub fn weak_norm(mu: &DisintegratedMeasure, zeta: f64) -> Result<f64> {
    let norms: Vec<f64> = mu.fibers().par_iter().map(|f| w_norm(f, zeta)).collect::<Result<_>>()?;
    Ok(norms.into_iter().fold(0.0, f64::max))
}

/// `||mu||_{S inf} = H_zeta(phi_x) + |phi_x|_inf + ||mu||_inf` on the circle.
pub fn strong_norm(mu: &DisintegratedMeasure, zeta: f64) -> Result<f64> {
    strong_norm_with(mu, zeta, BaseMetric::Circle)
}

pub fn strong_norm_with(mu: &DisintegratedMeasure, zeta: f64, metric: BaseMetric) -> Result<f64> {
    Ok(marginal_holder_norm(mu, zeta, metric)? + weak_norm(mu, zeta)?)
}

/// `|phi_x|_zeta = H_zeta(phi_x) + |phi_x|_inf`.
pub fn marginal_holder_norm(mu: &DisintegratedMeasure, zeta: f64, metric: BaseMetric) -> Result<f64> {
    let phi = mu.marginal();
    if mu.cells() == 1 {
        return Ok(phi.sup_norm());
    }
    let samples: Vec<(f64, f64)> = (0..mu.cells()).map(|k| (mu.center(k), phi.values()[k])).collect();
    Ok(holder_seminorm_estimate(&samples, zeta, usize::MAX, 0, metric)?.combined)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathHolderEstimate {
    pub value: f64,
    /// Cells `(i, j)` of the maximising pair.
    pub pair: Option<(usize, usize)>,
}

/// Hölder constant of `gamma -> mu|_gamma` in the `W` metric: neighbouring
/// cells plus `pair_budget` random pairs, on the circle.
pub fn path_holder_constant(
    mu: &DisintegratedMeasure,
    zeta: f64,
    pair_budget: usize,
    seed: u64,
) -> Result<PathHolderEstimate> {
    path_holder_constant_with(mu, zeta, pair_budget, seed, BaseMetric::Circle)
}

pub fn path_holder_constant_with(
    mu: &DisintegratedMeasure,
    zeta: f64,
    pair_budget: usize,
    seed: u64,
    metric: BaseMetric,
) -> Result<PathHolderEstimate> {
    if mu.cells() < 2 {
        return Err(Error::invalid(MODULE, "path Hölder constant needs two cells"));
    }
    let centers: Vec<f64> = (0..mu.cells()).map(|k| mu.center(k)).collect();
    let pairs = estimation_pairs(&centers, metric, pair_budget, seed);
    let ratios: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let d = metric.distance(centers[i], centers[j]).powf(zeta);
            Ok(w_distance(mu.fiber(i), mu.fiber(j), zeta)? / d)
        })
        .collect::<Result<_>>()?;
    let mut best = PairMax::default();
    for (&(i, j), &r) in pairs.iter().zip(&ratios) {
        best.offer(i, j, r);
    }
    Ok(PathHolderEstimate {
        value: best.value,
        pair: best.pair,
    })
}

type ObservableFn = dyn Fn(f64, f64) -> f64 + Send + Sync;

/// A function `g(x, y)` on `M x K` with declared Hölder data for the metric
/// `d_1 + d_2`.
#[derive(Clone)]
pub struct Observable {
    eval: Arc<ObservableFn>,
    pub seminorm: f64,
    pub sup_norm: f64,
}

impl std::fmt::Debug for Observable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Observable")
            .field("seminorm", &self.seminorm)
            .field("sup_norm", &self.sup_norm)
            .finish_non_exhaustive()
    }
}

impl Observable {
    pub fn new(eval: impl Fn(f64, f64) -> f64 + Send + Sync + 'static, seminorm: f64, sup_norm: f64) -> Self {
        Observable {
            eval: Arc::new(eval),
            seminorm,
            sup_norm,
        }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        (self.eval)(x, y)
    }

    /// `|g|_zeta = |g|_inf + H_zeta(g)`.
    pub fn holder_norm(&self) -> f64 {
        self.sup_norm + self.seminorm
    }

    pub fn constant(c: f64) -> Self {
        Self::new(move |_, _| c, 0.0, c.abs())
    }

    /// `cos(2 pi k x)`; `min(2 pi k d, 2) / d^zeta <= 2 (pi k)^zeta`.
    pub fn cos_x(k: u32, zeta: f64) -> Self {
        let w = 2.0 * std::f64::consts::PI * k as f64;
        Self::new(
            move |x, _| (w * x).cos(),
            2.0 * (std::f64::consts::PI * k as f64).powf(zeta),
            1.0,
        )
    }

    pub fn sin_x(k: u32, zeta: f64) -> Self {
        let w = 2.0 * std::f64::consts::PI * k as f64;
        Self::new(
            move |x, _| (w * x).sin(),
            2.0 * (std::f64::consts::PI * k as f64).powf(zeta),
            1.0,
        )
    }

    /// The fiber coordinate; `|y - y'| <= min(d, 1)` with `d <= 3/2`.
    pub fn fiber_coordinate(zeta: f64) -> Self {
        Self::new(|_, y| y, 1.5_f64.powf(1.0 - zeta), 1.0)
    }

    pub fn scaled(&self, c: f64) -> Self {
        let g = self.eval.clone();
        Self::new(
            move |x, y| c * g(x, y),
            c.abs() * self.seminorm,
            c.abs() * self.sup_norm,
        )
    }

    pub fn product(&self, other: &Observable) -> Self {
        let (a, b) = (self.eval.clone(), other.eval.clone());
        Self::new(
            move |x, y| a(x, y) * b(x, y),
            self.sup_norm * other.seminorm + other.sup_norm * self.seminorm,
            self.sup_norm * other.sup_norm,
        )
    }
}

/// `h mu0`: fiber weights multiplied by `h(gamma_k, y_j)`. Cells where the
/// new mass vanishes carry the zero measure.
pub fn multiply_observable(mu0: &DisintegratedMeasure, h: &Observable) -> DisintegratedMeasure {
    let fibers = mu0
        .fibers()
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let x = mu0.center(k);
            let atoms: Vec<Atom> = f
                .atoms()
                .iter()
                .map(|a| Atom {
                    y: a.y,
                    w: h.eval(x, a.y) * a.w,
                })
                .collect();
            let fiber = AtomicMeasure::new(atoms.into_iter().map(|a| (a.y, a.w))).expect("positions unchanged");
            if fiber.total_mass() == 0.0 {
                AtomicMeasure::zero()
            } else {
                fiber
            }
        })
        .collect();
    DisintegratedMeasure { fibers }
}

/// `int g dmu = (1/N) sum_k sum_j g(gamma_k, y_kj) w_kj`.
pub fn integrate(g: &Observable, mu: &DisintegratedMeasure) -> f64 {
    let total: f64 = mu
        .fibers()
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let x = mu.center(k);
            f.integrate(|y| g.eval(x, y))
        })
        .sum();
    total / mu.cells() as f64
}
