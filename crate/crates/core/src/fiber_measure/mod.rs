//! Signed atomic measures on the fiber `K = [0, 1]`, their `W_1^zeta` norm,
//! pushforward under fiber contractions, and support consolidation.
//!
//! The norm `||mu||_W = sup { sum_j w_j g(y_j) : |g|_inf <= 1, H_zeta(g) <= 1 }`
//! only sees the values of `g` on the support, so it is a finite LP. We solve
//! its dual: a transport problem moving the positive part onto the negative
//! part at cost `|y - y'|^zeta`, where unmatched mass goes to a dummy node at
//! cost 1 (the price of the sup-norm constraint).

mod consolidate;
mod transport;

pub use consolidate::{consolidate, consolidate_adaptive, consolidate_min_cost, consolidate_split, Consolidation};

use crate::error::{Error, Result};

const MODULE: &str = "fiber_measure";

/// Atoms whose weight is below this are ignored by the LP.
pub const NEGLIGIBLE_WEIGHT: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub y: f64,
    pub w: f64,
}

/// A finite signed measure `sum_j w_j delta_{y_j}` on `[0, 1]`.
///
/// Atoms are kept sorted by position, with distinct positions and no zero
/// weights.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AtomicMeasure {
    atoms: Vec<Atom>,
}

impl AtomicMeasure {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn new(atoms: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        let atoms: Vec<Atom> = atoms.into_iter().map(|(y, w)| Atom { y, w }).collect();
        for a in &atoms {
            if !(0.0..=1.0).contains(&a.y) {
                return Err(Error::invalid(MODULE, format!("atom position {} outside [0, 1]", a.y)));
            }
            if !a.w.is_finite() {
                return Err(Error::invalid(MODULE, format!("non-finite atom weight {}", a.w)));
            }
        }
        Ok(Self::from_atoms(atoms))
    }

    pub fn dirac(y: f64) -> Result<Self> {
        Self::new([(y, 1.0)])
    }

    /// Sort, merge coincident positions and drop exact zeros. Positions must
    /// already be valid.
    pub(crate) fn from_atoms(mut atoms: Vec<Atom>) -> Self {
        atoms.sort_by(|a, b| a.y.total_cmp(&b.y));
        let mut out: Vec<Atom> = Vec::with_capacity(atoms.len());
        for a in atoms {
            match out.last_mut() {
                Some(last) if last.y == a.y => last.w += a.w,
                _ => out.push(a),
            }
        }
        out.retain(|a| a.w != 0.0);
        AtomicMeasure { atoms: out }
    }

    pub(crate) fn from_sorted_unchecked(atoms: Vec<Atom>) -> Self {
        debug_assert!(atoms.windows(2).all(|p| p[0].y < p[1].y));
        AtomicMeasure { atoms }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.w).sum()
    }

    pub fn total_variation(&self) -> f64 {
        self.atoms.iter().map(|a| a.w.abs()).sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        if c == 0.0 {
            return Self::zero();
        }
        let atoms = self.atoms.iter().map(|a| Atom { y: a.y, w: c * a.w }).collect();
        Self::from_sorted_unchecked(atoms)
    }

    /// `self + c * other`.
    pub fn add_scaled(&self, other: &AtomicMeasure, c: f64) -> Self {
        let mut atoms = Vec::with_capacity(self.len() + other.len());
        atoms.extend_from_slice(&self.atoms);
        atoms.extend(other.atoms.iter().map(|a| Atom { y: a.y, w: c * a.w }));
        Self::from_atoms(atoms)
    }

    pub fn sub(&self, other: &AtomicMeasure) -> Self {
        self.add_scaled(other, -1.0)
    }

    /// Jordan decomposition `(mu+, mu-)`; the negative part keeps its sign.
    pub fn split_signs(&self) -> (AtomicMeasure, AtomicMeasure) {
        let (pos, neg) = self.atoms.iter().partition(|a| a.w > 0.0);
        (Self::from_sorted_unchecked(pos), Self::from_sorted_unchecked(neg))
    }

    pub fn integrate(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.atoms.iter().map(|a| a.w * g(a.y)).sum()
    }
}

fn check_zeta(zeta: f64) -> Result<()> {
    if zeta > 0.0 && zeta <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(MODULE, format!("Hölder exponent {zeta} outside (0, 1]")))
    }
}

/// `||mu||_W`, the exact optimum of the discrete Hölder-ball LP.
pub fn w_norm(mu: &AtomicMeasure, zeta: f64) -> Result<f64> {
    check_zeta(zeta)?;
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for a in mu.atoms() {
        if a.w >= NEGLIGIBLE_WEIGHT {
            pos.push(*a);
        } else if a.w <= -NEGLIGIBLE_WEIGHT {
            neg.push(*a);
        }
    }
    if pos.is_empty() && neg.is_empty() {
        return Ok(0.0);
    }
    if neg.is_empty() {
        return Ok(pos.iter().map(|a| a.w).sum());
    }
    if pos.is_empty() {
        return Ok(neg.iter().map(|a| -a.w).sum());
    }
    let mass_pos: f64 = pos.iter().map(|a| a.w).sum();
    let mass_neg: f64 = neg.iter().map(|a| -a.w).sum();
    // rows: positive atoms then a dummy source carrying the negative mass;
    // columns: negative atoms then a dummy sink absorbing the positive mass
    let m = pos.len() + 1;
    let n = neg.len() + 1;
    let mut supply: Vec<f64> = pos.iter().map(|a| a.w).collect();
    supply.push(mass_neg);
    let mut demand: Vec<f64> = neg.iter().map(|a| -a.w).collect();
    demand.push(mass_pos);
    let mut cost = vec![1.0; m * n];
    for (i, p) in pos.iter().enumerate() {
        for (j, q) in neg.iter().enumerate() {
            cost[i * n + j] = (p.y - q.y).abs().powf(zeta);
        }
    }
    cost[m * n - 1] = 0.0;
    transport::Transport {
        supply: &supply,
        demand: &demand,
        cost: &cost,
    }
    .solve()
}

/// `||mu - nu||_W`.
pub fn w_distance(mu: &AtomicMeasure, nu: &AtomicMeasure, zeta: f64) -> Result<f64> {
    w_norm(&mu.sub(nu), zeta)
}

/// Affine fiber map `y -> scale * y + shift` with Lipschitz constant at most
/// `alpha < 1`, mapping `[0, 1]` into itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiberContraction {
    alpha: f64,
    scale: f64,
    shift: f64,
}

/// Slack allowed for images leaving `[0, 1]` through rounding.
pub const RANGE_TOL: f64 = 1e-12;

impl FiberContraction {
    pub fn new(alpha: f64, scale: f64, shift: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::invalid(
                MODULE,
                format!("contraction factor {alpha} outside (0, 1)"),
            ));
        }
        if !(scale.is_finite() && shift.is_finite()) || scale.abs() > alpha + 1e-10 {
            return Err(Error::invalid(
                MODULE,
                format!("fiber map slope {scale} exceeds contraction factor {alpha}"),
            ));
        }
        let (lo, hi) = if scale >= 0.0 {
            (shift, shift + scale)
        } else {
            (shift + scale, shift)
        };
        if lo < -RANGE_TOL || hi > 1.0 + RANGE_TOL {
            return Err(Error::invalid(
                MODULE,
                format!("fiber map image [{lo}, {hi}] leaves [0, 1]"),
            ));
        }
        Ok(FiberContraction { alpha, scale, shift })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn apply(&self, y: f64) -> f64 {
        self.scale * y + self.shift
    }
}

/// Exact pushforward: every atom moves to its image, weights unchanged.
pub fn push_contraction(mu: &AtomicMeasure, map: &FiberContraction) -> Result<AtomicMeasure> {
    push_scaled(mu, map, 1.0)
}

/// Pushforward followed by multiplication with `c`.
pub(crate) fn push_scaled(mu: &AtomicMeasure, map: &FiberContraction, c: f64) -> Result<AtomicMeasure> {
    let mut atoms = Vec::with_capacity(mu.len());
    for a in mu.atoms() {
        let y = map.apply(a.y);
        if !(-RANGE_TOL..=1.0 + RANGE_TOL).contains(&y) {
            return Err(Error::violation(MODULE, format!("pushed atom {} lands at {y}", a.y)));
        }
        atoms.push(Atom {
            y: y.clamp(0.0, 1.0),
            w: c * a.w,
        });
    }
    Ok(AtomicMeasure::from_atoms(atoms))
}
