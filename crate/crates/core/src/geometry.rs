//! Metrics on the base circle and the fiber interval, and sampled Hölder
//! seminorms.
//!
//! The base `M` is the circle `R/Z` with coordinates in `[0, 1)`. Full-branch
//! maps are described through their partition into subintervals of `[0, 1)`,
//! so some estimates are taken on the cut circle instead, where the distance
//! is plain `|x - y|`. [`BaseMetric`] selects between the two.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MODULE: &str = "geometry";

/// A point of the circle `R/Z`, stored as its coordinate in `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct CirclePoint(f64);

impl CirclePoint {
    /// Reduce any finite real modulo 1.
    pub fn wrap(x: f64) -> Result<Self> {
        if !x.is_finite() {
            return Err(Error::invalid(MODULE, format!("non-finite circle coordinate {x}")));
        }
        let mut c = x.rem_euclid(1.0);
        // rem_euclid can round up to exactly 1.0 for tiny negative inputs
        if c >= 1.0 {
            c = 0.0;
        }
        Ok(CirclePoint(c))
    }

    pub fn coord(self) -> f64 {
        self.0
    }
}

/// A point of the fiber `K = [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct FiberCoord(f64);

impl FiberCoord {
    pub fn new(y: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&y) {
            return Err(Error::invalid(MODULE, format!("fiber coordinate {y} outside [0, 1]")));
        }
        Ok(FiberCoord(y))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Circle distance `min(|x - y|, 1 - |x - y|)`.
pub fn circle_distance(x: CirclePoint, y: CirclePoint) -> f64 {
    let d = (x.0 - y.0).abs();
    d.min(1.0 - d)
}

/// Distance used for Hölder estimates in the base direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseMetric {
    /// `d_1` of the circle `R/Z`.
    #[default]
    Circle,
    /// `|x - y|` on `[0, 1)`, i.e. the circle cut open at 0.
    Interval,
}

impl BaseMetric {
    pub fn distance(self, x: f64, y: f64) -> f64 {
        let d = (x - y).abs();
        match self {
            BaseMetric::Circle => d.min(1.0 - d),
            BaseMetric::Interval => d,
        }
    }
}

/// Hölder data of a sampled function: `H_zeta`, `|.|_inf` and their sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HolderData {
    pub zeta: f64,
    pub seminorm: f64,
    pub sup_norm: f64,
    pub combined: f64,
    /// Sample indices `(i, j)`, `i < j`, of the maximising pair.
    pub attained_at: Option<(usize, usize)>,
}

/// Keeps the largest ratio seen, preferring the lexicographically lowest pair
/// on exact ties.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct PairMax {
    pub value: f64,
    pub pair: Option<(usize, usize)>,
}

impl PairMax {
    pub fn offer(&mut self, i: usize, j: usize, ratio: f64) {
        let pair = (i.min(j), i.max(j));
        match self.pair {
            None => {
                self.value = ratio;
                self.pair = Some(pair);
            }
            Some(best) => {
                if ratio > self.value || (ratio == self.value && pair < best) {
                    self.value = ratio;
                    self.pair = Some(pair);
                }
            }
        }
    }
}

/// Pairs of sample indices evaluated by the sampled Hölder estimators: every
/// pair when the budget covers them all, otherwise the neighbours in sorted
/// order (plus the wrap-around pair on the circle) and `budget` random pairs.
pub(crate) fn estimation_pairs(points: &[f64], metric: BaseMetric, budget: usize, seed: u64) -> Vec<(usize, usize)> {
    let n = points.len();
    if n < 2 {
        return Vec::new();
    }
    let total = n * (n - 1) / 2;
    if budget >= total {
        let mut all = Vec::with_capacity(total);
        for i in 0..n {
            for j in (i + 1)..n {
                all.push((i, j));
            }
        }
        return all;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| points[a].total_cmp(&points[b]).then(a.cmp(&b)));
    let mut pairs: Vec<(usize, usize)> = order.windows(2).map(|w| (w[0], w[1])).collect();
    if metric == BaseMetric::Circle && n > 2 {
        pairs.push((order[n - 1], order[0]));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..budget {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        pairs.push((i, j));
    }
    pairs
}

/// Lower estimate of `H_zeta(g)` from samples `(point, value)`.
///
/// Evaluates all neighbouring pairs plus `pair_budget` random long-range
/// pairs drawn from a generator seeded with `seed`. When the budget covers
/// all `n (n - 1) / 2` pairs the estimate is exhaustive, hence exact on the
/// sample set and monotone under adding samples.
pub fn holder_seminorm_estimate(
    samples: &[(f64, f64)],
    zeta: f64,
    pair_budget: usize,
    seed: u64,
    metric: BaseMetric,
) -> Result<HolderData> {
    if samples.len() < 2 {
        return Err(Error::invalid(MODULE, "Hölder estimate needs at least 2 samples"));
    }
    if !(zeta > 0.0 && zeta <= 1.0) {
        return Err(Error::invalid(MODULE, format!("Hölder exponent {zeta} outside (0, 1]")));
    }
    let points: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let mut best = PairMax::default();
    for (i, j) in estimation_pairs(&points, metric, pair_budget, seed) {
        let d = metric.distance(points[i], points[j]);
        if d <= 0.0 {
            return Err(Error::invalid(
                MODULE,
                format!("samples {i} and {j} sit at the same point {}", points[i]),
            ));
        }
        let ratio = (samples[i].1 - samples[j].1).abs() / d.powf(zeta);
        best.offer(i, j, ratio);
    }
    let sup_norm = samples.iter().fold(0.0_f64, |m, s| m.max(s.1.abs()));
    Ok(HolderData {
        zeta,
        seminorm: best.value,
        sup_norm,
        combined: best.value + sup_norm,
        attained_at: best.pair,
    })
}
