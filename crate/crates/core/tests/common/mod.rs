//! Independent oracles for the `W` norm, working on test-function values
//! `g_i` at the atoms: maximize `sum w_i g_i` subject to `|g_i| <= 1` and
//! `g_i - g_j <= |y_i - y_j|^zeta`. The library solves the dual transport
//! problem instead.

#![allow(dead_code)]

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use rand::Rng;
use skewlab::fiber_measure::AtomicMeasure;

/// Constraint rows `(a, b)` meaning `a . g <= b`.
fn constraints(y: &[f64], zeta: f64) -> Vec<(Vec<f64>, f64)> {
    let n = y.len();
    let mut rows = Vec::new();
    for i in 0..n {
        for s in [1.0, -1.0] {
            let mut a = vec![0.0; n];
            a[i] = s;
            rows.push((a, 1.0));
        }
        for j in 0..n {
            if i != j {
                let mut a = vec![0.0; n];
                a[i] = 1.0;
                a[j] = -1.0;
                rows.push((a, (y[i] - y[j]).abs().powf(zeta)));
            }
        }
    }
    rows
}

/// Solve a square system by Gaussian elimination with partial pivoting.
fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() < 1e-12 {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        for r in 0..n {
            if r != c {
                let f = a[r][c] / a[c][c];
                let pivot = a[c].clone();
                for (x, p) in a[r].iter_mut().zip(&pivot).skip(c) {
                    *x -= f * p;
                }
                b[r] -= f * b[c];
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

fn subsets(m: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for first in 0..m {
        for mut rest in subsets(m, k - 1) {
            if rest.iter().all(|&r| r > first) {
                rest.insert(0, first);
                out.push(rest);
            }
        }
    }
    out
}

/// Exhaustive vertex enumeration, for at most three atoms.
pub fn w_norm_vertices(mu: &AtomicMeasure, zeta: f64) -> f64 {
    let y: Vec<f64> = mu.atoms().iter().map(|a| a.y).collect();
    let w: Vec<f64> = mu.atoms().iter().map(|a| a.w).collect();
    let n = y.len();
    assert!(n <= 3, "vertex oracle is for at most three atoms");
    if n == 0 {
        return 0.0;
    }
    let rows = constraints(&y, zeta);
    let mut best = f64::NEG_INFINITY;
    for pick in subsets(rows.len(), n) {
        let a = pick.iter().map(|&r| rows[r].0.clone()).collect();
        let b = pick.iter().map(|&r| rows[r].1).collect();
        let Some(g) = solve_square(a, b) else {
            continue;
        };
        let feasible = rows
            .iter()
            .all(|(a, b)| a.iter().zip(&g).map(|(x, y)| x * y).sum::<f64>() <= b + 1e-12);
        if feasible {
            best = best.max(w.iter().zip(&g).map(|(x, y)| x * y).sum());
        }
    }
    best
}

/// Generic LP with every pairwise Hölder constraint.
pub fn w_norm_lp(mu: &AtomicMeasure, zeta: f64) -> f64 {
    let atoms = mu.atoms();
    let mut p = Problem::new(OptimizationDirection::Maximize);
    let g: Vec<_> = atoms.iter().map(|a| p.add_var(a.w, (-1.0, 1.0))).collect();
    for i in 0..atoms.len() {
        for j in 0..atoms.len() {
            if i != j {
                let d = (atoms[i].y - atoms[j].y).abs().powf(zeta);
                p.add_constraint([(g[i], 1.0), (g[j], -1.0)], ComparisonOp::Le, d);
            }
        }
    }
    p.solve()
        .expect("the Hölder ball LP is feasible and bounded")
        .objective()
}

/// Up to `max_atoms` atoms in `[0, 1]` with weights in `[-1, 1]`.
pub fn random_signed(rng: &mut impl Rng, max_atoms: usize) -> AtomicMeasure {
    let n = rng.random_range(1..=max_atoms);
    AtomicMeasure::new((0..n).map(|_| (rng.random::<f64>(), rng.random_range(-1.0..1.0)))).unwrap()
}

/// Random measure of total mass zero with `2..=max_atoms` atoms.
pub fn random_zero_mass(rng: &mut impl Rng, max_atoms: usize) -> AtomicMeasure {
    loop {
        let n = rng.random_range(2..=max_atoms);
        let mut atoms: Vec<(f64, f64)> = (0..n).map(|_| (rng.random(), rng.random_range(-1.0..1.0))).collect();
        let s: f64 = atoms[..n - 1].iter().map(|a| a.1).sum();
        atoms[n - 1].1 = -s;
        let mu = AtomicMeasure::new(atoms).unwrap();
        if !mu.is_empty() && mu.total_mass().abs() < 1e-12 {
            return mu;
        }
    }
}

/// Random probability measure with up to `max_atoms` atoms.
pub fn random_probability(rng: &mut impl Rng, max_atoms: usize) -> AtomicMeasure {
    let n = rng.random_range(1..=max_atoms);
    let raw: Vec<(f64, f64)> = (0..n).map(|_| (rng.random(), rng.random_range(0.01..1.0))).collect();
    let mu = AtomicMeasure::new(raw).unwrap();
    mu.scaled(1.0 / mu.total_mass())
}
