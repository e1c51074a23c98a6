//! Greedy support reduction for atomic measures.
//!
//! Same-sign neighbours (adjacent within the subsequence of atoms of one
//! sign) are merged at their weighted centroid, closest pair first. Only when
//! no such pair is left within the radius are opposite-sign neighbours
//! cancelled against each other. Every merge is a transport plan, so its cost
//! bounds the `W` perturbation. [`consolidate_min_cost`] instead orders all
//! merges by that cost.

use super::{Atom, AtomicMeasure};
use crate::error::{Error, Result};

/// Distances within this relative margin count as ties, so that translated
/// copies of a configuration are merged in the same order.
const TIE_REL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Consolidation {
    pub measure: AtomicMeasure,
    /// Upper bound for `||input - measure||_W`.
    pub error_bound: f64,
    pub merges: usize,
    /// Largest merge distance actually used.
    pub radius: f64,
}

impl Consolidation {
    fn unchanged(mu: &AtomicMeasure) -> Self {
        Consolidation {
            measure: mu.clone(),
            error_bound: 0.0,
            merges: 0,
            radius: 0.0,
        }
    }
}

fn better(d: f64, best: Option<(f64, usize)>) -> bool {
    match best {
        None => true,
        Some((b, _)) => d < b * (1.0 - TIE_REL),
    }
}

/// Closest same-sign neighbour pair within `radius`, lowest index on ties.
fn closest_same_sign(atoms: &[Atom], radius: f64) -> Option<(usize, usize, f64)> {
    let n = atoms.len();
    let mut next_same = vec![usize::MAX; n];
    let (mut next_pos, mut next_neg) = (usize::MAX, usize::MAX);
    for k in (0..n).rev() {
        if atoms[k].w > 0.0 {
            next_same[k] = next_pos;
            next_pos = k;
        } else {
            next_same[k] = next_neg;
            next_neg = k;
        }
    }
    let mut best: Option<(f64, usize)> = None;
    for a in 0..n {
        let b = next_same[a];
        if b == usize::MAX {
            continue;
        }
        let d = atoms[b].y - atoms[a].y;
        if d <= radius && better(d, best) {
            best = Some((d, a));
        }
    }
    best.map(|(d, a)| (a, next_same[a], d))
}

fn closest_opposite(atoms: &[Atom], radius: f64) -> Option<(usize, f64)> {
    let mut best: Option<(f64, usize)> = None;
    for a in 0..atoms.len().saturating_sub(1) {
        if (atoms[a].w > 0.0) == (atoms[a + 1].w > 0.0) {
            continue;
        }
        let d = atoms[a + 1].y - atoms[a].y;
        if d <= radius && better(d, best) {
            best = Some((d, a));
        }
    }
    best.map(|(d, a)| (a, d))
}

/// Insert into a sorted atom list, merging with an atom at the same position.
fn insert_sorted(atoms: &mut Vec<Atom>, atom: Atom) {
    let k = atoms.partition_point(|a| a.y < atom.y);
    if k < atoms.len() && atoms[k].y == atom.y {
        atoms[k].w += atom.w;
        if atoms[k].w == 0.0 {
            atoms.remove(k);
        }
    } else {
        atoms.insert(k, atom);
    }
}

/// Merge until at most `cap` atoms remain, using pairs at distance at most
/// `radius`. Fails with [`Error::CapExceeded`] if the cap cannot be met.
pub fn consolidate(mu: &AtomicMeasure, radius: f64, cap: usize, zeta: f64) -> Result<Consolidation> {
    if !(radius >= 0.0) {
        return Err(Error::invalid(
            "fiber_measure",
            format!("negative merge radius {radius}"),
        ));
    }
    super::check_zeta(zeta)?;
    if mu.len() <= cap {
        return Ok(Consolidation::unchanged(mu));
    }
    let mut atoms = mu.atoms().to_vec();
    let mut error_bound = 0.0;
    let mut merges = 0;
    let mut used = 0.0_f64;
    while atoms.len() > cap {
        if let Some((a, b, d)) = closest_same_sign(&atoms, radius) {
            let (pa, pb) = (atoms[a], atoms[b]);
            let w = pa.w + pb.w;
            let c = ((pa.w * pa.y + pb.w * pb.y) / w).clamp(pa.y, pb.y);
            error_bound += pa.w.abs() * (c - pa.y).powf(zeta) + pb.w.abs() * (pb.y - c).powf(zeta);
            atoms.remove(b);
            atoms.remove(a);
            insert_sorted(&mut atoms, Atom { y: c, w });
            used = used.max(d);
        } else if let Some((a, d)) = closest_opposite(&atoms, radius) {
            let (pa, pb) = (atoms[a], atoms[a + 1]);
            let y = if pa.w.abs() >= pb.w.abs() { pa.y } else { pb.y };
            error_bound += pa.w.abs().min(pb.w.abs()) * d.powf(zeta);
            let w = pa.w + pb.w;
            atoms.drain(a..a + 2);
            if w != 0.0 {
                insert_sorted(&mut atoms, Atom { y, w });
            }
            used = used.max(d);
        } else {
            return Err(Error::CapExceeded {
                cap,
                remaining: atoms.len(),
                cell: None,
            });
        }
        merges += 1;
    }
    Ok(Consolidation {
        measure: AtomicMeasure::from_sorted_unchecked(atoms),
        error_bound,
        merges,
        radius: used,
    })
}

/// Consolidation with the smallest radius that reaches `cap`: the greedy
/// order does not depend on the radius, so the largest distance merged by an
/// unrestricted run is that radius.
pub fn consolidate_adaptive(mu: &AtomicMeasure, cap: usize, zeta: f64) -> Result<Consolidation> {
    consolidate(mu, f64::INFINITY, cap, zeta)
}

/// Consolidate the positive and negative parts separately, splitting the cap
/// in proportion to their support sizes. A difference of two similar clouds
/// is then reduced the same way on both sides.
pub fn consolidate_split(mu: &AtomicMeasure, cap: usize, zeta: f64) -> Result<Consolidation> {
    super::check_zeta(zeta)?;
    if mu.len() <= cap {
        return Ok(Consolidation::unchanged(mu));
    }
    let (pos, neg) = mu.split_signs();
    if pos.is_empty() || neg.is_empty() {
        return consolidate_adaptive(mu, cap, zeta);
    }
    if cap < 2 {
        return Err(Error::CapExceeded {
            cap,
            remaining: mu.len(),
            cell: None,
        });
    }
    let share = (cap as f64 * pos.len() as f64 / mu.len() as f64).round() as usize;
    let cap_pos = share.clamp(1, cap - 1);
    let cap_neg = cap - cap_pos;
    let p = consolidate_adaptive(&pos, cap_pos, zeta)?;
    let n = consolidate_adaptive(&neg, cap_neg, zeta)?;
    let mut atoms = p.measure.atoms().to_vec();
    atoms.extend_from_slice(n.measure.atoms());
    Ok(Consolidation {
        measure: AtomicMeasure::from_atoms(atoms),
        error_bound: p.error_bound + n.error_bound,
        merges: p.merges + n.merges,
        radius: p.radius.max(n.radius),
    })
}

fn merge_cost(a: Atom, b: Atom, zeta: f64) -> f64 {
    let d = b.y - a.y;
    if (a.w > 0.0) == (b.w > 0.0) {
        let c = ((a.w * a.y + b.w * b.y) / (a.w + b.w)).clamp(a.y, b.y);
        a.w.abs() * (c - a.y).powf(zeta) + b.w.abs() * (b.y - c).powf(zeta)
    } else {
        a.w.abs().min(b.w.abs()) * d.powf(zeta)
    }
}

/// Merge the pair with the smallest error bound until at most `cap` atoms
/// remain. Candidates are neighbours in the full atom order and same-sign
/// neighbours; opposite-sign pairs cancel onto the heavier atom. For a
/// difference of two nearby clouds this pairs each atom with its
/// counterpart instead of coarsening both clouds.
pub fn consolidate_min_cost(mu: &AtomicMeasure, cap: usize, zeta: f64) -> Result<Consolidation> {
    super::check_zeta(zeta)?;
    if mu.len() <= cap {
        return Ok(Consolidation::unchanged(mu));
    }
    let mut atoms = mu.atoms().to_vec();
    let mut error_bound = 0.0;
    let mut merges = 0;
    let mut used = 0.0_f64;
    while atoms.len() > cap {
        let n = atoms.len();
        let mut next_same = vec![usize::MAX; n];
        let (mut next_pos, mut next_neg) = (usize::MAX, usize::MAX);
        for k in (0..n).rev() {
            if atoms[k].w > 0.0 {
                next_same[k] = next_pos;
                next_pos = k;
            } else {
                next_same[k] = next_neg;
                next_neg = k;
            }
        }
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..n {
            for b in [a + 1, next_same[a]] {
                if b >= n {
                    continue;
                }
                let cost = merge_cost(atoms[a], atoms[b], zeta);
                if best.is_none_or(|(c, _, _)| cost < c * (1.0 - TIE_REL)) {
                    best = Some((cost, a, b));
                }
            }
        }
        let Some((cost, a, b)) = best else {
            return Err(Error::CapExceeded {
                cap,
                remaining: n,
                cell: None,
            });
        };
        let (pa, pb) = (atoms[a], atoms[b]);
        let w = pa.w + pb.w;
        let y = if (pa.w > 0.0) == (pb.w > 0.0) {
            ((pa.w * pa.y + pb.w * pb.y) / w).clamp(pa.y, pb.y)
        } else if pa.w.abs() >= pb.w.abs() {
            pa.y
        } else {
            pb.y
        };
        error_bound += cost;
        used = used.max(pb.y - pa.y);
        atoms.remove(b);
        atoms.remove(a);
        if w != 0.0 {
            insert_sorted(&mut atoms, Atom { y, w });
        }
        merges += 1;
    }
    Ok(Consolidation {
        measure: AtomicMeasure::from_sorted_unchecked(atoms),
        error_bound,
        merges,
        radius: used,
    })
}
