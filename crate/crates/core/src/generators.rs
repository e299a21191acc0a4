//! Benchmark network families and a fixed nonsymmetric coupling example.

use std::collections::HashSet;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};
use crate::graph::OrientedNetwork;

fn rng_from(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

fn require_n(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("need n >= 2, got {n}")));
    }
    Ok(())
}

/// Path `P_n`: `0 - 1 - ... - n-1`.
pub fn path(n: usize) -> Result<OrientedNetwork> {
    require_n(n)?;
    OrientedNetwork::simple(n, (1..n).map(|i| (i - 1, i)))
}

/// Complete graph `K_n`.
pub fn complete(n: usize) -> Result<OrientedNetwork> {
    require_n(n)?;
    OrientedNetwork::simple(n, (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))))
}

/// Star with hub `0`.
pub fn star(n: usize) -> Result<OrientedNetwork> {
    require_n(n)?;
    OrientedNetwork::simple(n, (1..n).map(|i| (0, i)))
}

/// Cycle `C_n` whose vertices are joined to the `d/2` nearest neighbours on each side.
pub fn cycle_power(n: usize, d: usize) -> Result<OrientedNetwork> {
    if d < 2 || !d.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!(
            "degree must be even and >= 2, got {d}"
        )));
    }
    if d >= n {
        return Err(Error::InvalidParameter(format!(
            "degree {d} must be below n = {n}"
        )));
    }
    let half = d / 2;
    let mut edges = Vec::with_capacity(n * half);
    for i in 0..n {
        for s in 1..=half {
            edges.push((i, (i + s) % n));
        }
    }
    OrientedNetwork::simple(n, edges)
}

/// Random bipartite graph on `2m` vertices built from `d` uniform permutations.
///
/// Round `r` draws a permutation `p` (Fisher–Yates) and joins `i` to `m + p(i)`.
/// Pairs repeated across rounds are kept once, so degrees are at most `d`.
pub fn random_bipartite_permutation(m: usize, d: usize, seed: u64) -> Result<OrientedNetwork> {
    if m < 2 || d < 1 {
        return Err(Error::InvalidParameter(format!(
            "need m >= 2 and d >= 1, got m={m}, d={d}"
        )));
    }
    let mut rng = rng_from(seed);
    let mut perm: Vec<usize> = (0..m).collect();
    let mut seen = HashSet::with_capacity(m * d);
    let mut edges = Vec::with_capacity(m * d);
    for _ in 0..d {
        perm.sort_unstable();
        perm.shuffle(&mut rng);
        for (i, &p) in perm.iter().enumerate() {
            let e = (i, m + p);
            if seen.insert(e) {
                edges.push(e);
            }
        }
    }
    OrientedNetwork::simple(2 * m, edges)
}

/// Random connected simple graph: a random recursive tree plus `extra` random chords.
pub fn random_connected(n: usize, extra: usize, seed: u64) -> Result<OrientedNetwork> {
    require_n(n)?;
    let max_extra = n * (n - 1) / 2 - (n - 1);
    if extra > max_extra {
        return Err(Error::InvalidParameter(format!(
            "{extra} extra edges requested but only {max_extra} fit"
        )));
    }
    let mut rng = rng_from(seed);
    let mut labels: Vec<usize> = (0..n).collect();
    labels.shuffle(&mut rng);
    let mut seen = HashSet::new();
    let mut edges = Vec::with_capacity(n - 1 + extra);
    for i in 1..n {
        let j = rng.random_range(0..i);
        let (a, b) = (labels[i].min(labels[j]), labels[i].max(labels[j]));
        seen.insert((a, b));
        edges.push((a, b));
    }
    while edges.len() < n - 1 + extra {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a == b {
            continue;
        }
        let key = (a.min(b), a.max(b));
        if seen.insert(key) {
            edges.push(key);
        }
    }
    OrientedNetwork::simple(n, edges)
}

/// Dense coupling with i.i.d. uniform off-diagonal entries in `[-1, 1)` and
/// diagonal chosen so every row sums to zero.
pub fn random_coupling(n: usize, seed: u64) -> Result<DMatrix<f64>> {
    require_n(n)?;
    let mut rng = rng_from(seed);
    let mut d = DMatrix::from_fn(
        n,
        n,
        |i, j| if i == j { 0.0 } else { rng.random_range(-1.0..1.0) },
    );
    for i in 0..n {
        let s: f64 = d.row(i).sum();
        d[(i, i)] = -s;
    }
    Ok(d)
}

/// Copy of an undirected network with i.i.d. uniform conductances in `[lo, hi)`.
pub fn with_random_conductances(
    net: &OrientedNetwork,
    lo: f64,
    hi: f64,
    seed: u64,
) -> Result<OrientedNetwork> {
    let mut rng = rng_from(seed);
    OrientedNetwork::undirected(
        net.n(),
        net.edges()
            .iter()
            .map(|e| (e.tail, e.head, rng.random_range(lo..hi)))
            .collect::<Vec<_>>(),
    )
}

/// Cycles of the given lengths glued in a chain at cut vertices, with
/// `pendant` extra tree vertices hung off the last vertex. Every edge lies on
/// at most one cycle, so the fundamental cycles are pairwise edge-disjoint.
pub fn cycle_chain(lengths: &[usize], pendant: usize) -> Result<OrientedNetwork> {
    if let Some(&bad) = lengths.iter().find(|&&l| l < 3) {
        return Err(Error::InvalidParameter(format!("cycle length {bad} < 3")));
    }
    let mut edges = Vec::new();
    let mut anchor = 0;
    let mut next = 1;
    for &len in lengths {
        let mut prev = anchor;
        for _ in 1..len {
            edges.push((prev, next));
            prev = next;
            next += 1;
        }
        edges.push((prev, anchor));
        anchor = prev;
    }
    for _ in 0..pendant {
        edges.push((anchor, next));
        anchor = next;
        next += 1;
    }
    OrientedNetwork::simple(next, edges)
}

/// The 5×5 coupling of the worked nonsymmetric example, entries as printed to
/// four decimals. About half the off-diagonal weights are negative yet the
/// protocol converges.
pub fn example_matrix_38() -> DMatrix<f64> {
    #[rustfmt::skip]
    let entries = [
        -1.0251,  2.2043, -1.6032,  0.5044, -0.0804,
        -0.1264,  0.2772, -0.3006,  0.2060, -0.0562,
        -1.1549,  2.5819, -1.9613,  0.5210,  0.0133,
        -0.8807,  1.9231, -1.0823,  0.0333,  0.0066,
        -0.9049,  1.8778, -1.0060,  0.3772, -0.3441,
    ];
    DMatrix::from_row_slice(5, 5, &entries)
}
