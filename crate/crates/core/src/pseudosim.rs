//! Pseudo-similarity reduction along the consensus direction.
//!
//! For `D` with `D e = 0` and an intertwiner `S` whose kernel is `span{e}`,
//! `D̂ = S D S⁺` satisfies `S D = D̂ S` and carries the spectrum of `D` with one
//! zero eigenvalue removed. Only eigenvalue multisets are checked numerically;
//! Jordan structure is not observable in floating point.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{self, Complex64};

/// Intertwiner `S̃`, its row-orthonormalised form `S = (S̃S̃ᵀ)^{-1/2} S̃` and the
/// pseudo-inverse `S⁺ = Sᵀ(SSᵀ)^{-1}`.
#[derive(Clone, Debug)]
pub struct ReductionMap {
    s_tilde: DMatrix<f64>,
    s: DMatrix<f64>,
    s_plus: DMatrix<f64>,
}

/// The `(n−1)×n` first-difference matrix with rows `(…, −1, 1, …)`.
pub fn difference_intertwiner(n: usize) -> Result<DMatrix<f64>> {
    if n < 2 {
        return Err(Error::DimensionTooSmall(n));
    }
    let mut s = DMatrix::zeros(n - 1, n);
    for i in 0..n - 1 {
        s[(i, i)] = -1.0;
        s[(i, i + 1)] = 1.0;
    }
    Ok(s)
}

pub fn normalize(s_tilde: &DMatrix<f64>) -> Result<ReductionMap> {
    let n = s_tilde.ncols();
    if n < 2 {
        return Err(Error::DimensionTooSmall(n));
    }
    if s_tilde.nrows() != n - 1 {
        return Err(Error::DimensionMismatch {
            expected: n - 1,
            got: s_tilde.nrows(),
        });
    }
    let residual = linalg::row_sum_residual(s_tilde);
    if residual > 1e-10 * s_tilde.norm().max(1.0) {
        return Err(Error::IntertwinerKernel { residual });
    }
    let gram = s_tilde * s_tilde.transpose();
    let gram_ev = linalg::symmetric_eigenvalues(&gram);
    let (lo, hi) = (gram_ev[0].max(0.0), gram_ev[n - 2]);
    let ratio = if hi > 0.0 { (lo / hi).sqrt() } else { 0.0 };
    if ratio < 1e-10 {
        return Err(Error::RankDeficientIntertwiner { ratio });
    }
    let inv_sqrt = linalg::spd_inverse_sqrt(&gram, 1e-12).ok_or(Error::RankDeficientIntertwiner { ratio })?;
    let s = inv_sqrt * s_tilde;
    let sst = &s * s.transpose();
    let sst_inv = sst
        .cholesky()
        .ok_or(Error::RankDeficientIntertwiner { ratio })?
        .inverse();
    let s_plus = s.transpose() * sst_inv;
    Ok(ReductionMap {
        s_tilde: s_tilde.clone(),
        s,
        s_plus,
    })
}

impl ReductionMap {
    /// Normalised first-difference reduction for dimension `n`.
    pub fn difference(n: usize) -> Result<Self> {
        normalize(&difference_intertwiner(n)?)
    }

    /// Number of agents `n`.
    pub fn dim(&self) -> usize {
        self.s.ncols()
    }

    pub fn s_tilde(&self) -> &DMatrix<f64> {
        &self.s_tilde
    }

    pub fn s(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn s_plus(&self) -> &DMatrix<f64> {
        &self.s_plus
    }

    /// Orthogonal projector `SᵀS` onto the complement of the consensus subspace.
    pub fn projector(&self) -> DMatrix<f64> {
        self.s.transpose() * &self.s
    }
}

#[derive(Clone, Debug)]
pub struct ReducedMatrix {
    pub d_hat: DMatrix<f64>,
    pub source_dim: usize,
}

impl ReducedMatrix {
    /// `‖S D − D̂ S‖_F`.
    pub fn intertwining_residual(&self, d: &DMatrix<f64>, map: &ReductionMap) -> f64 {
        (map.s() * d - &self.d_hat * map.s()).norm()
    }
}

pub fn reduce(d: &DMatrix<f64>, map: &ReductionMap) -> Result<ReducedMatrix> {
    let n = linalg::ensure_square(d)?;
    if n != map.dim() {
        return Err(Error::DimensionMismatch {
            expected: map.dim(),
            got: n,
        });
    }
    linalg::ensure_zero_row_sum(d)?;
    Ok(ReducedMatrix {
        d_hat: map.s() * d * map.s_plus(),
        source_dim: n,
    })
}

/// Reduces with the default normalised difference intertwiner.
pub fn reduce_default(d: &DMatrix<f64>) -> Result<ReducedMatrix> {
    let n = linalg::ensure_square(d)?;
    reduce(d, &ReductionMap::difference(n)?)
}

#[derive(Clone, Debug)]
pub struct SpectrumSplit {
    pub full: Vec<Complex64>,
    pub reduced: Vec<Complex64>,
    /// Worst distance in the greedy pairing of `reduced` against `full` with
    /// its eigenvalue nearest to zero removed.
    pub pairing_distance: f64,
}

impl SpectrumSplit {
    pub fn is_consistent(&self, tol: f64) -> bool {
        self.pairing_distance <= tol
    }

    /// Whether the reduced spectrum still contains a zero eigenvalue.
    pub fn reduced_has_zero(&self, tol: f64) -> bool {
        self.reduced.iter().any(|z| z.norm() <= tol)
    }
}

pub fn spectrum_split(d: &DMatrix<f64>) -> Result<SpectrumSplit> {
    let reduced_matrix = reduce_default(d)?;
    let full = linalg::eigenvalues(d)?;
    let reduced = linalg::eigenvalues(&reduced_matrix.d_hat)?;
    let mut rest = full.clone();
    let zero = rest
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
        .map(|(i, _)| i);
    if let Some(i) = zero {
        rest.remove(i);
    }
    let pairing_distance = linalg::greedy_pairing_distance(&rest, &reduced);
    Ok(SpectrumSplit {
        full,
        reduced,
        pairing_distance,
    })
}

/// `‖exp(t D̂) − S exp(t D) S⁺‖_F`, zero in exact arithmetic.
pub fn exp_commutation_check(d: &DMatrix<f64>, t: f64) -> Result<f64> {
    let n = linalg::ensure_square(d)?;
    let map = ReductionMap::difference(n)?;
    let reduced = reduce(d, &map)?;
    let lhs = linalg::expm(&(&reduced.d_hat * t));
    let rhs = map.s() * linalg::expm(&(d * t)) * map.s_plus();
    Ok((lhs - rhs).norm())
}
