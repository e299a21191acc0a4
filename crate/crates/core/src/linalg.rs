//! Dense linear-algebra helpers shared by the analysis and simulation modules.
//!
//! Eigenvalues of general real matrices come from the real Schur form and the
//! matrix exponential from scaling-and-squaring with a Padé approximant, both
//! as provided by `nalgebra`.

use nalgebra::{Complex, DMatrix, DVector, Schur};

use crate::error::{Error, Result};

pub type Complex64 = Complex<f64>;

const SCHUR_MAX_ITER: usize = 10_000;

pub fn ensure_square(m: &DMatrix<f64>) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(m.nrows())
}

pub fn is_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > rel_tol * scale {
                return false;
            }
        }
    }
    true
}

/// `(M + Mᵀ) / 2`.
pub fn symmetric_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().max()
}

/// Frobenius norm of `M Mᵀ − Mᵀ M`.
pub fn commutator_norm(m: &DMatrix<f64>) -> f64 {
    let mt = m.transpose();
    (m * &mt - &mt * m).norm()
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut values: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
    values.sort_by(f64::total_cmp);
    values
}

/// Eigenpairs of a symmetric matrix, eigenvalues ascending and eigenvectors
/// stored as the matching columns.
pub fn symmetric_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    if n == 0 {
        return (Vec::new(), DMatrix::zeros(0, 0));
    }
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Largest eigenvalue of the symmetric part of `m`, i.e. `sup_{|y|=1} yᵀ M y`.
pub fn max_symmetric_part_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetric_eigenvalues(&symmetric_part(m))
        .last()
        .copied()
        .unwrap_or(f64::NEG_INFINITY)
}

/// Eigenvalue multiset of a real square matrix.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    ensure_square(m)?;
    if m.is_empty() {
        return Ok(Vec::new());
    }
    if is_symmetric(m, 0.0) {
        return Ok(symmetric_eigenvalues(m)
            .into_iter()
            .map(|re| Complex64::new(re, 0.0))
            .collect());
    }
    let schur = Schur::try_new(m.clone(), f64::EPSILON, SCHUR_MAX_ITER).ok_or(Error::EigenSolverFailed)?;
    let mut values: Vec<Complex64> = schur.complex_eigenvalues().iter().copied().collect();
    values.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    Ok(values)
}

pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.is_empty() {
        return m.clone();
    }
    m.exp()
}

/// Inverse square root of a symmetric positive definite matrix through its
/// eigendecomposition. Returns `None` when an eigenvalue falls below `floor`.
pub fn spd_inverse_sqrt(m: &DMatrix<f64>, floor: f64) -> Option<DMatrix<f64>> {
    let (values, vectors) = symmetric_eigen(m);
    if values.iter().any(|&v| v < floor) {
        return None;
    }
    let scale = DVector::from_iterator(values.len(), values.iter().map(|v| v.sqrt().recip()));
    Some(&vectors * DMatrix::from_diagonal(&scale) * vectors.transpose())
}

/// Greedy nearest-neighbour matching of two eigenvalue multisets.
///
/// Repeatedly pairs the globally closest unmatched elements and returns the
/// largest distance used. Heuristic, but exact whenever the two multisets
/// agree to within half their minimum separation.
pub fn greedy_pairing_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(a.len() * b.len());
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            pairs.push(((x - y).norm(), i, j));
        }
    }
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0));
    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut worst = 0.0_f64;
    let mut matched = 0;
    for (d, i, j) in pairs {
        if used_a[i] || used_b[j] {
            continue;
        }
        used_a[i] = true;
        used_b[j] = true;
        worst = worst.max(d);
        matched += 1;
        if matched == a.len() {
            break;
        }
    }
    worst
}

/// Euclidean norm of `M e` with `e` the all-ones vector.
pub fn row_sum_residual(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|r| r.sum().powi(2)).sum::<f64>().sqrt()
}

/// Checks membership in the class of matrices annihilating the all-ones vector.
pub fn ensure_zero_row_sum(m: &DMatrix<f64>) -> Result<()> {
    let n = ensure_square(m)?;
    let residual = row_sum_residual(m);
    if residual > 1e-10 * m.norm().max(1.0) * (n as f64).sqrt() {
        return Err(Error::NotZeroRowSum { residual });
    }
    Ok(())
}
