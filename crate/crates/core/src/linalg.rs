//! Dense symmetric eigen-analysis helpers.
//!
//! Everything here works on full decompositions; panels in this domain have
//! at most a few hundred series.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative asymmetry accepted by [`top_eigenpairs`].
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Below this magnitude `1' q` counts as zero and the sign is fixed by the
/// largest-magnitude entry instead.
pub const SIGN_TIE_TOL: f64 = 1e-12;

/// Eigenvalues in non-increasing order with matching orthonormal eigenvectors.
#[derive(Debug, Clone)]
pub struct SortedEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

/// Largest absolute entry of `m - m'` relative to the largest absolute entry
/// of `m` (absolute when `m` is zero).
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.amax();
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    if scale > 0.0 {
        worst / scale
    } else {
        worst
    }
}

/// Replaces `m` by `(m + m') / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let p = m.nrows();
    for i in 0..p {
        for j in (i + 1)..p {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Flips `v` so that its entries sum to a positive number; when the sum is
/// within [`SIGN_TIE_TOL`] of zero, the first entry of largest magnitude is
/// made positive instead.
pub fn fix_sign(mut v: nalgebra::DVectorViewMut<'_, f64>) {
    let sum: f64 = v.iter().sum();
    let flip = if sum.abs() > SIGN_TIE_TOL {
        sum < 0.0
    } else {
        let mut best = 0usize;
        for (idx, x) in v.iter().enumerate() {
            if x.abs() > v[best].abs() {
                best = idx;
            }
        }
        v[best] < 0.0
    };
    if flip {
        v.neg_mut();
    }
}

/// Full symmetric eigendecomposition, sorted by decreasing eigenvalue, with
/// the sign convention applied to every vector. Ties in the eigenvalues keep
/// the solver's order, which is deterministic for a given input.
pub fn sorted_eigen(m: &DMatrix<f64>) -> Result<SortedEigen> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    let asym = asymmetry(m);
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("non-finite matrix entry".into()));
    }
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(m.nrows(), m.ncols());
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
        fix_sign(vectors.column_mut(dst));
    }
    Ok(SortedEigen { values, vectors })
}

/// The `k` leading eigenpairs of a symmetric matrix.
pub fn top_eigenpairs(m: &DMatrix<f64>, k: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let p = m.nrows();
    if k < 1 || k > p {
        return Err(Error::invalid(format!("k = {k} outside 1..={p}")));
    }
    let eig = sorted_eigen(m)?;
    let vectors = eig.vectors.columns(0, k).into_owned();
    Ok((eig.values[..k].to_vec(), vectors))
}

/// Largest eigenvalue of a symmetric positive semi-definite matrix, which is
/// its spectral norm. Negative round-off is clamped to zero.
pub fn psd_spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let ev = m.clone().symmetric_eigenvalues();
    ev.max().max(0.0)
}

/// Spectral norm of a general matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone().singular_values().max()
}

/// `|| b' b - I ||_F`
pub fn orthonormality_defect(b: &DMatrix<f64>) -> f64 {
    let gram = b.transpose() * b;
    (gram - DMatrix::identity(b.ncols(), b.ncols())).norm()
}

/// Modified Gram-Schmidt orthonormalization of the columns of `a`.
/// Fails when the columns are numerically dependent.
pub fn orthonormalize(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut q = a.clone();
    for j in 0..q.ncols() {
        for i in 0..j {
            let proj = q.column(i).dot(&q.column(j));
            let qi: DVector<f64> = q.column(i).into_owned();
            q.column_mut(j).axpy(-proj, &qi, 1.0);
        }
        let norm = q.column(j).norm();
        if norm <= 1e-12 * a.column(j).norm().max(f64::MIN_POSITIVE) {
            return Err(Error::Numerical("columns are linearly dependent".into()));
        }
        q.column_mut(j).unscale_mut(norm);
    }
    Ok(q)
}
