//! Loading spaces, their complements, the distance between column spaces, and
//! the eigenvalue-ratio estimator of the number of factors.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{self, SortedEigen};
use crate::moments::MMatrix;

/// Lower bound on denominators of eigenvalue ratios, relative to the leading
/// eigenvalue.
pub const EIGEN_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpaceRole {
    Loading,
    Complement,
    /// Basis supplied directly (e.g. an orthonormalized true loading matrix).
    External,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceSource {
    pub regime: Option<usize>,
    pub r1: f64,
    pub r2: f64,
    pub role: SpaceRole,
}

/// Orthonormal basis of a column space.
#[derive(Debug, Clone)]
pub struct Subspace {
    pub basis: DMatrix<f64>,
    /// Eigenvalues of the source matrix matching the basis columns, when the
    /// space comes from an eigen-analysis.
    pub eigenvalues: Vec<f64>,
    pub source: SpaceSource,
}

impl Subspace {
    /// Orthonormal basis of the column space of `a` (full column rank).
    pub fn from_columns(a: &DMatrix<f64>) -> Result<Self> {
        if a.ncols() == 0 {
            return Err(Error::invalid("a subspace needs at least one column"));
        }
        let mut basis = linalg::orthonormalize(a)?;
        for c in 0..basis.ncols() {
            linalg::fix_sign(basis.column_mut(c));
        }
        Ok(Self {
            basis,
            eigenvalues: Vec::new(),
            source: SpaceSource {
                regime: None,
                r1: f64::NAN,
                r2: f64::NAN,
                role: SpaceRole::External,
            },
        })
    }

    /// Ambient dimension `p`.
    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    /// Same space with the basis right-multiplied by `v` (orthogonal).
    pub fn rotated(&self, v: &DMatrix<f64>) -> Self {
        Self {
            basis: &self.basis * v,
            eigenvalues: Vec::new(),
            source: self.source,
        }
    }

    /// Projection of `y` onto the space, `B B' y`.
    pub fn project(&self, y: &nalgebra::DVector<f64>) -> nalgebra::DVector<f64> {
        &self.basis * (self.basis.transpose() * y)
    }
}

/// Eigenvalue-ratio estimate of the number of factors.
#[derive(Debug, Clone)]
pub struct FactorCountEstimate {
    pub k_hat: usize,
    pub per_regime: (usize, usize),
    pub chosen_regime: usize,
    /// `lambda_{k+1} / lambda_k` for `k = 1..=R`, per regime.
    pub ratio_profiles: (Vec<f64>, Vec<f64>),
    /// Leading eigenvalue of each aggregate (its spectral norm).
    pub top_eigenvalues: (f64, f64),
}

pub fn top_eigenpairs(m: &DMatrix<f64>, k: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    linalg::top_eigenpairs(m, k)
}

fn source_of(m: &MMatrix, role: SpaceRole) -> SpaceSource {
    SpaceSource {
        regime: Some(m.regime),
        r1: m.r1,
        r2: m.r2,
        role,
    }
}

fn nonzero_eigen(m: &MMatrix) -> Result<SortedEigen> {
    let eig = linalg::sorted_eigen(&m.matrix)?;
    if eig.values.first().is_none_or(|&v| v <= 0.0) {
        return Err(Error::ZeroOperator);
    }
    Ok(eig)
}

/// Span of the `k` leading eigenvectors of `m`.
pub fn estimate_loading_space(m: &MMatrix, k: usize) -> Result<Subspace> {
    let p = m.p();
    if k < 1 || k > p {
        return Err(Error::invalid(format!("k = {k} outside 1..={p}")));
    }
    let eig = nonzero_eigen(m)?;
    Ok(Subspace {
        basis: eig.vectors.columns(0, k).into_owned(),
        eigenvalues: eig.values[..k].to_vec(),
        source: source_of(m, SpaceRole::Loading),
    })
}

/// Span of eigenvectors `k+1..p` of `m`, the orthogonal complement of
/// [`estimate_loading_space`]`(m, k)`.
pub fn complement_space(m: &MMatrix, k: usize) -> Result<Subspace> {
    let p = m.p();
    if k < 1 || k >= p {
        return Err(Error::invalid(format!(
            "complement needs 1 <= k < p, got k = {k}, p = {p}"
        )));
    }
    let eig = linalg::sorted_eigen(&m.matrix)?;
    Ok(Subspace {
        basis: eig.vectors.columns(k, p - k).into_owned(),
        eigenvalues: eig.values[k..].to_vec(),
        source: source_of(m, SpaceRole::Complement),
    })
}

/// Loading space and complement from a single decomposition.
pub fn split_space(m: &MMatrix, k: usize) -> Result<(Subspace, Subspace)> {
    let p = m.p();
    if k < 1 || k >= p {
        return Err(Error::invalid(format!(
            "complement needs 1 <= k < p, got k = {k}, p = {p}"
        )));
    }
    let eig = nonzero_eigen(m)?;
    let loading = Subspace {
        basis: eig.vectors.columns(0, k).into_owned(),
        eigenvalues: eig.values[..k].to_vec(),
        source: source_of(m, SpaceRole::Loading),
    };
    let complement = Subspace {
        basis: eig.vectors.columns(k, p - k).into_owned(),
        eigenvalues: eig.values[k..].to_vec(),
        source: source_of(m, SpaceRole::Complement),
    };
    Ok((loading, complement))
}

/// `sqrt(1 - tr(O1 O1' O2 O2') / min(q1, q2))`, clamped to `[0, 1]`. Bases must be
/// orthonormal.
pub fn subspace_distance(s1: &Subspace, s2: &Subspace) -> Result<f64> {
    basis_distance(&s1.basis, &s2.basis)
}

/// [`subspace_distance`] on raw orthonormal bases.
pub fn basis_distance(o1: &DMatrix<f64>, o2: &DMatrix<f64>) -> Result<f64> {
    if o1.nrows() != o2.nrows() {
        return Err(Error::DimensionMismatch {
            expected: o1.nrows(),
            found: o2.nrows(),
        });
    }
    if o1.ncols() == 0 || o2.ncols() == 0 {
        return Err(Error::invalid("subspace distance needs non-empty bases"));
    }
    // With O_s the smaller basis, 1 - ||O1' O2||_F^2 / q = ||(I - O_l O_l') O_s||_F^2 / q.
    // The residual form keeps full relative accuracy when the spaces nearly coincide.
    let (small, large) = if o1.ncols() <= o2.ncols() {
        (o1, o2)
    } else {
        (o2, o1)
    };
    let q = small.ncols() as f64;
    let residual = small - large * (large.transpose() * small);
    Ok((residual.norm() / q.sqrt()).clamp(0.0, 1.0))
}

fn ratio_profile(values: &[f64], r_max: usize) -> (Vec<f64>, usize) {
    let floor = EIGEN_FLOOR * values[0];
    let ratios: Vec<f64> = (1..=r_max)
        .map(|k| values[k].max(0.0) / values[k - 1].max(floor))
        .collect();
    // Numerical rank reached at k: nothing beyond it is identifiable.
    if let Some(k) = (1..=r_max).find(|&k| values[k] <= floor) {
        return (ratios, k);
    }
    let mut best = 0;
    for (idx, &r) in ratios.iter().enumerate() {
        if r < ratios[best] {
            best = idx;
        }
    }
    (ratios, best + 1)
}

/// Default `R = floor(p / 2)`, at least 1.
pub fn default_r_max(p: usize) -> usize {
    (p / 2).max(1)
}

/// `k_i = argmin_{1<=k<=R} lambda_{k+1} / lambda_k` per regime; the reported
/// count comes from the regime with the larger leading eigenvalue (regime 1 on
/// ties).
pub fn estimate_num_factors(m1: &MMatrix, m2: &MMatrix, r_max: usize) -> Result<FactorCountEstimate> {
    if m1.p() != m2.p() {
        return Err(Error::DimensionMismatch {
            expected: m1.p(),
            found: m2.p(),
        });
    }
    let p = m1.p();
    if r_max < 1 || r_max + 1 > p {
        return Err(Error::invalid(format!(
            "R = {r_max} must satisfy 1 <= R <= p - 1 = {}",
            p.saturating_sub(1)
        )));
    }
    let e1 = nonzero_eigen(m1)?;
    let e2 = nonzero_eigen(m2)?;
    let (ratios1, k1) = ratio_profile(&e1.values, r_max);
    let (ratios2, k2) = ratio_profile(&e2.values, r_max);
    let chosen = if e2.values[0] > e1.values[0] { 2 } else { 1 };
    Ok(FactorCountEstimate {
        k_hat: if chosen == 1 { k1 } else { k2 },
        per_regime: (k1, k2),
        chosen_regime: chosen,
        ratio_profiles: (ratios1, ratios2),
        top_eigenvalues: (e1.values[0], e2.values[0]),
    })
}
