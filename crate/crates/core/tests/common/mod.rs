//! Fixtures shared by the integration suites.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use threshold_factor::linalg;
use threshold_factor::simulate::{self, DgpSpec, NoiseSpec, SimulatedData};
use threshold_factor::{PanelSeries, Subspace, ThresholdSeries};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn random_panel(rng: &mut ChaCha8Rng, p: usize, n: usize) -> PanelSeries {
    PanelSeries::from_matrix(gaussian(rng, p, n)).unwrap()
}

pub fn random_z(rng: &mut ChaCha8Rng, n: usize) -> ThresholdSeries {
    let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    ThresholdSeries::new(v, "z").unwrap()
}

/// Threshold values on a coarse lattice, so ties occur.
pub fn tied_z(rng: &mut ChaCha8Rng, n: usize, levels: i32) -> ThresholdSeries {
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 * 0.5).collect();
    ThresholdSeries::new(v, "z").unwrap()
}

/// Orthogonal `d x d` matrix from the Q factor of a Gaussian matrix.
pub fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    linalg::orthonormalize(&gaussian(rng, d, d)).unwrap()
}

/// Random orthonormal `p x k` basis.
pub fn random_basis(rng: &mut ChaCha8Rng, p: usize, k: usize) -> Subspace {
    Subspace::from_columns(&gaussian(rng, p, k)).unwrap()
}

/// Orthonormal basis of the orthogonal complement of the column space of `a`.
pub fn complement_of(a: &DMatrix<f64>) -> Subspace {
    let q = Subspace::from_columns(a).unwrap().basis;
    let p = q.nrows();
    let mut proj = DMatrix::identity(p, p) - &q * q.transpose();
    linalg::symmetrize(&mut proj);
    let (_, vecs) = linalg::top_eigenpairs(&proj, p - q.ncols()).unwrap();
    Subspace::from_columns(&vecs).unwrap()
}

pub fn noiseless(mut spec: DgpSpec) -> DgpSpec {
    spec.noise = NoiseSpec {
        variance: 0.0,
        off_diag: 0.0,
    };
    spec
}

/// Noise-free Example 1 Setting 1 draw whose threshold `r0` equals an observed
/// value of `z` among the first `n / 2` time points, the one closest to 0.
/// The threshold path does not depend on `r0`, so re-drawing with the same
/// seed only changes the regimes.
pub fn noiseless_on_grid(n: usize, p: usize, seed: u64) -> SimulatedData {
    let base = noiseless(simulate::example1(1, n, p, seed).unwrap());
    let first = simulate::generate_dgp(&base).unwrap();
    let r0 = first.z.values()[..n / 2]
        .iter()
        .copied()
        .min_by(|a, b| a.abs().total_cmp(&b.abs()))
        .unwrap();
    let spec = DgpSpec { r0, ..base };
    let data = simulate::generate_dgp(&spec).unwrap();
    assert_eq!(data.z.values(), first.z.values());
    data
}
