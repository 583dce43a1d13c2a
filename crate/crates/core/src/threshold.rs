//! Threshold estimation by minimizing the complement-projection objective
//!
//! ```text
//! G(r) = sum_{i=1,2} || B_i' M_i(r) B_i ||_2
//! ```
//!
//! over the observed threshold values inside `(eta1, eta2)`, where `B_i` spans
//! the complement of the loading space estimated from the tail partitions
//! `{z < eta1}` and `{z >= eta2}`. The full fit also chooses the number of
//! factors and re-estimates both loading spaces at the selected threshold.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::moments::{self, MMatrix};
use crate::panel::{make_partition, PanelSeries, RegimePartition, ThresholdSeries};
use crate::par;
use crate::subspace::{self, FactorCountEstimate, Subspace};

/// Grid points per independently accumulated sweep segment. Fixed so that the
/// floating-point path does not depend on the number of workers.
const SWEEP_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Quantile levels of `z` that define `(eta1, eta2)`.
    pub eta: (f64, f64),
    pub h0: usize,
    /// Number of factors; estimated by eigenvalue ratios when `None`.
    pub k: Option<usize>,
    /// Largest candidate factor count `R`; defaults to `floor(p / 2)`.
    pub r_max: Option<usize>,
    /// Tail partitions smaller than this produce a warning.
    pub min_tail: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            eta: (0.3, 0.7),
            h0: 1,
            k: None,
            r_max: None,
            min_tail: 20,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.eta;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(Error::invalid(format!(
                "eta quantiles must satisfy 0 < lo < hi < 1, got ({lo}, {hi})"
            )));
        }
        if self.h0 < 1 {
            return Err(Error::invalid("h0 must be at least 1"));
        }
        if self.k == Some(0) {
            return Err(Error::invalid("k must be at least 1"));
        }
        if self.r_max == Some(0) {
            return Err(Error::invalid("R must be at least 1"));
        }
        Ok(())
    }
}

/// Objective values over the candidate grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveProfile {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub argmin_index: usize,
}

impl ObjectiveProfile {
    pub fn r_hat(&self) -> f64 {
        self.grid[self.argmin_index]
    }

    pub fn min_value(&self) -> f64 {
        self.values[self.argmin_index]
    }

    fn from_values(grid: Vec<f64>, values: Vec<f64>) -> Self {
        // First minimum wins: ties go to the smallest r.
        let mut best = 0;
        for (idx, &v) in values.iter().enumerate() {
            if v < values[best] {
                best = idx;
            }
        }
        Self {
            grid,
            values,
            argmin_index: best,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitDiagnostics {
    /// `D(Q1, Q2)` at the selected threshold.
    pub space_distance: f64,
    /// Leading eigenvalue of `M_i(r_hat)` per regime.
    pub top_eigenvalues: (f64, f64),
    /// Regime sizes at `r_hat`.
    pub regime_counts: (usize, usize),
    /// Sizes of the tail partitions `{z < eta1}`, `{z >= eta2}`.
    pub tail_counts: (usize, usize),
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ThresholdFactorFit {
    pub k_hat: usize,
    pub r_hat: f64,
    pub q1: Subspace,
    pub q2: Subspace,
    pub b1_eta: Subspace,
    pub b2_eta: Subspace,
    pub profile: ObjectiveProfile,
    /// Threshold bounds `(eta1, eta2)` in units of `z`.
    pub eta: (f64, f64),
    pub h0: usize,
    /// Eigenvalue-ratio estimate on the tail partitions; present whenever it
    /// could be computed, also when `k` was fixed by the caller.
    pub factor_count: Option<FactorCountEstimate>,
    /// `M_i(r_hat)` for both regimes.
    pub m_at_r_hat: (MMatrix, MMatrix),
    pub diagnostics: FitDiagnostics,
}

fn check_inputs(panel: &PanelSeries, z: &ThresholdSeries, h0: usize) -> Result<()> {
    if z.len() != panel.n() {
        return Err(Error::DimensionMismatch {
            expected: panel.n(),
            found: z.len(),
        });
    }
    if h0 < 1 || h0 >= panel.n() {
        return Err(Error::invalid(format!(
            "h0 = {h0} must satisfy 1 <= h0 < n = {}",
            panel.n()
        )));
    }
    Ok(())
}

fn check_basis(panel: &PanelSeries, b: &Subspace) -> Result<()> {
    if b.ambient_dim() != panel.p() {
        return Err(Error::DimensionMismatch {
            expected: panel.p(),
            found: b.ambient_dim(),
        });
    }
    Ok(())
}

/// `|| B' M B ||_2` for symmetric PSD `M`.
pub fn projected_norm(b: &DMatrix<f64>, m: &DMatrix<f64>) -> f64 {
    let mut proj = b.transpose() * m * b;
    linalg::symmetrize(&mut proj);
    linalg::psd_spectral_norm(&proj)
}

/// `G(r)` recomputed from scratch: partition at `r1 = r2 = r`, build both
/// aggregates, project onto the given complements.
pub fn objective_g(
    panel: &PanelSeries,
    z: &ThresholdSeries,
    b1: &Subspace,
    b2: &Subspace,
    r: f64,
    h0: usize,
) -> Result<f64> {
    check_inputs(panel, z, h0)?;
    check_basis(panel, b1)?;
    check_basis(panel, b2)?;
    let part = make_partition(z, r, r)?;
    let mut total = 0.0;
    for (i, b) in [(1, b1), (2, b2)] {
        let m = moments::build_m_matrix(panel, &part, h0, i)?;
        total += projected_norm(&b.basis, &m.matrix);
    }
    Ok(total)
}

/// Distinct usable values of `z` strictly inside `(lo, hi)`, ascending.
pub fn threshold_grid(z: &ThresholdSeries, lo: f64, hi: f64) -> Vec<f64> {
    let mut grid: Vec<f64> = z
        .usable_values()
        .into_iter()
        .filter(|&v| v > lo && v < hi)
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

fn grid_for(z: &ThresholdSeries, eta: (f64, f64)) -> Result<Vec<f64>> {
    let (lo, hi) = eta;
    if lo.is_nan() || hi.is_nan() || lo >= hi {
        return Err(Error::invalid(format!("eta1 = {lo} must be below eta2 = {hi}")));
    }
    let grid = threshold_grid(z, lo, hi);
    if grid.is_empty() {
        return Err(Error::EmptyGrid { lo, hi });
    }
    Ok(grid)
}

/// Minimizes `G(r)` over the observed `z` values in `(eta1, eta2)` with an
/// incremental sweep over the sorted grid.
pub fn estimate_threshold(
    panel: &PanelSeries,
    z: &ThresholdSeries,
    b1: &Subspace,
    b2: &Subspace,
    eta: (f64, f64),
    h0: usize,
) -> Result<ObjectiveProfile> {
    check_inputs(panel, z, h0)?;
    check_basis(panel, b1)?;
    check_basis(panel, b2)?;
    let grid = grid_for(z, eta)?;
    let sweep = Sweep::new(panel, z, b1, b2, h0);
    let n_chunks = grid.len().div_ceil(SWEEP_CHUNK);
    let chunks = par::map_indices(n_chunks, |c| {
        let lo = c * SWEEP_CHUNK;
        let hi = (lo + SWEEP_CHUNK).min(grid.len());
        sweep.run(&grid[lo..hi])
    });
    let values = chunks.into_iter().flatten().collect();
    Ok(ObjectiveProfile::from_values(grid, values))
}

/// Same search as [`estimate_threshold`], evaluating every grid point with
/// [`objective_g`]. Slower; serves as the correctness reference.
pub fn estimate_threshold_reference(
    panel: &PanelSeries,
    z: &ThresholdSeries,
    b1: &Subspace,
    b2: &Subspace,
    eta: (f64, f64),
    h0: usize,
) -> Result<ObjectiveProfile> {
    check_inputs(panel, z, h0)?;
    let grid = grid_for(z, eta)?;
    let values: Result<Vec<f64>> =
        par::map_indices(grid.len(), |g| objective_g(panel, z, b1, b2, grid[g], h0))
            .into_iter()
            .collect();
    Ok(ObjectiveProfile::from_values(grid, values?))
}

/// Shared read-only state of the incremental sweep.
struct Sweep<'a> {
    y: &'a DMatrix<f64>,
    z: &'a ThresholdSeries,
    /// Transposed complements `B_i'`.
    bt: [DMatrix<f64>; 2],
    h0: usize,
    /// Usable time points sorted by `z`.
    order: Vec<usize>,
}

impl<'a> Sweep<'a> {
    fn new(panel: &'a PanelSeries, z: &'a ThresholdSeries, b1: &Subspace, b2: &Subspace, h0: usize) -> Self {
        let mut order: Vec<usize> = (0..z.len()).filter(|&t| z.is_usable(t)).collect();
        order.sort_by(|&a, &b| z.values()[a].total_cmp(&z.values()[b]).then(a.cmp(&b)));
        Self {
            y: panel.values(),
            z,
            bt: [b1.basis.transpose(), b2.basis.transpose()],
            h0,
            order,
        }
    }

    fn n(&self) -> usize {
        self.y.ncols()
    }

    /// Objective at consecutive grid points, starting from a fresh
    /// accumulation at the first one.
    fn run(&self, grid: &[f64]) -> Vec<f64> {
        let n = self.n();
        let p = self.y.nrows();
        let zv = self.z.values();
        // Regime per time point: 0 = unusable, 1, 2.
        let mut regime: Vec<u8> = (0..n)
            .map(|t| match self.z.get(t) {
                None => 0,
                Some(v) if v < grid[0] => 1,
                Some(_) => 2,
            })
            .collect();
        // acc[h-1][2*(i-1) + (j-1)] = sum of y_t y_{t+h}' over pairs in (i, j).
        let mut acc: Vec<[DMatrix<f64>; 4]> = (1..=self.h0)
            .map(|h| {
                std::array::from_fn(|cell| {
                    let (i, j) = ((cell / 2 + 1) as u8, (cell % 2 + 1) as u8);
                    let starts: Vec<usize> = (0..n - h)
                        .filter(|&t| regime[t] == i && regime[t + h] == j)
                        .collect();
                    moments::outer_sum(self.y, &starts, h)
                })
            })
            .collect();
        // Next position in `order` whose z is not yet below the current grid point.
        let mut next = self.order.partition_point(|&t| zv[t] < grid[0]);
        let mut out = Vec::with_capacity(grid.len());
        out.push(self.evaluate(&acc));
        for &r in &grid[1..] {
            while next < self.order.len() && zv[self.order[next]] < r {
                let t = self.order[next];
                self.move_to_regime_one(t, &mut regime, &mut acc);
                next += 1;
            }
            out.push(self.evaluate(&acc));
        }
        debug_assert_eq!(p, self.y.nrows());
        out
    }

    fn move_to_regime_one(&self, t: usize, regime: &mut [u8], acc: &mut [[DMatrix<f64>; 4]]) {
        let n = self.n();
        for h in 1..=self.h0 {
            let cells = &mut acc[h - 1];
            let forward = t + h < n && regime[t + h] != 0;
            let backward = t >= h && regime[t - h] != 0;
            if forward {
                let cell = cell_index(regime[t], regime[t + h]);
                cells[cell].ger(-1.0, &self.y.column(t), &self.y.column(t + h), 1.0);
                let cell = cell_index(1, regime[t + h]);
                cells[cell].ger(1.0, &self.y.column(t), &self.y.column(t + h), 1.0);
            }
            if backward {
                let cell = cell_index(regime[t - h], regime[t]);
                cells[cell].ger(-1.0, &self.y.column(t - h), &self.y.column(t), 1.0);
                let cell = cell_index(regime[t - h], 1);
                cells[cell].ger(1.0, &self.y.column(t - h), &self.y.column(t), 1.0);
            }
        }
        regime[t] = 1;
    }

    fn evaluate(&self, acc: &[[DMatrix<f64>; 4]]) -> f64 {
        let n = self.n();
        let mut total = 0.0;
        for (i, bt) in self.bt.iter().enumerate() {
            let d = bt.nrows();
            let mut proj = DMatrix::zeros(d, d);
            for (hidx, cells) in acc.iter().enumerate() {
                let scale = 1.0 / (n - hidx - 1) as f64;
                for j in 0..2 {
                    let pm = bt * &cells[2 * i + j] * scale;
                    proj.gemm(1.0, &pm, &pm.transpose(), 1.0);
                }
            }
            linalg::symmetrize(&mut proj);
            total += linalg::psd_spectral_norm(&proj);
        }
        total
    }
}

fn cell_index(i: u8, j: u8) -> usize {
    2 * (i as usize - 1) + (j as usize - 1)
}

/// Resolves `(eta1, eta2)` in units of `z` from quantile levels.
pub fn eta_bounds(z: &ThresholdSeries, levels: (f64, f64)) -> Result<(f64, f64)> {
    Ok((z.quantile(levels.0)?, z.quantile(levels.1)?))
}

pub fn fit_threshold_factor_model(
    panel: &PanelSeries,
    z: &ThresholdSeries,
    config: &FitConfig,
) -> Result<ThresholdFactorFit> {
    config.validate()?;
    check_inputs(panel, z, config.h0)?;
    let p = panel.p();
    if p < 2 {
        return Err(Error::invalid("model fit needs p >= 2"));
    }
    let eta = eta_bounds(z, config.eta)?;
    let tails = make_partition(z, eta.0, eta.1)?;
    let tail_counts = (tails.count(1), tails.count(2));
    if tail_counts.0 == 0 || tail_counts.1 == 0 {
        return Err(Error::EmptyPartition(format!(
            "tail partitions {{z < {}}} and {{z >= {}}} have sizes {} and {}",
            eta.0, eta.1, tail_counts.0, tail_counts.1
        )));
    }
    let mut warnings = Vec::new();
    if tail_counts.0.min(tail_counts.1) < config.min_tail {
        warnings.push(format!(
            "tail partition sizes {tail_counts:?} below the recommended minimum {}",
            config.min_tail
        ));
    }
    let (m1_eta, m2_eta) = par::join(
        || moments::build_m_matrix(panel, &tails, config.h0, 1),
        || moments::build_m_matrix(panel, &tails, config.h0, 2),
    );
    let (m1_eta, m2_eta) = (m1_eta?, m2_eta?);

    let r_max = config
        .r_max
        .unwrap_or_else(|| subspace::default_r_max(p))
        .min(p - 1);
    let factor_count = subspace::estimate_num_factors(&m1_eta, &m2_eta, r_max);
    let k_hat = match (config.k, &factor_count) {
        (Some(k), _) => k,
        (None, Ok(est)) => est.k_hat,
        (None, Err(e)) => return Err(Error::Numerical(format!("factor count estimation failed: {e}"))),
    };
    if k_hat >= p {
        return Err(Error::invalid(format!("k = {k_hat} must be below p = {p}")));
    }
    let b1_eta = subspace::complement_space(&m1_eta, k_hat)?;
    let b2_eta = subspace::complement_space(&m2_eta, k_hat)?;

    let profile = estimate_threshold(panel, z, &b1_eta, &b2_eta, eta, config.h0)?;
    let r_hat = profile.r_hat();
    let part = make_partition(z, r_hat, r_hat)?;
    let (m1, m2) = par::join(
        || moments::build_m_matrix(panel, &part, config.h0, 1),
        || moments::build_m_matrix(panel, &part, config.h0, 2),
    );
    let (m1, m2) = (m1?, m2?);
    let q1 = subspace::estimate_loading_space(&m1, k_hat)?;
    let q2 = subspace::estimate_loading_space(&m2, k_hat)?;
    let diagnostics = FitDiagnostics {
        space_distance: subspace::subspace_distance(&q1, &q2)?,
        top_eigenvalues: (q1.eigenvalues[0], q2.eigenvalues[0]),
        regime_counts: (part.count(1), part.count(2)),
        tail_counts,
        warnings,
    };
    Ok(ThresholdFactorFit {
        k_hat,
        r_hat,
        q1,
        q2,
        b1_eta,
        b2_eta,
        profile,
        eta,
        h0: config.h0,
        factor_count: factor_count.ok(),
        m_at_r_hat: (m1, m2),
        diagnostics,
    })
}

/// Projections of the panel onto the fitted loading spaces.
#[derive(Debug, Clone)]
pub struct SignalRecovery {
    /// `s_t = Q_i Q_i' y_t` for the regime `i` of `t` (`p x n`).
    pub s_hat: DMatrix<f64>,
    /// `R_t = Q_i' y_t` (`k x n`).
    pub r_series: DMatrix<f64>,
    /// Regime of each time point at `r_hat`; 0 where `z_t` is unusable, in
    /// which case the columns of `s_hat` and `r_series` are zero.
    pub regime_of_t: Vec<u8>,
}

pub fn recover_signal_factors(
    fit: &ThresholdFactorFit,
    panel: &PanelSeries,
    z: &ThresholdSeries,
) -> Result<SignalRecovery> {
    if z.len() != panel.n() {
        return Err(Error::DimensionMismatch {
            expected: panel.n(),
            found: z.len(),
        });
    }
    check_basis(panel, &fit.q1)?;
    check_basis(panel, &fit.q2)?;
    let part = make_partition(z, fit.r_hat, fit.r_hat)?;
    let (p, n, k) = (panel.p(), panel.n(), fit.k_hat);
    let mut s_hat = DMatrix::zeros(p, n);
    let mut r_series = DMatrix::zeros(k, n);
    let regime_of_t = regimes_of(&part);
    for t in 0..n {
        let q = match regime_of_t[t] {
            1 => &fit.q1.basis,
            2 => &fit.q2.basis,
            _ => continue,
        };
        let y: DVector<f64> = panel.observation(t);
        let factors = q.transpose() * &y;
        s_hat.set_column(t, &(q * &factors));
        r_series.set_column(t, &factors);
    }
    Ok(SignalRecovery {
        s_hat,
        r_series,
        regime_of_t,
    })
}

pub(crate) fn regimes_of(part: &RegimePartition) -> Vec<u8> {
    part.in_one
        .iter()
        .zip(&part.in_two)
        .map(|(&a, &b)| {
            if a {
                1
            } else if b {
                2
            } else {
                0
            }
        })
        .collect()
}
