//! Sample lagged cross-moment matrices split by regime and their quadratic
//! aggregates.
//!
//! For a partition `(r1, r2)`, lead `h` and regimes `i, j`:
//!
//! ```text
//! S_ij(h) = 1/(n-h) * sum_{t=1}^{n-h} y_t y_{t+h}' I_{t,i} I_{t+h,j}
//! M_i     = sum_{h=1}^{h0} sum_{j=1}^{2} S_ij(h) S_ij(h)'
//! ```
//!
//! The denominator is always `n - h`, whatever the number of contributing
//! terms; an empty partition yields the zero matrix.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;
use crate::panel::{PanelSeries, RegimePartition};
use crate::par;

#[derive(Debug, Clone)]
pub struct LaggedCrossMoment {
    pub matrix: DMatrix<f64>,
    pub h: usize,
    pub i: usize,
    pub j: usize,
    pub r1: f64,
    pub r2: f64,
    /// Number of `t` with `I_{t,i} I_{t+h,j} = 1`.
    pub n_terms: usize,
}

#[derive(Debug, Clone)]
pub struct MMatrix {
    pub matrix: DMatrix<f64>,
    pub regime: usize,
    pub h0: usize,
    pub r1: f64,
    pub r2: f64,
}

impl MMatrix {
    pub fn p(&self) -> usize {
        self.matrix.nrows()
    }
}

fn check_regime(i: usize) -> Result<()> {
    if i == 1 || i == 2 {
        Ok(())
    } else {
        Err(Error::invalid(format!("regime index {i} not in {{1, 2}}")))
    }
}

fn check_partition(panel: &PanelSeries, part: &RegimePartition) -> Result<()> {
    if part.len() != panel.n() {
        return Err(Error::DimensionMismatch {
            expected: panel.n(),
            found: part.len(),
        });
    }
    Ok(())
}

/// `sum_t y_t y_{t+h}'` over the given start times, unscaled.
pub(crate) fn outer_sum(values: &DMatrix<f64>, starts: &[usize], h: usize) -> DMatrix<f64> {
    let p = values.nrows();
    if starts.is_empty() {
        return DMatrix::zeros(p, p);
    }
    let lead = DMatrix::from_fn(p, starts.len(), |q, c| values[(q, starts[c])]);
    let lag = DMatrix::from_fn(p, starts.len(), |q, c| values[(q, starts[c] + h)]);
    lead * lag.transpose()
}

pub fn cross_moment(
    panel: &PanelSeries,
    part: &RegimePartition,
    h: usize,
    i: usize,
    j: usize,
) -> Result<LaggedCrossMoment> {
    check_regime(i)?;
    check_regime(j)?;
    check_partition(panel, part)?;
    let n = panel.n();
    if h < 1 || h >= n {
        return Err(Error::invalid(format!(
            "lead h = {h} must satisfy 1 <= h < n = {n}"
        )));
    }
    let (a, b) = (part.members(i), part.members(j));
    let starts: Vec<usize> = (0..n - h).filter(|&t| a[t] && b[t + h]).collect();
    let mut matrix = outer_sum(panel.values(), &starts, h);
    matrix /= (n - h) as f64;
    Ok(LaggedCrossMoment {
        matrix,
        h,
        i,
        j,
        r1: part.r1,
        r2: part.r2,
        n_terms: starts.len(),
    })
}

pub fn build_m_matrix(panel: &PanelSeries, part: &RegimePartition, h0: usize, i: usize) -> Result<MMatrix> {
    check_regime(i)?;
    check_partition(panel, part)?;
    let n = panel.n();
    if h0 < 1 || h0 >= n {
        return Err(Error::invalid(format!(
            "h0 = {h0} must satisfy 1 <= h0 < n = {n}"
        )));
    }
    let terms = par::map_indices(h0, |idx| -> Result<DMatrix<f64>> {
        let h = idx + 1;
        let mut acc = DMatrix::zeros(panel.p(), panel.p());
        for j in 1..=2 {
            let s = cross_moment(panel, part, h, i, j)?.matrix;
            acc += &s * s.transpose();
        }
        Ok(acc)
    });
    let mut matrix = DMatrix::zeros(panel.p(), panel.p());
    for term in terms {
        matrix += term?;
    }
    linalg::symmetrize(&mut matrix);
    Ok(MMatrix {
        matrix,
        regime: i,
        h0,
        r1: part.r1,
        r2: part.r2,
    })
}

/// Aggregate that does not split `y_{t+h}` by regime:
/// `sum_h S_i(h) S_i(h)'` with `S_i(h) = 1/(n-h) sum_t y_t y_{t+h}' I_{t,i}`.
/// Loses rank when the two loading spaces are not orthogonal; kept for
/// comparison against [`build_m_matrix`].
pub fn build_m_matrix_unsplit(
    panel: &PanelSeries,
    part: &RegimePartition,
    h0: usize,
    i: usize,
) -> Result<MMatrix> {
    check_regime(i)?;
    check_partition(panel, part)?;
    let n = panel.n();
    if h0 < 1 || h0 >= n {
        return Err(Error::invalid(format!(
            "h0 = {h0} must satisfy 1 <= h0 < n = {n}"
        )));
    }
    let members = part.members(i);
    let mut matrix = DMatrix::zeros(panel.p(), panel.p());
    for h in 1..=h0 {
        let starts: Vec<usize> = (0..n - h).filter(|&t| members[t]).collect();
        let s = outer_sum(panel.values(), &starts, h) / (n - h) as f64;
        matrix += &s * s.transpose();
    }
    linalg::symmetrize(&mut matrix);
    Ok(MMatrix {
        matrix,
        regime: i,
        h0,
        r1: part.r1,
        r2: part.r2,
    })
}
