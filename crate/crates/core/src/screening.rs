//! Threshold-variable search: regime classification without a threshold
//! variable, binary CUSUM screening of candidates against the classified
//! regimes, and held-out model comparison of the survivors.
//!
//! The classifier is an independent-switching approximation of a
//! Markov-switching filter. With equal prior regime probabilities and
//! spherical residuals, per-time maximum-likelihood classification reduces to
//! choosing the loading space with the smaller projection residual, so the
//! procedure alternates between estimating two loading spaces from the current
//! classes and reassigning each observation to the closer space.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::moments;
use crate::panel::{PanelSeries, RegimePartition, ThresholdSeries};
use crate::par;
use crate::subspace::{self, Subspace};
use crate::threshold::{self, FitConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassifierMethod {
    /// Alternating loading-space estimation and minimum-residual relabeling.
    AlternatingResidual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifyConfig {
    pub max_iter: usize,
    /// Stop once at most this fraction of labels changes in an iteration.
    pub tol: f64,
    /// Leads used for the within-class aggregates.
    pub h0: usize,
    /// Classes whose loading spaces are closer than this are flagged as
    /// degenerate.
    pub min_separation: f64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 0.0,
            h0: 1,
            min_separation: 0.1,
        }
    }
}

/// Estimated regime of each time point, in `{1, 2}`. Identified only up to
/// swapping the two classes.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeLabels {
    pub labels: Vec<u8>,
    pub method: ClassifierMethod,
    pub iterations: usize,
    pub converged: bool,
    /// A class is empty or the two class spaces nearly coincide.
    pub degenerate: bool,
    /// Sum of squared projection residuals at the final labels.
    pub residual: f64,
}

impl RegimeLabels {
    /// Labels given directly (e.g. known regimes).
    pub fn from_labels(labels: Vec<u8>) -> Result<Self> {
        if let Some(bad) = labels.iter().find(|&&l| l != 1 && l != 2) {
            return Err(Error::invalid(format!("regime label {bad} not in {{1, 2}}")));
        }
        let degenerate = !labels.contains(&1) || !labels.contains(&2);
        Ok(Self {
            labels,
            method: ClassifierMethod::AlternatingResidual,
            iterations: 0,
            converged: true,
            degenerate,
            residual: f64::NAN,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Swaps the classes 1 and 2.
    pub fn swapped(&self) -> Self {
        let mut out = self.clone();
        for l in &mut out.labels {
            *l = 3 - *l;
        }
        out
    }

    /// Orients the labels so that class 1 has the smaller mean of `z` over
    /// usable entries. Swap-invariant statistics are unaffected.
    pub fn oriented_by(&self, z: &ThresholdSeries) -> Result<Self> {
        if z.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: z.len(),
            });
        }
        let mut sums = [0.0; 2];
        let mut counts = [0usize; 2];
        for (t, &l) in self.labels.iter().enumerate() {
            if let Some(v) = z.get(t) {
                sums[l as usize - 1] += v;
                counts[l as usize - 1] += 1;
            }
        }
        let mean = |c: usize| sums[c] / counts[c].max(1) as f64;
        if counts[0] > 0 && counts[1] > 0 && mean(0) > mean(1) {
            Ok(self.swapped())
        } else {
            Ok(self.clone())
        }
    }
}

fn first_pc_labels(panel: &PanelSeries) -> Result<Vec<u8>> {
    let y = panel.values();
    let mean = y.column_mean();
    let centered = DMatrix::from_fn(y.nrows(), y.ncols(), |q, t| y[(q, t)] - mean[q]);
    let mut cov = &centered * centered.transpose() / y.ncols() as f64;
    linalg::symmetrize(&mut cov);
    let (_, v) = linalg::top_eigenpairs(&cov, 1)?;
    let scores = v.transpose() * &centered;
    Ok(scores.iter().map(|&s| if s < 0.0 { 1 } else { 2 }).collect())
}

/// Class spaces for the given labels; `None` when a class carries no lagged
/// signal.
fn class_spaces(
    panel: &PanelSeries,
    labels: &[u8],
    k: usize,
    h0: usize,
) -> Result<Option<(Subspace, Subspace)>> {
    let part = RegimePartition::from_labels(labels);
    if part.count(1) == 0 || part.count(2) == 0 {
        return Ok(None);
    }
    let mut spaces = Vec::with_capacity(2);
    for i in 1..=2 {
        let m = moments::build_m_matrix(panel, &part, h0, i)?;
        match subspace::estimate_loading_space(&m, k) {
            Ok(q) => spaces.push(q),
            Err(Error::ZeroOperator) => return Ok(None),
            Err(e) => return Err(e),
        }
    }
    let q2 = spaces.pop().expect("two spaces");
    let q1 = spaces.pop().expect("two spaces");
    Ok(Some((q1, q2)))
}

/// Squared residual norms `||y_t||^2 - ||Q' y_t||^2` for every `t`.
fn residuals(panel: &PanelSeries, q: &Subspace) -> Vec<f64> {
    let y = panel.values();
    let coords = q.basis.transpose() * y;
    (0..y.ncols())
        .map(|t| (y.column(t).norm_squared() - coords.column(t).norm_squared()).max(0.0))
        .collect()
}

pub fn classify_regimes(panel: &PanelSeries, k: usize, config: &ClassifyConfig) -> Result<RegimeLabels> {
    let (p, n) = (panel.p(), panel.n());
    if k < 1 || k >= p {
        return Err(Error::invalid(format!("k = {k} must satisfy 1 <= k < p = {p}")));
    }
    if n < 4 {
        return Err(Error::invalid(format!("classification needs n >= 4, got {n}")));
    }
    if config.max_iter < 1 || config.h0 < 1 || config.h0 >= n || !(0.0..1.0).contains(&config.tol) {
        return Err(Error::invalid(
            "classifier config needs max_iter >= 1, 1 <= h0 < n, 0 <= tol < 1",
        ));
    }
    let mut labels = first_pc_labels(panel)?;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iter {
        iterations += 1;
        let Some((q1, q2)) = class_spaces(panel, &labels, k, config.h0)? else {
            break;
        };
        let (e1, e2) = (residuals(panel, &q1), residuals(panel, &q2));
        let mut changed = 0usize;
        for t in 0..n {
            let new = if e1[t] < e2[t] {
                1
            } else if e2[t] < e1[t] {
                2
            } else {
                labels[t]
            };
            if new != labels[t] {
                labels[t] = new;
                changed += 1;
            }
        }
        if changed as f64 <= config.tol * n as f64 {
            converged = true;
            break;
        }
    }
    // Residual and separation at the final labels.
    let (degenerate, residual) = match class_spaces(panel, &labels, k, config.h0)? {
        None => (true, f64::NAN),
        Some((q1, q2)) => {
            let (e1, e2) = (residuals(panel, &q1), residuals(panel, &q2));
            let total = labels
                .iter()
                .enumerate()
                .map(|(t, &l)| if l == 1 { e1[t] } else { e2[t] })
                .sum();
            let sep = subspace::subspace_distance(&q1, &q2)?;
            (sep < config.min_separation, total)
        }
    };
    Ok(RegimeLabels {
        labels,
        method: ClassifierMethod::AlternatingResidual,
        iterations,
        converged,
        degenerate,
        residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CusumResult {
    pub q_value: f64,
    pub argmax_r: f64,
}

/// Candidate thresholds: distinct order statistics of the usable `z` whose
/// 0-based rank `j` among the `m` usable values satisfies
/// `lo (m - 1) <= j <= hi (m - 1)`. Rank-based, so the set moves with any
/// strictly increasing transform of `z`.
fn band_candidates(sorted: &[f64], band: (f64, f64)) -> Result<Vec<f64>> {
    let (lo, hi) = band;
    if !(0.0 < lo && lo < hi && hi < 1.0) {
        return Err(Error::invalid(format!(
            "quantile band must satisfy 0 < lo < hi < 1, got ({lo}, {hi})"
        )));
    }
    let m = sorted.len();
    if m < 2 || sorted[0] == sorted[m - 1] {
        let v = sorted.first().copied().unwrap_or(f64::NAN);
        return Err(Error::EmptyGrid { lo: v, hi: v });
    }
    let span = (m - 1) as f64;
    let first = (lo * span).ceil() as usize;
    let last = ((hi * span).floor() as usize).min(m - 1);
    let mut out: Vec<f64> = sorted[first.min(last + 1)..=last].to_vec();
    out.dedup();
    // A band that only covers the minimum cannot split the sample.
    out.retain(|&r| r > sorted[0]);
    if out.is_empty() {
        return Err(Error::EmptyGrid {
            lo: sorted[first.min(m - 1)],
            hi: sorted[last],
        });
    }
    Ok(out)
}

fn check_lengths(labels: &RegimeLabels, z: &ThresholdSeries) -> Result<()> {
    if labels.len() != z.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            found: z.len(),
        });
    }
    Ok(())
}

fn sign_of(label: u8) -> i64 {
    if label == 2 {
        1
    } else {
        -1
    }
}

/// `Q = max_r | sum_t s_t (2 I(z_t >= r) - 1) |` with `s_t = +1` for class 2
/// and `-1` for class 1, over candidates in the quantile band. Time points with
/// unusable `z` do not contribute. Ties go to the smallest `r`.
pub fn cusum_q(labels: &RegimeLabels, z: &ThresholdSeries, band: (f64, f64)) -> Result<CusumResult> {
    check_lengths(labels, z)?;
    let mut pairs: Vec<(f64, i64)> = (0..z.len())
        .filter_map(|t| z.get(t).map(|v| (v, sign_of(labels.labels[t]))))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let sorted: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let candidates = band_candidates(&sorted, band)?;
    let mut prefix = Vec::with_capacity(pairs.len() + 1);
    prefix.push(0i64);
    for &(_, s) in &pairs {
        prefix.push(prefix.last().unwrap() + s);
    }
    let total = *prefix.last().unwrap();
    let mut best = CusumResult {
        q_value: -1.0,
        argmax_r: f64::NAN,
    };
    for r in candidates {
        // sum over z >= r minus sum over z < r
        let below = prefix[sorted.partition_point(|&v| v < r)];
        let q = (total - 2 * below).abs() as f64;
        if q > best.q_value {
            best = CusumResult {
                q_value: q,
                argmax_r: r,
            };
        }
    }
    Ok(best)
}

/// Direct `O(n^2)` evaluation of [`cusum_q`]: every candidate is scored by a
/// full pass over the sample.
pub fn cusum_q_direct(labels: &RegimeLabels, z: &ThresholdSeries, band: (f64, f64)) -> Result<CusumResult> {
    check_lengths(labels, z)?;
    let mut sorted = z.usable_values();
    sorted.sort_by(f64::total_cmp);
    let candidates = band_candidates(&sorted, band)?;
    let mut best = CusumResult {
        q_value: -1.0,
        argmax_r: f64::NAN,
    };
    for r in candidates {
        let mut sum = 0i64;
        for t in 0..z.len() {
            if let Some(v) = z.get(t) {
                let ind = if v >= r { 1 } else { -1 };
                sum += sign_of(labels.labels[t]) * ind;
            }
        }
        let q = sum.abs() as f64;
        if q > best.q_value {
            best = CusumResult {
                q_value: q,
                argmax_r: r,
            };
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreeningEntry {
    /// Position in the input candidate list.
    pub index: usize,
    pub label: String,
    pub q_value: f64,
    pub argmax_r: f64,
    /// 1-based.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreeningReport {
    /// Sorted by decreasing `q_value`; input order breaks ties.
    pub entries: Vec<ScreeningEntry>,
    pub top_m: usize,
}

impl ScreeningReport {
    /// The `top_m` leading entries.
    pub fn retained(&self) -> &[ScreeningEntry] {
        &self.entries[..self.top_m.min(self.entries.len())]
    }
}

pub fn screen_candidates(
    labels: &RegimeLabels,
    candidates: &[ThresholdSeries],
    band: (f64, f64),
    top_m: usize,
) -> Result<ScreeningReport> {
    if candidates.is_empty() {
        return Err(Error::invalid("screening needs at least one candidate"));
    }
    if top_m < 1 {
        return Err(Error::invalid("top_m must be at least 1"));
    }
    let results: Result<Vec<CusumResult>> =
        par::map_indices(candidates.len(), |c| cusum_q(labels, &candidates[c], band))
            .into_iter()
            .collect();
    let mut entries: Vec<ScreeningEntry> = results?
        .into_iter()
        .enumerate()
        .map(|(index, res)| ScreeningEntry {
            index,
            label: candidates[index].label().to_string(),
            q_value: res.q_value,
            argmax_r: res.argmax_r,
            rank: 0,
        })
        .collect();
    entries.sort_by(|a, b| b.q_value.total_cmp(&a.q_value));
    for (pos, e) in entries.iter_mut().enumerate() {
        e.rank = pos + 1;
    }
    Ok(ScreeningReport { entries, top_m })
}

/// Held-out criterion: fit on `t < t0`, then sum `||B_i(r_hat)' y_t||^2` over
/// `t >= t0` in the regime `i` assigned by `z_t` and `r_hat`, where `B_i`
/// complements the loading space of the training `M_i(r_hat)`. Held-out points
/// with unusable `z` are skipped.
pub fn model_compare_e(
    panel: &PanelSeries,
    z: &ThresholdSeries,
    t0: usize,
    config: &FitConfig,
) -> Result<f64> {
    let n = panel.n();
    if z.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: z.len(),
        });
    }
    if t0 < 4 || t0 >= n {
        return Err(Error::invalid(format!(
            "t0 = {t0} must satisfy 4 <= t0 < n = {n}"
        )));
    }
    let train = panel.slice_time(0, t0)?;
    let z_train = z.slice_time(0, t0)?;
    let fit = threshold::fit_threshold_factor_model(&train, &z_train, config)?;
    let b1 = subspace::complement_space(&fit.m_at_r_hat.0, fit.k_hat)?;
    let b2 = subspace::complement_space(&fit.m_at_r_hat.1, fit.k_hat)?;
    let y = panel.values();
    let mut e = 0.0;
    for t in t0..n {
        let Some(v) = z.get(t) else { continue };
        let b = if v < fit.r_hat { &b1 } else { &b2 };
        e += (b.basis.transpose() * y.column(t)).norm_squared();
    }
    Ok(e)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub classify: ClassifyConfig,
    pub band: (f64, f64),
    /// Candidates kept for model comparison; all when `None`.
    pub top_m: Option<usize>,
    /// Training length for the comparison; `floor(n / 2)` when `None`.
    pub t0: Option<usize>,
    /// Fit settings; `fit.k` also sets the classifier's space dimension and
    /// must be given.
    pub fit: FitConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            classify: ClassifyConfig::default(),
            band: (0.1, 0.9),
            top_m: None,
            t0: None,
            fit: FitConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub index: usize,
    pub label: String,
    /// `None` when the training fit failed; the message is kept.
    pub e_value: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub labels: RegimeLabels,
    pub report: ScreeningReport,
    pub comparisons: Vec<Comparison>,
    /// Input index of the candidate with the smallest `E`.
    pub selected: usize,
}

/// Classification, screening and held-out comparison in one pass.
pub fn search_threshold_variable(
    panel: &PanelSeries,
    candidates: &[ThresholdSeries],
    config: &SearchConfig,
) -> Result<SearchOutcome> {
    let k = config
        .fit
        .k
        .ok_or_else(|| Error::invalid("threshold-variable search needs a fixed k"))?;
    let labels = classify_regimes(panel, k, &config.classify)?;
    let top_m = config.top_m.unwrap_or(candidates.len());
    let report = screen_candidates(&labels, candidates, config.band, top_m)?;
    let t0 = config.t0.unwrap_or(panel.n() / 2);
    let retained = report.retained();
    let comparisons: Vec<Comparison> = par::map_indices(retained.len(), |idx| {
        let entry = &retained[idx];
        let res = model_compare_e(panel, &candidates[entry.index], t0, &config.fit);
        Comparison {
            index: entry.index,
            label: entry.label.clone(),
            e_value: res.as_ref().ok().copied(),
            error: res.err().map(|e| e.to_string()),
        }
    });
    // Smallest E; screening order breaks ties.
    let selected = comparisons
        .iter()
        .filter_map(|c| c.e_value.map(|e| (c.index, e)))
        .fold(None::<(usize, f64)>, |best, (idx, e)| match best {
            Some((_, be)) if be <= e => best,
            _ => Some((idx, e)),
        })
        .map(|(idx, _)| idx)
        .ok_or_else(|| {
            Error::Numerical(format!(
                "no candidate admitted a training fit: {}",
                comparisons
                    .iter()
                    .filter_map(|c| c.error.clone())
                    .collect::<Vec<_>>()
                    .join("; ")
            ))
        })?;
    Ok(SearchOutcome {
        labels,
        report,
        comparisons,
        selected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(v: &[u8]) -> RegimeLabels {
        RegimeLabels::from_labels(v.to_vec()).unwrap()
    }

    fn series(v: &[f64]) -> ThresholdSeries {
        ThresholdSeries::new(v.to_vec(), "z").unwrap()
    }

    #[test]
    fn perfect_agreement_reaches_n() {
        let n = 40;
        let z: Vec<f64> = (0..n).map(|t| ((t * 17) % n) as f64).collect();
        let lab: Vec<u8> = z.iter().map(|&v| if v >= 20.0 { 2 } else { 1 }).collect();
        let res = cusum_q(&labels(&lab), &series(&z), (0.1, 0.9)).unwrap();
        assert_eq!(res.q_value, n as f64);
        assert_eq!(res.argmax_r, 20.0);
    }

    #[test]
    fn checkerboard_is_small() {
        let n = 20;
        let z: Vec<f64> = (0..n).map(|t| t as f64).collect();
        let lab: Vec<u8> = (0..n).map(|t| if t % 2 == 0 { 1 } else { 2 }).collect();
        let res = cusum_q(&labels(&lab), &series(&z), (0.1, 0.9)).unwrap();
        let direct = cusum_q_direct(&labels(&lab), &series(&z), (0.1, 0.9)).unwrap();
        assert!(res.q_value <= 2.0);
        assert_eq!(res, direct);
    }

    #[test]
    fn constant_z_is_rejected() {
        let res = cusum_q(&labels(&[1, 2, 1, 2]), &series(&[1.0; 4]), (0.1, 0.9));
        assert!(matches!(res, Err(Error::EmptyGrid { .. })));
    }

    #[test]
    fn band_is_validated() {
        let z = series(&[1.0, 2.0, 3.0, 4.0]);
        assert!(cusum_q(&labels(&[1, 1, 2, 2]), &z, (0.5, 0.2)).is_err());
        assert!(cusum_q(&labels(&[1, 1, 2, 2]), &z, (0.0, 0.9)).is_err());
    }

    #[test]
    fn duplicated_candidates_keep_order() {
        let z = series(&[0.3, 0.1, 0.9, 0.5, 0.7, 0.2]);
        let lab = labels(&[1, 1, 2, 2, 2, 1]);
        let report = screen_candidates(
            &lab,
            &[z.clone().with_label("a"), z.with_label("b")],
            (0.1, 0.9),
            1,
        )
        .unwrap();
        assert_eq!(report.entries[0].label, "a");
        assert_eq!(report.entries[1].label, "b");
        assert_eq!(report.entries[0].q_value, report.entries[1].q_value);
        assert_eq!(report.retained().len(), 1);
    }

    #[test]
    fn single_candidate_is_rank_one() {
        let z = series(&[0.3, 0.1, 0.9, 0.5]);
        let report = screen_candidates(&labels(&[1, 1, 2, 2]), &[z], (0.1, 0.9), 3).unwrap();
        assert_eq!(report.entries.len(), 1);
        assert_eq!(report.entries[0].rank, 1);
    }

    #[test]
    fn orientation_puts_small_z_first() {
        let z = series(&[5.0, -1.0, 6.0, -2.0]);
        let lab = labels(&[1, 2, 1, 2]).oriented_by(&z).unwrap();
        assert_eq!(lab.labels, vec![2, 1, 2, 1]);
    }

    #[test]
    fn rejects_bad_labels() {
        assert!(RegimeLabels::from_labels(vec![1, 3]).is_err());
        assert!(RegimeLabels::from_labels(vec![1, 1]).unwrap().degenerate);
    }
}
