//! Observed panels, threshold-variable series and regime partitions.
//!
//! A [`PanelSeries`] stores the `p x n` panel with one row per series and one
//! column per time point. A [`ThresholdSeries`] carries `z_t` together with a
//! usability mask: derived series (lags, cross-sectional statistics of lagged
//! data) are undefined at the start of the sample and those entries never take
//! part in a partition or a threshold grid.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PanelSeries {
    values: DMatrix<f64>,
    series_labels: Vec<String>,
    time_index: Vec<i64>,
}

impl PanelSeries {
    /// Builds a panel from a `p x n` matrix (rows are series, columns are time).
    pub fn new(values: DMatrix<f64>, series_labels: Vec<String>) -> Result<Self> {
        let (p, n) = values.shape();
        if p < 1 {
            return Err(Error::invalid("panel needs at least one series"));
        }
        if n < 2 {
            return Err(Error::invalid("panel needs at least two time points"));
        }
        if series_labels.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: series_labels.len(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / p + 1,
                column: pos % p + 1,
                value: values[pos].to_string(),
            });
        }
        let time_index = (1..=n as i64).collect();
        Ok(Self {
            values,
            series_labels,
            time_index,
        })
    }

    /// Builds a panel with labels `y1..yp`.
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        let labels = (1..=values.nrows()).map(|q| format!("y{q}")).collect();
        Self::new(values, labels)
    }

    pub fn p(&self) -> usize {
        self.values.nrows()
    }

    pub fn n(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn series_labels(&self) -> &[String] {
        &self.series_labels
    }

    pub fn time_index(&self) -> &[i64] {
        &self.time_index
    }

    /// Observation `y_t` for 0-based time `t`.
    pub fn observation(&self, t: usize) -> DVector<f64> {
        self.values.column(t).into_owned()
    }

    /// Panel restricted to the time range `[start, end)`, 0-based.
    pub fn slice_time(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n() {
            return Err(Error::invalid(format!(
                "invalid time range {start}..{end} for n = {}",
                self.n()
            )));
        }
        let values = self.values.columns(start, end - start).into_owned();
        let mut out = Self::new(values, self.series_labels.clone())?;
        out.time_index = self.time_index[start..end].to_vec();
        Ok(out)
    }

    /// Returns `c * y_t` for every t.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        let mut out = self.clone();
        out.values *= c;
        if !out.values.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("scaling produced non-finite values"));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSeries {
    values: Vec<f64>,
    usable: Vec<bool>,
    label: String,
}

impl ThresholdSeries {
    /// Fully observed series. All values must be finite.
    pub fn new(values: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if let Some(t) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: t + 1,
                column: 1,
                value: values[t].to_string(),
            });
        }
        let usable = vec![true; values.len()];
        Ok(Self {
            values,
            usable,
            label: label.into(),
        })
    }

    /// Series whose first `skip` entries are undefined.
    fn with_prefix_unusable(mut values: Vec<f64>, skip: usize, label: String) -> Self {
        let usable = (0..values.len()).map(|t| t >= skip).collect();
        for v in values.iter_mut().take(skip) {
            *v = f64::NAN;
        }
        Self {
            values,
            usable,
            label,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Raw values; unusable entries hold NaN.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_usable(&self, t: usize) -> bool {
        self.usable[t]
    }

    pub fn usable_mask(&self) -> &[bool] {
        &self.usable
    }

    /// Value at `t` if it is usable.
    pub fn get(&self, t: usize) -> Option<f64> {
        self.usable[t].then(|| self.values[t])
    }

    /// All usable values in time order.
    pub fn usable_values(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.usable)
            .filter_map(|(&v, &u)| u.then_some(v))
            .collect()
    }

    /// Sample quantile of the usable values (linear interpolation between
    /// order statistics, `h = (m - 1) prob`).
    pub fn quantile(&self, prob: f64) -> Result<f64> {
        let mut v = self.usable_values();
        if v.is_empty() {
            return Err(Error::invalid("threshold series has no usable values"));
        }
        v.sort_by(f64::total_cmp);
        quantile_sorted(&v, prob)
    }

    /// `z'_t = z_{t-lag}`; the first `lag` entries become unusable.
    pub fn lagged(&self, lag: usize) -> Result<Self> {
        let n = self.len();
        if lag >= n {
            return Err(Error::invalid(format!("lag {lag} must be < n = {n}")));
        }
        let mut values = vec![f64::NAN; n];
        let mut usable = vec![false; n];
        values[lag..].copy_from_slice(&self.values[..n - lag]);
        usable[lag..].copy_from_slice(&self.usable[..n - lag]);
        Ok(Self {
            values,
            usable,
            label: format!("{}_lag{lag}", self.label),
        })
    }

    /// Applies `f` to every usable value.
    pub fn map(&self, f: impl Fn(f64) -> f64, label: impl Into<String>) -> Result<Self> {
        let mut out = self.clone();
        for (v, &u) in out.values.iter_mut().zip(&self.usable) {
            if u {
                *v = f(*v);
                if !v.is_finite() {
                    return Err(Error::invalid("transform produced non-finite values"));
                }
            }
        }
        out.label = label.into();
        Ok(out)
    }

    /// Series restricted to the time range `[start, end)`, 0-based.
    pub fn slice_time(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::invalid(format!(
                "invalid time range {start}..{end} for n = {}",
                self.len()
            )));
        }
        Ok(Self {
            values: self.values[start..end].to_vec(),
            usable: self.usable[start..end].to_vec(),
            label: self.label.clone(),
        })
    }
}

/// Quantile of an ascending slice, linear interpolation between order statistics.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&prob) {
        return Err(Error::invalid(format!("quantile {prob} outside [0, 1]")));
    }
    if sorted.is_empty() {
        return Err(Error::invalid("quantile of an empty sample"));
    }
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// Regime assignment for a tentative split `(r1, r2)`.
///
/// Regime 1 holds `z_t < r1`, regime 2 holds `z_t >= r2`. With `r1 < r2` the
/// band `[r1, r2)` belongs to neither regime; with `r1 = r2` every usable time
/// point belongs to exactly one regime and a value equal to the threshold goes
/// to regime 2.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimePartition {
    pub r1: f64,
    pub r2: f64,
    pub in_one: Vec<bool>,
    pub in_two: Vec<bool>,
}

impl RegimePartition {
    pub fn len(&self) -> usize {
        self.in_one.len()
    }

    pub fn is_empty(&self) -> bool {
        self.in_one.is_empty()
    }

    /// Membership vector for regime `i` (1 or 2).
    pub fn members(&self, regime: usize) -> &[bool] {
        match regime {
            1 => &self.in_one,
            _ => &self.in_two,
        }
    }

    pub fn count(&self, regime: usize) -> usize {
        self.members(regime).iter().filter(|&&b| b).count()
    }

    /// Partition with every time point in regime 1 (the plain lagged moment).
    pub fn all_in_one(n: usize) -> Self {
        Self {
            r1: f64::INFINITY,
            r2: f64::INFINITY,
            in_one: vec![true; n],
            in_two: vec![false; n],
        }
    }

    /// Partition built from explicit class labels in `{1, 2}`.
    pub fn from_labels(labels: &[u8]) -> Self {
        Self {
            r1: f64::NAN,
            r2: f64::NAN,
            in_one: labels.iter().map(|&l| l == 1).collect(),
            in_two: labels.iter().map(|&l| l == 2).collect(),
        }
    }
}

pub fn make_partition(z: &ThresholdSeries, r1: f64, r2: f64) -> Result<RegimePartition> {
    if r1.is_nan() || r2.is_nan() {
        return Err(Error::invalid("threshold values must not be NaN"));
    }
    if r1 > r2 {
        return Err(Error::invalid(format!("r1 = {r1} exceeds r2 = {r2}")));
    }
    let (in_one, in_two) = z
        .values
        .iter()
        .zip(&z.usable)
        .map(|(&v, &u)| (u && v < r1, u && v >= r2))
        .unzip();
    Ok(RegimePartition {
        r1,
        r2,
        in_one,
        in_two,
    })
}

/// Cross-sectional standard deviation of `y_{t-lag}` (divisor `p - 1`).
/// The first `lag` entries are unusable.
pub fn cross_sectional_sd(panel: &PanelSeries, lag: usize) -> Result<ThresholdSeries> {
    let (p, n) = (panel.p(), panel.n());
    if p < 2 {
        return Err(Error::invalid("cross-sectional sd needs p >= 2"));
    }
    if lag < 1 || lag >= n {
        return Err(Error::invalid(format!(
            "lag {lag} must satisfy 1 <= lag < n = {n}"
        )));
    }
    let mut values = vec![0.0; n];
    for t in lag..n {
        values[t] = column_sd(panel.values.column(t - lag).iter().copied());
    }
    Ok(ThresholdSeries::with_prefix_unusable(
        values,
        lag,
        format!("csd_lag{lag}"),
    ))
}

/// Squared cross-sectional mean of `y_{t-lag}`, a market-return proxy.
pub fn squared_cross_sectional_mean(panel: &PanelSeries, lag: usize) -> Result<ThresholdSeries> {
    let n = panel.n();
    if lag >= n {
        return Err(Error::invalid(format!("lag {lag} must be < n = {n}")));
    }
    let mut values = vec![0.0; n];
    for t in lag..n {
        let m = panel.values.column(t - lag).mean();
        values[t] = m * m;
    }
    Ok(ThresholdSeries::with_prefix_unusable(
        values,
        lag,
        format!("sq_lag{lag}"),
    ))
}

pub(crate) fn column_sd(xs: impl ExactSizeIterator<Item = f64> + Clone) -> f64 {
    let p = xs.len() as f64;
    let mean = xs.clone().sum::<f64>() / p;
    let ss: f64 = xs.map(|v| (v - mean) * (v - mean)).sum();
    (ss / (p - 1.0)).sqrt()
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub delimiter: u8,
    pub has_header: bool,
    /// Column (by header label, or `colN` when there is no header) to split
    /// off as the threshold series.
    pub z_column: Option<String>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            delimiter: b',',
            has_header: false,
            z_column: None,
        }
    }
}

/// Reads a delimited table with one row per time point and one column per
/// series.
pub fn load_panel(
    path: impl AsRef<Path>,
    options: &LoadOptions,
) -> Result<(PanelSeries, Option<ThresholdSeries>)> {
    let file = std::fs::File::open(path.as_ref())?;
    read_panel(file, options)
}

/// [`load_panel`] over any reader.
pub fn read_panel<R: std::io::Read>(
    reader: R,
    options: &LoadOptions,
) -> Result<(PanelSeries, Option<ThresholdSeries>)> {
    let table = read_table(reader, options.delimiter, options.has_header)?;
    let ncols = table.labels.len();
    let z_idx = match &options.z_column {
        Some(name) => Some(
            table
                .labels
                .iter()
                .position(|l| l == name)
                .ok_or_else(|| Error::ColumnNotFound(name.clone()))?,
        ),
        None => None,
    };
    let series_cols: Vec<usize> = (0..ncols).filter(|&c| Some(c) != z_idx).collect();
    if series_cols.is_empty() {
        return Err(Error::invalid("no series columns left after removing z"));
    }
    let n = table.rows.len();
    let values = DMatrix::from_fn(series_cols.len(), n, |q, t| table.rows[t][series_cols[q]]);
    let labels = series_cols.iter().map(|&c| table.labels[c].clone()).collect();
    let panel = PanelSeries::new(values, labels)?;
    let z = match z_idx {
        Some(c) => Some(ThresholdSeries::new(
            table.rows.iter().map(|r| r[c]).collect(),
            table.labels[c].clone(),
        )?),
        None => None,
    };
    Ok((panel, z))
}

/// Reads a single-column (or labelled-column) threshold series file.
pub fn load_threshold_series(
    path: impl AsRef<Path>,
    delimiter: u8,
    has_header: bool,
    column: Option<&str>,
) -> Result<ThresholdSeries> {
    let file = std::fs::File::open(path.as_ref())?;
    let table = read_table(file, delimiter, has_header)?;
    let c = match column {
        Some(name) => table
            .labels
            .iter()
            .position(|l| l == name)
            .ok_or_else(|| Error::ColumnNotFound(name.to_string()))?,
        None => 0,
    };
    ThresholdSeries::new(table.rows.iter().map(|r| r[c]).collect(), table.labels[c].clone())
}

struct Table {
    labels: Vec<String>,
    rows: Vec<Vec<f64>>,
}

fn read_table<R: std::io::Read>(reader: R, delimiter: u8, has_header: bool) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut labels: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    let mut width = None;
    for (idx, rec) in rdr.records().enumerate() {
        let row = idx + 1;
        let rec = rec.map_err(|e| Error::Parse {
            row,
            column: 0,
            message: e.to_string(),
        })?;
        let expected = *width.get_or_insert(rec.len());
        if rec.len() != expected {
            return Err(Error::RaggedRow {
                row,
                expected,
                found: rec.len(),
            });
        }
        if idx == 0 && has_header {
            labels = Some(rec.iter().map(str::to_string).collect());
            continue;
        }
        let mut values = Vec::with_capacity(rec.len());
        for (c, cell) in rec.iter().enumerate() {
            let column = c + 1;
            if cell.is_empty() {
                return Err(Error::Parse {
                    row,
                    column,
                    message: "empty cell".into(),
                });
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column,
                message: format!("cannot parse {cell:?} as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    row,
                    column,
                    value: cell.to_string(),
                });
            }
            values.push(v);
        }
        rows.push(values);
    }
    if rows.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 data rows, found {}",
            rows.len()
        )));
    }
    let ncols = width.unwrap_or(0);
    let labels = labels.unwrap_or_else(|| (1..=ncols).map(|c| format!("col{c}")).collect());
    Ok(Table { labels, rows })
}
