//! Data-generating processes for two-regime threshold factor models, the Monte
//! Carlo harness and the standard simulation designs.
//!
//! Every replication draws from its own ChaCha8 stream, selected by the
//! replication index under the master seed, so results do not depend on the
//! order or parallelism in which replications run.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::export::{fmt_num, fmt_opt, Table};
use crate::panel::{column_sd, PanelSeries, ThresholdSeries};
use crate::par;
use crate::screening::{self, SearchConfig};
use crate::subspace::{self, Subspace};
use crate::threshold::{self, FitConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorAr {
    pub coef: f64,
    pub innovation_sd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LoadingScheme {
    /// Entries of `A_i` i.i.d. uniform on `[-p^{-delta_i/2}, p^{-delta_i/2}]`.
    IndependentUniform,
    /// Entry pairs `(A_1[q, c], A_2[q, c])` bivariate normal with unit
    /// variances and correlation `sqrt(1 - d^2)`, so that the distance between
    /// the two loading spaces is close to `|d|`.
    CorrelatedBivariate { d: f64 },
    /// Entry pairs bivariate normal with unit variances and covariance `cov`.
    BivariateCovariance { cov: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThresholdProcess {
    Ar1 {
        coef: f64,
        sd: f64,
    },
    IidNormal,
    /// Cross-sectional standard deviation of `y_{t-lag}`; the first `lag`
    /// values come from a pre-sample of pure noise.
    CrossSectionalSd {
        lag: usize,
    },
}

/// Equicorrelated noise: `variance` on the diagonal, `off_diag` elsewhere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub variance: f64,
    pub off_diag: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            variance: 1.0,
            off_diag: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Initialization {
    /// First value drawn from the stationary distribution.
    #[default]
    Stationary,
    /// Start at zero and discard this many steps.
    BurnIn { steps: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub p: usize,
    pub n: usize,
    /// One AR(1) process per factor; `k0` is its length.
    pub factor_ar: Vec<FactorAr>,
    /// `(delta_1, delta_2)` in `[0, 1]`.
    pub strengths: (f64, f64),
    pub loading_scheme: LoadingScheme,
    #[serde(default)]
    pub noise: NoiseSpec,
    pub threshold_process: ThresholdProcess,
    pub r0: f64,
    pub seed: u64,
    #[serde(default)]
    pub init: Initialization,
}

impl DgpSpec {
    pub fn k0(&self) -> usize {
        self.factor_ar.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 2 || self.n < 4 {
            return Err(Error::invalid(format!(
                "need p >= 2 and n >= 4, got p = {}, n = {}",
                self.p, self.n
            )));
        }
        if self.factor_ar.is_empty() || self.k0() >= self.p {
            return Err(Error::invalid(format!(
                "need 1 <= k0 < p, got k0 = {}",
                self.k0()
            )));
        }
        for f in &self.factor_ar {
            check_ar(f.coef, f.innovation_sd)?;
        }
        for d in [self.strengths.0, self.strengths.1] {
            if !(0.0..=1.0).contains(&d) {
                return Err(Error::invalid(format!("strength {d} outside [0, 1]")));
            }
        }
        match self.loading_scheme {
            LoadingScheme::IndependentUniform => {}
            LoadingScheme::CorrelatedBivariate { d } if (0.0..=1.0).contains(&d.abs()) => {}
            LoadingScheme::BivariateCovariance { cov } if (-1.0..=1.0).contains(&cov) => {}
            other => return Err(Error::invalid(format!("invalid loading scheme {other:?}"))),
        }
        let NoiseSpec { variance, off_diag } = self.noise;
        if !(variance >= 0.0 && (0.0..=variance).contains(&off_diag)) {
            return Err(Error::invalid(format!(
                "noise needs 0 <= off_diag <= variance, got ({variance}, {off_diag})"
            )));
        }
        match self.threshold_process {
            ThresholdProcess::Ar1 { coef, sd } => check_ar(coef, sd)?,
            ThresholdProcess::IidNormal => {}
            ThresholdProcess::CrossSectionalSd { lag } if lag >= 1 => {}
            ThresholdProcess::CrossSectionalSd { .. } => {
                return Err(Error::invalid("cross-sectional threshold lag must be >= 1"))
            }
        }
        if !self.r0.is_finite() {
            return Err(Error::invalid("r0 must be finite"));
        }
        Ok(())
    }
}

fn check_ar(coef: f64, sd: f64) -> Result<()> {
    if coef.is_nan() || coef.abs() >= 1.0 {
        return Err(Error::NonStationary(coef));
    }
    if !(sd >= 0.0 && sd.is_finite()) {
        return Err(Error::invalid(format!(
            "innovation sd {sd} must be finite and >= 0"
        )));
    }
    Ok(())
}

/// Known truth behind a simulated panel.
#[derive(Debug, Clone)]
pub struct Truth {
    pub a1: DMatrix<f64>,
    pub a2: DMatrix<f64>,
    pub r0: f64,
    /// Factors, `k0 x n`.
    pub x: DMatrix<f64>,
    pub regime_of_t: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub panel: PanelSeries,
    pub z: ThresholdSeries,
    pub truth: Truth,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// AR(1) path of length `n`.
fn ar_path(coef: f64, sd: f64, n: usize, init: Initialization, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut prev = match init {
        Initialization::Stationary => sd / (1.0 - coef * coef).sqrt() * normal(rng),
        Initialization::BurnIn { steps } => {
            let mut v = 0.0;
            for _ in 0..steps {
                v = coef * v + sd * normal(rng);
            }
            v
        }
    };
    let mut out = Vec::with_capacity(n);
    out.push(prev);
    for _ in 1..n {
        prev = coef * prev + sd * normal(rng);
        out.push(prev);
    }
    out
}

/// Loading matrices `(A_1, A_2)`, each `p x k0`.
pub fn draw_loadings(spec: &DgpSpec, rng: &mut ChaCha8Rng) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (p, k) = (spec.p, spec.k0());
    let scale = |delta: f64| (p as f64).powf(-delta / 2.0);
    let (s1, s2) = (scale(spec.strengths.0), scale(spec.strengths.1));
    match spec.loading_scheme {
        LoadingScheme::IndependentUniform => {
            let mut draw = |s: f64| -> Result<DMatrix<f64>> {
                let u = Uniform::new_inclusive(-s, s).map_err(|e| Error::invalid(e.to_string()))?;
                Ok(DMatrix::from_fn(p, k, |_, _| u.sample(rng)))
            };
            let a1 = draw(s1)?;
            let a2 = draw(s2)?;
            Ok((a1, a2))
        }
        LoadingScheme::CorrelatedBivariate { d } => {
            Ok(bivariate(p, k, (1.0 - d * d).max(0.0).sqrt(), (s1, s2), rng))
        }
        LoadingScheme::BivariateCovariance { cov } => Ok(bivariate(p, k, cov, (s1, s2), rng)),
    }
}

fn bivariate(
    p: usize,
    k: usize,
    rho: f64,
    scale: (f64, f64),
    rng: &mut ChaCha8Rng,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut a1 = DMatrix::zeros(p, k);
    let mut a2 = DMatrix::zeros(p, k);
    let tail = (1.0 - rho * rho).max(0.0).sqrt();
    for c in 0..k {
        for q in 0..p {
            let (u, v) = (normal(rng), normal(rng));
            a1[(q, c)] = scale.0 * u;
            a2[(q, c)] = scale.1 * (rho * u + tail * v);
        }
    }
    (a1, a2)
}

/// One noise vector: a shared standard normal scaled by `sqrt(off_diag)` plus
/// independent parts scaled by `sqrt(variance - off_diag)`.
fn noise_vector(p: usize, noise: NoiseSpec, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let common = noise.off_diag.sqrt() * normal(rng);
    let own = (noise.variance - noise.off_diag).sqrt();
    DVector::from_fn(p, |_, _| common + own * normal(rng))
}

/// `n` noise vectors as the columns of a `p x n` matrix.
pub fn draw_noise(p: usize, n: usize, noise: NoiseSpec, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(p, n);
    for t in 0..n {
        out.set_column(t, &noise_vector(p, noise, rng));
    }
    out
}

/// Draws a panel from `spec` with the generator seeded by `spec.seed`.
pub fn generate_dgp(spec: &DgpSpec) -> Result<SimulatedData> {
    generate_with_rng(spec, &mut ChaCha8Rng::seed_from_u64(spec.seed))
}

/// Generator for replication `rep` under `master_seed`.
pub fn replication_rng(master_seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(rep as u64 + 1);
    rng
}

/// Draw order: loadings, factor paths, the threshold path (exogenous
/// processes), then noise and observations in time order.
pub fn generate_with_rng(spec: &DgpSpec, rng: &mut ChaCha8Rng) -> Result<SimulatedData> {
    spec.validate()?;
    let (p, n, k) = (spec.p, spec.n, spec.k0());
    let (a1, a2) = draw_loadings(spec, rng)?;
    let mut x = DMatrix::zeros(k, n);
    for (c, f) in spec.factor_ar.iter().enumerate() {
        let path = ar_path(f.coef, f.innovation_sd, n, spec.init, rng);
        x.set_row(c, &DVector::from_vec(path).transpose());
    }
    let exogenous = match spec.threshold_process {
        ThresholdProcess::Ar1 { coef, sd } => Some(ar_path(coef, sd, n, spec.init, rng)),
        ThresholdProcess::IidNormal => Some((0..n).map(|_| normal(rng)).collect()),
        ThresholdProcess::CrossSectionalSd { .. } => None,
    };
    let mut y = DMatrix::zeros(p, n);
    let mut regime_of_t = Vec::with_capacity(n);
    let z_values = match exogenous {
        Some(z) => {
            for t in 0..n {
                let regime = if z[t] < spec.r0 { 1 } else { 2 };
                let a = if regime == 1 { &a1 } else { &a2 };
                let col = a * x.column(t) + noise_vector(p, spec.noise, rng);
                y.set_column(t, &col);
                regime_of_t.push(regime);
            }
            z
        }
        None => {
            let ThresholdProcess::CrossSectionalSd { lag } = spec.threshold_process else {
                unreachable!("exogenous processes handled above")
            };
            let presample: Vec<DVector<f64>> = (0..lag).map(|_| noise_vector(p, spec.noise, rng)).collect();
            let mut z = Vec::with_capacity(n);
            for t in 0..n {
                let zt = if t < lag {
                    column_sd(presample[t].iter().copied())
                } else {
                    column_sd(y.column(t - lag).iter().copied())
                };
                let regime = if zt < spec.r0 { 1 } else { 2 };
                let a = if regime == 1 { &a1 } else { &a2 };
                let col = a * x.column(t) + noise_vector(p, spec.noise, rng);
                y.set_column(t, &col);
                regime_of_t.push(regime);
                z.push(zt);
            }
            z
        }
    };
    let z_label = match spec.threshold_process {
        ThresholdProcess::CrossSectionalSd { lag } => format!("csd_lag{lag}"),
        _ => "z".to_string(),
    };
    Ok(SimulatedData {
        panel: PanelSeries::from_matrix(y)?,
        z: ThresholdSeries::new(z_values, z_label)?,
        truth: Truth {
            a1,
            a2,
            r0: spec.r0,
            x,
            regime_of_t,
        },
    })
}

fn check_setting(setting: u8) -> Result<()> {
    if (1..=3).contains(&setting) {
        Ok(())
    } else {
        Err(Error::invalid(format!("setting {setting} not in 1..=3")))
    }
}

/// One factor, AR 0.9 with innovation variance 4; `z` AR(1) with coefficient
/// 0.3; `r0 = 0`. Strengths per setting: (0, 0), (0, 1), (1, 1).
pub fn example1(setting: u8, n: usize, p: usize, seed: u64) -> Result<DgpSpec> {
    check_setting(setting)?;
    let strengths = [(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)][setting as usize - 1];
    Ok(DgpSpec {
        p,
        n,
        factor_ar: vec![FactorAr {
            coef: 0.9,
            innovation_sd: 2.0,
        }],
        strengths,
        loading_scheme: LoadingScheme::IndependentUniform,
        noise: NoiseSpec::default(),
        threshold_process: ThresholdProcess::Ar1 { coef: 0.3, sd: 1.0 },
        r0: 0.0,
        seed,
        init: Initialization::Stationary,
    })
}

/// Three factors, AR coefficients 0.9, -0.7, 0.8 with innovation variance 4;
/// `z` AR(1) with coefficient -0.7; `r0 = 0`. Strengths per setting: (0, 0),
/// (0, 0.5), (0.5, 0.5).
pub fn example2(setting: u8, n: usize, p: usize, seed: u64) -> Result<DgpSpec> {
    check_setting(setting)?;
    let strengths = [(0.0, 0.0), (0.0, 0.5), (0.5, 0.5)][setting as usize - 1];
    Ok(DgpSpec {
        p,
        n,
        factor_ar: [0.9, -0.7, 0.8]
            .iter()
            .map(|&coef| FactorAr {
                coef,
                innovation_sd: 2.0,
            })
            .collect(),
        strengths,
        loading_scheme: LoadingScheme::IndependentUniform,
        noise: NoiseSpec::default(),
        threshold_process: ThresholdProcess::Ar1 { coef: -0.7, sd: 1.0 },
        r0: 0.0,
        seed,
        init: Initialization::Stationary,
    })
}

/// As [`example1`] with `z_t` the cross-sectional sd of `y_{t-1}`, weak
/// strength 0.5 and `r0` of 1.5, 1.2, 1 by setting.
pub fn example3(setting: u8, n: usize, p: usize, seed: u64) -> Result<DgpSpec> {
    check_setting(setting)?;
    let idx = setting as usize - 1;
    Ok(DgpSpec {
        p,
        n,
        factor_ar: vec![FactorAr {
            coef: 0.9,
            innovation_sd: 2.0,
        }],
        strengths: [(0.0, 0.0), (0.0, 0.5), (0.5, 0.5)][idx],
        loading_scheme: LoadingScheme::IndependentUniform,
        noise: NoiseSpec::default(),
        threshold_process: ThresholdProcess::CrossSectionalSd { lag: 1 },
        r0: [1.5, 1.2, 1.0][idx],
        seed,
        init: Initialization::Stationary,
    })
}

/// One strong factor, AR 0.9 with unit innovations, i.i.d. normal `z`,
/// `r0 = 0`, loading spaces about `|d|` apart.
pub fn example4(d: f64, n: usize, p: usize, seed: u64) -> Result<DgpSpec> {
    let spec = DgpSpec {
        p,
        n,
        factor_ar: vec![FactorAr {
            coef: 0.9,
            innovation_sd: 1.0,
        }],
        strengths: (0.0, 0.0),
        loading_scheme: LoadingScheme::CorrelatedBivariate { d },
        noise: NoiseSpec::default(),
        threshold_process: ThresholdProcess::IidNormal,
        r0: 0.0,
        seed,
        init: Initialization::Stationary,
    };
    spec.validate()?;
    Ok(spec)
}

/// What each replication runs after generating the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// `fit.k = Some(k)` forces the number of factors.
    pub fit: FitConfig,
    /// Fit on `z_{t-lag}` instead of the true threshold variable.
    #[serde(default)]
    pub threshold_lag: usize,
    /// Also run the threshold-variable search over `z_{t-l}`, `l = 0..=screen_lags`.
    #[serde(default)]
    pub screening: Option<SearchConfig>,
    #[serde(default = "default_screen_lags")]
    pub screen_lags: usize,
}

fn default_screen_lags() -> usize {
    3
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            fit: FitConfig::default(),
            threshold_lag: 0,
            screening: None,
            screen_lags: default_screen_lags(),
        }
    }
}

impl PipelineConfig {
    pub fn with_k(k: Option<usize>) -> Self {
        Self {
            fit: FitConfig {
                k,
                ..FitConfig::default()
            },
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// `r_hat < r0`
    Below,
    /// `r_hat >= r0`
    Above,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRecord {
    pub rep: usize,
    pub r_hat: f64,
    pub abs_err: f64,
    pub side: Side,
    /// Factor count used by the fit.
    pub k_used: usize,
    /// Eigenvalue-ratio estimate, when it could be computed.
    pub k_est: Option<usize>,
    /// `D(Q_i, A_i)` per regime.
    pub d_err: (f64, f64),
    /// `D(Q_1, Q_2)`
    pub d_between: f64,
    /// Whether the search selected the true threshold variable.
    pub selected_true: Option<bool>,
    /// Rank of the true threshold variable by the CUSUM statistic.
    pub true_screen_rank: Option<usize>,
    /// Wall-clock seconds; not part of any deterministic output.
    pub runtime_secs: f64,
}

/// Generates replication `rep` and runs the pipeline on it.
pub fn run_replication(spec: &DgpSpec, rep: usize, pipeline: &PipelineConfig) -> Result<McRecord> {
    let start = Instant::now();
    let data = generate_with_rng(spec, &mut replication_rng(spec.seed, rep))?;
    let z_fit = if pipeline.threshold_lag == 0 {
        data.z.clone()
    } else {
        data.z.lagged(pipeline.threshold_lag)?
    };
    let fit = threshold::fit_threshold_factor_model(&data.panel, &z_fit, &pipeline.fit)?;
    let a1 = Subspace::from_columns(&data.truth.a1)?;
    let a2 = Subspace::from_columns(&data.truth.a2)?;
    let d_err = (
        subspace::subspace_distance(&fit.q1, &a1)?,
        subspace::subspace_distance(&fit.q2, &a2)?,
    );
    let (selected_true, true_screen_rank) = match &pipeline.screening {
        None => (None, None),
        Some(search) => {
            let mut search = search.clone();
            if search.fit.k.is_none() {
                search.fit.k = Some(pipeline.fit.k.unwrap_or(spec.k0()));
            }
            let mut candidates = vec![data.z.clone()];
            for lag in 1..=pipeline.screen_lags {
                candidates.push(data.z.lagged(lag)?);
            }
            let outcome = screening::search_threshold_variable(&data.panel, &candidates, &search)?;
            let rank = outcome
                .report
                .entries
                .iter()
                .find(|e| e.index == 0)
                .map(|e| e.rank);
            (Some(outcome.selected == 0), rank)
        }
    };
    let r0 = data.truth.r0;
    Ok(McRecord {
        rep,
        r_hat: fit.r_hat,
        abs_err: (fit.r_hat - r0).abs(),
        side: if fit.r_hat < r0 { Side::Below } else { Side::Above },
        k_used: fit.k_hat,
        k_est: fit.factor_count.as_ref().map(|f| f.k_hat),
        d_err,
        d_between: fit.diagnostics.space_distance,
        selected_true,
        true_screen_rank,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct McAggregates {
    pub n_ok: usize,
    pub n_failed: usize,
    pub n_below: usize,
    pub n_above: usize,
    pub freq_below: Option<f64>,
    pub mean_abs_err: Option<f64>,
    pub mean_abs_err_below: Option<f64>,
    pub mean_abs_err_above: Option<f64>,
    pub mean_d_err: (Option<f64>, Option<f64>),
    pub mean_d_err_below: (Option<f64>, Option<f64>),
    pub mean_d_err_above: (Option<f64>, Option<f64>),
    /// Share of replications whose eigenvalue-ratio estimate equals `k0`.
    pub freq_k_correct: Option<f64>,
    pub mean_d_between: Option<f64>,
    pub sd_d_between: Option<f64>,
    pub freq_selected_true: Option<f64>,
    /// Share of replications where the true variable has the largest CUSUM statistic.
    pub freq_screen_first: Option<f64>,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut count) = (0.0, 0usize);
    for x in xs {
        sum += x;
        count += 1;
    }
    (count > 0).then(|| sum / count as f64)
}

fn sample_sd(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    Some((ss / (xs.len() - 1) as f64).sqrt())
}

fn freq<T>(items: &[T], pred: impl Fn(&T) -> Option<bool>) -> Option<f64> {
    mean(items.iter().filter_map(pred).map(|b| if b { 1.0 } else { 0.0 }))
}

impl McAggregates {
    /// Aggregates over successful records (ordered by replication index).
    pub fn from_records(records: &[McRecord], n_failed: usize, k0: usize) -> Self {
        let side = |s: Side| records.iter().filter(move |r| r.side == s);
        let d_means = |it: Vec<&McRecord>| {
            (
                mean(it.iter().map(|r| r.d_err.0)),
                mean(it.iter().map(|r| r.d_err.1)),
            )
        };
        let between: Vec<f64> = records.iter().map(|r| r.d_between).collect();
        Self {
            n_ok: records.len(),
            n_failed,
            n_below: side(Side::Below).count(),
            n_above: side(Side::Above).count(),
            freq_below: freq(records, |r| Some(r.side == Side::Below)),
            mean_abs_err: mean(records.iter().map(|r| r.abs_err)),
            mean_abs_err_below: mean(side(Side::Below).map(|r| r.abs_err)),
            mean_abs_err_above: mean(side(Side::Above).map(|r| r.abs_err)),
            mean_d_err: d_means(records.iter().collect()),
            mean_d_err_below: d_means(side(Side::Below).collect()),
            mean_d_err_above: d_means(side(Side::Above).collect()),
            freq_k_correct: freq(records, |r| r.k_est.map(|k| k == k0)),
            mean_d_between: mean(between.iter().copied()),
            sd_d_between: sample_sd(&between),
            freq_selected_true: freq(records, |r| r.selected_true),
            freq_screen_first: freq(records, |r| r.true_screen_rank.map(|k| k == 1)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct McSummary {
    pub spec: DgpSpec,
    pub pipeline: PipelineConfig,
    pub n_rep: usize,
    /// Successful replications, by increasing index.
    pub records: Vec<McRecord>,
    /// Failed replications with their error messages.
    pub failures: Vec<(usize, String)>,
    pub aggregates: McAggregates,
}

pub fn run_monte_carlo(spec: &DgpSpec, n_rep: usize, pipeline: &PipelineConfig) -> Result<McSummary> {
    if n_rep < 1 {
        return Err(Error::invalid("n_rep must be at least 1"));
    }
    spec.validate()?;
    pipeline.fit.validate()?;
    let results = par::map_indices(n_rep, |rep| run_replication(spec, rep, pipeline));
    let mut records = Vec::with_capacity(n_rep);
    let mut failures = Vec::new();
    for (rep, res) in results.into_iter().enumerate() {
        match res {
            Ok(r) => records.push(r),
            Err(e) => failures.push((rep, e.to_string())),
        }
    }
    let aggregates = McAggregates::from_records(&records, failures.len(), spec.k0());
    Ok(McSummary {
        spec: spec.clone(),
        pipeline: pipeline.clone(),
        n_rep,
        records,
        failures,
        aggregates,
    })
}

/// SHA-256 of the canonical JSON form of `value`, hex encoded.
pub fn digest_of<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("serializable configuration");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}

/// Per-replication records and the aggregates of one Monte Carlo run.
pub fn summary_tables(summary: &McSummary) -> Vec<Table> {
    let cols = |names: &[&str]| names.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let mut records = Table::new(
        "records",
        "per-replication results",
        cols(&[
            "rep",
            "r_hat",
            "abs_err",
            "side",
            "k_used",
            "k_est",
            "d_err1",
            "d_err2",
            "d_between",
            "selected_true",
            "true_screen_rank",
        ]),
    );
    for r in &summary.records {
        records.push(vec![
            r.rep.to_string(),
            fmt_num(r.r_hat, 6),
            fmt_num(r.abs_err, 6),
            match r.side {
                Side::Below => "below".into(),
                Side::Above => "above".into(),
            },
            r.k_used.to_string(),
            r.k_est.map_or("NA".into(), |k| k.to_string()),
            fmt_num(r.d_err.0, 6),
            fmt_num(r.d_err.1, 6),
            fmt_num(r.d_between, 6),
            r.selected_true.map_or("NA".into(), |b| b.to_string()),
            r.true_screen_rank.map_or("NA".into(), |k| k.to_string()),
        ]);
    }
    let a = &summary.aggregates;
    let mut agg = Table::new("aggregates", "Monte Carlo summary", cols(&["metric", "value"]));
    let mut put = |name: &str, v: String| agg.push(vec![name.to_string(), v]);
    put("n_ok", a.n_ok.to_string());
    put("n_failed", a.n_failed.to_string());
    put("n_below", a.n_below.to_string());
    put("n_above", a.n_above.to_string());
    put("freq_below", fmt_opt(a.freq_below, 4));
    put("mean_abs_err", fmt_opt(a.mean_abs_err, 4));
    put("mean_abs_err_below", fmt_opt(a.mean_abs_err_below, 4));
    put("mean_abs_err_above", fmt_opt(a.mean_abs_err_above, 4));
    put("mean_d_err1", fmt_opt(a.mean_d_err.0, 4));
    put("mean_d_err2", fmt_opt(a.mean_d_err.1, 4));
    put("mean_d_err1_below", fmt_opt(a.mean_d_err_below.0, 4));
    put("mean_d_err2_below", fmt_opt(a.mean_d_err_below.1, 4));
    put("mean_d_err1_above", fmt_opt(a.mean_d_err_above.0, 4));
    put("mean_d_err2_above", fmt_opt(a.mean_d_err_above.1, 4));
    put("freq_k_correct", fmt_opt(a.freq_k_correct, 4));
    put("mean_d_between", fmt_opt(a.mean_d_between, 4));
    put("sd_d_between", fmt_opt(a.sd_d_between, 4));
    put("freq_selected_true", fmt_opt(a.freq_selected_true, 4));
    put("freq_screen_first", fmt_opt(a.freq_screen_first, 4));
    vec![records, agg]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// Every `(n, p)` cell, 100 replications.
    Full,
    /// Smallest cell of each table, 20 replications.
    Quick,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateOptions {
    pub scale: Scale,
    pub seed: u64,
    /// Overrides the scale's replication count.
    pub n_rep: Option<usize>,
}

impl ReplicateOptions {
    pub fn new(scale: Scale) -> Self {
        Self {
            scale,
            seed: 20_190_417,
            n_rep: None,
        }
    }

    fn reps(&self) -> usize {
        self.n_rep.unwrap_or(match self.scale {
            Scale::Full => 100,
            Scale::Quick => 20,
        })
    }
}

/// Tables reproducing one simulation design, with shared metadata.
#[derive(Debug, Clone)]
pub struct TableSet {
    pub example: u8,
    pub tables: Vec<Table>,
    pub metadata: Vec<(String, String)>,
}

#[derive(Serialize)]
struct CellKey<'a> {
    spec: &'a DgpSpec,
    pipeline: &'a PipelineConfig,
}

/// Seed of one design cell: SplitMix64 of the master seed and a cell code.
fn cell_seed(master: u64, code: u64) -> u64 {
    let mut z = master ^ code.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Grid {
    ns: Vec<usize>,
    ps: Vec<usize>,
}

impl Grid {
    fn new(scale: Scale, ns: &[usize], ps: &[usize]) -> Self {
        match scale {
            Scale::Full => Self {
                ns: ns.to_vec(),
                ps: ps.to_vec(),
            },
            Scale::Quick => Self {
                ns: vec![ns[0]],
                ps: vec![ps[0]],
            },
        }
    }

    fn cells(&self) -> Vec<(usize, usize)> {
        self.ns
            .iter()
            .flat_map(|&n| self.ps.iter().map(move |&p| (n, p)))
            .collect()
    }

    fn header(&self, keys: &[&str]) -> Vec<String> {
        let mut h: Vec<String> = keys.iter().map(|s| s.to_string()).collect();
        h.extend(self.cells().iter().map(|(n, p)| format!("n{n}_p{p}")));
        h
    }
}

struct Runner {
    opts: ReplicateOptions,
    keys: Vec<String>,
}

impl Runner {
    fn run(&mut self, spec: DgpSpec, pipeline: PipelineConfig) -> Result<McSummary> {
        self.keys.push(digest_of(&CellKey {
            spec: &spec,
            pipeline: &pipeline,
        }));
        run_monte_carlo(&spec, self.opts.reps(), &pipeline)
    }
}

fn pair(a: Option<f64>, b: Option<f64>) -> String {
    format!("{}({})", fmt_opt(a, 3), fmt_opt(b, 3))
}

pub fn replicate_example(id: u8, scale: Scale) -> Result<TableSet> {
    replicate_example_with(id, &ReplicateOptions::new(scale))
}

/// Runs a simulation design and tabulates it in the layout of the published
/// tables: settings down the rows, `(n, p)` cells across the columns.
pub fn replicate_example_with(id: u8, opts: &ReplicateOptions) -> Result<TableSet> {
    let mut runner = Runner {
        opts: opts.clone(),
        keys: Vec::new(),
    };
    let tables = match id {
        1 => example1_tables(&mut runner)?,
        2 => example2_tables(&mut runner)?,
        3 => example3_tables(&mut runner)?,
        4 => example4_tables(&mut runner)?,
        other => return Err(Error::invalid(format!("example id {other} not in 1..=4"))),
    };
    let metadata = vec![
        ("example".to_string(), id.to_string()),
        ("scale".to_string(), format!("{:?}", opts.scale).to_lowercase()),
        ("seed".to_string(), opts.seed.to_string()),
        ("n_rep".to_string(), opts.reps().to_string()),
        ("spec_digest".to_string(), digest_of(&runner.keys)),
        (
            "version".to_string(),
            concat!("threshold-factor ", env!("CARGO_PKG_VERSION")).to_string(),
        ),
    ];
    Ok(TableSet {
        example: id,
        tables,
        metadata,
    })
}

fn example1_tables(runner: &mut Runner) -> Result<Vec<Table>> {
    let grid = Grid::new(runner.opts.scale, &[200, 1000], &[20, 40, 100]);
    let mut t1 = Table::new(
        "table1_freq_below",
        "relative frequency of r_hat < r0, k0 known",
        grid.header(&["setting"]),
    );
    let mut t2 = Table::new(
        "table2_abs_err",
        "mean |r_hat - r0| by side, k0 known",
        grid.header(&["setting", "side"]),
    );
    let mut t3 = Table::new(
        "table3_d_err_below",
        "mean D(Q_i, A_i) when r_hat < r0",
        grid.header(&["setting", "regime"]),
    );
    let mut t4 = Table::new(
        "table4_d_err_above",
        "mean D(Q_i, A_i) when r_hat >= r0",
        grid.header(&["setting", "regime"]),
    );
    for setting in 1..=3u8 {
        let mut sums = Vec::new();
        for (n, p) in grid.cells() {
            let seed = cell_seed(
                runner.opts.seed,
                (1 << 32) | ((setting as u64) << 24) | ((n as u64) << 8) | p as u64,
            );
            sums.push(
                runner
                    .run(example1(setting, n, p, seed)?, PipelineConfig::with_k(Some(1)))?
                    .aggregates,
            );
        }
        let s = format!("setting{setting}");
        let row = |keys: &[&str], f: &dyn Fn(&McAggregates) -> String| {
            let mut r: Vec<String> = keys.iter().map(|k| k.to_string()).collect();
            r.extend(sums.iter().map(f));
            r
        };
        t1.push(row(&[&s], &|a| fmt_opt(a.freq_below, 2)));
        t2.push(row(&[&s, "below"], &|a| fmt_opt(a.mean_abs_err_below, 3)));
        t2.push(row(&[&s, "above"], &|a| fmt_opt(a.mean_abs_err_above, 3)));
        t3.push(row(&[&s, "1"], &|a| fmt_opt(a.mean_d_err_below.0, 3)));
        t3.push(row(&[&s, "2"], &|a| fmt_opt(a.mean_d_err_below.1, 3)));
        t4.push(row(&[&s, "1"], &|a| fmt_opt(a.mean_d_err_above.0, 3)));
        t4.push(row(&[&s, "2"], &|a| fmt_opt(a.mean_d_err_above.1, 3)));
    }
    Ok(vec![t1, t2, t3, t4])
}

fn example2_tables(runner: &mut Runner) -> Result<Vec<Table>> {
    let count_grid = Grid::new(runner.opts.scale, &[200, 1000], &[20, 40, 100]);
    let mut t5 = Table::new(
        "table5_freq_k_correct",
        "relative frequency of k_hat = 3",
        count_grid.header(&["setting"]),
    );
    let forced_grid = Grid::new(runner.opts.scale, &[1000], &[20, 40, 100]);
    let mut t6 = Table::new(
        "table6_abs_err",
        "mean |r_hat - r0| with forced k, n = 1000",
        forced_grid.header(&["setting", "k"]),
    );
    let mut t7 = Table::new(
        "table7_d_err",
        "mean D(Q_i, A_i) with forced k, n = 1000",
        forced_grid.header(&["setting", "k", "regime"]),
    );
    let mut t8 = Table::new(
        "table8_freq_selected",
        "relative frequency of selecting the true threshold variable, n = 1000",
        forced_grid.header(&["setting", "k"]),
    );
    for setting in 1..=3u8 {
        let s = format!("setting{setting}");
        let mut row = vec![s.clone()];
        for (n, p) in count_grid.cells() {
            let seed = cell_seed(
                runner.opts.seed,
                (2 << 32) | ((setting as u64) << 24) | ((n as u64) << 8) | p as u64,
            );
            let agg = runner
                .run(example2(setting, n, p, seed)?, PipelineConfig::with_k(None))?
                .aggregates;
            row.push(fmt_opt(agg.freq_k_correct, 2));
        }
        t5.push(row);
        for k in 2..=4usize {
            let mut sums = Vec::new();
            for (n, p) in forced_grid.cells() {
                let seed = cell_seed(
                    runner.opts.seed,
                    (2 << 32)
                        | (1 << 31)
                        | ((k as u64) << 28)
                        | ((setting as u64) << 24)
                        | ((n as u64) << 8)
                        | p as u64,
                );
                let pipeline = PipelineConfig {
                    screening: Some(SearchConfig::default()),
                    ..PipelineConfig::with_k(Some(k))
                };
                sums.push(runner.run(example2(setting, n, p, seed)?, pipeline)?.aggregates);
            }
            let ks = k.to_string();
            let row = |keys: &[&str], f: &dyn Fn(&McAggregates) -> String| {
                let mut r: Vec<String> = keys.iter().map(|k| k.to_string()).collect();
                r.extend(sums.iter().map(f));
                r
            };
            t6.push(row(&[&s, &ks], &|a| fmt_opt(a.mean_abs_err, 3)));
            t7.push(row(&[&s, &ks, "1"], &|a| fmt_opt(a.mean_d_err.0, 3)));
            t7.push(row(&[&s, &ks, "2"], &|a| fmt_opt(a.mean_d_err.1, 3)));
            t8.push(row(&[&s, &ks], &|a| fmt_opt(a.freq_selected_true, 2)));
        }
    }
    Ok(vec![t5, t6, t7, t8])
}

fn example3_tables(runner: &mut Runner) -> Result<Vec<Table>> {
    let grid = Grid::new(runner.opts.scale, &[200, 1000], &[20, 40, 100]);
    let mut t9 = Table::new(
        "table9_abs_err",
        "mean |r_hat - r0|, k0 known",
        grid.header(&["setting"]),
    );
    let mut t10 = Table::new(
        "table10_d_err",
        "mean D(Q_i, A_i), k0 known",
        grid.header(&["setting", "regime"]),
    );
    for setting in 1..=3u8 {
        let mut sums = Vec::new();
        for (n, p) in grid.cells() {
            let seed = cell_seed(
                runner.opts.seed,
                (3 << 32) | ((setting as u64) << 24) | ((n as u64) << 8) | p as u64,
            );
            sums.push(
                runner
                    .run(example3(setting, n, p, seed)?, PipelineConfig::with_k(Some(1)))?
                    .aggregates,
            );
        }
        let s = format!("setting{setting}");
        let mut r9 = vec![s.clone()];
        r9.extend(sums.iter().map(|a| fmt_opt(a.mean_abs_err, 3)));
        t9.push(r9);
        for regime in 1..=2 {
            let mut r = vec![s.clone(), regime.to_string()];
            r.extend(sums.iter().map(|a| {
                fmt_opt(
                    if regime == 1 {
                        a.mean_d_err.0
                    } else {
                        a.mean_d_err.1
                    },
                    3,
                )
            }));
            t10.push(r);
        }
    }
    Ok(vec![t9, t10])
}

/// Distances of the Example 4 design.
pub const EXAMPLE4_DISTANCES: [f64; 6] = [1.0, 0.7, 0.3, 0.2, 0.1, 0.0];

fn example4_tables(runner: &mut Runner) -> Result<Vec<Table>> {
    let grid = Grid::new(runner.opts.scale, &[200, 1000], &[20, 40, 100]);
    let mut load = Table::new(
        "table10b_d_err",
        "mean D(Q_i, A_i), k0 known",
        grid.header(&["d", "regime"]),
    );
    let mut var = Table::new(
        "table11_d_between",
        "mean (sd) of D(Q_1, Q_2)",
        grid.header(&["d"]),
    );
    let mut r0 = Table::new(
        "table12_abs_err",
        "mean |r_hat - r0|, k0 known",
        grid.header(&["d"]),
    );
    for (di, &d) in EXAMPLE4_DISTANCES.iter().enumerate() {
        let mut sums = Vec::new();
        for (n, p) in grid.cells() {
            let seed = cell_seed(
                runner.opts.seed,
                (4 << 32) | ((di as u64) << 24) | ((n as u64) << 8) | p as u64,
            );
            sums.push(
                runner
                    .run(example4(d, n, p, seed)?, PipelineConfig::with_k(Some(1)))?
                    .aggregates,
            );
        }
        let ds = format!("{d}");
        for regime in 1..=2 {
            let mut r = vec![ds.clone(), regime.to_string()];
            r.extend(sums.iter().map(|a| {
                fmt_opt(
                    if regime == 1 {
                        a.mean_d_err.0
                    } else {
                        a.mean_d_err.1
                    },
                    3,
                )
            }));
            load.push(r);
        }
        let mut rv = vec![ds.clone()];
        rv.extend(sums.iter().map(|a| pair(a.mean_d_between, a.sd_d_between)));
        var.push(rv);
        let mut rr = vec![ds];
        rr.extend(sums.iter().map(|a| fmt_opt(a.mean_abs_err, 3)));
        r0.push(rr);
    }
    Ok(vec![load, var, r0])
}
