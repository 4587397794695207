//! Monte Carlo comparison of latent-feature kernel regressors.
//!
//! Each replication draws one loading matrix and, sharing it, a training
//! sample, an independent auxiliary design `X'` for the factor map, and a
//! test sample. Every method picks λ by k-fold cross-validation on its own
//! training features and is scored by test mean squared error.

use std::fmt;
use std::io::Write;
use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_dim, Error, Result};
use crate::factor::{draw_loading, fit_pca_predictor, fit_pca_predictor_centered, predict_factors, simulate_with_loading, FactorConfig, SampleSet};
use crate::kernels::{cross_gram, gram, median_bandwidth, KernelSpec, PointSet};
use crate::krr::{cross_validate_gram, predict_from_cross, solve_shifted, LossSpec, SolverOptions};
use crate::riskeval::empirical_mse;
use crate::rng::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    /// KRR on factors predicted by a PCA map fitted on the auxiliary design.
    #[serde(rename = "KRR_Zhat_aux")]
    KrrZhatAux,
    /// KRR on factors predicted by a PCA map fitted on the training design.
    #[serde(rename = "KRR_Zhat_insample")]
    KrrZhatInsample,
    /// Oracle KRR on the true factors.
    #[serde(rename = "KRR_Z")]
    KrrZ,
    /// KRR on the raw high-dimensional features.
    #[serde(rename = "KRR_X")]
    KrrX,
    /// Least squares with intercept on the true factors.
    #[serde(rename = "LR_Z")]
    LrZ,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::KrrZhatAux, Method::KrrZhatInsample, Method::KrrZ, Method::KrrX, Method::LrZ];

    pub fn name(self) -> &'static str {
        match self {
            Method::KrrZhatAux => "KRR_Zhat_aux",
            Method::KrrZhatInsample => "KRR_Zhat_insample",
            Method::KrrZ => "KRR_Z",
            Method::KrrX => "KRR_X",
            Method::LrZ => "LR_Z",
        }
    }

    fn tag(self) -> u64 {
        self as u64 + 1
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelPolicy {
    /// Gaussian kernel with bandwidth equal to the median pairwise distance
    /// of the training features, recomputed per fit.
    #[default]
    GaussianMedian,
}

/// The quantity varied across the experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sweep {
    NGrid(Vec<usize>),
    PGrid(Vec<usize>),
    /// Values of the loading multiplier.
    AlphaGrid(Vec<f64>),
}

impl Sweep {
    pub fn len(&self) -> usize {
        match self {
            Sweep::NGrid(v) | Sweep::PGrid(v) => v.len(),
            Sweep::AlphaGrid(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self, i: usize) -> f64 {
        match self {
            Sweep::NGrid(v) | Sweep::PGrid(v) => v[i] as f64,
            Sweep::AlphaGrid(v) => v[i],
        }
    }

    fn seed_tag(&self, i: usize) -> u64 {
        match self {
            Sweep::NGrid(v) | Sweep::PGrid(v) => v[i] as u64,
            Sweep::AlphaGrid(v) => v[i].to_bits(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Sweep::NGrid(_) => "n",
            Sweep::PGrid(_) => "p",
            Sweep::AlphaGrid(_) => "alpha",
        }
    }
}

pub fn default_lambda_grid() -> Vec<f64> {
    (0..10).map(|i| 10f64.powf(-5.0 + 5.0 * i as f64 / 9.0)).collect()
}

fn default_folds() -> usize {
    3
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub factor: FactorConfig,
    #[serde(default)]
    pub kernel_policy: KernelPolicy,
    #[serde(default = "default_lambda_grid")]
    pub lambda_grid: Vec<f64>,
    #[serde(default = "default_folds")]
    pub cv_folds: usize,
    /// Center the design columns before PCA (on by default).
    #[serde(default = "yes")]
    pub pca_centering: bool,
    pub methods: Vec<Method>,
    pub replications: usize,
    /// Test sample size; defaults to the training size.
    #[serde(default)]
    pub test_size: Option<usize>,
    /// Auxiliary design size; defaults to the training size.
    #[serde(default)]
    pub aux_size: Option<usize>,
    pub master_seed: u64,
    pub sweep: Sweep,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::contract("replications must be at least 1"));
        }
        if self.methods.is_empty() {
            return Err(Error::contract("no methods requested"));
        }
        if self.sweep.is_empty() {
            return Err(Error::contract("sweep grid is empty"));
        }
        if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::contract("lambda grid must be non-empty and positive"));
        }
        if self.cv_folds < 2 {
            return Err(Error::contract("cv_folds must be at least 2"));
        }
        if matches!(self.test_size, Some(0)) || matches!(self.aux_size, Some(0)) {
            return Err(Error::contract("test and auxiliary sizes must be positive"));
        }
        for i in 0..self.sweep.len() {
            self.factor_at(i)?.validate()?;
        }
        Ok(())
    }

    /// Factor configuration at sweep position `i`.
    pub fn factor_at(&self, i: usize) -> Result<FactorConfig> {
        if i >= self.sweep.len() {
            return Err(Error::contract(format!("sweep index {i} out of range")));
        }
        let mut f = self.factor.clone();
        match &self.sweep {
            Sweep::NGrid(v) => f.n = v[i],
            Sweep::PGrid(v) => f.p = v[i],
            Sweep::AlphaGrid(v) => f.loading_scale = v[i],
        }
        Ok(f)
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub method: Method,
    pub error: f64,
    pub runtime_s: f64,
    /// λ chosen by cross-validation (absent for least squares).
    pub lambda: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub seed: u64,
    pub outcomes: Vec<MethodOutcome>,
}

impl ReplicationResult {
    pub fn error(&self, m: Method) -> Option<f64> {
        self.outcomes.iter().find(|o| o.method == m).map(|o| o.error)
    }
}

const STREAM_LOADING: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_AUX: u64 = 3;
const STREAM_TEST: u64 = 4;
const STREAM_CV: u64 = 5;

pub fn replication_seed(config: &ExperimentConfig, sweep_index: usize, rep_index: usize) -> u64 {
    derive_seed(config.master_seed, &[config.sweep.seed_tag(sweep_index), rep_index as u64])
}

/// Run every requested method on one freshly simulated replication.
pub fn run_replication(config: &ExperimentConfig, sweep_index: usize, rep_index: usize) -> Result<ReplicationResult> {
    let factor = config.factor_at(sweep_index)?;
    factor.validate()?;
    let seed = replication_seed(config, sweep_index, rep_index);
    let n = factor.n;
    let m = config.test_size.unwrap_or(n);
    let loading = draw_loading(&factor, derive_seed(seed, &[STREAM_LOADING]))?;
    let train = simulate_with_loading(&factor, &loading, n, derive_seed(seed, &[STREAM_TRAIN]))?;
    let test = simulate_with_loading(&factor, &loading, m, derive_seed(seed, &[STREAM_TEST]))?;
    let aux = if config.methods.contains(&Method::KrrZhatAux) {
        let n_aux = config.aux_size.unwrap_or(n);
        Some(simulate_with_loading(&factor, &loading, n_aux, derive_seed(seed, &[STREAM_AUX]))?)
    } else {
        None
    };

    let mut outcomes = Vec::with_capacity(config.methods.len());
    for &method in &config.methods {
        let start = Instant::now();
        let cv_seed = derive_seed(seed, &[STREAM_CV, method.tag()]);
        let (error, lambda) = run_method(config, &factor, method, &train, &test, aux.as_ref(), cv_seed).map_err(|e| {
            Error::Replication {
                method: method.name().to_string(),
                seed,
                source: Box::new(e),
            }
        })?;
        outcomes.push(MethodOutcome {
            method,
            error,
            runtime_s: start.elapsed().as_secs_f64(),
            lambda,
        });
    }
    Ok(ReplicationResult { seed, outcomes })
}

fn run_method(
    config: &ExperimentConfig,
    factor: &FactorConfig,
    method: Method,
    train: &SampleSet,
    test: &SampleSet,
    aux: Option<&SampleSet>,
    cv_seed: u64,
) -> Result<(f64, Option<f64>)> {
    let (f_train, f_test) = match method {
        Method::KrrZhatAux => {
            let aux = aux.ok_or_else(|| Error::contract("auxiliary sample missing"))?;
            let pred = fit_pca(config, &aux.x, factor.r)?;
            (predict_factors(&pred, &train.x)?, predict_factors(&pred, &test.x)?)
        }
        Method::KrrZhatInsample => {
            let pred = fit_pca(config, &train.x, factor.r)?;
            (predict_factors(&pred, &train.x)?, predict_factors(&pred, &test.x)?)
        }
        Method::KrrZ => (train.z.clone(), test.z.clone()),
        Method::KrrX => (train.x.clone(), test.x.clone()),
        Method::LrZ => {
            let pred = ols_predict(&train.z, &train.y, &test.z)?;
            return Ok((empirical_mse(&pred, &test.y)?, None));
        }
    };
    let (pred, lambda) = krr_cv_predict(config, &f_train, &train.y, &f_test, cv_seed)?;
    Ok((empirical_mse(&pred, &test.y)?, Some(lambda)))
}

fn fit_pca(config: &ExperimentConfig, x: &DMatrix<f64>, r: usize) -> Result<crate::factor::PcaPredictor> {
    if config.pca_centering {
        fit_pca_predictor_centered(x, r)
    } else {
        fit_pca_predictor(x, r)
    }
}

/// Fit KRR with the configured kernel policy, λ chosen by CV, and predict.
fn krr_cv_predict(
    config: &ExperimentConfig,
    x_train: &DMatrix<f64>,
    y: &[f64],
    x_test: &DMatrix<f64>,
    cv_seed: u64,
) -> Result<(Vec<f64>, f64)> {
    let train = PointSet::from_matrix(x_train)?;
    let test = PointSet::from_matrix(x_test)?;
    let kernel = match config.kernel_policy {
        KernelPolicy::GaussianMedian => KernelSpec::gaussian(median_bandwidth(&train)?)?,
    };
    let raw = gram(&kernel, &train, false);
    let cv = cross_validate_gram(
        &raw,
        y,
        LossSpec::Squared,
        &config.lambda_grid,
        config.cv_folds,
        cv_seed,
        &SolverOptions::default(),
    )?;
    let k_norm = raw.into_values() / train.len() as f64;
    let alpha = solve_shifted(&k_norm, y, cv.best_lambda)?;
    let cross = cross_gram(&kernel, &test, &train)?;
    Ok((predict_from_cross(&cross, alpha.as_slice()), cv.best_lambda))
}

#[derive(Clone, Debug, PartialEq)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    /// True when `ZᵀZ` was singular and a `1e-10 · trace` ridge was added.
    pub jittered: bool,
}

/// Least-squares coefficients (no intercept) from the normal equations.
pub fn ols_fit(z: &DMatrix<f64>, y: &[f64]) -> Result<OlsFit> {
    let (n, r) = z.shape();
    check_dim("responses", n, y.len())?;
    if n <= r {
        return Err(Error::contract(format!("least squares needs n > r, got n = {n}, r = {r}")));
    }
    let mut gram = z.tr_mul(z);
    let rhs = z.tr_mul(&DVector::from_column_slice(y));
    let mut jittered = false;
    let chol = match Cholesky::new(gram.clone()) {
        Some(c) => c,
        None => {
            jittered = true;
            let jitter = 1e-10 * gram.trace().max(f64::MIN_POSITIVE);
            for i in 0..r {
                gram[(i, i)] += jitter;
            }
            Cholesky::new(gram).ok_or_else(|| Error::numeric("normal equations are not positive definite"))?
        }
    };
    Ok(OlsFit {
        coefficients: chol.solve(&rhs).iter().copied().collect(),
        jittered,
    })
}

/// Least squares with intercept, fitted after centering on the training means.
fn ols_predict(z: &DMatrix<f64>, y: &[f64], z_new: &DMatrix<f64>) -> Result<Vec<f64>> {
    let (n, r) = z.shape();
    let means: Vec<f64> = (0..r).map(|k| z.column(k).mean()).collect();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let zc = DMatrix::from_fn(n, r, |i, k| z[(i, k)] - means[k]);
    let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    let beta = ols_fit(&zc, &yc)?.coefficients;
    Ok((0..z_new.nrows())
        .map(|i| y_mean + (0..r).map(|k| (z_new[(i, k)] - means[k]) * beta[k]).sum::<f64>())
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub sweep: f64,
    pub method: Method,
    pub mean: f64,
    /// Sample standard deviation across replications.
    pub sd: f64,
    pub runtime_s: f64,
    /// Per-replication test errors in replication order.
    pub errors: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub master_seed: u64,
    pub replications: usize,
    pub sweep: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    pub provenance: Provenance,
    pub config: ExperimentConfig,
}

impl ExperimentReport {
    pub fn row(&self, sweep_value: f64, method: Method) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.sweep == sweep_value && r.method == method)
    }

    /// CSV with header `sweep,method,mean,sd,runtime_s`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["sweep", "method", "mean", "sd", "runtime_s"])?;
        for r in &self.rows {
            w.write_record([
                r.sweep.to_string(),
                r.method.name().to_string(),
                r.mean.to_string(),
                r.sd.to_string(),
                r.runtime_s.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, out: W) -> serde_json::Result<()> {
        serde_json::to_writer_pretty(out, self)
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let k = v.len() as f64;
    let mean = v.iter().sum::<f64>() / k;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

/// Run all replications at every sweep value and aggregate per method.
///
/// Replications run in parallel; results are collected in index order so
/// the report does not depend on scheduling.
pub fn run_sweep(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let mut rows = Vec::new();
    for s in 0..config.sweep.len() {
        let reps: Vec<ReplicationResult> = (0..config.replications)
            .into_par_iter()
            .map(|rep| run_replication(config, s, rep))
            .collect::<Result<_>>()?;
        for (mi, &method) in config.methods.iter().enumerate() {
            let errors: Vec<f64> = reps.iter().map(|r| r.outcomes[mi].error).collect();
            let times: Vec<f64> = reps.iter().map(|r| r.outcomes[mi].runtime_s).collect();
            let (mean, sd) = mean_sd(&errors);
            rows.push(ReportRow {
                sweep: config.sweep.value(s),
                method,
                mean,
                sd,
                runtime_s: mean_sd(&times).0,
                errors,
            });
        }
    }
    Ok(ExperimentReport {
        rows,
        provenance: Provenance {
            config_hash: config.hash(),
            master_seed: config.master_seed,
            replications: config.replications,
            sweep: config.sweep.kind().to_string(),
        },
        config: config.clone(),
    })
}
