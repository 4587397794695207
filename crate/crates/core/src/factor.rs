//! Nonparametric factor regression data and PCA factor prediction.
//!
//! Data follow `X = A Z + W`, `Y = f*(Z) + ε`. Latent factors are predicted
//! linearly, `Ẑ = B̂ X`, with `B̂` taken from the top-`r` SVD of an
//! auxiliary design matrix.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, top_svd};
use crate::rng::{derive_seed, fold_assignment, rng_from_seed};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentLaw {
    /// iid Uniform(0, 1) entries.
    Uniform01,
    /// Uniform(0, 1) draws, centered and whitened so the sample second moment
    /// `(1/n) ZᵀZ` is exactly `I_r`. Factor recovery is only identifiable up to
    /// an orthogonal map under this normalization.
    WhitenedUniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegressionFn {
    /// `2 sin(3π z₁) + 3|z₁ - 0.5| - exp(z₂² - z₃²)`; needs `r = 3`.
    PaperFStar,
    Linear { beta: Vec<f64> },
    Zero,
}

impl RegressionFn {
    pub fn eval(&self, z: &[f64]) -> f64 {
        match self {
            RegressionFn::PaperFStar => {
                2.0 * (3.0 * PI * z[0]).sin() + 3.0 * (z[0] - 0.5).abs() - (z[1] * z[1] - z[2] * z[2]).exp()
            }
            RegressionFn::Linear { beta } => linalg::dot(beta, z),
            RegressionFn::Zero => 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorConfig {
    pub n: usize,
    pub p: usize,
    pub r: usize,
    /// Multiplies the loading matrix; controls the signal-to-noise ratio.
    #[serde(default = "one")]
    pub loading_scale: f64,
    /// Standard deviations of the Normal columns generating each loading row.
    pub loading_col_sd: Vec<f64>,
    pub noise_w_sd: f64,
    pub noise_eps_sd: f64,
    #[serde(default = "default_law")]
    pub latent_law: LatentLaw,
    pub regression_fn: RegressionFn,
}

fn one() -> f64 {
    1.0
}

fn default_law() -> LatentLaw {
    LatentLaw::Uniform01
}

impl FactorConfig {
    /// The simulation design: loading columns with variances (10, 5.5, 1),
    /// `W ~ N(0, 1.5²)`, `ε ~ N(0, 0.8²)`, Uniform(0,1) factors.
    pub fn reference_design(n: usize, p: usize) -> Self {
        FactorConfig {
            n,
            p,
            r: 3,
            loading_scale: 1.0,
            loading_col_sd: vec![10f64.sqrt(), 5.5f64.sqrt(), 1.0],
            noise_w_sd: 1.5,
            noise_eps_sd: 0.8,
            latent_law: LatentLaw::Uniform01,
            regression_fn: RegressionFn::PaperFStar,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 || self.r == 0 {
            return Err(Error::contract("n, p and r must be at least 1"));
        }
        if self.r > self.p {
            return Err(Error::contract(format!("r = {} exceeds p = {}", self.r, self.p)));
        }
        check_dim("loading column SDs", self.r, self.loading_col_sd.len())?;
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !self.loading_col_sd.iter().all(|&v| positive(v))
            || !positive(self.noise_w_sd)
            || !positive(self.noise_eps_sd)
            || !positive(self.loading_scale)
        {
            return Err(Error::contract("all scales and standard deviations must be positive"));
        }
        match &self.regression_fn {
            RegressionFn::PaperFStar if self.r != 3 => {
                Err(Error::contract("the reference regression function needs r = 3"))
            }
            RegressionFn::Linear { beta } => check_dim("linear regression coefficients", self.r, beta.len()),
            _ => Ok(()),
        }
    }
}

/// One draw from the factor model.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub y: Vec<f64>,
    /// The loading matrix `A` (p × r) used for this draw, scale included.
    pub loading: DMatrix<f64>,
}

const STREAM_LOADING: u64 = 0x4c4f_4144;
const STREAM_SAMPLE: u64 = 0x5341_4d50;

/// Draw a loading matrix, rows iid `N(0, diag(sd²))`, times `loading_scale`.
pub fn draw_loading(config: &FactorConfig, seed: u64) -> Result<DMatrix<f64>> {
    config.validate()?;
    let mut rng = rng_from_seed(seed);
    let mut a = DMatrix::zeros(config.p, config.r);
    for i in 0..config.p {
        for k in 0..config.r {
            let g: f64 = rng.sample(StandardNormal);
            a[(i, k)] = config.loading_scale * config.loading_col_sd[k] * g;
        }
    }
    Ok(a)
}

/// Simulate `config.n` samples; the loading matrix is drawn from a stream
/// derived from `seed`.
pub fn simulate(config: &FactorConfig, seed: u64) -> Result<SampleSet> {
    let loading = draw_loading(config, derive_seed(seed, &[STREAM_LOADING]))?;
    simulate_with_loading(config, &loading, config.n, derive_seed(seed, &[STREAM_SAMPLE]))
}

/// Simulate `n` samples sharing a fixed loading matrix.
pub fn simulate_with_loading(config: &FactorConfig, loading: &DMatrix<f64>, n: usize, seed: u64) -> Result<SampleSet> {
    config.validate()?;
    if loading.shape() != (config.p, config.r) {
        return Err(Error::contract(format!(
            "loading is {:?}, expected {:?}",
            loading.shape(),
            (config.p, config.r)
        )));
    }
    if n == 0 {
        return Err(Error::contract("sample size must be positive"));
    }
    let mut rng = rng_from_seed(seed);
    let z = draw_latent(config, n, &mut rng)?;
    let mut x = &z * loading.transpose();
    // W is drawn row by row so the stream layout does not depend on storage order.
    for i in 0..n {
        for j in 0..config.p {
            let g: f64 = rng.sample(StandardNormal);
            x[(i, j)] += config.noise_w_sd * g;
        }
    }
    let y = (0..n)
        .map(|i| {
            let zi: Vec<f64> = z.row(i).iter().copied().collect();
            let e: f64 = rng.sample(StandardNormal);
            config.regression_fn.eval(&zi) + config.noise_eps_sd * e
        })
        .collect();
    Ok(SampleSet {
        x,
        z,
        y,
        loading: loading.clone(),
    })
}

fn draw_latent(config: &FactorConfig, n: usize, rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
    let mut z = DMatrix::zeros(n, config.r);
    for i in 0..n {
        for k in 0..config.r {
            z[(i, k)] = rng.random_range(0.0..1.0);
        }
    }
    match config.latent_law {
        LatentLaw::Uniform01 => Ok(z),
        LatentLaw::WhitenedUniform => whiten(&z),
    }
}

/// Center the columns and transform so that `(1/n) ZᵀZ = I`.
pub fn whiten(z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, r) = z.shape();
    if n <= r {
        return Err(Error::contract("whitening needs more rows than columns"));
    }
    let mut centered = z.clone();
    for k in 0..r {
        let mean = z.column(k).mean();
        centered.column_mut(k).add_scalar_mut(-mean);
    }
    let cov = centered.tr_mul(&centered) / n as f64;
    let (vals, vecs) = linalg::sorted_symmetric_eigen(cov)?;
    if vals[r - 1] <= 1e-14 * vals[0] {
        return Err(Error::degenerate("latent sample covariance is singular"));
    }
    let inv_root = &vecs
        * DMatrix::from_diagonal(&DVector::from_iterator(r, vals.iter().map(|v| 1.0 / v.sqrt())))
        * vecs.transpose();
    Ok(centered * inv_root)
}

/// Linear factor predictor `Ẑ = B̂ X` fitted by PCA.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaPredictor {
    /// r × p factor map.
    #[serde(with = "linalg::serde_rows")]
    pub b_hat: DMatrix<f64>,
    /// p × r loading estimate `√p V_r D_r`.
    #[serde(with = "linalg::serde_rows")]
    pub a_hat: DMatrix<f64>,
    /// Top-r singular values of `X' / √(n'p)`.
    pub singular_values: Vec<f64>,
    /// Column means subtracted before projecting, when fitted centered.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
}

impl PcaPredictor {
    pub fn rank(&self) -> usize {
        self.b_hat.nrows()
    }

    pub fn dim(&self) -> usize {
        self.b_hat.ncols()
    }
}

/// Fit `B̂ = D_r^{-1} V_rᵀ / √p` from the SVD of `X' / √(n'p)`.
pub fn fit_pca_predictor(x_aux: &DMatrix<f64>, r: usize) -> Result<PcaPredictor> {
    let (n, p) = x_aux.shape();
    if r == 0 || r > n.min(p) {
        return Err(Error::contract(format!("rank {r} is not in 1..=min({n}, {p})")));
    }
    let scale = ((n * p) as f64).sqrt();
    let svd = top_svd(x_aux, r)?;
    let d: Vec<f64> = svd.singular_values.iter().map(|s| s / scale).collect();
    if !(d[0] > 0.0) || d[r - 1] <= 1e-12 * d[0] {
        return Err(Error::degenerate(format!(
            "auxiliary design has rank below {r} (d_r = {:e}, d_1 = {:e})",
            d[r - 1],
            d[0]
        )));
    }
    let root_p = (p as f64).sqrt();
    let mut b_hat = DMatrix::zeros(r, p);
    let mut a_hat = DMatrix::zeros(p, r);
    for k in 0..r {
        let v = svd.v.column(k);
        b_hat.set_row(k, &(v.transpose() / (d[k] * root_p)));
        a_hat.set_column(k, &(v * (root_p * d[k])));
    }
    Ok(PcaPredictor {
        b_hat,
        a_hat,
        singular_values: d,
        center: None,
    })
}

/// As [`fit_pca_predictor`], but on column-centered `X'`; the stored means
/// are subtracted from every design passed to [`predict_factors`].
pub fn fit_pca_predictor_centered(x_aux: &DMatrix<f64>, r: usize) -> Result<PcaPredictor> {
    let means: Vec<f64> = x_aux.column_iter().map(|c| c.mean()).collect();
    let mut centered = x_aux.clone();
    for (j, m) in means.iter().enumerate() {
        centered.column_mut(j).add_scalar_mut(-m);
    }
    let mut pred = fit_pca_predictor(&centered, r)?;
    pred.center = Some(means);
    Ok(pred)
}

/// `X B̂ᵀ`, one predicted factor vector per row (after subtracting the
/// stored column means for a centered predictor).
pub fn predict_factors(pred: &PcaPredictor, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_dim("factor prediction columns", pred.dim(), x.ncols())?;
    match &pred.center {
        None => Ok(x * pred.b_hat.transpose()),
        Some(means) => {
            let mut xc = x.clone();
            for (j, m) in means.iter().enumerate() {
                xc.column_mut(j).add_scalar_mut(-m);
            }
            Ok(xc * pred.b_hat.transpose())
        }
    }
}

/// k-fold cross-fitting: rows of each fold are predicted by a PCA map fitted
/// on the remaining folds.
pub fn cross_fit_factors(x: &DMatrix<f64>, r: usize, k: usize, seed: u64) -> Result<DMatrix<f64>> {
    let (n, p) = x.shape();
    let folds = fold_assignment(n, k, seed)?;
    let mut out = DMatrix::zeros(n, r);
    for fold in &folds {
        let train = crate::rng::complement(n, fold);
        if train.len() < r || p < r {
            return Err(Error::contract(format!(
                "fold complement has {} rows, fewer than r = {r}",
                train.len()
            )));
        }
        let x_train = x.select_rows(&train);
        let pred = fit_pca_predictor(&x_train, r)?;
        let zf = predict_factors(&pred, &x.select_rows(fold))?;
        for (a, &i) in fold.iter().enumerate() {
            out.set_row(i, &zf.row(a));
        }
    }
    Ok(out)
}

/// Rank estimate `argmax_{j ≤ r_max} d_j / d_{j+1}`.
pub fn eigen_ratio_rank(x_aux: &DMatrix<f64>, r_max: usize) -> Result<usize> {
    let (n, p) = x_aux.shape();
    if r_max == 0 || r_max + 1 > n.min(p) {
        return Err(Error::contract(format!(
            "r_max = {r_max} must be in 1..min({n}, {p})"
        )));
    }
    let svd = top_svd(x_aux, r_max + 1)?;
    let d = &svd.singular_values;
    let mut best = (1, f64::NEG_INFINITY);
    for j in 0..r_max {
        let ratio = if d[j + 1] > 0.0 {
            d[j] / d[j + 1]
        } else if d[j] > 0.0 {
            f64::INFINITY
        } else {
            1.0
        };
        if ratio > best.1 {
            best = (j + 1, ratio);
        }
    }
    Ok(best.0)
}
