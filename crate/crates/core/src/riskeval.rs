//! Prediction error, latent error and factor-recovery metrics.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::kernels::{displacement_unchecked, KernelSpec};
use crate::linalg;

/// `(1/m) Σ (yᵢ − ŷᵢ)²`.
pub fn empirical_mse(predictions: &[f64], y: &[f64]) -> Result<f64> {
    check_dim("predictions", y.len(), predictions.len())?;
    if y.is_empty() {
        return Err(Error::contract("mean squared error of an empty sample"));
    }
    Ok(y.iter().zip(predictions).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64)
}

/// Mean kernel displacement `(1/m) Σ ‖K_{zᵢ} − K_{ẑᵢ}‖²_K` over matching rows.
pub fn latent_error(kernel: &KernelSpec, z: &DMatrix<f64>, zhat: &DMatrix<f64>) -> Result<f64> {
    check_shape(z, zhat)?;
    kernel.validate()?;
    let m = z.nrows();
    if m == 0 {
        return Err(Error::contract("latent error of an empty sample"));
    }
    let total: f64 = (0..m)
        .map(|i| {
            let a: Vec<f64> = z.row(i).iter().copied().collect();
            let b: Vec<f64> = zhat.row(i).iter().copied().collect();
            displacement_unchecked(kernel, &a, &b)
        })
        .sum();
    Ok(total / m as f64)
}

fn check_shape(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    check_dim("rows", a.nrows(), b.nrows())?;
    check_dim("columns", a.ncols(), b.ncols())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Alignment {
    /// Orthogonal r × r map; `Z Qᵀ` is the rotation of `Z` closest to `Ẑ`.
    pub q: DMatrix<f64>,
    /// `‖Ẑ − Z Qᵀ‖²_F / m`
    pub aligned_mse: f64,
}

/// Orthogonal Procrustes: `Q = U Vᵀ` from the SVD `ẐᵀZ = U Σ Vᵀ`.
pub fn procrustes_align(zhat: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<Alignment> {
    check_shape(zhat, z)?;
    let (m, r) = z.shape();
    if m < r || r == 0 {
        return Err(Error::contract(format!("need at least r = {r} rows, got {m}")));
    }
    let cross = zhat.tr_mul(z);
    let svd = cross.try_svd(true, true, f64::EPSILON, 0).ok_or_else(|| Error::numeric("Procrustes SVD did not converge"))?;
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let q = u * vt;
    let resid = zhat - z * q.transpose();
    Ok(Alignment {
        aligned_mse: resid.norm_squared() / m as f64,
        q,
    })
}

/// Noise covariance for [`snr`]: a multiple of the identity or a full matrix.
#[derive(Clone, Debug, PartialEq)]
pub enum NoiseCov {
    /// `σ² I`, given as the variance.
    Isotropic(f64),
    Full(DMatrix<f64>),
}

/// `λ_r(A Σ_Z Aᵀ) / ‖Σ_W‖_op`.
///
/// The nonzero spectrum of `A Σ_Z Aᵀ` equals that of the r × r matrix
/// `Σ_Z^{1/2} AᵀA Σ_Z^{1/2}`, so only an r × r eigenproblem is solved.
pub fn snr(a: &DMatrix<f64>, sigma_z: &DMatrix<f64>, sigma_w: &NoiseCov) -> Result<f64> {
    let (p, r) = a.shape();
    if r == 0 || p < r {
        return Err(Error::contract(format!("loading must be p × r with p ≥ r ≥ 1, got {p} × {r}")));
    }
    if sigma_z.shape() != (r, r) {
        return Err(Error::contract("latent covariance must be r × r"));
    }
    let noise_op = match sigma_w {
        NoiseCov::Isotropic(v) => {
            if !(v.is_finite() && *v >= 0.0) {
                return Err(Error::contract("noise variance must be nonnegative"));
            }
            *v
        }
        NoiseCov::Full(w) => {
            if w.shape() != (p, p) {
                return Err(Error::contract("noise covariance must be p × p"));
            }
            let (vals, _) = linalg::sorted_symmetric_eigen(w.clone())?;
            vals.iter().fold(0.0f64, |m, v| m.max(v.abs()))
        }
    };
    let root = linalg::psd_sqrt(sigma_z)?;
    let inner = &root * a.tr_mul(a) * &root;
    let (vals, _) = linalg::sorted_symmetric_eigen((&inner + inner.transpose()) * 0.5)?;
    let lambda_r = vals[r - 1];
    if !(lambda_r > 0.0) {
        return Err(Error::degenerate("λ_r(A Σ_Z Aᵀ) is not positive"));
    }
    if !(noise_op > 0.0) {
        return Err(Error::degenerate("noise covariance is zero"));
    }
    Ok(lambda_r / noise_op)
}

/// Flat per-predictor evaluation record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub mse: f64,
    /// `mse − σ²_ε` when the noise variance is known, otherwise `mse`.
    pub excess_estimate: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub latent_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub aligned_factor_mse: Option<f64>,
}

impl RiskReport {
    pub fn new(predictions: &[f64], y: &[f64], noise_var: Option<f64>) -> Result<Self> {
        let mse = empirical_mse(predictions, y)?;
        Ok(RiskReport {
            mse,
            excess_estimate: mse - noise_var.unwrap_or(0.0),
            latent_error: None,
            aligned_factor_mse: None,
        })
    }

    /// Attach latent and Procrustes metrics for predicted factors.
    pub fn with_factors(mut self, kernel: &KernelSpec, z: &DMatrix<f64>, zhat: &DMatrix<f64>) -> Result<Self> {
        self.latent_error = Some(latent_error(kernel, z, zhat)?);
        self.aligned_factor_mse = Some(procrustes_align(zhat, z)?.aligned_mse);
        Ok(self)
    }
}
