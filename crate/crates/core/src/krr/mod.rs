//! Kernel ridge regression.
//!
//! Coefficients use the scaling in which the Gram matrix is normalized,
//! `K_x = K / n`, and the fitted function is
//! `f̂(z) = n^{-1/2} Σᵢ αᵢ K(zᵢ, z)`. For squared loss the coefficients are
//! `α = n^{-1/2} (K_x + λI)^{-1} Y`, which is the textbook
//! `(K + nλI)^{-1} Y` rescaled by `√n`.

mod cv;
mod loss;
mod solver;

pub use cv::{cross_validate_gram, cross_validate_lambda, CvResult, CvRow};
pub use loss::LossSpec;
pub use solver::{fit_general, objective, GeneralFit, SolverOptions, SolverStatus};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::kernels::{cross_gram, gram, GramMatrix, KernelSpec, PointSet};
use crate::linalg;

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_finite() && lambda > 0.0 {
        Ok(())
    } else {
        Err(Error::contract(format!("lambda must be positive, got {lambda}")))
    }
}

fn check_normalized(g: &GramMatrix) -> Result<()> {
    if g.is_normalized() {
        Ok(())
    } else {
        Err(Error::contract("expected a 1/n-normalized Gram matrix"))
    }
}

/// Closed-form squared-loss coefficients from a normalized Gram matrix.
pub fn fit_squared(gram_norm: &GramMatrix, y: &[f64], lambda: f64) -> Result<Vec<f64>> {
    check_normalized(gram_norm)?;
    check_dim("responses", gram_norm.size(), y.len())?;
    check_lambda(lambda)?;
    LossSpec::Squared.check_responses(y)?;
    let alpha = solve_shifted(gram_norm.values(), y, lambda)?;
    Ok(alpha.iter().copied().collect())
}

/// `n^{-1/2} (K_x + λI)^{-1} y` for a normalized Gram block.
pub(crate) fn solve_shifted(k_norm: &DMatrix<f64>, y: &[f64], lambda: f64) -> Result<DVector<f64>> {
    let n = k_norm.nrows();
    let mut system = k_norm.clone();
    for i in 0..n {
        system[(i, i)] += lambda;
    }
    let rhs = DVector::from_column_slice(y) / (n as f64).sqrt();
    linalg::spd_solve(&system, &rhs)
}

/// Fitted values at the training inputs, `√n K_x α`.
pub fn fitted_values(gram_norm: &GramMatrix, alpha: &[f64]) -> Result<Vec<f64>> {
    check_normalized(gram_norm)?;
    check_dim("coefficients", gram_norm.size(), alpha.len())?;
    let n = alpha.len() as f64;
    let f = gram_norm.values() * DVector::from_column_slice(alpha) * n.sqrt();
    Ok(f.iter().copied().collect())
}

/// A fitted kernel ridge regressor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KrrModel {
    pub kernel: KernelSpec,
    pub loss: LossSpec,
    pub lambda: f64,
    pub alpha: Vec<f64>,
    /// Training feature vectors, one row per sample.
    pub inputs: PointSet,
}

impl KrrModel {
    /// Assemble a model from precomputed coefficients.
    pub fn from_parts(
        inputs: PointSet,
        alpha: Vec<f64>,
        lambda: f64,
        kernel: KernelSpec,
        loss: LossSpec,
    ) -> Result<Self> {
        check_dim("coefficients", inputs.len(), alpha.len())?;
        check_lambda(lambda)?;
        kernel.validate()?;
        loss.validate()?;
        Ok(KrrModel {
            kernel,
            loss,
            lambda,
            alpha,
            inputs,
        })
    }

    /// Fit on `inputs`/`y`. Squared loss uses the closed form; other losses
    /// use the iterative solver with `opts`.
    pub fn fit(
        inputs: PointSet,
        y: &[f64],
        kernel: KernelSpec,
        loss: LossSpec,
        lambda: f64,
        opts: &SolverOptions,
    ) -> Result<Self> {
        kernel.validate()?;
        loss.validate()?;
        let g = gram(&kernel, &inputs, true);
        let alpha = match loss {
            LossSpec::Squared => fit_squared(&g, y, lambda)?,
            _ => fit_general(&g, y, lambda, loss, opts)?.alpha,
        };
        KrrModel::from_parts(inputs, alpha, lambda, kernel, loss)
    }

    pub fn n(&self) -> usize {
        self.alpha.len()
    }

    /// `n^{-1/2} Σᵢ αᵢ K(inputᵢ, x)` for each row `x` of `newpts`.
    pub fn predict(&self, newpts: &PointSet) -> Result<Vec<f64>> {
        check_dim("prediction inputs", self.inputs.dim(), newpts.dim())?;
        let cross = cross_gram(&self.kernel, newpts, &self.inputs)?;
        Ok(predict_from_cross(&cross, &self.alpha))
    }

    /// RKHS norm `‖f̂‖²_K = αᵀ K_x α`.
    pub fn rkhs_norm_sq(&self) -> f64 {
        let g = gram(&self.kernel, &self.inputs, true);
        let a = DVector::from_column_slice(&self.alpha);
        a.dot(&(g.values() * &a))
    }
}

/// Predictions from a raw `m × n` cross-kernel block (new points by training points).
pub(crate) fn predict_from_cross(cross: &DMatrix<f64>, alpha: &[f64]) -> Vec<f64> {
    let n = alpha.len() as f64;
    let f = cross * DVector::from_column_slice(alpha) / n.sqrt();
    f.iter().copied().collect()
}
