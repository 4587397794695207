//! Iterative fitting for general convex losses.
//!
//! The objective in representer coordinates is
//! `J(α) = (1/n) Σⱼ L(yⱼ, fⱼ) + λ αᵀ K_x α` with `f = √n K_x α`.
//! Its gradient factors as `K_x v` with `v = L'(y, f)/√n + 2λα`. Each step
//! moves along `d = -½ (K_x + λI)^{-1} v`, which is a descent direction
//! (`∇Jᵀd = -½ vᵀ K_x (K_x + λI)^{-1} v ≤ 0`) and is exactly the Newton step
//! for squared loss. Step lengths come from Armijo backtracking by halving.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{check_lambda, check_normalized, LossSpec};
use crate::error::{check_dim, Result};
use crate::kernels::GramMatrix;
use crate::linalg;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iterations: usize,
    pub initial_step: f64,
    /// Stop once the relative objective decrease falls below this.
    pub tolerance: f64,
    pub armijo: f64,
    pub max_halvings: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iterations: 5000,
            initial_step: 1.0,
            tolerance: 1e-10,
            armijo: 1e-4,
            max_halvings: 60,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolverStatus {
    Converged,
    /// Iteration budget exhausted; the best iterate is returned.
    MaxIterations,
    /// No step length gave sufficient decrease (typical at a kink of a
    /// nonsmooth loss); the best iterate is returned.
    Stalled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneralFit {
    pub alpha: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub status: SolverStatus,
    /// Objective at α = 0 followed by the objective after each accepted step.
    pub history: Vec<f64>,
}

/// `J(α)` for a normalized Gram matrix.
pub fn objective(gram_norm: &GramMatrix, y: &[f64], lambda: f64, loss: LossSpec, alpha: &[f64]) -> Result<f64> {
    check_normalized(gram_norm)?;
    check_dim("responses", gram_norm.size(), y.len())?;
    check_dim("coefficients", gram_norm.size(), alpha.len())?;
    let a = DVector::from_column_slice(alpha);
    let ka = gram_norm.values() * &a;
    Ok(objective_from_parts(y, lambda, loss, &a, &ka))
}

fn objective_from_parts(y: &[f64], lambda: f64, loss: LossSpec, alpha: &DVector<f64>, k_alpha: &DVector<f64>) -> f64 {
    let n = y.len() as f64;
    let root = n.sqrt();
    let data: f64 = y
        .iter()
        .zip(k_alpha.iter())
        .map(|(&yi, &ka)| loss.value(yi, root * ka))
        .sum::<f64>()
        / n;
    data + lambda * alpha.dot(k_alpha)
}

pub fn fit_general(
    gram_norm: &GramMatrix,
    y: &[f64],
    lambda: f64,
    loss: LossSpec,
    opts: &SolverOptions,
) -> Result<GeneralFit> {
    check_normalized(gram_norm)?;
    check_dim("responses", gram_norm.size(), y.len())?;
    check_lambda(lambda)?;
    loss.validate()?;
    loss.check_responses(y)?;

    let k = gram_norm.values();
    let n = y.len();
    let root = (n as f64).sqrt();
    let mut shifted = k.clone();
    for i in 0..n {
        shifted[(i, i)] += lambda;
    }
    let precond = linalg::spd_factor(&shifted)?;

    let mut alpha = DVector::zeros(n);
    let mut k_alpha = DVector::zeros(n);
    let mut current = objective_from_parts(y, lambda, loss, &alpha, &k_alpha);
    let mut history = vec![current];
    let mut status = SolverStatus::MaxIterations;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        let v = DVector::from_iterator(
            n,
            (0..n).map(|j| loss.derivative(y[j], root * k_alpha[j]) / root + 2.0 * lambda * alpha[j]),
        );
        let direction = precond.solve(&v) * -0.5;
        let k_dir = k * &direction;
        // ∇J·d = (K v)·d = v·(K d)
        let slope = v.dot(&k_dir);
        if !(slope < 0.0) {
            status = SolverStatus::Converged;
            break;
        }
        let mut step = opts.initial_step;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial_alpha = &alpha + &direction * step;
            let trial_k = &k_alpha + &k_dir * step;
            let trial = objective_from_parts(y, lambda, loss, &trial_alpha, &trial_k);
            if trial.is_finite() && trial <= current + opts.armijo * step * slope {
                accepted = Some((trial_alpha, trial_k, trial));
                break;
            }
            step *= 0.5;
        }
        let Some((next_alpha, next_k, next)) = accepted else {
            status = SolverStatus::Stalled;
            break;
        };
        iterations += 1;
        let decrease = current - next;
        alpha = next_alpha;
        k_alpha = next_k;
        current = next;
        history.push(current);
        if decrease <= opts.tolerance * current.abs().max(f64::MIN_POSITIVE) {
            status = SolverStatus::Converged;
            break;
        }
    }

    Ok(GeneralFit {
        alpha: alpha.iter().copied().collect(),
        objective: current,
        iterations,
        status,
        history,
    })
}
