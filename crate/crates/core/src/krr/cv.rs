use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_lambda, fit_general, predict_from_cross, solve_shifted, LossSpec, SolverOptions};
use crate::error::{check_dim, Error, Result};
use crate::kernels::{gram, GramMatrix, KernelSpec, PointSet};
use crate::rng::{complement, fold_assignment};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub lambda: f64,
    /// Mean over folds of the average held-out loss.
    pub mean_loss: f64,
    /// Sample standard deviation of the per-fold losses.
    pub sd_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub best_lambda: f64,
    pub table: Vec<CvRow>,
}

/// k-fold selection of λ over `grid`. Folds come from a seeded shuffle;
/// ties in mean held-out loss go to the larger λ.
#[allow(clippy::too_many_arguments)]
pub fn cross_validate_lambda(
    features: &PointSet,
    y: &[f64],
    kernel: &KernelSpec,
    loss: LossSpec,
    grid: &[f64],
    folds: usize,
    seed: u64,
    opts: &SolverOptions,
) -> Result<CvResult> {
    kernel.validate()?;
    let raw = gram(kernel, features, false);
    cross_validate_gram(&raw, y, loss, grid, folds, seed, opts)
}

/// Cross-validation on a precomputed raw Gram matrix over all samples.
pub fn cross_validate_gram(
    raw: &GramMatrix,
    y: &[f64],
    loss: LossSpec,
    grid: &[f64],
    folds: usize,
    seed: u64,
    opts: &SolverOptions,
) -> Result<CvResult> {
    if raw.is_normalized() {
        return Err(Error::contract("cross-validation expects a raw Gram matrix"));
    }
    let n = raw.size();
    check_dim("responses", n, y.len())?;
    if grid.is_empty() {
        return Err(Error::contract("lambda grid is empty"));
    }
    for &l in grid {
        check_lambda(l)?;
    }
    loss.validate()?;
    loss.check_responses(y)?;
    let assignment = fold_assignment(n, folds, seed)?;
    let k = raw.values();

    // losses[fold][grid index]
    let losses: Vec<Vec<f64>> = assignment
        .par_iter()
        .map(|held| {
            let train = complement(n, held);
            if train.is_empty() {
                return Err(Error::contract("a fold leaves no training points"));
            }
            let nt = train.len() as f64;
            let k_train = DMatrix::from_fn(train.len(), train.len(), |a, b| k[(train[a], train[b])] / nt);
            let cross = DMatrix::from_fn(held.len(), train.len(), |a, b| k[(held[a], train[b])]);
            let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let y_held: Vec<f64> = held.iter().map(|&i| y[i]).collect();
            let gram_train = GramMatrix::from_values(k_train.clone(), true)?;
            grid.iter()
                .map(|&lambda| {
                    let alpha: Vec<f64> = match loss {
                        LossSpec::Squared => solve_shifted(&k_train, &y_train, lambda)?.iter().copied().collect(),
                        _ => fit_general(&gram_train, &y_train, lambda, loss, opts)?.alpha,
                    };
                    let pred = predict_from_cross(&cross, &alpha);
                    Ok(loss.mean(&y_held, &pred))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;

    let nf = folds as f64;
    let table: Vec<CvRow> = grid
        .iter()
        .enumerate()
        .map(|(g, &lambda)| {
            let vals: Vec<f64> = losses.iter().map(|row| row[g]).collect();
            let mean = vals.iter().sum::<f64>() / nf;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
            CvRow {
                lambda,
                mean_loss: mean,
                sd_loss: var.sqrt(),
            }
        })
        .collect();

    let mut best = &table[0];
    for row in &table[1..] {
        if row.mean_loss < best.mean_loss || (row.mean_loss == best.mean_loss && row.lambda > best.lambda) {
            best = row;
        }
    }
    if !best.mean_loss.is_finite() {
        return Err(Error::numeric("every grid point produced a non-finite held-out loss"));
    }
    Ok(CvResult {
        best_lambda: best.lambda,
        table,
    })
}
