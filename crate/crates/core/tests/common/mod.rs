//! Property checks shared by the `properties` test target and the
//! acceptance harness. Each check runs a deterministic proptest runner and
//! returns the shrunk counterexample on failure.

#![allow(dead_code)]

use latent_krr::complexity::{
    complexity_r, effective_dimension, empirical_spectrum, fixed_point, Spectrum,
};
use latent_krr::experiment::{default_lambda_grid, ols_fit, run_sweep, ExperimentConfig, ExperimentReport, Method};
use latent_krr::factor::{
    fit_pca_predictor, predict_factors, simulate, FactorConfig, LatentLaw, RegressionFn,
};
use latent_krr::kernels::{gram, kernel_displacement, median_bandwidth, GramMatrix, KernelSpec, PointSet};
use latent_krr::krr::{fit_general, fit_squared, fitted_values, objective, KrrModel, LossSpec, SolverOptions};
use latent_krr::linalg::sorted_symmetric_eigen;
use latent_krr::riskeval::{empirical_mse, latent_error, procrustes_align};
use latent_krr::rng::rng_from_seed;
use rand::Rng;
use rand_distr::StandardNormal;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

pub const CASES: u32 = 128;

fn runner(cases: u32) -> TestRunner {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

pub fn check<S, F>(strategy: S, test: F) -> Result<(), String>
where
    S: Strategy,
    S::Value: std::fmt::Debug,
    F: Fn(S::Value) -> Result<(), TestCaseError>,
{
    runner(CASES).run(&strategy, test).map_err(|e| e.to_string())
}

// ---------------------------------------------------------------- strategies

fn points(max_m: usize, max_d: usize, range: f64) -> impl Strategy<Value = PointSet> {
    (1..=max_m, 1..=max_d).prop_flat_map(move |(m, d)| {
        prop::collection::vec(-range..range, m * d).prop_map(move |data| PointSet::new(m, d, data).unwrap())
    })
}

fn kernel() -> impl Strategy<Value = KernelSpec> {
    prop_oneof![
        Just(KernelSpec::Linear),
        (1u32..=3, 0.0..2.0f64).prop_map(|(degree, offset)| KernelSpec::Polynomial { degree, offset }),
        (0.5..5.0f64).prop_map(|bandwidth| KernelSpec::Gaussian { bandwidth }),
        (0.5..5.0f64).prop_map(|bandwidth| KernelSpec::Laplacian { bandwidth }),
    ]
}

fn radial_kernel() -> impl Strategy<Value = KernelSpec> {
    prop_oneof![
        (0.5..5.0f64).prop_map(|bandwidth| KernelSpec::Gaussian { bandwidth }),
        (0.5..5.0f64).prop_map(|bandwidth| KernelSpec::Laplacian { bandwidth }),
    ]
}

/// Finite spectrum with entries spread over several decades.
fn finite_spectrum() -> impl Strategy<Value = Spectrum> {
    prop::collection::vec(-8.0..1.0f64, 1..60)
        .prop_map(|logs| Spectrum::finite(logs.iter().map(|l| 10f64.powf(*l)).collect()).unwrap())
}

fn orthogonal(r: usize, entries: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::from_column_slice(r, r, entries);
    for i in 0..r {
        m[(i, i)] += 3.0;
    }
    m.qr().q()
}

fn matrix(n: usize, p: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(n, p, data)
}

fn regression_problem(max_n: usize, max_d: usize) -> impl Strategy<Value = (PointSet, Vec<f64>)> {
    (2..=max_n, 1..=max_d).prop_flat_map(|(n, d)| {
        (
            prop::collection::vec(-1.0..1.0f64, n * d).prop_map(move |x| PointSet::new(n, d, x).unwrap()),
            prop::collection::vec(-2.0..2.0f64, n),
        )
    })
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

// -------------------------------------------------------------------- kernels

pub fn gram_symmetry() -> Result<(), String> {
    check((points(30, 5, 3.0), kernel(), any::<bool>()), |(pts, k, norm)| {
        let g = gram(&k, &pts, norm);
        let v = g.values();
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                prop_assert_eq!(v[(i, j)].to_bits(), v[(j, i)].to_bits());
            }
        }
        Ok(())
    })
}

pub fn gram_numerically_psd() -> Result<(), String> {
    check((points(200, 5, 2.0), kernel()), |(pts, k)| {
        let g = gram(&k, &pts, false);
        let (vals, _) = sorted_symmetric_eigen(g.into_values()).unwrap();
        let max = vals[0];
        let min = *vals.last().unwrap();
        prop_assert!(min >= -1e-10 * max.abs().max(f64::MIN_POSITIVE), "min {min}, max {max}");
        Ok(())
    })
}

pub fn radial_gram_bounded() -> Result<(), String> {
    check((points(30, 5, 2.0), radial_kernel()), |(pts, k)| {
        let g = gram(&k, &pts, false);
        for i in 0..pts.len() {
            prop_assert_eq!(g.values()[(i, i)], 1.0);
            for j in 0..pts.len() {
                let v = g.values()[(i, j)];
                prop_assert!(v > 0.0 && v <= 1.0, "entry {v}");
            }
        }
        Ok(())
    })
}

pub fn displacement_matches_gram_form() -> Result<(), String> {
    check(
        (1usize..=5).prop_flat_map(|d| {
            (prop::collection::vec(-2.0..2.0f64, d), prop::collection::vec(-2.0..2.0f64, d), kernel())
        }),
        |(z, zh, k)| {
            let disp = kernel_displacement(&k, &z, &zh).unwrap();
            prop_assert!(disp >= 0.0);
            let pts = PointSet::from_rows(&[z.clone(), zh.clone()]).unwrap();
            let g = gram(&k, &pts, false);
            let quad = g.values()[(0, 0)] - g.values()[(0, 1)] - g.values()[(1, 0)] + g.values()[(1, 1)];
            let scale = 1.0 + g.values()[(0, 0)].abs() + g.values()[(1, 1)].abs();
            prop_assert!(close(disp, quad.max(0.0), 1e-12 * scale), "{disp} vs {quad}");
            Ok(())
        },
    )
}

pub fn kernel_orthogonal_invariance() -> Result<(), String> {
    check(
        (1usize..=5).prop_flat_map(|r| {
            (
                prop::collection::vec(-1.0..1.0f64, r),
                prop::collection::vec(-1.0..1.0f64, r),
                prop::collection::vec(-1.0..1.0f64, r * r),
                kernel(),
            )
        }),
        |(z, zp, q, k)| {
            let r = z.len();
            let q = orthogonal(r, &q);
            let qz: Vec<f64> = (&q * DVector::from_column_slice(&z)).iter().copied().collect();
            let qzp: Vec<f64> = (&q * DVector::from_column_slice(&zp)).iter().copied().collect();
            let a = k.eval(&z, &zp).unwrap();
            let b = k.eval(&qz, &qzp).unwrap();
            prop_assert!(close(a, b, 1e-12 * (1.0 + a.abs())), "{a} vs {b}");
            Ok(())
        },
    )
}

// ------------------------------------------------------------------------ krr

fn gaussian_fit(pts: &PointSet, y: &[f64], lambda: f64) -> (GramMatrix, Vec<f64>) {
    let g = gram(&KernelSpec::Gaussian { bandwidth: 0.8 }, pts, true);
    let alpha = fit_squared(&g, y, lambda).unwrap();
    (g, alpha)
}

pub fn representer_consistency() -> Result<(), String> {
    check((regression_problem(40, 4), -6.0..0.0f64), |((pts, y), log_l)| {
        let lambda = 10f64.powf(log_l);
        let (g, alpha) = gaussian_fit(&pts, &y, lambda);
        let fitted = fitted_values(&g, &alpha).unwrap();
        let model = KrrModel::from_parts(pts.clone(), alpha, lambda, KernelSpec::Gaussian { bandwidth: 0.8 }, LossSpec::Squared).unwrap();
        for (a, b) in model.predict(&pts).unwrap().iter().zip(&fitted) {
            prop_assert!(close(*a, *b, 1e-10 * (1.0 + b.abs())), "{a} vs {b}");
        }
        Ok(())
    })
}

pub fn coefficient_equation() -> Result<(), String> {
    check((regression_problem(40, 4), -6.0..1.0f64), |((pts, y), log_l)| {
        let lambda = 10f64.powf(log_l);
        let (g, alpha) = gaussian_fit(&pts, &y, lambda);
        let n = y.len() as f64;
        let a = DVector::from_column_slice(&alpha);
        let lhs = (g.values() * &a + &a * lambda) * n.sqrt();
        let yv = DVector::from_column_slice(&y);
        prop_assert!((lhs - &yv).norm() <= 1e-8 * yv.norm().max(1.0));
        Ok(())
    })
}

pub fn primal_dual_ridge() -> Result<(), String> {
    check((regression_problem(50, 5), -4.0..0.0f64), |((pts, y), log_l)| {
        let lambda = 10f64.powf(log_l);
        let (n, d) = (pts.len(), pts.dim());
        let model = KrrModel::fit(pts.clone(), &y, KernelSpec::Linear, LossSpec::Squared, lambda, &SolverOptions::default()).unwrap();
        let z = pts.to_matrix();
        let mut a = z.tr_mul(&z);
        for i in 0..d {
            a[(i, i)] += n as f64 * lambda;
        }
        let beta = a.cholesky().unwrap().solve(&z.tr_mul(&DVector::from_column_slice(&y)));
        let primal = &z * beta;
        for (p, q) in primal.iter().zip(model.predict(&pts).unwrap()) {
            prop_assert!(close(*p, q, 1e-8), "{p} vs {q}");
        }
        Ok(())
    })
}

pub fn monotone_shrinkage() -> Result<(), String> {
    check(regression_problem(40, 3), |(pts, y)| {
        let mut last = f64::INFINITY;
        for lambda in [1e-4, 1e-3, 1e-2, 1e-1, 1.0] {
            let (g, alpha) = gaussian_fit(&pts, &y, lambda);
            let a = DVector::from_column_slice(&alpha);
            let norm = y.len() as f64 * a.dot(&(g.values() * &a));
            prop_assert!(norm <= last * (1.0 + 1e-9) + 1e-14, "{norm} after {last}");
            last = norm;
        }
        Ok(())
    })
}

fn loss() -> impl Strategy<Value = LossSpec> {
    prop_oneof![
        Just(LossSpec::Squared),
        Just(LossSpec::Logistic),
        Just(LossSpec::Exponential),
        (0.05..0.95f64).prop_map(|tau| LossSpec::Check { tau }),
        (0.1..2.0f64).prop_map(|threshold| LossSpec::Huber { threshold }),
    ]
}

pub fn solver_descent() -> Result<(), String> {
    check((regression_problem(30, 3), loss(), -4.0..0.0f64), |((pts, y), loss, log_l)| {
        let lambda = 10f64.powf(log_l);
        let y: Vec<f64> = if loss.is_margin() { y.iter().map(|v| if *v >= 0.0 { 1.0 } else { -1.0 }).collect() } else { y };
        let g = gram(&KernelSpec::Gaussian { bandwidth: 0.8 }, &pts, true);
        let opts = SolverOptions { max_iterations: 300, ..SolverOptions::default() };
        let fit = fit_general(&g, &y, lambda, loss, &opts).unwrap();
        let j0 = objective(&g, &y, lambda, loss, &vec![0.0; y.len()]).unwrap();
        prop_assert!(fit.objective <= j0);
        prop_assert!(fit.history.windows(2).all(|w| w[1] <= w[0]));
        Ok(())
    })
}

pub fn permutation_equivariance() -> Result<(), String> {
    check(
        regression_problem(30, 3).prop_flat_map(|(pts, y)| {
            let n = pts.len();
            (Just(pts), Just(y), Just((0..n).collect::<Vec<usize>>()).prop_shuffle())
        }),
        |(pts, y, perm)| {
            let k = KernelSpec::Gaussian { bandwidth: 0.8 };
            let o = SolverOptions::default();
            let m1 = KrrModel::fit(pts.clone(), &y, k, LossSpec::Squared, 1e-3, &o).unwrap();
            let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
            let m2 = KrrModel::fit(pts.select(&perm).unwrap(), &yp, k, LossSpec::Squared, 1e-3, &o).unwrap();
            for (a, &i) in perm.iter().enumerate() {
                prop_assert!(close(m2.alpha[a], m1.alpha[i], 1e-8 * (1.0 + m1.alpha[i].abs())));
            }
            let probe = PointSet::new(3, pts.dim(), vec![0.1; 3 * pts.dim()]).unwrap();
            for (a, b) in m1.predict(&probe).unwrap().iter().zip(m2.predict(&probe).unwrap()) {
                prop_assert!(close(*a, b, 1e-8 * (1.0 + a.abs())));
            }
            Ok(())
        },
    )
}

// --------------------------------------------------------------------- factor

fn design() -> impl Strategy<Value = (DMatrix<f64>, usize)> {
    (4usize..30, 4usize..30, 1usize..4).prop_flat_map(|(n, p, r)| {
        prop::collection::vec(-2.0..2.0f64, n * p).prop_map(move |d| (matrix(n, p, &d), r))
    })
}

pub fn svd_scale_equivariance() -> Result<(), String> {
    check((design(), 0.1..10.0f64), |((x, r), c)| {
        let a = fit_pca_predictor(&x, r);
        let b = fit_pca_predictor(&(&x * c), r);
        let (Ok(a), Ok(b)) = (a, b) else { return Ok(()) };
        // skip near-degenerate gaps where the subspace is ill-conditioned
        let d = &a.singular_values;
        if d.windows(2).any(|w| w[0] - w[1] < 1e-3 * d[0]) {
            return Ok(());
        }
        prop_assert!((&b.b_hat * c - &a.b_hat).norm() <= 1e-8 * a.b_hat.norm());
        prop_assert!((&b.a_hat / c - &a.a_hat).norm() <= 1e-8 * a.a_hat.norm());
        let za = predict_factors(&a, &x).unwrap();
        let zb = predict_factors(&b, &(&x * c)).unwrap();
        prop_assert!((&za - &zb).norm() <= 1e-8 * za.norm());
        Ok(())
    })
}

pub fn predicted_factor_orthonormality() -> Result<(), String> {
    check(design(), |(x, r)| {
        let Ok(pred) = fit_pca_predictor(&x, r) else { return Ok(()) };
        let n = x.nrows() as f64;
        let z = predict_factors(&pred, &x).unwrap();
        prop_assert!((z.tr_mul(&z) / n - DMatrix::identity(r, r)).amax() <= 1e-8);
        Ok(())
    })
}

pub fn noiseless_reconstruction() -> Result<(), String> {
    check(
        (5usize..30, 5usize..30, 1usize..4).prop_flat_map(|(n, p, r)| {
            (prop::collection::vec(-1.0..1.0f64, n * r), prop::collection::vec(-1.0..1.0f64, p * r))
                .prop_map(move |(z, a)| (matrix(n, r, &z), matrix(p, r, &a)))
        }),
        |(z, a)| {
            let x = &z * a.transpose();
            let r = z.ncols();
            let Ok(pred) = fit_pca_predictor(&x, r) else { return Ok(()) };
            let zh = predict_factors(&pred, &x).unwrap();
            let resid = &x - &zh * pred.a_hat.transpose();
            prop_assert!(resid.norm() <= 1e-6 * x.norm(), "{} vs {}", resid.norm(), x.norm());
            Ok(())
        },
    )
}

fn whitened_config(n: usize, p: usize, alpha: f64) -> FactorConfig {
    FactorConfig {
        loading_scale: alpha,
        latent_law: LatentLaw::WhitenedUniform,
        regression_fn: RegressionFn::Zero,
        ..FactorConfig::reference_design(n, p)
    }
}

pub fn factor_error_vs_snr() -> Result<(), String> {
    check(any::<u64>(), |seed| {
        let mut last = f64::INFINITY;
        for alpha in [0.1, 0.5, 1.0] {
            let s = simulate(&whitened_config(200, 200, alpha), seed).unwrap();
            let zh = predict_factors(&fit_pca_predictor(&s.x, 3).unwrap(), &s.x).unwrap();
            let err = procrustes_align(&zh, &s.z).unwrap().aligned_mse;
            prop_assert!(err <= last, "alpha {alpha}: {err} after {last}");
            last = err;
        }
        Ok(())
    })
}

// ----------------------------------------------------------------- complexity

fn log_grid(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    (0..k).map(|i| lo * (hi / lo).powf(i as f64 / (k - 1) as f64)).collect()
}

pub fn subroot_property() -> Result<(), String> {
    check((finite_spectrum(), 1usize..5000), |(spec, n)| {
        let grid = log_grid(1e-10, 10.0, 60);
        for w in grid.windows(2) {
            let (r0, r1) = (complexity_r(&spec, n, w[0]), complexity_r(&spec, n, w[1]));
            prop_assert!(r1 >= r0 * (1.0 - 1e-12));
            prop_assert!(r1 / w[1].sqrt() <= r0 / w[0].sqrt() * (1.0 + 1e-12));
        }
        Ok(())
    })
}

pub fn fixed_point_characterization() -> Result<(), String> {
    check((finite_spectrum(), 1usize..5000, prop::collection::vec(-9.0..1.0f64, 20)), |(spec, n, logs)| {
        let fp = fixed_point(&spec, n).unwrap();
        prop_assert!(fp.residual <= 1e-10 * fp.delta_star.max(1e-300));
        for l in logs {
            let delta = 10f64.powf(l);
            if (delta - fp.delta_star).abs() <= 1e-9 * fp.delta_star {
                continue;
            }
            let below = complexity_r(&spec, n, delta) <= delta;
            prop_assert_eq!(below, delta >= fp.delta_star, "delta {} vs delta* {}", delta, fp.delta_star);
        }
        Ok(())
    })
}

pub fn gram_operator_duality() -> Result<(), String> {
    check(
        (2usize..=100, 1usize..=6).prop_flat_map(|(n, d)| {
            prop::collection::vec(-2.0..2.0f64, n * d).prop_map(move |v| PointSet::new(n, d, v).unwrap())
        }),
        |pts| {
            let n = pts.len();
            let s = empirical_spectrum(&gram(&KernelSpec::Linear, &pts, true)).unwrap();
            let z = pts.to_matrix();
            let (cov, _) = sorted_symmetric_eigen(z.tr_mul(&z) / n as f64).unwrap();
            let ev = s.truncated(n);
            for j in 0..n {
                let want = if j < cov.len() { cov[j].max(0.0) } else { 0.0 };
                prop_assert!(close(ev[j], want, 1e-8), "j = {}: {} vs {}", j, ev[j], want);
            }
            Ok(())
        },
    )
}

pub fn trace_identity() -> Result<(), String> {
    check((points(60, 4, 2.0), kernel()), |(pts, k)| {
        let g = gram(&k, &pts, true);
        let s = empirical_spectrum(&g).unwrap();
        let diag: f64 = pts.iter().map(|p| k.eval(p, p).unwrap()).sum::<f64>() / pts.len() as f64;
        prop_assert!(close(s.trace(), diag, 1e-8 * (1.0 + diag)), "{} vs {}", s.trace(), diag);
        Ok(())
    })
}

/// `D(δ) ≤ (n/δ) R²(δ) ≤ 2 D(δ)`, termwise from `t/(1+t) ≤ min(1, t) ≤ 2t/(1+t)`.
pub fn effective_dimension_sandwich() -> Result<(), String> {
    check((finite_spectrum(), 1usize..5000, -9.0..2.0f64), |(spec, n, l)| {
        let delta = 10f64.powf(l);
        let d = effective_dimension(&spec, n, delta).unwrap();
        let mid = n as f64 / delta * complexity_r(&spec, n, delta).powi(2);
        prop_assert!(d <= mid * (1.0 + 1e-12), "D = {d}, (n/δ)R² = {mid}");
        prop_assert!(mid <= 2.0 * d * (1.0 + 1e-12), "D = {d}, (n/δ)R² = {mid}");
        Ok(())
    })
}

/// `c R(δ/c)` is the complexity of eigenvalues `c μ` at sample size `n / c`,
/// and its fixed point is `c δ*`.
pub fn fixed_point_scaling() -> Result<(), String> {
    check((finite_spectrum(), 1usize..500, 2usize..6, any::<bool>()), |(spec, k, c, up)| {
        let Spectrum::Finite(mu) = &spec else { unreachable!() };
        let (c, n, n_scaled) = if up { (c as f64, c * k, k) } else { (1.0 / c as f64, k, c * k) };
        let scaled = Spectrum::finite(mu.iter().map(|m| m * c).collect()).unwrap();
        let a = fixed_point(&spec, n).unwrap().delta_star;
        let b = fixed_point(&scaled, n_scaled).unwrap().delta_star;
        prop_assert!(close(b, c * a, 1e-9 * c * a), "{b} vs {}", c * a);
        Ok(())
    })
}

// ------------------------------------------------------------------- riskeval

pub fn latent_error_rotation_invariance() -> Result<(), String> {
    check(
        (2usize..30, 1usize..=5).prop_flat_map(|(m, r)| {
            (
                prop::collection::vec(-1.0..1.0f64, m * r),
                prop::collection::vec(-1.0..1.0f64, m * r),
                prop::collection::vec(-1.0..1.0f64, r * r),
                prop_oneof![radial_kernel(), Just(KernelSpec::Linear)],
            )
                .prop_map(move |(a, b, q, k)| (matrix(m, r, &a), matrix(m, r, &b), orthogonal(r, &q), k))
        }),
        |(z, zh, q, k)| {
            let a = latent_error(&k, &z, &zh).unwrap();
            let b = latent_error(&k, &(&z * q.transpose()), &(&zh * q.transpose())).unwrap();
            prop_assert!(close(a, b, 1e-10 * (1.0 + a)), "{a} vs {b}");
            Ok(())
        },
    )
}

pub fn procrustes_orthogonality() -> Result<(), String> {
    check(
        (1usize..=5).prop_flat_map(|r| {
            (r..40).prop_flat_map(move |m| {
                (prop::collection::vec(-2.0..2.0f64, m * r), prop::collection::vec(-2.0..2.0f64, m * r))
                    .prop_map(move |(a, b)| (matrix(m, r, &a), matrix(m, r, &b)))
            })
        }),
        |(zh, z)| {
            let al = procrustes_align(&zh, &z).unwrap();
            let r = z.ncols();
            prop_assert!((al.q.tr_mul(&al.q) - DMatrix::identity(r, r)).amax() <= 1e-10);
            prop_assert!(al.aligned_mse <= (&zh - &z).norm_squared() / z.nrows() as f64 + 1e-12);
            Ok(())
        },
    )
}

pub fn mse_permutation_invariance() -> Result<(), String> {
    check(
        (1usize..50).prop_flat_map(|m| {
            (
                prop::collection::vec(-5.0..5.0f64, m),
                prop::collection::vec(-5.0..5.0f64, m),
                Just((0..m).collect::<Vec<usize>>()).prop_shuffle(),
            )
        }),
        |(p, y, perm)| {
            let a = empirical_mse(&p, &y).unwrap();
            let pp: Vec<f64> = perm.iter().map(|&i| p[i]).collect();
            let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
            let b = empirical_mse(&pp, &yp).unwrap();
            prop_assert!(close(a, b, 1e-12 * (1.0 + a)));
            Ok(())
        },
    )
}

/// Test error of a fixed KRR model grows as its inputs are corrupted. Only
/// small corruptions are probed: once inputs leave the data support the
/// predictions decay to zero and the error falls back towards `E y²`.
pub fn corrupted_input_risk_monotone() -> Result<(), String> {
    let cfg = FactorConfig::reference_design(300, 3);
    let train = simulate(&cfg, 11).unwrap();
    let pts = PointSet::from_matrix(&train.z).unwrap();
    let kernel = KernelSpec::Gaussian { bandwidth: median_bandwidth(&pts).unwrap() };
    let model = KrrModel::fit(pts, &train.y, kernel, LossSpec::Squared, 1e-3, &SolverOptions::default()).unwrap();
    let test_cfg = FactorConfig { n: 2000, ..cfg };
    check(any::<u64>(), move |seed| {
        let test = simulate(&test_cfg, seed).unwrap();
        let mut rng = rng_from_seed(seed);
        let eta = DMatrix::from_fn(test.z.nrows(), test.z.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut last = f64::NEG_INFINITY;
        for sigma in [0.0, 0.05, 0.1, 0.2] {
            let zc = &test.z + &eta * sigma;
            let mse = empirical_mse(&model.predict(&PointSet::from_matrix(&zc).unwrap()).unwrap(), &test.y).unwrap();
            prop_assert!(mse >= last, "sigma {sigma}: {mse} < {last}");
            last = mse;
        }
        Ok(())
    })
}

// ----------------------------------------------------------------- experiment

pub fn ols_recovers_linear_data() -> Result<(), String> {
    check(
        (1usize..=5).prop_flat_map(|r| {
            ((r + 1)..40).prop_flat_map(move |n| {
                (prop::collection::vec(-2.0..2.0f64, n * r), prop::collection::vec(-3.0..3.0f64, r))
                    .prop_map(move |(z, b)| (matrix(n, r, &z), b))
            })
        }),
        |(z, beta)| {
            let (vals, _) = sorted_symmetric_eigen(z.tr_mul(&z)).unwrap();
            if *vals.last().unwrap() < 1e-3 * vals[0] {
                return Ok(());
            }
            let y: Vec<f64> = (z.clone() * DVector::from_column_slice(&beta)).iter().copied().collect();
            let fit = ols_fit(&z, &y).unwrap();
            for (a, b) in fit.coefficients.iter().zip(&beta) {
                prop_assert!(close(*a, *b, 1e-8 * (1.0 + b.abs())), "{a} vs {b}");
            }
            Ok(())
        },
    )
}

pub fn default_grid_is_positive() -> Result<(), String> {
    let g = default_lambda_grid();
    if g.iter().all(|l| *l > 0.0) && g.windows(2).all(|w| w[1] > w[0]) {
        Ok(())
    } else {
        Err("default grid not strictly increasing".into())
    }
}

pub type Property = (&'static str, fn() -> Result<(), String>);

pub const ALL: &[Property] = &[
    ("gram_symmetry", gram_symmetry),
    ("gram_numerically_psd", gram_numerically_psd),
    ("radial_gram_bounded", radial_gram_bounded),
    ("displacement_matches_gram_form", displacement_matches_gram_form),
    ("kernel_orthogonal_invariance", kernel_orthogonal_invariance),
    ("representer_consistency", representer_consistency),
    ("coefficient_equation", coefficient_equation),
    ("primal_dual_ridge", primal_dual_ridge),
    ("monotone_shrinkage", monotone_shrinkage),
    ("solver_descent", solver_descent),
    ("permutation_equivariance", permutation_equivariance),
    ("svd_scale_equivariance", svd_scale_equivariance),
    ("predicted_factor_orthonormality", predicted_factor_orthonormality),
    ("noiseless_reconstruction", noiseless_reconstruction),
    ("factor_error_vs_snr", factor_error_vs_snr),
    ("subroot_property", subroot_property),
    ("fixed_point_characterization", fixed_point_characterization),
    ("gram_operator_duality", gram_operator_duality),
    ("trace_identity", trace_identity),
    ("effective_dimension_sandwich", effective_dimension_sandwich),
    ("fixed_point_scaling", fixed_point_scaling),
    ("latent_error_rotation_invariance", latent_error_rotation_invariance),
    ("procrustes_orthogonality", procrustes_orthogonality),
    ("mse_permutation_invariance", mse_permutation_invariance),
    ("corrupted_input_risk_monotone", corrupted_input_risk_monotone),
    ("ols_recovers_linear_data", ols_recovers_linear_data),
];

// ------------------------------------------------ experiment (Monte Carlo)

pub fn experiment_config(json: serde_json::Value) -> ExperimentConfig {
    serde_json::from_value(json).expect("valid experiment config")
}

fn reference_factor(n: usize, p: usize) -> serde_json::Value {
    serde_json::to_value(FactorConfig::reference_design(n, p)).unwrap()
}

/// Everything in the report except wall-clock runtimes.
fn deterministic_part(report: &ExperimentReport) -> Vec<(u64, String, u64, u64, Vec<u64>)> {
    report
        .rows
        .iter()
        .map(|r| {
            let errors = r.errors.iter().map(|e| e.to_bits()).collect();
            (r.sweep.to_bits(), r.method.to_string(), r.mean.to_bits(), r.sd.to_bits(), errors)
        })
        .collect()
}

pub fn sweep_independent_of_thread_count() -> Result<(), String> {
    let config = experiment_config(serde_json::json!({
        "factor": reference_factor(80, 60),
        "methods": ["KRR_Zhat_aux", "KRR_Zhat_insample", "KRR_Z", "KRR_X", "LR_Z"],
        "replications": 6,
        "master_seed": 5,
        "sweep": {"n_grid": [60, 90]},
    }));
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| run_sweep(&config)).map_err(|e| e.to_string())
    };
    let (a, b) = (run(1)?, run(3)?);
    if deterministic_part(&a) != deterministic_part(&b) || a.provenance != b.provenance {
        return Err("reports differ between 1 and 3 worker threads".into());
    }
    Ok(())
}

fn aux_means(config: &ExperimentConfig) -> Result<Vec<(f64, f64)>, String> {
    let report = run_sweep(config).map_err(|e| e.to_string())?;
    Ok((0..config.sweep.len())
        .map(|i| {
            let v = config.sweep.value(i);
            (v, report.row(v, Method::KrrZhatAux).unwrap().mean)
        })
        .collect())
}

fn non_increasing(label: &str, means: &[(f64, f64)]) -> Result<(), String> {
    if means.windows(2).all(|w| w[1].1 <= w[0].1) {
        Ok(())
    } else {
        Err(format!("{label}: KRR_Zhat_aux means not non-increasing: {means:?}"))
    }
}

pub fn aux_error_falls_with_snr() -> Result<(), String> {
    let config = experiment_config(serde_json::json!({
        "factor": reference_factor(800, 2000),
        "methods": ["KRR_Zhat_aux"],
        "replications": 10,
        "master_seed": 21,
        "sweep": {"alpha_grid": [0.1, 0.3, 1.0]},
    }));
    non_increasing("alpha", &aux_means(&config)?)
}

pub fn aux_error_falls_with_p() -> Result<(), String> {
    let config = experiment_config(serde_json::json!({
        "factor": reference_factor(800, 2000),
        "methods": ["KRR_Zhat_aux"],
        "replications": 10,
        "master_seed": 22,
        "sweep": {"p_grid": [100, 500, 2000]},
    }));
    non_increasing("p", &aux_means(&config)?)
}

pub const MONTE_CARLO: &[Property] = &[
    ("sweep_independent_of_thread_count", sweep_independent_of_thread_count),
    ("aux_error_falls_with_snr", aux_error_falls_with_snr),
    ("aux_error_falls_with_p", aux_error_falls_with_p),
];
