use faer::prelude::*;
use faer::{Mat, MatRef, Side};
use rand::seq::SliceRandom;

use super::{check_data, empirical_norm, EstimatorKind, FittedEstimator, Model, TrainingMeta};
use crate::error::{Error, Result};
use crate::kernels::{self, KernelSpec, PointSet, DEFAULT_JITTER};
use crate::rng;
use crate::synthetic::NestedDataset;

/// Default log grid for [`select_krr_lambda_cv`]: `10^{-7}, 10^{-6.5}, ..., 10^{0}`.
pub const KRR_CV_GRID: [f64; 15] = [
    1e-7,
    3.162_277_660_168_379_5e-7,
    1e-6,
    3.162_277_660_168_379_5e-6,
    1e-5,
    3.162_277_660_168_379_5e-5,
    1e-4,
    3.162_277_660_168_379_5e-4,
    1e-3,
    3.162_277_660_168_379_5e-3,
    1e-2,
    3.162_277_660_168_379_5e-2,
    1e-1,
    3.162_277_660_168_379_5e-1,
    1.0,
];

/// `n^{-2s/(2s+d)}` for kernels with a Sobolev-equivalent RKHS of order
/// `s = nu + d/2` (Laplace counts as Matérn-1/2), `1/n` for the Gaussian.
pub fn default_krr_lambda(spec: &KernelSpec, n: usize) -> f64 {
    let n = n as f64;
    match spec.sobolev_order() {
        Some(s) => {
            let d = spec.dim as f64;
            n.powf(-2.0 * s / (2.0 * s + d))
        }
        None => 1.0 / n,
    }
}

/// Kernel ridge regression: `min |h - ybar|_n^2 + lambda |h|_H^2`, solved as
/// `(K + n lambda I) alpha = ybar` with the default jitter on `K`.
pub fn fit_krr(data: &NestedDataset, spec: &KernelSpec, lambda: f64) -> Result<FittedEstimator> {
    fit_krr_with_jitter(data, spec, lambda, DEFAULT_JITTER)
}

pub fn fit_krr_with_jitter(
    data: &NestedDataset,
    spec: &KernelSpec,
    lambda: f64,
    jitter: f64,
) -> Result<FittedEstimator> {
    check_data(data)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(
            "lambda",
            format!("{lambda} is not a nonnegative number"),
        ));
    }
    let n = data.n();
    let gram = kernels::gram(spec, &data.scenarios, jitter)?;
    let mut system = gram.entries;
    let shift = n as f64 * lambda;
    for i in 0..n {
        system[(i, i)] += shift;
    }
    let alpha = solve_spd(system.as_slice(), n, &data.ybar, shift + jitter)?;

    // fitted values use K without jitter or ridge
    for i in 0..n {
        system[(i, i)] = 1.0;
    }
    let fitted = &system * nalgebra::DVector::from_column_slice(&alpha);
    let residual_norm = empirical_norm(fitted.as_slice(), &data.ybar);
    Ok(FittedEstimator {
        kind: EstimatorKind::Krr,
        model: Model::KernelExpansion {
            kernel: *spec,
            centers: data.scenarios.clone(),
            weights: alpha,
        },
        meta: TrainingMeta {
            n,
            m: data.m,
            residual_norm,
            iterations: 1,
            regularization: lambda,
        },
    })
}

/// Solves `A x = b` for symmetric positive definite `A` (column-major).
pub(crate) fn solve_spd(a: &[f64], n: usize, b: &[f64], regularization: f64) -> Result<Vec<f64>> {
    let mat = MatRef::from_column_major_slice(a, n, n);
    let llt = mat.llt(Side::Lower).map_err(|e| {
        let diag = (0..n).map(|i| a[i * n + i]);
        let (lo, hi) = diag.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        Error::SolveFailed {
            reason: format!("Cholesky factorization failed ({e:?}); matrix is not numerically positive definite"),
            diag_min: lo,
            diag_max: hi,
            regularization,
        }
    })?;
    let mut rhs = Mat::from_fn(n, 1, |i, _| b[i]);
    llt.solve_in_place(rhs.as_mut());
    let x: Vec<f64> = (0..n).map(|i| rhs[(i, 0)]).collect();
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SolveFailed {
            reason: "solution is not finite".into(),
            diag_min: f64::NAN,
            diag_max: f64::NAN,
            regularization,
        });
    }
    Ok(x)
}

/// k-fold cross-validated choice of `lambda` from `grid` (mean squared
/// validation error against `ybar`; ties go to the larger `lambda`).
pub fn select_krr_lambda_cv(
    data: &NestedDataset,
    spec: &KernelSpec,
    grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<f64> {
    check_data(data)?;
    let n = data.n();
    if grid.is_empty() {
        return Err(Error::EmptyInput("lambda grid"));
    }
    if folds < 2 || folds > n {
        return Err(Error::invalid(
            "folds",
            format!("{folds} folds for {n} points"),
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::rng_from_seed(seed));
    let mut scores = vec![0.0; grid.len()];
    for fold in 0..folds {
        let (valid, train): (Vec<usize>, Vec<usize>) =
            order
                .iter()
                .enumerate()
                .fold((vec![], vec![]), |(mut v, mut t), (pos, &i)| {
                    if pos % folds == fold {
                        v.push(i);
                    } else {
                        t.push(i);
                    }
                    (v, t)
                });
        let subset = |idx: &[usize]| -> (PointSet, Vec<f64>) {
            (
                data.scenarios.select(idx),
                idx.iter().map(|&i| data.ybar[i]).collect(),
            )
        };
        let (train_x, train_y) = subset(&train);
        let (valid_x, valid_y) = subset(&valid);
        let train_data = NestedDataset {
            scenarios: train_x,
            ybar: train_y,
            m: data.m,
            noise_sigma: data.noise_sigma,
            seed: data.seed,
        };
        for (score, &lambda) in scores.iter_mut().zip(grid) {
            let fit = fit_krr(&train_data, spec, lambda)?;
            let pred = fit.predict(&valid_x)?;
            *score += pred
                .iter()
                .zip(&valid_y)
                .map(|(p, y)| (p - y) * (p - y))
                .sum::<f64>();
        }
    }
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s <= scores[best] && (s < scores[best] || grid[i] > grid[best]) {
            best = i;
        }
    }
    Ok(grid[best])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{make_test_function, simulate_inner, simulate_outer};
    use nalgebra::{DMatrix, DVector};

    fn data(n: usize, d: usize, sigma: f64, seed: u64) -> NestedDataset {
        let f = make_test_function(KernelSpec::laplace(d), 50, seed).unwrap();
        let xs = simulate_outer(n, d, seed + 1).unwrap();
        simulate_inner(&f, &xs, 1, sigma, seed + 2).unwrap()
    }

    #[test]
    fn huge_lambda_shrinks_to_zero() {
        let data = data(60, 3, 1.0, 1);
        let est = fit_krr(&data, &KernelSpec::laplace(3), 1e12).unwrap();
        let probe = simulate_outer(100, 3, 5).unwrap();
        let max_y = data.ybar.iter().fold(0.0f64, |a, y| a.max(y.abs()));
        let sup = est
            .predict(&probe)
            .unwrap()
            .iter()
            .fold(0.0f64, |a, p| a.max(p.abs()));
        assert!(sup < 1e-6 * max_y, "{sup}");
    }

    #[test]
    fn zero_lambda_interpolates() {
        let data = data(80, 3, 1.0, 2);
        let est = fit_krr(&data, &KernelSpec::laplace(3), 0.0).unwrap();
        let pred = est.predict(&data.scenarios).unwrap();
        for (p, y) in pred.iter().zip(&data.ybar) {
            assert!((p - y).abs() < 1e-6);
        }
        assert!(est.meta.residual_norm < 1e-6);
    }

    #[test]
    fn three_point_dense_solve() {
        let xs = PointSet::from_rows(&[vec![0.1], vec![0.45], vec![0.8]]).unwrap();
        let data = NestedDataset {
            scenarios: xs.clone(),
            ybar: vec![0.3, -1.1, 0.7],
            m: 1,
            noise_sigma: 1.0,
            seed: 0,
        };
        let spec = KernelSpec::gaussian(1);
        let est = fit_krr(&data, &spec, 0.1).unwrap();

        // Cramer's rule on (K + jitter I + 3 * 0.1 I)
        let k = |a: f64, b: f64| (-(a - b) * (a - b)).exp();
        let p = [0.1, 0.45, 0.8];
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = k(p[i], p[j]) + if i == j { 0.3 + 1e-10 } else { 0.0 };
            }
        }
        let det = |m: &[[f64; 3]; 3]| {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        let base = det(&m);
        let alpha = est.kernel_weights().unwrap();
        for c in 0..3 {
            let mut mc = m;
            for r in 0..3 {
                mc[r][c] = data.ybar[r];
            }
            let oracle = det(&mc) / base;
            assert!(
                (alpha[c] - oracle).abs() < 1e-10,
                "{} vs {oracle}",
                alpha[c]
            );
        }
    }

    #[test]
    fn rkhs_norm_decreases_with_lambda() {
        let data = data(50, 2, 0.5, 4);
        let spec = KernelSpec::laplace(2);
        let k = kernels::gram(&spec, &data.scenarios, 0.0).unwrap().entries;
        let mut last = f64::INFINITY;
        for lambda in [1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0] {
            let est = fit_krr(&data, &spec, lambda).unwrap();
            let a = DVector::from_column_slice(est.kernel_weights().unwrap());
            let norm = a.dot(&(&k * &a));
            assert!(
                norm <= last * (1.0 + 1e-9),
                "lambda {lambda}: {norm} > {last}"
            );
            last = norm;
        }
    }

    #[test]
    fn loss_never_exceeds_trivial_candidates() {
        let data = data(60, 2, 1.0, 6);
        let est = fit_krr(&data, &KernelSpec::laplace(2), 0.0).unwrap();
        let zero = empirical_norm(&vec![0.0; 60], &data.ybar);
        assert!(est.meta.residual_norm <= zero);
    }

    #[test]
    fn solve_failure_is_reported() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let err = solve_spd(a.as_slice(), 2, &[1.0, 1.0], 0.0).unwrap_err();
        assert!(matches!(err, Error::SolveFailed { diag_min, .. } if diag_min == 1.0));
        assert!(fit_krr(&data(5, 2, 1.0, 1), &KernelSpec::laplace(2), -1.0).is_err());
    }

    #[test]
    fn cross_validation_picks_from_grid() {
        let data = data(60, 2, 1.0, 8);
        let lam = select_krr_lambda_cv(&data, &KernelSpec::laplace(2), &KRR_CV_GRID, 5, 1).unwrap();
        assert!(KRR_CV_GRID.contains(&lam));
        assert_eq!(
            lam,
            select_krr_lambda_cv(&data, &KernelSpec::laplace(2), &KRR_CV_GRID, 5, 1).unwrap()
        );
        assert!(select_krr_lambda_cv(&data, &KernelSpec::laplace(2), &[], 5, 1).is_err());
    }

    #[test]
    fn default_lambda_schedules() {
        // Laplace, d = 2: s = 1.5, 2s/(2s+d) = 3/5
        let l = default_krr_lambda(&KernelSpec::laplace(2), 1000);
        assert!((l - 1000f64.powf(-0.6)).abs() < 1e-15);
        assert_eq!(default_krr_lambda(&KernelSpec::gaussian(2), 1000), 1e-3);
    }
}
