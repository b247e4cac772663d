use nalgebra::{DMatrix, DVector};

use super::krr::solve_spd;
use super::{check_data, empirical_norm, EstimatorKind, FittedEstimator, Model, TrainingMeta};
use crate::error::{Error, Result};
use crate::kernels::{self, KernelSpec, PointSet};
use crate::synthetic::NestedDataset;

/// Regularization of the inducing-point normal equations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InducingPenalty {
    /// `ridge * I`; zero means plain least squares on the span.
    Ridge(f64),
    /// `n lambda K_ss`, i.e. `lambda |h|_H^2` restricted to the span.
    Rkhs(f64),
}

/// `1e-8 * trace(K_sn K_ns) / S`.
pub fn default_inducing_ridge(normal: &DMatrix<f64>) -> f64 {
    1e-8 * normal.trace() / normal.nrows() as f64
}

/// Least squares on `span{k(x_j, .) : x_j in inducing}` via the normal
/// equations `(K_sn K_ns + ridge I) beta = K_sn ybar`.
///
/// `ridge = None` uses [`default_inducing_ridge`]. `Some(0.0)` solves the
/// unregularized problem through an SVD of `K_ns` and fails with
/// [`Error::RankDeficient`] if the design has lower numerical rank than `S`.
pub fn fit_krr_inducing(
    data: &NestedDataset,
    spec: &KernelSpec,
    inducing: &PointSet,
    ridge: Option<f64>,
) -> Result<FittedEstimator> {
    match ridge {
        Some(r) => fit_krr_inducing_with(data, spec, inducing, InducingPenalty::Ridge(r)),
        None => fit_inner(data, spec, inducing, None),
    }
}

pub fn fit_krr_inducing_with(
    data: &NestedDataset,
    spec: &KernelSpec,
    inducing: &PointSet,
    penalty: InducingPenalty,
) -> Result<FittedEstimator> {
    fit_inner(data, spec, inducing, Some(penalty))
}

fn fit_inner(
    data: &NestedDataset,
    spec: &KernelSpec,
    inducing: &PointSet,
    penalty: Option<InducingPenalty>,
) -> Result<FittedEstimator> {
    check_data(data)?;
    let n = data.n();
    let s = inducing.len();
    if s == 0 || s > n {
        return Err(Error::CountOutOfRange { count: s, max: n });
    }
    if inducing.dim() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: data.dim(),
            got: inducing.dim(),
        });
    }
    let k_ns = kernels::cross_gram(spec, &data.scenarios, inducing)?;
    let y = DVector::from_column_slice(&data.ybar);

    let (beta, regularization) = match penalty {
        Some(InducingPenalty::Ridge(r)) if r == 0.0 => (least_squares(&k_ns, &y)?, 0.0),
        _ => {
            let mut normal = k_ns.tr_mul(&k_ns);
            let rhs = k_ns.tr_mul(&y);
            let reg = match penalty {
                None => {
                    let r = default_inducing_ridge(&normal);
                    add_diagonal(&mut normal, r);
                    r
                }
                Some(InducingPenalty::Ridge(r)) => {
                    check_nonnegative("ridge", r)?;
                    add_diagonal(&mut normal, r);
                    r
                }
                Some(InducingPenalty::Rkhs(lambda)) => {
                    check_nonnegative("lambda", lambda)?;
                    let k_ss = kernels::cross_gram(spec, inducing, inducing)?;
                    normal += k_ss * (n as f64 * lambda);
                    // keeps the system definite when inducing points nearly coincide
                    let jitter = default_inducing_ridge(&normal);
                    add_diagonal(&mut normal, jitter);
                    lambda
                }
            };
            (solve_spd(normal.as_slice(), s, rhs.as_slice(), reg)?, reg)
        }
    };

    let fitted = &k_ns * DVector::from_column_slice(&beta);
    let residual_norm = empirical_norm(fitted.as_slice(), &data.ybar);
    Ok(FittedEstimator {
        kind: EstimatorKind::InducingKrr,
        model: Model::KernelExpansion {
            kernel: *spec,
            centers: PointSet::new(inducing.dim(), inducing.coords().to_vec())?,
            weights: beta,
        },
        meta: TrainingMeta {
            n,
            m: data.m,
            residual_norm,
            iterations: 1,
            regularization,
        },
    })
}

fn check_nonnegative(name: &'static str, v: f64) -> Result<()> {
    if !(v >= 0.0 && v.is_finite()) {
        return Err(Error::invalid(
            name,
            format!("{v} is not a nonnegative number"),
        ));
    }
    Ok(())
}

fn add_diagonal(m: &mut DMatrix<f64>, v: f64) {
    for i in 0..m.nrows() {
        m[(i, i)] += v;
    }
}

fn least_squares(a: &DMatrix<f64>, y: &DVector<f64>) -> Result<Vec<f64>> {
    let cols = a.ncols();
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * f64::EPSILON * a.nrows().max(cols) as f64;
    let rank = svd.singular_values.iter().filter(|&&v| v > tol).count();
    if rank < cols {
        return Err(Error::RankDeficient {
            rank,
            columns: cols,
        });
    }
    let beta = svd
        .solve(y, tol)
        .map_err(|e| Error::invalid("design", e.to_string()))?;
    Ok(beta.as_slice().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::fit_krr;
    use crate::kernels::random_subsample;
    use crate::synthetic::{make_test_function, simulate_inner, simulate_outer, TestFunction};
    use rand::Rng;

    fn data(n: usize, d: usize, seed: u64) -> NestedDataset {
        let f = make_test_function(KernelSpec::laplace(d), 50, seed).unwrap();
        let xs = simulate_outer(n, d, seed + 1).unwrap();
        simulate_inner(&f, &xs, 1, 0.5, seed + 2).unwrap()
    }

    fn loss(est: &FittedEstimator, data: &NestedDataset) -> f64 {
        let p = est.predict(&data.scenarios).unwrap();
        empirical_norm(&p, &data.ybar).powi(2)
    }

    #[test]
    fn all_scenarios_match_interpolating_krr() {
        let data = data(40, 2, 1);
        let spec = KernelSpec::laplace(2);
        let a = fit_krr_inducing(&data, &spec, &data.scenarios, Some(0.0)).unwrap();
        let b = fit_krr(&data, &spec, 0.0).unwrap();
        let (pa, pb) = (
            a.predict(&data.scenarios).unwrap(),
            b.predict(&data.scenarios).unwrap(),
        );
        for (x, y) in pa.iter().zip(&pb) {
            assert!((x - y).abs() < 1e-6, "{x} vs {y}");
        }
    }

    #[test]
    fn single_inducing_point_closed_form() {
        let data = data(30, 3, 2);
        let spec = KernelSpec::laplace(3);
        let u = data.scenarios.select(&[7]);
        let est = fit_krr_inducing(&data, &spec, &u, Some(0.0)).unwrap();
        let col: Vec<f64> = data
            .scenarios
            .iter()
            .map(|x| spec.eval(x, u.point(0)).unwrap())
            .collect();
        let num: f64 = col.iter().zip(&data.ybar).map(|(k, y)| k * y).sum();
        let den: f64 = col.iter().map(|k| k * k).sum();
        let beta = est.kernel_weights().unwrap()[0];
        assert!((beta - num / den).abs() < 1e-12 * (num / den).abs().max(1.0));
    }

    /// Modified Gram-Schmidt QR followed by back substitution.
    fn qr_least_squares(a: &DMatrix<f64>, y: &[f64]) -> Vec<f64> {
        let (n, s) = a.shape();
        let mut q: Vec<Vec<f64>> = (0..s)
            .map(|j| a.column(j).iter().copied().collect())
            .collect();
        let mut r = vec![vec![0.0; s]; s];
        for j in 0..s {
            for i in 0..j {
                let dot: f64 = (0..n).map(|k| q[i][k] * q[j][k]).sum();
                r[i][j] = dot;
                for k in 0..n {
                    q[j][k] -= dot * q[i][k];
                }
            }
            let norm = q[j].iter().map(|v| v * v).sum::<f64>().sqrt();
            r[j][j] = norm;
            q[j].iter_mut().for_each(|v| *v /= norm);
        }
        let qty: Vec<f64> = (0..s)
            .map(|j| (0..n).map(|k| q[j][k] * y[k]).sum())
            .collect();
        let mut beta = vec![0.0; s];
        for i in (0..s).rev() {
            let tail: f64 = (i + 1..s).map(|j| r[i][j] * beta[j]).sum();
            beta[i] = (qty[i] - tail) / r[i][i];
        }
        beta
    }

    #[test]
    fn matches_qr_oracle() {
        let data = data(50, 2, 3);
        let spec = KernelSpec::laplace(2);
        let u = random_subsample(&data.scenarios, 5, 9).unwrap();
        let est = fit_krr_inducing(&data, &spec, &u, Some(0.0)).unwrap();
        let design = kernels::cross_gram(&spec, &data.scenarios, &u).unwrap();
        let oracle = qr_least_squares(&design, &data.ybar);
        for (b, o) in est.kernel_weights().unwrap().iter().zip(&oracle) {
            assert!((b - o).abs() < 1e-8, "{b} vs {o}");
        }
    }

    #[test]
    fn ridge_free_fit_is_stationary() {
        let data = data(60, 2, 4);
        let spec = KernelSpec::laplace(2);
        let u = random_subsample(&data.scenarios, 8, 1).unwrap();
        let est = fit_krr_inducing(&data, &spec, &u, Some(0.0)).unwrap();
        let base = loss(&est, &data);
        let mut rng = crate::rng::rng_from_seed(5);
        for _ in 0..20 {
            let mut pert = est.clone();
            if let Model::KernelExpansion { weights, .. } = &mut pert.model {
                for w in weights.iter_mut() {
                    *w += 1e-3 * rng.random_range(-1.0..1.0);
                }
            }
            assert!(loss(&pert, &data) >= base - 1e-14);
        }
    }

    #[test]
    fn superset_never_increases_loss() {
        let data = data(200, 3, 5);
        let spec = KernelSpec::laplace(3);
        let idx: Vec<usize> = (0..40).map(|i| i * 5).collect();
        let mut last = f64::INFINITY;
        for s in [2, 5, 10, 20, 40] {
            let u = data.scenarios.select(&idx[..s]);
            let l = loss(
                &fit_krr_inducing(&data, &spec, &u, Some(0.0)).unwrap(),
                &data,
            );
            assert!(l <= last + 1e-12, "S={s}: {l} > {last}");
            last = l;
        }
    }

    #[test]
    fn function_in_span_is_recovered() {
        let d = 2;
        let spec = KernelSpec::laplace(d);
        let xs = simulate_outer(80, d, 6).unwrap();
        let u = xs.select(&[3, 17, 40]);
        let f = TestFunction::from_expansion(spec, xs.select(&[17]), vec![2.5]).unwrap();
        let data = simulate_inner(&f, &xs, 1, 0.0, 1).unwrap();
        let est = fit_krr_inducing(&data, &spec, &u, Some(0.0)).unwrap();
        assert!(loss(&est, &data) < 1e-8);
        assert!(est.meta.residual_norm.powi(2) < 1e-8);
    }

    #[test]
    fn errors() {
        let data = data(20, 2, 7);
        let spec = KernelSpec::laplace(2);
        let dup = data.scenarios.select(&[1, 1, 2]);
        assert!(matches!(
            fit_krr_inducing(&data, &spec, &dup, Some(0.0)),
            Err(Error::RankDeficient {
                rank: 2,
                columns: 3
            })
        ));
        assert!(fit_krr_inducing(&data, &spec, &dup, None).is_ok());
        assert!(fit_krr_inducing(&data, &spec, &PointSet::empty(2), None).is_err());
        let wrong = simulate_outer(3, 3, 1).unwrap();
        assert!(matches!(
            fit_krr_inducing(&data, &spec, &wrong, None),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rkhs_penalty_shrinks_towards_zero() {
        let data = data(60, 2, 8);
        let spec = KernelSpec::laplace(2);
        let u = random_subsample(&data.scenarios, 10, 2).unwrap();
        let loose = fit_krr_inducing_with(&data, &spec, &u, InducingPenalty::Rkhs(1e-8)).unwrap();
        let tight = fit_krr_inducing_with(&data, &spec, &u, InducingPenalty::Rkhs(1e6)).unwrap();
        assert!(loss(&loose, &data) <= loss(&tight, &data));
        let sup = tight
            .predict(&data.scenarios)
            .unwrap()
            .iter()
            .fold(0.0f64, |a, p| a.max(p.abs()));
        assert!(sup < 1e-3);
    }
}
