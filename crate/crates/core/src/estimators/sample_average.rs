use super::{check_data, EstimatorKind, FittedEstimator, Model, TrainingMeta};
use crate::error::Result;
use crate::synthetic::NestedDataset;

/// The standard nested-simulation estimator: `f_hat(x_i) = ybar_i`.
pub fn fit_sample_average(data: &NestedDataset) -> Result<FittedEstimator> {
    check_data(data)?;
    Ok(FittedEstimator {
        kind: EstimatorKind::SampleAverage,
        model: Model::SampleAverage {
            scenarios: data.scenarios.clone(),
            values: data.ybar.clone(),
        },
        meta: TrainingMeta {
            n: data.n(),
            m: data.m,
            residual_norm: 0.0,
            iterations: 0,
            regularization: 0.0,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{KernelSpec, PointSet};
    use crate::synthetic::{eval_f, make_test_function, simulate_inner, simulate_outer};

    #[test]
    fn interpolates_averages() {
        let f = make_test_function(KernelSpec::laplace(3), 20, 1).unwrap();
        let xs = simulate_outer(10, 3, 2).unwrap();
        let data = simulate_inner(&f, &xs, 4, 1.0, 3).unwrap();
        let est = fit_sample_average(&data).unwrap();
        assert_eq!(est.predict_one(xs.point(3)).unwrap(), data.ybar[3]);
        assert_eq!(est.predict(&xs).unwrap(), data.ybar);
        assert_eq!(est.meta.residual_norm, 0.0);

        let clean = simulate_inner(&f, &xs, 4, 0.0, 3).unwrap();
        let est = fit_sample_average(&clean).unwrap();
        assert_eq!(est.predict(&xs).unwrap(), eval_f(&f, &xs).unwrap());
    }

    #[test]
    fn off_sample_uses_nearest_scenario() {
        let xs = PointSet::from_rows(&[vec![0.1], vec![0.9]]).unwrap();
        let data = NestedDataset {
            scenarios: xs,
            ybar: vec![1.0, 2.0],
            m: 1,
            noise_sigma: 0.0,
            seed: 0,
        };
        let est = fit_sample_average(&data).unwrap();
        assert_eq!(est.predict_one(&[0.3]).unwrap(), 1.0);
        assert_eq!(est.predict_one(&[0.7]).unwrap(), 2.0);
    }
}
