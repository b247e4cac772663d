//! Config-driven experiment runner: sweeps sample sizes, replicates with
//! derived seeds, records `|theta_hat - theta|`, fits log-log slopes and
//! writes CSV/JSON results.

mod config;
mod output;
mod run;

pub use config::{
    Cell, EstimatorConfig, EstimatorParams, ExperimentConfig, InducingSelection, ThetaMode,
    DEFAULT_REPLICATIONS, DEFAULT_THETA_REFERENCE_POINTS,
};
pub use output::{
    emit_results, parse_results_csv, read_results_csv, results_csv, results_json, slopes_csv,
    slopes_path, OutputFormat, RESULTS_HEADER, SLOPES_HEADER,
};
pub use run::{
    experiment_test_function, fit_estimator, fit_loglog_slope, fit_slopes, replication_dataset,
    run_experiment, thread_cap, CellFailure, CellSummary, ExperimentResult, LogLogFit, SlopeFit,
};

use crate::error::Result;
use crate::estimators::EstimatorKind;
use crate::functionals::FunctionalSpec;
use crate::kernels::KernelSpec;
use crate::rates::{
    predict_gaussian_rkhs_rate, predict_relu_rate, predict_sobolev_rate, predict_standard_rate,
    predict_var_rate, RatePrediction,
};

/// Predicted error rate of one configured estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct RateRow {
    pub estimator: String,
    /// `None` when the configuration does not determine a rate.
    pub prediction: Option<RatePrediction>,
    pub note: String,
}

fn kernel_rate(
    kernel: &KernelSpec,
    functional: &FunctionalSpec,
    cfg: &ExperimentConfig,
) -> Result<RatePrediction> {
    let d = kernel.dim;
    match (kernel.sobolev_order(), functional) {
        (Some(s), FunctionalSpec::NestedExpectation(_)) => Ok(predict_sobolev_rate(s, d)?.theta),
        (Some(s), FunctionalSpec::VaR(_)) => predict_var_rate(
            &predict_sobolev_rate(s, d)?.delta,
            cfg.var_alpha,
            cfg.var_beta,
            cfg.var_gamma,
        ),
        (None, FunctionalSpec::NestedExpectation(_)) => Ok(RatePrediction {
            exponent: -0.5,
            log_power: 0.0,
            description: format!("nested expectation n^(-1/2) + delta^2, d={d}"),
            ..predict_gaussian_rkhs_rate(d)?
        }),
        (None, FunctionalSpec::VaR(_)) => predict_var_rate(
            &predict_gaussian_rkhs_rate(d)?,
            cfg.var_alpha,
            cfg.var_beta,
            cfg.var_gamma,
        ),
    }
}

/// One row per configured estimator with its predicted rate in the total budget.
pub fn rates_table(cfg: &ExperimentConfig) -> Result<Vec<RateRow>> {
    let d = cfg.dim();
    cfg.estimators
        .iter()
        .map(|est| {
            let (prediction, note) = match (&est.params, est.kind) {
                (_, EstimatorKind::SampleAverage) => match cfg.functional {
                    FunctionalSpec::NestedExpectation(_) => {
                        (Some(predict_standard_rate()), String::new())
                    }
                    FunctionalSpec::VaR(_) => (
                        None,
                        "no closed form for the sample average under VaR".into(),
                    ),
                },
                (
                    EstimatorParams::Krr { kernel, .. }
                    | EstimatorParams::InducingKrr { kernel, .. },
                    _,
                ) => (
                    Some(kernel_rate(kernel, &cfg.functional, cfg)?),
                    String::new(),
                ),
                _ => match cfg.smoothness.or(cfg.test_kernel.sobolev_order()) {
                    Some(s) if s >= 1.0 => {
                        let base = predict_relu_rate(s, d)?;
                        let p = match cfg.functional {
                            FunctionalSpec::NestedExpectation(_) => RatePrediction {
                                exponent: -0.5,
                                log_power: 0.0,
                                description: format!("nested expectation n^(-1/2), s={s}, d={d}"),
                                ..base
                            },
                            FunctionalSpec::VaR(_) => {
                                let alpha = d as f64 / (d as f64 + 2.0);
                                predict_var_rate(&base, alpha, cfg.var_beta, cfg.var_gamma)?
                            }
                        };
                        (Some(p), "assumes the training error is O(n^(-1/2))".into())
                    }
                    _ => (None, "set `smoothness` (>= 1) for a ReLU rate".into()),
                },
            };
            Ok(RateRow {
                estimator: est.label.clone(),
                prediction,
                note,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_var_table() {
        let text = r#"
functional = "var"
tau = 0.95
test_kernel = "gaussian"
d = 10
sizes = [1000, 2000, 4000]
smoothness = 2.0

[[estimator]]
kind = "krr"

[[estimator]]
kind = "inducing_krr"

[[estimator]]
kind = "relu"

[[estimator]]
kind = "sample_average"
"#;
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        let rows = rates_table(&cfg).unwrap();
        for row in &rows[..2] {
            let p = row.prediction.as_ref().unwrap();
            assert_eq!((p.exponent, p.log_power), (-0.5, 5.5));
        }
        let relu = rows[2].prediction.as_ref().unwrap();
        assert!((relu.exponent + (2.0 / 14.0) * (10.0 / 12.0)).abs() < 1e-12);
        assert!(rows[3].prediction.is_none());
    }
}
