use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;

use super::config::{
    Cell, EstimatorConfig, EstimatorParams, ExperimentConfig, InducingSelection, ThetaMode,
};
use crate::error::{Error, Result};
use crate::estimators::{
    default_krr_lambda, fit_krr, fit_krr_inducing, fit_krr_inducing_with, fit_relu_sieve,
    fit_sample_average, select_krr_lambda_cv, FittedEstimator, InducingPenalty, TrainConfig,
    KRR_CV_GRID,
};
use crate::kernels::{farthest_point_sample, random_subsample};
use crate::rates::inducing_count_schedule;
use crate::rng::{self, derive_seed};
use crate::synthetic::{
    make_test_function, simulate_inner, simulate_outer, true_theta, NestedDataset, TestFunction,
    ThetaOracle,
};

/// Aggregate over the replications of one `(estimator, n)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub estimator: String,
    pub n: usize,
    pub m: usize,
    /// Replications that produced an estimate.
    pub replications: usize,
    pub mean_abs_error: f64,
    pub std_abs_error: f64,
    pub wall_time_s: f64,
    /// `|theta_hat - theta|` per replication in replication order; NaN where the fit failed.
    pub abs_errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlopeFit {
    pub estimator: String,
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub estimator: String,
    pub n: usize,
    pub replication: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub theta: ThetaOracle,
    pub cells: Vec<CellSummary>,
    pub slopes: Vec<SlopeFit>,
    pub failures: Vec<CellFailure>,
}

impl ExperimentResult {
    pub fn cell(&self, estimator: &str, n: usize) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.estimator == estimator && c.n == n)
    }

    pub fn slope(&self, estimator: &str) -> Option<&SlopeFit> {
        self.slopes.iter().find(|s| s.estimator == estimator)
    }
}

/// Least-squares line through `(ln x, ln y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    /// NaN with only two points.
    pub slope_stderr: f64,
}

pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<LogLogFit> {
    if points.len() < 2 {
        return Err(Error::invalid(
            "points",
            format!("{} given, at least 2 required", points.len()),
        ));
    }
    if let Some(&(x, y)) = points.iter().find(|(x, y)| !(*x > 0.0) || !(*y > 0.0)) {
        return Err(Error::invalid(
            "points",
            format!("({x}, {y}) is not positive"),
        ));
    }
    let k = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("points", "all x values coincide"));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_stderr = if points.len() > 2 {
        let ssr: f64 = lx
            .iter()
            .zip(&ly)
            .map(|(x, y)| (y - intercept - slope * x).powi(2))
            .sum();
        (ssr / (k - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    Ok(LogLogFit {
        slope,
        intercept,
        slope_stderr,
    })
}

/// Maximum worker threads from `SIEVESIM_THREADS`, if set.
pub fn thread_cap() -> Result<Option<usize>> {
    match std::env::var("SIEVESIM_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(t) if t > 0 => Ok(Some(t)),
            _ => Err(Error::Config(format!(
                "SIEVESIM_THREADS = `{v}` is not a positive integer"
            ))),
        },
        Err(_) => Ok(None),
    }
}

/// Runs every `(cell, replication, estimator)` combination.
///
/// The test function and its reference value are drawn once; each
/// replication draws fresh scenarios and noise that all estimators share.
/// Failed fits are logged, recorded in `failures` and left out of the
/// aggregates.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    match thread_cap()? {
        Some(threads) => rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?
            .install(|| run_inner(config)),
        None => run_inner(config),
    }
}

struct Outcome {
    abs_error: f64,
    seconds: f64,
}

fn run_inner(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let seed = config.master_seed;
    let f = experiment_test_function(config)?;
    let theta = true_theta(
        &f,
        &config.functional,
        config.theta_eval_points,
        derive_seed(seed, &[rng::THETA]),
    )?;
    info!(
        "reference theta = {:.6e} from {} points",
        theta.value, theta.eval_points
    );

    let tasks: Vec<(usize, usize)> = (0..config.cells.len())
        .flat_map(|k| (0..config.replications).map(move |r| (k, r)))
        .collect();
    let outcomes: Vec<Vec<std::result::Result<Outcome, String>>> = tasks
        .par_iter()
        .map(|&(k, r)| run_replication(config, &f, theta.value, config.cells[k], r))
        .collect::<Result<Vec<_>>>()?;

    let mut cells = Vec::new();
    let mut failures = Vec::new();
    for (e, est) in config.estimators.iter().enumerate() {
        for (k, cell) in config.cells.iter().enumerate() {
            let mut abs_errors = Vec::with_capacity(config.replications);
            let mut seconds = 0.0;
            for r in 0..config.replications {
                match &outcomes[k * config.replications + r][e] {
                    Ok(o) => {
                        abs_errors.push(o.abs_error);
                        seconds += o.seconds;
                    }
                    Err(message) => {
                        warn!("{} n={} replication {r}: {message}", est.label, cell.n);
                        failures.push(CellFailure {
                            estimator: est.label.clone(),
                            n: cell.n,
                            replication: r,
                            message: message.clone(),
                        });
                        abs_errors.push(f64::NAN);
                    }
                }
            }
            let valid: Vec<f64> = abs_errors.iter().copied().filter(|v| !v.is_nan()).collect();
            let (mean, std) = mean_and_std(&valid);
            cells.push(CellSummary {
                estimator: est.label.clone(),
                n: cell.n,
                m: cell.m,
                replications: valid.len(),
                mean_abs_error: mean,
                std_abs_error: std,
                wall_time_s: if config.timing && !valid.is_empty() {
                    seconds / valid.len() as f64
                } else {
                    0.0
                },
                abs_errors,
            });
        }
    }
    let slopes = fit_slopes(&cells, 3);
    Ok(ExperimentResult {
        theta,
        cells,
        slopes,
        failures,
    })
}

/// Arithmetic mean and unbiased standard deviation (0 for fewer than two values, NaN for none).
pub(crate) fn mean_and_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Per-estimator slope of `ln mean_abs_error` against `ln(n m)` over cells
/// with a positive error; estimators with fewer than `min_points` such cells
/// get no slope.
pub fn fit_slopes(cells: &[CellSummary], min_points: usize) -> Vec<SlopeFit> {
    let mut labels: Vec<&str> = Vec::new();
    for c in cells {
        if !labels.contains(&c.estimator.as_str()) {
            labels.push(&c.estimator);
        }
    }
    labels
        .into_iter()
        .filter_map(|label| {
            let points: Vec<(f64, f64)> = cells
                .iter()
                .filter(|c| c.estimator == label && c.replications > 0 && c.mean_abs_error > 0.0)
                .map(|c| ((c.n * c.m) as f64, c.mean_abs_error))
                .collect();
            if points.len() < min_points.max(2) {
                warn!("{label}: {} valid sizes, no slope fitted", points.len());
                return None;
            }
            let fit = fit_loglog_slope(&points).ok()?;
            Some(SlopeFit {
                estimator: label.to_string(),
                slope: fit.slope,
                intercept: fit.intercept,
                slope_stderr: fit.slope_stderr,
            })
        })
        .collect()
}

/// The frozen test function of an experiment.
pub fn experiment_test_function(config: &ExperimentConfig) -> Result<TestFunction> {
    make_test_function(
        config.test_kernel,
        config.centers,
        derive_seed(config.master_seed, &[rng::TEST_FUNCTION]),
    )
}

fn cell_seed(config: &ExperimentConfig, cell: Cell, r: usize, tail: &[u64]) -> u64 {
    let mut path = vec![rng::REPLICATION, r as u64, cell.n as u64];
    path.extend_from_slice(tail);
    derive_seed(config.master_seed, &path)
}

/// Training data of replication `r` in `cell`, exactly as the runner draws it.
pub fn replication_dataset(
    config: &ExperimentConfig,
    f: &TestFunction,
    cell: Cell,
    r: usize,
) -> Result<NestedDataset> {
    let scenarios = simulate_outer(
        cell.n,
        config.dim(),
        cell_seed(config, cell, r, &[rng::SCENARIOS]),
    )?;
    simulate_inner(
        f,
        &scenarios,
        cell.m,
        config.sigma,
        cell_seed(config, cell, r, &[rng::NOISE]),
    )
}

fn run_replication(
    config: &ExperimentConfig,
    f: &TestFunction,
    theta: f64,
    cell: Cell,
    r: usize,
) -> Result<Vec<std::result::Result<Outcome, String>>> {
    let data = replication_dataset(config, f, cell, r)?;
    let fresh = match config.theta_mode {
        ThetaMode::Training => None,
        ThetaMode::Fresh { points } => Some(simulate_outer(
            points,
            config.dim(),
            cell_seed(config, cell, r, &[rng::FRESH]),
        )?),
    };
    Ok(config
        .estimators
        .iter()
        .enumerate()
        .map(|(e, est)| {
            let est_seed = cell_seed(config, cell, r, &[rng::ESTIMATOR, e as u64]);
            let start = Instant::now();
            let theta_hat = fit_estimator(est, &data, est_seed).and_then(|fit| {
                let values = fit.predict(fresh.as_ref().unwrap_or(&data.scenarios))?;
                config.functional.apply(&values)
            });
            let seconds = start.elapsed().as_secs_f64();
            match theta_hat {
                Ok(t) if t.is_finite() => Ok(Outcome {
                    abs_error: (t - theta).abs(),
                    seconds,
                }),
                Ok(t) => Err(format!("non-finite estimate {t}")),
                Err(e) => Err(e.to_string()),
            }
        })
        .collect())
}

/// Fits one configured estimator; `seed` drives inducing-point selection, cross-validation folds and network initialization.
pub fn fit_estimator(
    est: &EstimatorConfig,
    data: &NestedDataset,
    seed: u64,
) -> Result<FittedEstimator> {
    let n = data.n();
    match &est.params {
        EstimatorParams::SampleAverage => fit_sample_average(data),
        EstimatorParams::Krr {
            kernel,
            lambda,
            cross_validate,
        } => {
            let lambda = if *cross_validate {
                select_krr_lambda_cv(data, kernel, &KRR_CV_GRID, 5, seed)?
            } else {
                lambda.unwrap_or_else(|| default_krr_lambda(kernel, n))
            };
            fit_krr(data, kernel, lambda)
        }
        EstimatorParams::InducingKrr {
            kernel,
            schedule,
            count,
            selection,
            ridge,
            lambda,
        } => {
            let count = match count {
                Some(c) => *c,
                None if n >= 2 => inducing_count_schedule(kernel, *schedule, n as f64)?,
                None => 1,
            }
            .min(n);
            let inducing = match selection {
                InducingSelection::Random => random_subsample(&data.scenarios, count, seed)?,
                InducingSelection::Farthest => farthest_point_sample(&data.scenarios, count, seed)?,
            };
            match lambda {
                Some(l) => {
                    fit_krr_inducing_with(data, kernel, &inducing, InducingPenalty::Rkhs(*l))
                }
                None => fit_krr_inducing(data, kernel, &inducing, *ridge),
            }
        }
        EstimatorParams::Relu { arch, train } => {
            let train = TrainConfig {
                seed,
                ..train.clone()
            };
            fit_relu_sieve(data, arch, &train)
        }
    }
}
