//! Experiment configuration, read from TOML.
//!
//! ```toml
//! functional = "nested_expectation"   # or "var"
//! eta = "square"                      # square | identity | exp_clipped
//! tau = 0.95                          # VaR level
//! test_kernel = "laplace"             # laplace | gaussian | matern12 | matern32 | matern52
//! d = 10
//! centers = 1000
//! sizes = [500, 1000, 2000, 4000]     # or: budgets = [...] with allocation = "standard"
//! m = 1
//! sigma = 1.0
//! replications = 50
//! seed = 1
//! theta_eval_points = 1000000
//! theta_mode = "training"             # or "fresh" (with fresh_points = 10000)
//! timing = true
//!
//! [[estimator]]
//! kind = "inducing_krr"               # sample_average | krr | inducing_krr | relu
//! schedule = "experiment"             # theory | experiment
//! ```
//!
//! Per-estimator keys (all optional): `label`, `kernel`, `lengthscale`,
//! `lambda`, `lambda_cv`, `schedule`, `inducing_count`, `selection`
//! (`random` | `farthest`), `ridge`, `hidden`, `bound`, `sparsity`, `epochs`,
//! `learning_rate`, `batch_size`.

use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::estimators::{EstimatorKind, ReluArchitecture, TrainConfig};
use crate::functionals::{Eta, FunctionalSpec};
use crate::kernels::KernelSpec;
use crate::rates::{allocate, AllocationScheme, ScheduleMode};
use crate::synthetic::{parse_kernel, DEFAULT_CENTERS};

pub const DEFAULT_REPLICATIONS: usize = 100;
pub const DEFAULT_THETA_REFERENCE_POINTS: usize = 1_000_000;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    functional: String,
    eta: Option<String>,
    tau: Option<f64>,
    test_kernel: String,
    test_lengthscale: Option<f64>,
    d: usize,
    centers: Option<usize>,
    sizes: Option<Vec<usize>>,
    budgets: Option<Vec<u64>>,
    allocation: Option<String>,
    m: Option<usize>,
    sigma: Option<f64>,
    replications: Option<usize>,
    seed: Option<u64>,
    theta_eval_points: Option<usize>,
    theta_mode: Option<String>,
    fresh_points: Option<usize>,
    timing: Option<bool>,
    alpha: Option<f64>,
    beta: Option<f64>,
    gamma: Option<f64>,
    smoothness: Option<f64>,
    #[serde(default, rename = "estimator")]
    estimators: Vec<RawEstimator>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEstimator {
    kind: String,
    label: Option<String>,
    kernel: Option<String>,
    lengthscale: Option<f64>,
    lambda: Option<f64>,
    lambda_cv: Option<bool>,
    schedule: Option<String>,
    inducing_count: Option<usize>,
    selection: Option<String>,
    ridge: Option<f64>,
    hidden: Option<Vec<usize>>,
    bound: Option<f64>,
    sparsity: Option<usize>,
    epochs: Option<usize>,
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThetaMode {
    /// Plug-in on the training scenarios.
    Training,
    /// Plug-in on `points` fresh outer draws.
    Fresh { points: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InducingSelection {
    Random,
    Farthest,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EstimatorParams {
    SampleAverage,
    Krr {
        kernel: KernelSpec,
        /// `None`: the default schedule for the kernel.
        lambda: Option<f64>,
        cross_validate: bool,
    },
    InducingKrr {
        kernel: KernelSpec,
        schedule: ScheduleMode,
        count: Option<usize>,
        selection: InducingSelection,
        ridge: Option<f64>,
        /// RKHS penalty on the span instead of the ridge.
        lambda: Option<f64>,
    },
    Relu {
        arch: ReluArchitecture,
        train: TrainConfig,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub label: String,
    pub kind: EstimatorKind,
    pub params: EstimatorParams,
}

/// One sweep point: `n` outer scenarios with `m` inner samples each.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub n: usize,
    pub m: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub functional: FunctionalSpec,
    pub test_kernel: KernelSpec,
    pub centers: usize,
    pub cells: Vec<Cell>,
    pub sigma: f64,
    pub estimators: Vec<EstimatorConfig>,
    pub replications: usize,
    pub master_seed: u64,
    pub theta_eval_points: usize,
    pub theta_mode: ThetaMode,
    /// When false, wall times are written as zero so output is reproducible byte for byte.
    pub timing: bool,
    /// Exponents of the VaR rate (`alpha` for kernel sieves; ReLU uses `d/(d+2)`).
    pub var_alpha: f64,
    pub var_beta: f64,
    pub var_gamma: f64,
    /// Smoothness used for ReLU rate predictions; defaults to the test kernel's Sobolev order.
    pub smoothness: Option<f64>,
}

impl ExperimentConfig {
    pub fn dim(&self) -> usize {
        self.test_kernel.dim
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        raw.resolve()
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

fn config_err(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

impl RawConfig {
    fn resolve(self) -> Result<ExperimentConfig> {
        if self.d == 0 {
            return Err(Error::Config("d must be positive".into()));
        }
        let functional = match self.functional.as_str() {
            "nested_expectation" => {
                let eta = self.eta.as_deref().unwrap_or("square").parse::<Eta>()?;
                FunctionalSpec::NestedExpectation(eta)
            }
            "var" => {
                let tau = self
                    .tau
                    .ok_or_else(|| Error::Config("functional = \"var\" needs tau".into()))?;
                FunctionalSpec::var(tau).map_err(config_err)?
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown functional `{other}` (expected nested_expectation or var)"
                )))
            }
        };
        let test_kernel =
            parse_kernel(&self.test_kernel, self.d, self.test_lengthscale).map_err(config_err)?;

        let cells = match (self.sizes, self.budgets) {
            (Some(sizes), None) => {
                if self.allocation.is_some() {
                    return Err(Error::Config(
                        "allocation applies to budgets, not sizes".into(),
                    ));
                }
                let m = self.m.unwrap_or(1);
                if m == 0 {
                    return Err(Error::Config("m must be at least 1".into()));
                }
                sizes.into_iter().map(|n| Cell { n, m }).collect::<Vec<_>>()
            }
            (None, Some(budgets)) => {
                if self.m.is_some() {
                    return Err(Error::Config(
                        "m is set by the allocation when budgets are given".into(),
                    ));
                }
                let scheme: AllocationScheme =
                    self.allocation.as_deref().unwrap_or("standard").parse()?;
                budgets
                    .into_iter()
                    .map(|b| {
                        allocate(scheme, b)
                            .map(|a| Cell { n: a.n, m: a.m })
                            .map_err(config_err)
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            _ => {
                return Err(Error::Config(
                    "exactly one of sizes or budgets is required".into(),
                ))
            }
        };
        if cells.is_empty() {
            return Err(Error::Config("no sizes given".into()));
        }
        if cells.iter().any(|c| c.n == 0) {
            return Err(Error::Config("sizes must be positive".into()));
        }
        if cells.windows(2).any(|w| w[1].n * w[1].m <= w[0].n * w[0].m) {
            return Err(Error::Config("sizes must be strictly increasing".into()));
        }

        let replications = self.replications.unwrap_or(DEFAULT_REPLICATIONS);
        if replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        let sigma = self.sigma.unwrap_or(1.0);
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!(
                "sigma = {sigma} is not a nonnegative number"
            )));
        }
        let theta_mode = match self.theta_mode.as_deref().unwrap_or("training") {
            "training" => ThetaMode::Training,
            "fresh" => ThetaMode::Fresh {
                points: self.fresh_points.unwrap_or(10_000),
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown theta_mode `{other}` (expected training or fresh)"
                )))
            }
        };
        if self.estimators.is_empty() {
            return Err(Error::Config(
                "at least one [[estimator]] table is required".into(),
            ));
        }
        let estimators = self
            .estimators
            .into_iter()
            .map(|e| e.resolve(&test_kernel))
            .collect::<Result<Vec<_>>>()?;
        for (i, e) in estimators.iter().enumerate() {
            if estimators[..i].iter().any(|o| o.label == e.label) {
                return Err(Error::Config(format!(
                    "duplicate estimator label `{}`",
                    e.label
                )));
            }
        }
        Ok(ExperimentConfig {
            functional,
            test_kernel,
            centers: self.centers.unwrap_or(DEFAULT_CENTERS),
            cells,
            sigma,
            estimators,
            replications,
            master_seed: self.seed.unwrap_or(0),
            theta_eval_points: self
                .theta_eval_points
                .unwrap_or(DEFAULT_THETA_REFERENCE_POINTS),
            theta_mode,
            timing: self.timing.unwrap_or(true),
            var_alpha: self.alpha.unwrap_or(1.0),
            var_beta: self.beta.unwrap_or(1.0),
            var_gamma: self.gamma.unwrap_or(1.0),
            smoothness: self.smoothness,
        })
    }
}

impl RawEstimator {
    fn resolve(self, test_kernel: &KernelSpec) -> Result<EstimatorConfig> {
        let kind: EstimatorKind = self.kind.parse()?;
        let kernel = match &self.kernel {
            Some(name) => {
                parse_kernel(name, test_kernel.dim, self.lengthscale).map_err(config_err)?
            }
            None => *test_kernel,
        };
        let label = self
            .label
            .clone()
            .unwrap_or_else(|| kind.name().to_string());
        let unused = |keys: &[(&str, bool)]| -> Result<()> {
            match keys.iter().find(|(_, set)| *set) {
                Some((key, _)) => Err(Error::Config(format!(
                    "estimator `{label}`: key `{key}` does not apply to {kind}"
                ))),
                None => Ok(()),
            }
        };
        let kernel_keys = [
            ("kernel", self.kernel.is_some()),
            ("lengthscale", self.lengthscale.is_some()),
            ("lambda", self.lambda.is_some()),
        ];
        let krr_keys = [("lambda_cv", self.lambda_cv.is_some())];
        let inducing_keys = [
            ("schedule", self.schedule.is_some()),
            ("inducing_count", self.inducing_count.is_some()),
            ("selection", self.selection.is_some()),
            ("ridge", self.ridge.is_some()),
        ];
        let relu_keys = [
            ("hidden", self.hidden.is_some()),
            ("bound", self.bound.is_some()),
            ("sparsity", self.sparsity.is_some()),
            ("epochs", self.epochs.is_some()),
            ("learning_rate", self.learning_rate.is_some()),
            ("batch_size", self.batch_size.is_some()),
        ];
        let params = match kind {
            EstimatorKind::SampleAverage => {
                unused(&kernel_keys)?;
                unused(&krr_keys)?;
                unused(&inducing_keys)?;
                unused(&relu_keys)?;
                EstimatorParams::SampleAverage
            }
            EstimatorKind::Krr => {
                unused(&inducing_keys)?;
                unused(&relu_keys)?;
                let cross_validate = self.lambda_cv.unwrap_or(false);
                if cross_validate && self.lambda.is_some() {
                    return Err(Error::Config(format!(
                        "estimator `{label}`: lambda and lambda_cv are exclusive"
                    )));
                }
                check_nonneg(&label, "lambda", self.lambda)?;
                EstimatorParams::Krr {
                    kernel,
                    lambda: self.lambda,
                    cross_validate,
                }
            }
            EstimatorKind::InducingKrr => {
                unused(&krr_keys)?;
                unused(&relu_keys)?;
                if self.ridge.is_some() && self.lambda.is_some() {
                    return Err(Error::Config(format!(
                        "estimator `{label}`: ridge and lambda are exclusive"
                    )));
                }
                check_nonneg(&label, "ridge", self.ridge)?;
                check_nonneg(&label, "lambda", self.lambda)?;
                if self.inducing_count == Some(0) {
                    return Err(Error::Config(format!(
                        "estimator `{label}`: inducing_count must be positive"
                    )));
                }
                let selection = match self.selection.as_deref().unwrap_or("random") {
                    "random" => InducingSelection::Random,
                    "farthest" => InducingSelection::Farthest,
                    other => {
                        return Err(Error::Config(format!(
                            "estimator `{label}`: unknown selection `{other}` (expected random or farthest)"
                        )))
                    }
                };
                EstimatorParams::InducingKrr {
                    kernel,
                    schedule: self.schedule.as_deref().unwrap_or("experiment").parse()?,
                    count: self.inducing_count,
                    selection,
                    ridge: self.ridge,
                    lambda: self.lambda,
                }
            }
            EstimatorKind::ReluSieve => {
                unused(&kernel_keys)?;
                unused(&krr_keys)?;
                unused(&inducing_keys)?;
                let hidden = self.hidden.clone().unwrap_or_else(|| vec![256, 128]);
                let mut arch =
                    ReluArchitecture::dense(test_kernel.dim, &hidden, self.bound.unwrap_or(1e3));
                if let Some(s) = self.sparsity {
                    arch.sparsity = s;
                }
                arch.validate().map_err(config_err)?;
                let defaults = TrainConfig::default();
                let train = TrainConfig {
                    epochs: self.epochs.unwrap_or(defaults.epochs),
                    learning_rate: self.learning_rate.unwrap_or(defaults.learning_rate),
                    batch_size: self.batch_size,
                    seed: 0,
                };
                if !(train.learning_rate > 0.0) || train.batch_size == Some(0) {
                    return Err(Error::Config(format!(
                        "estimator `{label}`: learning_rate and batch_size must be positive"
                    )));
                }
                EstimatorParams::Relu { arch, train }
            }
        };
        Ok(EstimatorConfig {
            label,
            kind,
            params,
        })
    }
}

fn check_nonneg(label: &str, key: &str, v: Option<f64>) -> Result<()> {
    match v {
        Some(x) if !(x >= 0.0 && x.is_finite()) => Err(Error::Config(format!(
            "estimator `{label}`: {key} = {x} is not a nonnegative number"
        ))),
        _ => Ok(()),
    }
}
