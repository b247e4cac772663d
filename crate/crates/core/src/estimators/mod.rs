//! Least-squares estimators on sieves.
//!
//! Every estimator minimizes the empirical loss `|h - ybar|_n^2` over its
//! own candidate set and returns a [`FittedEstimator`] with the same
//! prediction contract:
//!
//! * [`fit_sample_average`]: indicators of the scenarios (interpolates `ybar`).
//! * [`fit_krr`]: penalized kernel ridge regression over the full RKHS.
//! * [`fit_krr_inducing`]: least squares on `span{k(x_j, .)}` for an inducing set.
//! * [`fit_relu_sieve`]: sparse, bounded ReLU networks.

mod inducing;
mod krr;
mod relu;
mod sample_average;

pub use inducing::{
    default_inducing_ridge, fit_krr_inducing, fit_krr_inducing_with, InducingPenalty,
};
pub use krr::{
    default_krr_lambda, fit_krr, fit_krr_with_jitter, select_krr_lambda_cv, KRR_CV_GRID,
};
pub use relu::{
    approximation_block_count, fit_relu_sieve, relu_architecture_from_rate, Dense, RateSchedule,
    ReluArchitecture, ReluNetwork, TrainConfig,
};
pub use sample_average::fit_sample_average;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::{KernelFamily, KernelSpec, PointSet};
use crate::synthetic::{kernel_name, parse_kernel};
use crate::textfmt::{Block, Document};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorKind {
    SampleAverage,
    Krr,
    InducingKrr,
    ReluSieve,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::SampleAverage => "sample_average",
            EstimatorKind::Krr => "krr",
            EstimatorKind::InducingKrr => "inducing_krr",
            EstimatorKind::ReluSieve => "relu",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sample_average" => Ok(EstimatorKind::SampleAverage),
            "krr" => Ok(EstimatorKind::Krr),
            "inducing_krr" => Ok(EstimatorKind::InducingKrr),
            "relu" => Ok(EstimatorKind::ReluSieve),
            other => Err(Error::Config(format!("unknown estimator kind `{other}`"))),
        }
    }
}

/// Fit diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMeta {
    pub n: usize,
    pub m: usize,
    /// `|f_hat - ybar|_n` on the training scenarios.
    pub residual_norm: f64,
    /// Linear solves for kernel fits, optimizer steps for networks.
    pub iterations: usize,
    /// Ridge or penalty actually used (0 when not applicable).
    pub regularization: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    /// Values at the scenarios; nearest-scenario value elsewhere.
    SampleAverage {
        scenarios: PointSet,
        values: Vec<f64>,
    },
    /// `sum_j w_j k(x, c_j)`.
    KernelExpansion {
        kernel: KernelSpec,
        centers: PointSet,
        weights: Vec<f64>,
    },
    Relu(ReluNetwork),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedEstimator {
    pub kind: EstimatorKind,
    pub model: Model,
    pub meta: TrainingMeta,
}

const PREDICT_CHUNK: usize = 256;

impl FittedEstimator {
    pub fn dim(&self) -> usize {
        match &self.model {
            Model::SampleAverage { scenarios, .. } => scenarios.dim(),
            Model::KernelExpansion { kernel, .. } => kernel.dim,
            Model::Relu(net) => net.input_dim(),
        }
    }

    /// Expansion weights of kernel fits (`alpha` for KRR, `beta` for inducing points).
    pub fn kernel_weights(&self) -> Option<&[f64]> {
        match &self.model {
            Model::KernelExpansion { weights, .. } => Some(weights),
            _ => None,
        }
    }

    /// Prediction at a single point.
    pub fn predict_one(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(self.predict_unchecked(x, None))
    }

    fn predict_unchecked(&self, x: &[f64], row: Option<usize>) -> f64 {
        match &self.model {
            Model::SampleAverage { scenarios, values } => {
                if let Some(i) = row.filter(|&i| i < scenarios.len()) {
                    if scenarios.point(i) == x {
                        return values[i];
                    }
                }
                let (best, _) =
                    scenarios
                        .iter()
                        .enumerate()
                        .fold((0, f64::INFINITY), |acc, (i, s)| {
                            let d = crate::kernels::squared_distance(x, s);
                            if d < acc.1 {
                                (i, d)
                            } else {
                                acc
                            }
                        });
                values[best]
            }
            Model::KernelExpansion {
                kernel,
                centers,
                weights,
            } => weights
                .iter()
                .zip(centers.iter())
                .map(|(w, c)| w * kernel.eval_unchecked(x, c))
                .sum(),
            Model::Relu(net) => net.forward_one(x),
        }
    }

    /// Batch prediction; identical to looping [`FittedEstimator::predict_one`].
    pub fn predict(&self, points: &PointSet) -> Result<Vec<f64>> {
        if points.is_empty() {
            return Ok(Vec::new());
        }
        if points.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: points.dim(),
            });
        }
        let mut out = vec![0.0; points.len()];
        out.par_chunks_mut(PREDICT_CHUNK)
            .enumerate()
            .for_each(|(chunk, slots)| {
                let base = chunk * PREDICT_CHUNK;
                for (k, slot) in slots.iter_mut().enumerate() {
                    *slot = self.predict_unchecked(points.point(base + k), Some(base + k));
                }
            });
        Ok(out)
    }

    pub fn to_document(&self) -> Document {
        let mut doc = Document::new("estimator");
        doc.set("kind", self.kind)
            .set("d", self.dim())
            .set("n", self.meta.n)
            .set("m", self.meta.m)
            .set_f64("residual_norm", self.meta.residual_norm)
            .set("iterations", self.meta.iterations)
            .set_f64("regularization", self.meta.regularization);
        match &self.model {
            Model::SampleAverage { scenarios, values } => {
                let mut cols: Vec<String> =
                    (1..=scenarios.dim()).map(|j| format!("x{j}")).collect();
                cols.push("value".into());
                let mut block = Block::new("data", cols);
                for (x, v) in scenarios.iter().zip(values) {
                    let mut row = x.to_vec();
                    row.push(*v);
                    block.rows.push(row);
                }
                doc.blocks.push(block);
            }
            Model::KernelExpansion {
                kernel,
                centers,
                weights,
            } => {
                doc.set("kernel", kernel_name(kernel));
                if let KernelFamily::Matern { lengthscale, .. } = kernel.family {
                    doc.set_f64("lengthscale", lengthscale);
                }
                let mut cols = vec!["weight".to_string()];
                cols.extend((1..=kernel.dim).map(|j| format!("c{j}")));
                let mut block = Block::new("expansion", cols);
                for (w, c) in weights.iter().zip(centers.iter()) {
                    let mut row = vec![*w];
                    row.extend_from_slice(c);
                    block.rows.push(row);
                }
                doc.blocks.push(block);
            }
            Model::Relu(net) => net.write_blocks(&mut doc),
        }
        doc
    }

    pub fn from_document(doc: &Document) -> Result<Self> {
        doc.expect_kind("estimator")?;
        let kind: EstimatorKind = doc.get("kind")?.parse()?;
        let d: usize = doc.get_parsed("d")?;
        let meta = TrainingMeta {
            n: doc.get_parsed("n")?,
            m: doc.get_parsed("m")?,
            residual_norm: doc.get_parsed("residual_norm")?,
            iterations: doc.get_parsed("iterations")?,
            regularization: doc.get_parsed("regularization")?,
        };
        let split_rows = |block: &Block, lead_value: bool| -> Result<(PointSet, Vec<f64>)> {
            let mut coords = Vec::with_capacity(block.rows.len() * d);
            let mut vals = Vec::with_capacity(block.rows.len());
            for row in &block.rows {
                if row.len() != d + 1 {
                    return Err(Error::DimensionMismatch {
                        expected: d + 1,
                        got: row.len(),
                    });
                }
                if lead_value {
                    vals.push(row[0]);
                    coords.extend_from_slice(&row[1..]);
                } else {
                    vals.push(row[d]);
                    coords.extend_from_slice(&row[..d]);
                }
            }
            Ok((PointSet::new(d, coords)?, vals))
        };
        let model = match kind {
            EstimatorKind::SampleAverage => {
                let (scenarios, values) = split_rows(doc.block("data")?, false)?;
                Model::SampleAverage { scenarios, values }
            }
            EstimatorKind::Krr | EstimatorKind::InducingKrr => {
                let lengthscale = doc.get_parsed::<f64>("lengthscale").ok();
                let kernel = parse_kernel(doc.get("kernel")?, d, lengthscale)?;
                let (centers, weights) = split_rows(doc.block("expansion")?, true)?;
                Model::KernelExpansion {
                    kernel,
                    centers,
                    weights,
                }
            }
            EstimatorKind::ReluSieve => Model::Relu(ReluNetwork::read_blocks(doc, d)?),
        };
        Ok(FittedEstimator { kind, model, meta })
    }
}

/// Root mean square of `a - b`.
pub(crate) fn empirical_norm(a: &[f64], b: &[f64]) -> f64 {
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (ss / a.len() as f64).sqrt()
}

fn check_data(data: &crate::synthetic::NestedDataset) -> Result<()> {
    if data.n() == 0 {
        return Err(Error::EmptyInput("dataset"));
    }
    if data.scenarios.len() != data.n() {
        return Err(Error::LengthMismatch {
            what: "ybar",
            expected: data.scenarios.len(),
            got: data.n(),
        });
    }
    Ok(())
}

pub fn predict(est: &FittedEstimator, points: &PointSet) -> Result<Vec<f64>> {
    est.predict(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelSpec;
    use crate::synthetic::{make_test_function, simulate_inner, simulate_outer};
    use crate::textfmt::Document;

    fn dataset(n: usize, d: usize, seed: u64) -> crate::synthetic::NestedDataset {
        let f = make_test_function(KernelSpec::gaussian(d), 40, seed).unwrap();
        let xs = simulate_outer(n, d, seed + 1).unwrap();
        simulate_inner(&f, &xs, 2, 0.3, seed + 2).unwrap()
    }

    #[test]
    fn batch_equals_loop_for_every_kind() {
        let data = dataset(40, 2, 3);
        let spec = KernelSpec::gaussian(2);
        let inducing = crate::kernels::random_subsample(&data.scenarios, 6, 1).unwrap();
        let arch = ReluArchitecture::dense(2, &[8, 4], 1e3);
        let cfg = TrainConfig {
            epochs: 20,
            ..TrainConfig::default()
        };
        let fits = [
            fit_sample_average(&data).unwrap(),
            fit_krr(&data, &spec, 0.01).unwrap(),
            fit_krr_inducing(&data, &spec, &inducing, None).unwrap(),
            fit_relu_sieve(&data, &arch, &cfg).unwrap(),
        ];
        let probe = simulate_outer(300, 2, 99).unwrap();
        for est in &fits {
            let batch = est.predict(&probe).unwrap();
            for (i, x) in probe.iter().enumerate() {
                assert_eq!(batch[i], est.predict_one(x).unwrap(), "{}", est.kind);
            }
            assert!(est.predict(&PointSet::empty(2)).unwrap().is_empty());
            assert!(est.predict(&simulate_outer(3, 3, 1).unwrap()).is_err());

            let doc = Document::parse(&est.to_document().render()).unwrap();
            let back = FittedEstimator::from_document(&doc).unwrap();
            assert_eq!(&back, est);
        }
    }
}
