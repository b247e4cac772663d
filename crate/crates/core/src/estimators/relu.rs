use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng as _;

use super::{check_data, empirical_norm, EstimatorKind, FittedEstimator, Model, TrainingMeta};
use crate::error::{Error, Result};
use crate::functionals::ceil_snapped;
use crate::rng;
use crate::synthetic::NestedDataset;
use crate::textfmt::{Block, Document};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Largest data set trained full-batch by default.
const FULL_BATCH_LIMIT: usize = 4096;
const DEFAULT_BATCH: usize = 1024;

/// Shape and constraints of a network in `Phi(H, W, S, B)`.
///
/// `H = hidden.len() + 1` affine layers; every weight and bias must satisfy
/// `|p| <= bound` and at most `sparsity` of them may be nonzero.
#[derive(Debug, Clone, PartialEq)]
pub struct ReluArchitecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub sparsity: usize,
    pub bound: f64,
}

impl ReluArchitecture {
    /// No pruning: `sparsity` is the full parameter count.
    pub fn dense(input_dim: usize, hidden: &[usize], bound: f64) -> Self {
        let mut arch = ReluArchitecture {
            input_dim,
            hidden: hidden.to_vec(),
            sparsity: 0,
            bound,
        };
        arch.sparsity = arch.parameter_count();
        arch
    }

    /// Widths 256 and 128, no pruning, bound 1e3.
    pub fn experiment_default(input_dim: usize) -> Self {
        Self::dense(input_dim, &[256, 128], 1e3)
    }

    pub fn depth(&self) -> usize {
        self.hidden.len() + 1
    }

    pub fn width(&self) -> usize {
        self.hidden.iter().copied().max().unwrap_or(1)
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_shapes().map(|(i, o)| (i + 1) * o).sum()
    }

    /// `(inputs, outputs)` of each affine layer.
    fn layer_shapes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let ins = std::iter::once(self.input_dim).chain(self.hidden.iter().copied());
        let outs = self.hidden.iter().copied().chain(std::iter::once(1));
        ins.zip(outs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::invalid(
                "architecture",
                "layer widths must be positive",
            ));
        }
        if self.sparsity == 0 {
            return Err(Error::invalid("sparsity", "must be positive"));
        }
        if !(self.bound > 0.0) {
            return Err(Error::invalid(
                "bound",
                format!("{} is not positive", self.bound),
            ));
        }
        Ok(())
    }
}

/// One affine layer `x -> W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `outputs x inputs`.
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            weights: DMatrix::zeros(outputs, inputs),
            bias: DVector::zeros(outputs),
        }
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights.as_slice().iter().chain(self.bias.as_slice())
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .as_mut_slice()
            .iter_mut()
            .chain(self.bias.as_mut_slice())
    }
}

/// ReLU on every hidden layer, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct ReluNetwork {
    pub layers: Vec<Dense>,
}

impl ReluNetwork {
    fn zeros_like(arch: &ReluArchitecture) -> Self {
        ReluNetwork {
            layers: arch
                .layer_shapes()
                .map(|(i, o)| Dense::zeros(i, o))
                .collect(),
        }
    }

    /// Weights and biases uniform on `(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    fn init(arch: &ReluArchitecture, rng: &mut rng::Rng) -> Self {
        let mut net = Self::zeros_like(arch);
        for layer in &mut net.layers {
            let scale = 1.0 / (layer.weights.ncols() as f64).sqrt();
            for p in layer.params_mut() {
                *p = rng.random_range(-scale..scale);
            }
        }
        net
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    /// Parameters in index order: per layer, weights column-major, then biases.
    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(Dense::params)
            .copied()
            .collect()
    }

    pub fn set_params(&mut self, values: &[f64]) {
        for (p, v) in self
            .layers
            .iter_mut()
            .flat_map(Dense::params_mut)
            .zip(values)
        {
            *p = *v;
        }
    }

    pub fn nonzero_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(Dense::params)
            .filter(|p| **p != 0.0)
            .count()
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(Dense::params)
            .fold(0.0, |a, p| a.max(p.abs()))
    }

    pub fn forward_one(&self, x: &[f64]) -> f64 {
        let mut a = x.to_vec();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let w = &layer.weights;
            let mut z = layer.bias.as_slice().to_vec();
            // column-major: accumulate column by column
            for (k, &ak) in a.iter().enumerate() {
                if ak != 0.0 {
                    for (zj, wjk) in z.iter_mut().zip(w.column(k).iter()) {
                        *zj += wjk * ak;
                    }
                }
            }
            if l < last {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            a = z;
        }
        a[0]
    }

    /// Rows of `x` are inputs; returns the activations of every layer
    /// (`acts[0] = x`, last entry is the `batch x 1` output).
    fn forward_batch(&self, x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = &acts[l] * layer.weights.transpose();
            for (j, b) in layer.bias.iter().enumerate() {
                z.column_mut(j).add_scalar_mut(*b);
            }
            if l < last {
                z.apply(|v| *v = v.max(0.0));
            }
            acts.push(z);
        }
        acts
    }

    /// Mean squared error on `(x, y)` and its gradient, shaped like `self`.
    pub fn loss_and_gradient(&self, x: &DMatrix<f64>, y: &[f64]) -> (f64, ReluNetwork) {
        let acts = self.forward_batch(x);
        let b = y.len() as f64;
        let out = acts.last().unwrap();
        let resid: Vec<f64> = out.iter().zip(y).map(|(o, t)| o - t).collect();
        let loss = resid.iter().map(|r| r * r).sum::<f64>() / b;
        let mut delta = DMatrix::from_iterator(y.len(), 1, resid.iter().map(|r| 2.0 * r / b));
        let mut grads = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let weights = delta.transpose() * &acts[l];
            let bias = DVector::from_iterator(delta.ncols(), delta.column_iter().map(|c| c.sum()));
            grads.push(Dense { weights, bias });
            if l > 0 {
                let mut prev = &delta * &self.layers[l].weights;
                prev.zip_apply(&acts[l], |g, a| {
                    if a <= 0.0 {
                        *g = 0.0
                    }
                });
                delta = prev;
            }
        }
        grads.reverse();
        (loss, ReluNetwork { layers: grads })
    }

    /// Clips to `[-bound, bound]`, then zeroes the smallest-magnitude
    /// parameters (lowest index first among equals) until at most `sparsity`
    /// are nonzero.
    fn project(&mut self, sparsity: usize, bound: f64) {
        for p in self.layers.iter_mut().flat_map(Dense::params_mut) {
            *p = p.clamp(-bound, bound);
        }
        let mut nonzero: Vec<(f64, usize)> = self
            .layers
            .iter()
            .flat_map(Dense::params)
            .enumerate()
            .filter(|(_, p)| **p != 0.0)
            .map(|(i, p)| (p.abs(), i))
            .collect();
        if nonzero.len() <= sparsity {
            return;
        }
        let excess = nonzero.len() - sparsity;
        let key = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        nonzero.select_nth_unstable_by(excess - 1, key);
        let mut drop: Vec<usize> = nonzero[..excess].iter().map(|&(_, i)| i).collect();
        drop.sort_unstable();
        let mut next = drop.iter().peekable();
        for (i, p) in self
            .layers
            .iter_mut()
            .flat_map(Dense::params_mut)
            .enumerate()
        {
            if next.peek() == Some(&&i) {
                *p = 0.0;
                next.next();
            }
        }
    }

    pub fn write_blocks(&self, doc: &mut Document) {
        doc.set("layers", self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut cols = vec!["bias".to_string()];
            cols.extend((1..=layer.weights.ncols()).map(|k| format!("w{k}")));
            let mut block = Block::new(format!("layer{}", l + 1), cols);
            for j in 0..layer.weights.nrows() {
                let mut row = vec![layer.bias[j]];
                row.extend(layer.weights.row(j).iter());
                block.rows.push(row);
            }
            doc.blocks.push(block);
        }
    }

    pub fn read_blocks(doc: &Document, d: usize) -> Result<Self> {
        let count: usize = doc.get_parsed("layers")?;
        let mut layers = Vec::with_capacity(count);
        let mut inputs = d;
        for l in 1..=count {
            let block = doc.block(&format!("layer{l}"))?;
            let width = block.columns.len().saturating_sub(1);
            if width != inputs || block.rows.is_empty() {
                return Err(Error::Parse {
                    line: 0,
                    reason: format!("layer{l} has {width} inputs, expected {inputs}"),
                });
            }
            let outputs = block.rows.len();
            let bias = DVector::from_iterator(outputs, block.rows.iter().map(|r| r[0]));
            let weights = DMatrix::from_fn(outputs, inputs, |j, k| block.rows[j][k + 1]);
            layers.push(Dense { weights, bias });
            inputs = outputs;
        }
        if count == 0 || inputs != 1 {
            return Err(Error::Parse {
                line: 0,
                reason: "network must end in a single output".into(),
            });
        }
        Ok(ReluNetwork { layers })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// `None`: full batch for `n <= 4096`, else 1024.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 2000,
            learning_rate: 1e-3,
            batch_size: None,
            seed: 0,
        }
    }
}

/// Least squares over `Phi(H, W, S, B)` by Adam with projection onto the
/// constraint set after every step.
pub fn fit_relu_sieve(
    data: &NestedDataset,
    arch: &ReluArchitecture,
    cfg: &TrainConfig,
) -> Result<FittedEstimator> {
    check_data(data)?;
    arch.validate()?;
    if arch.input_dim != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: arch.input_dim,
            got: data.dim(),
        });
    }
    if !(cfg.learning_rate > 0.0) {
        return Err(Error::invalid("learning_rate", "must be positive"));
    }
    let n = data.n();
    let d = data.dim();
    let batch = match cfg.batch_size {
        Some(0) => return Err(Error::invalid("batch_size", "must be positive")),
        Some(b) => b.min(n),
        None if n <= FULL_BATCH_LIMIT => n,
        None => DEFAULT_BATCH,
    };
    let mut rng = rng::rng_from_seed(cfg.seed);
    let mut net = ReluNetwork::init(arch, &mut rng);
    net.project(arch.sparsity, arch.bound);
    let mut m1 = ReluNetwork::zeros_like(arch);
    let mut m2 = ReluNetwork::zeros_like(arch);

    let x_all = DMatrix::from_row_slice(n, d, data.scenarios.coords());
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0usize;
    for _ in 0..cfg.epochs {
        if batch < n {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(batch) {
            let (loss, grad) = if batch == n {
                net.loss_and_gradient(&x_all, &data.ybar)
            } else {
                let xb = DMatrix::from_fn(chunk.len(), d, |r, c| x_all[(chunk[r], c)]);
                let yb: Vec<f64> = chunk.iter().map(|&i| data.ybar[i]).collect();
                net.loss_and_gradient(&xb, &yb)
            };
            if !loss.is_finite() {
                return Err(Error::Diverged { iteration: step });
            }
            step += 1;
            let c1 = 1.0 - ADAM_BETA1.powi(step as i32);
            let c2 = 1.0 - ADAM_BETA2.powi(step as i32);
            let lr = cfg.learning_rate;
            for (((p, g), a), b) in net
                .layers
                .iter_mut()
                .flat_map(Dense::params_mut)
                .zip(grad.layers.iter().flat_map(Dense::params))
                .zip(m1.layers.iter_mut().flat_map(Dense::params_mut))
                .zip(m2.layers.iter_mut().flat_map(Dense::params_mut))
            {
                *a = ADAM_BETA1 * *a + (1.0 - ADAM_BETA1) * g;
                *b = ADAM_BETA2 * *b + (1.0 - ADAM_BETA2) * g * g;
                *p -= lr * (*a / c1) / ((*b / c2).sqrt() + ADAM_EPS);
            }
            net.project(arch.sparsity, arch.bound);
        }
    }

    let fitted = net.forward_batch(&x_all).pop().unwrap();
    let residual_norm = empirical_norm(fitted.as_slice(), &data.ybar);
    if !residual_norm.is_finite() {
        return Err(Error::Diverged { iteration: step });
    }
    Ok(FittedEstimator {
        kind: EstimatorKind::ReluSieve,
        model: Model::Relu(net),
        meta: TrainingMeta {
            n,
            m: data.m,
            residual_norm,
            iterations: step,
            regularization: 0.0,
        },
    })
}

/// Constants of the approximation schedule left free by the theory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateSchedule {
    pub w0: usize,
    pub c0: f64,
}

impl Default for RateSchedule {
    fn default() -> Self {
        RateSchedule { w0: 16, c0: 1.0 }
    }
}

fn check_rate_inputs(s: f64, delta: f64) -> Result<()> {
    if !(s >= 1.0 && s.is_finite()) {
        return Err(Error::invalid("s", format!("{s} is not >= 1")));
    }
    if !(delta > 0.0 && delta < (-1.0f64).exp()) {
        return Err(Error::invalid(
            "delta",
            format!("{delta} is not in (0, 1/e)"),
        ));
    }
    Ok(())
}

/// `N = ceil(|delta ln delta|^{-d/s})`.
pub fn approximation_block_count(d: usize, s: f64, delta: f64) -> Result<usize> {
    check_rate_inputs(s, delta)?;
    Ok(ceil_snapped((delta * delta.ln()).abs().powf(-(d as f64) / s)) as usize)
}

/// Network size that approximates Hölder-`s` functions on `[0,1]^d` to
/// accuracy `delta`:
///
/// * `H = 3 + 2 ceil(log2(3^p / (delta C0)) + 5) ceil(log2 p)`, `p = max(d, floor(s + 2))`
/// * `W = W0 N`, `S = ((H - 1) W0^2 + 1) N`, `B = N^{1/d}`
///
/// `H` counts affine layers, so the result has `H - 1` hidden layers of width `W`.
pub fn relu_architecture_from_rate(
    d: usize,
    s: f64,
    delta: f64,
    schedule: RateSchedule,
) -> Result<ReluArchitecture> {
    if d == 0 {
        return Err(Error::invalid("d", "must be positive"));
    }
    if schedule.w0 == 0 || !(schedule.c0 > 0.0) {
        return Err(Error::invalid("schedule", "W0 and C0 must be positive"));
    }
    let n = approximation_block_count(d, s, delta)?;
    let p = d.max((s + 2.0).floor() as usize) as f64;
    let inner = ceil_snapped(p * 3f64.log2() - (delta * schedule.c0).log2() + 5.0);
    let depth = 3 + 2 * (inner as usize) * (ceil_snapped(p.log2()) as usize);
    let w0 = schedule.w0;
    Ok(ReluArchitecture {
        input_dim: d,
        hidden: vec![w0 * n; depth - 1],
        sparsity: ((depth - 1) * w0 * w0 + 1) * n,
        bound: (n as f64).powf(1.0 / d as f64),
    })
}
