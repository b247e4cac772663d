//! Ground-truth test functions, two-level nested data, and reference values
//! of the target functional.

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::functionals::FunctionalSpec;
use crate::kernels::{self, KernelFamily, KernelSpec, MaternNu, PointSet};
use crate::rng;
use crate::textfmt::{Block, Document};

/// Default number of kernel centers in a generated test function.
pub const DEFAULT_CENTERS: usize = 1000;

/// Default number of fresh draws for the reference value.
pub const DEFAULT_THETA_EVAL_POINTS: usize = 10_000;

/// Rows evaluated per work item in batch evaluation.
const EVAL_CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub enum Surface {
    /// `f(x) = (1/N) sum_i c_i k(x, U_i)`.
    KernelExpansion {
        kernel: KernelSpec,
        centers: PointSet,
        coefficients: Vec<f64>,
    },
    Constant(f64),
    /// `f(x) = w . x + b`.
    Linear {
        weights: Vec<f64>,
        intercept: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    surface: Surface,
    dim: usize,
    seed: Option<u64>,
    rkhs_norm_sq: Option<f64>,
}

/// Draws `N` standard-normal coefficients, then `N` centers uniform on
/// `[0,1]^d`, from one generator seeded with `seed`.
pub fn make_test_function(kernel: KernelSpec, n_centers: usize, seed: u64) -> Result<TestFunction> {
    if n_centers == 0 {
        return Err(Error::invalid("N", "at least one center is required"));
    }
    if kernel.dim == 0 {
        return Err(Error::invalid("d", "must be positive"));
    }
    let mut rng = rng::rng_from_seed(seed);
    let coefficients: Vec<f64> = (0..n_centers).map(|_| rng.sample(StandardNormal)).collect();
    let coords = (0..n_centers * kernel.dim)
        .map(|_| rng.random::<f64>())
        .collect();
    let centers = PointSet::new(kernel.dim, coords)?;
    let mut f = TestFunction::from_expansion(kernel, centers, coefficients)?;
    f.seed = Some(seed);
    Ok(f)
}

impl TestFunction {
    pub fn from_expansion(
        kernel: KernelSpec,
        centers: PointSet,
        coefficients: Vec<f64>,
    ) -> Result<Self> {
        let norm = kernels::rkhs_norm_sq(&kernel, &coefficients, &centers)?;
        if !norm.is_finite() {
            return Err(Error::invalid("coefficients", "RKHS norm is not finite"));
        }
        Ok(TestFunction {
            dim: kernel.dim,
            surface: Surface::KernelExpansion {
                kernel,
                centers,
                coefficients,
            },
            seed: None,
            rkhs_norm_sq: Some(norm),
        })
    }

    pub fn constant(dim: usize, value: f64) -> Self {
        TestFunction {
            surface: Surface::Constant(value),
            dim,
            seed: None,
            rkhs_norm_sq: None,
        }
    }

    pub fn linear(weights: Vec<f64>, intercept: f64) -> Self {
        TestFunction {
            dim: weights.len(),
            surface: Surface::Linear { weights, intercept },
            seed: None,
            rkhs_norm_sq: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn surface(&self) -> &Surface {
        &self.surface
    }

    /// Cached squared RKHS norm (kernel expansions only).
    pub fn rkhs_norm_sq(&self) -> Option<f64> {
        self.rkhs_norm_sq
    }

    /// Same function with every coefficient multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        match &self.surface {
            Surface::KernelExpansion {
                kernel,
                centers,
                coefficients,
            } => {
                let mut f = TestFunction::from_expansion(
                    *kernel,
                    centers.clone(),
                    coefficients.iter().map(|c| c * factor).collect(),
                )?;
                f.seed = self.seed;
                Ok(f)
            }
            Surface::Constant(v) => Ok(TestFunction::constant(self.dim, v * factor)),
            Surface::Linear { weights, intercept } => Ok(TestFunction::linear(
                weights.iter().map(|w| w * factor).collect(),
                intercept * factor,
            )),
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(self.eval_unchecked(x))
    }

    fn eval_unchecked(&self, x: &[f64]) -> f64 {
        match &self.surface {
            Surface::KernelExpansion {
                kernel,
                centers,
                coefficients,
            } => {
                let sum: f64 = coefficients
                    .iter()
                    .zip(centers.iter())
                    .map(|(c, u)| c * kernel.eval_unchecked(x, u))
                    .sum();
                sum / coefficients.len() as f64
            }
            Surface::Constant(v) => *v,
            Surface::Linear { weights, intercept } => {
                weights.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + intercept
            }
        }
    }

    /// Pointwise values on every row of `points`.
    pub fn eval_batch(&self, points: &PointSet) -> Result<Vec<f64>> {
        if points.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: points.dim(),
            });
        }
        let mut out = vec![0.0; points.len()];
        out.par_chunks_mut(EVAL_CHUNK)
            .enumerate()
            .for_each(|(chunk, slots)| {
                let base = chunk * EVAL_CHUNK;
                for (k, slot) in slots.iter_mut().enumerate() {
                    *slot = self.eval_unchecked(points.point(base + k));
                }
            });
        Ok(out)
    }

    pub fn to_document(&self) -> Document {
        let mut doc = Document::new("test_function");
        doc.set("d", self.dim);
        if let Some(seed) = self.seed {
            doc.set("seed", seed);
        }
        match &self.surface {
            Surface::KernelExpansion {
                kernel,
                centers,
                coefficients,
            } => {
                doc.set("surface", "kernel_expansion");
                doc.set("kernel", kernel_name(kernel));
                if let KernelFamily::Matern { lengthscale, .. } = kernel.family {
                    doc.set_f64("lengthscale", lengthscale);
                }
                doc.set("N", coefficients.len());
                doc.set_f64("rkhs_norm_sq", self.rkhs_norm_sq.unwrap_or(f64::NAN));
                let mut cols = vec!["c".to_string()];
                cols.extend((1..=self.dim).map(|j| format!("u{j}")));
                let mut block = Block::new("centers", cols);
                for (c, u) in coefficients.iter().zip(centers.iter()) {
                    let mut row = vec![*c];
                    row.extend_from_slice(u);
                    block.rows.push(row);
                }
                doc.blocks.push(block);
            }
            Surface::Constant(v) => {
                doc.set("surface", "constant");
                doc.set_f64("value", *v);
            }
            Surface::Linear { weights, intercept } => {
                doc.set("surface", "linear");
                doc.set_f64("intercept", *intercept);
                let mut block = Block::new("weights", vec!["w".into()]);
                block.rows.extend(weights.iter().map(|w| vec![*w]));
                doc.blocks.push(block);
            }
        }
        doc
    }

    pub fn from_document(doc: &Document) -> Result<Self> {
        doc.expect_kind("test_function")?;
        let dim: usize = doc.get_parsed("d")?;
        let seed = doc.get("seed").ok().and_then(|s| s.parse().ok());
        let mut f = match doc.get("surface")? {
            "kernel_expansion" => {
                let lengthscale = doc.get_parsed::<f64>("lengthscale").ok();
                let kernel = parse_kernel(doc.get("kernel")?, dim, lengthscale)?;
                let block = doc.block("centers")?;
                let mut coefficients = Vec::with_capacity(block.rows.len());
                let mut coords = Vec::with_capacity(block.rows.len() * dim);
                for row in &block.rows {
                    if row.len() != dim + 1 {
                        return Err(Error::DimensionMismatch {
                            expected: dim + 1,
                            got: row.len(),
                        });
                    }
                    coefficients.push(row[0]);
                    coords.extend_from_slice(&row[1..]);
                }
                TestFunction::from_expansion(kernel, PointSet::new(dim, coords)?, coefficients)?
            }
            "constant" => TestFunction::constant(dim, doc.get_parsed("value")?),
            "linear" => {
                let weights = doc.block("weights")?.column("w").unwrap_or_default();
                if weights.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: weights.len(),
                    });
                }
                TestFunction::linear(weights, doc.get_parsed("intercept")?)
            }
            other => {
                return Err(Error::Parse {
                    line: 0,
                    reason: format!("unknown surface `{other}`"),
                })
            }
        };
        f.seed = seed;
        Ok(f)
    }
}

pub fn kernel_name(kernel: &KernelSpec) -> &'static str {
    match kernel.family {
        KernelFamily::Laplace => "laplace",
        KernelFamily::Gaussian => "gaussian",
        KernelFamily::Matern {
            nu: MaternNu::Half, ..
        } => "matern12",
        KernelFamily::Matern {
            nu: MaternNu::ThreeHalves,
            ..
        } => "matern32",
        KernelFamily::Matern {
            nu: MaternNu::FiveHalves,
            ..
        } => "matern52",
    }
}

/// Parses `laplace`, `gaussian`, `matern12`, `matern32` or `matern52`.
pub fn parse_kernel(name: &str, dim: usize, lengthscale: Option<f64>) -> Result<KernelSpec> {
    let ls = lengthscale.unwrap_or(1.0);
    match name {
        "laplace" => Ok(KernelSpec::laplace(dim)),
        "gaussian" => Ok(KernelSpec::gaussian(dim)),
        "matern12" => KernelSpec::matern_with_lengthscale(0.5, ls, dim),
        "matern32" => KernelSpec::matern_with_lengthscale(1.5, ls, dim),
        "matern52" => KernelSpec::matern_with_lengthscale(2.5, ls, dim),
        other => Err(Error::Config(format!("unknown kernel `{other}`"))),
    }
}

pub fn eval_f(f: &TestFunction, points: &PointSet) -> Result<Vec<f64>> {
    f.eval_batch(points)
}

/// `n` i.i.d. uniform draws on `[0,1]^d`.
pub fn simulate_outer(n: usize, d: usize, seed: u64) -> Result<PointSet> {
    if n == 0 {
        return Err(Error::invalid("n", "must be at least 1"));
    }
    let mut rng = rng::rng_from_seed(seed);
    PointSet::new(d, (0..n * d).map(|_| rng.random::<f64>()).collect())
}

/// Outer scenarios with the inner-sample averages `ybar_i = f(x_i) + mean_j eps_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct NestedDataset {
    pub scenarios: PointSet,
    pub ybar: Vec<f64>,
    pub m: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl NestedDataset {
    pub fn n(&self) -> usize {
        self.ybar.len()
    }

    pub fn dim(&self) -> usize {
        self.scenarios.dim()
    }

    pub fn to_document(&self) -> Document {
        let mut doc = Document::new("dataset");
        doc.set("d", self.dim())
            .set("n", self.n())
            .set("m", self.m)
            .set_f64("sigma", self.noise_sigma)
            .set("seed", self.seed);
        let mut cols: Vec<String> = (1..=self.dim()).map(|j| format!("x{j}")).collect();
        cols.push("ybar".into());
        let mut block = Block::new("data", cols);
        for (x, y) in self.scenarios.iter().zip(&self.ybar) {
            let mut row = x.to_vec();
            row.push(*y);
            block.rows.push(row);
        }
        doc.blocks.push(block);
        doc
    }

    pub fn from_document(doc: &Document) -> Result<Self> {
        doc.expect_kind("dataset")?;
        let d: usize = doc.get_parsed("d")?;
        let n: usize = doc.get_parsed("n")?;
        let block = doc.block("data")?;
        if block.rows.len() != n {
            return Err(Error::LengthMismatch {
                what: "data rows",
                expected: n,
                got: block.rows.len(),
            });
        }
        let mut coords = Vec::with_capacity(n * d);
        let mut ybar = Vec::with_capacity(n);
        for row in &block.rows {
            if row.len() != d + 1 {
                return Err(Error::DimensionMismatch {
                    expected: d + 1,
                    got: row.len(),
                });
            }
            coords.extend_from_slice(&row[..d]);
            ybar.push(row[d]);
        }
        Ok(NestedDataset {
            scenarios: PointSet::new(d, coords)?,
            ybar,
            m: doc.get_parsed("m")?,
            noise_sigma: doc.get_parsed("sigma")?,
            seed: doc.get_parsed("seed")?,
        })
    }
}

/// Draws `m` inner samples `y_ij = f(x_i) + sigma z_ij` per scenario and
/// keeps only their average.
pub fn simulate_inner(
    f: &TestFunction,
    scenarios: &PointSet,
    m: usize,
    sigma: f64,
    seed: u64,
) -> Result<NestedDataset> {
    if m == 0 {
        return Err(Error::invalid("m", "must be at least 1"));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(
            "sigma",
            format!("{sigma} is not a nonnegative number"),
        ));
    }
    let mut ybar = f.eval_batch(scenarios)?;
    let mut rng = rng::rng_from_seed(seed);
    for y in &mut ybar {
        let total: f64 = (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)).sum();
        *y += sigma * (total / m as f64);
    }
    Ok(NestedDataset {
        scenarios: scenarios.clone(),
        ybar,
        m,
        noise_sigma: sigma,
        seed,
    })
}

/// Reference value of the functional from fresh outer draws.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaOracle {
    pub functional: FunctionalSpec,
    pub value: f64,
    pub eval_points: usize,
    /// Monte Carlo standard error (nested expectation only).
    pub std_error: Option<f64>,
}

pub fn true_theta(
    f: &TestFunction,
    functional: &FunctionalSpec,
    eval_points: usize,
    seed: u64,
) -> Result<ThetaOracle> {
    if eval_points == 0 {
        return Err(Error::invalid("eval_points", "must be at least 1"));
    }
    let xs = simulate_outer(eval_points, f.dim(), seed)?;
    let fx = f.eval_batch(&xs)?;
    let value = functional.apply(&fx)?;
    let std_error = match functional {
        FunctionalSpec::NestedExpectation(eta) if eval_points > 1 => {
            let n = eval_points as f64;
            let var = fx
                .iter()
                .map(|&z| (eta.apply(z) - value).powi(2))
                .sum::<f64>()
                / (n - 1.0);
            Some((var / n).sqrt())
        }
        _ => None,
    };
    Ok(ThetaOracle {
        functional: *functional,
        value,
        eval_points,
        std_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::Eta;
    use approx::assert_relative_eq;

    #[test]
    fn generation_is_deterministic() {
        let a = make_test_function(KernelSpec::laplace(3), 50, 9).unwrap();
        let b = make_test_function(KernelSpec::laplace(3), 50, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.rkhs_norm_sq().unwrap().is_finite());
        assert!(make_test_function(KernelSpec::laplace(3), 0, 9).is_err());
        if let Surface::KernelExpansion { centers, .. } = a.surface() {
            assert!(centers.in_unit_cube());
        }
    }

    #[test]
    fn single_center_recovers_coefficient() {
        let u = PointSet::from_rows(&[vec![0.4, 0.6]]).unwrap();
        let f =
            TestFunction::from_expansion(KernelSpec::gaussian(2), u.clone(), vec![1.7]).unwrap();
        assert_eq!(eval_f(&f, &u).unwrap(), vec![1.7]);
    }

    #[test]
    fn experiment_scale_function_matches_direct_sum() {
        let spec = KernelSpec::laplace(10);
        let f = make_test_function(spec, 1000, 42).unwrap();
        let x = vec![0.5; 10];
        let Surface::KernelExpansion {
            centers,
            coefficients,
            ..
        } = f.surface()
        else {
            unreachable!()
        };
        let mut direct = 0.0;
        for i in 0..1000 {
            let mut sq = 0.0;
            for t in 0..10 {
                sq += (x[t] - centers.point(i)[t]).powi(2);
            }
            direct += coefficients[i] * (-sq.sqrt() / 10.0).exp();
        }
        direct /= 1000.0;
        assert!((f.eval(&x).unwrap() - direct).abs() <= 1e-12 * direct.abs().max(1e-3));
    }

    #[test]
    fn batch_equals_loop_and_is_linear() {
        let f = make_test_function(KernelSpec::gaussian(2), 30, 4).unwrap();
        let xs = simulate_outer(2500, 2, 5).unwrap();
        let batch = eval_f(&f, &xs).unwrap();
        for (i, x) in xs.iter().enumerate() {
            assert_eq!(batch[i], f.eval(x).unwrap());
        }
        let doubled = eval_f(&f.scaled(2.0).unwrap(), &xs).unwrap();
        for (a, b) in batch.iter().zip(&doubled) {
            assert_relative_eq!(2.0 * a, *b, max_relative = 1e-14);
        }
        assert!(eval_f(&f, &simulate_outer(3, 3, 1).unwrap()).is_err());
    }

    #[test]
    fn superposition() {
        let spec = KernelSpec::laplace(3);
        let u = simulate_outer(20, 3, 1).unwrap();
        let mut rng = rng::rng_from_seed(3);
        let c1: Vec<f64> = (0..20).map(|_| rng.sample(StandardNormal)).collect();
        let c2: Vec<f64> = (0..20).map(|_| rng.sample(StandardNormal)).collect();
        let sum: Vec<f64> = c1.iter().zip(&c2).map(|(a, b)| a + b).collect();
        let f1 = TestFunction::from_expansion(spec, u.clone(), c1).unwrap();
        let f2 = TestFunction::from_expansion(spec, u.clone(), c2).unwrap();
        let f12 = TestFunction::from_expansion(spec, u, sum).unwrap();
        let xs = simulate_outer(100, 3, 8).unwrap();
        let (a, b, ab) = (
            eval_f(&f1, &xs).unwrap(),
            eval_f(&f2, &xs).unwrap(),
            eval_f(&f12, &xs).unwrap(),
        );
        for i in 0..100 {
            assert!((a[i] + b[i] - ab[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn outer_draws() {
        let xs = simulate_outer(100_000, 2, 11).unwrap();
        assert!(xs.in_unit_cube());
        assert_eq!(xs, simulate_outer(100_000, 2, 11).unwrap());
        for j in 0..2 {
            let mean = xs.iter().map(|p| p[j]).sum::<f64>() / 100_000.0;
            assert!((mean - 0.5).abs() < 0.01);
        }
    }

    #[test]
    fn inner_noise() {
        let f = make_test_function(KernelSpec::gaussian(2), 20, 1).unwrap();
        let xs = simulate_outer(200, 2, 2).unwrap();
        let clean = simulate_inner(&f, &xs, 5, 0.0, 3).unwrap();
        assert_eq!(clean.ybar, eval_f(&f, &xs).unwrap());
        assert_eq!(
            simulate_inner(&f, &xs, 5, 1.0, 3).unwrap(),
            simulate_inner(&f, &xs, 5, 1.0, 3).unwrap()
        );
        assert!(simulate_inner(&f, &xs, 0, 1.0, 3).is_err());

        // max |ybar - f| over 200 scenarios with m = 10^4: each deviation is
        // N(0, 1e-4), so 5/sqrt(m) = 0.05 is a 5-sigma bound.
        let fx = eval_f(&f, &xs).unwrap();
        for seed in 0..5 {
            let data = simulate_inner(&f, &xs, 10_000, 1.0, seed).unwrap();
            let worst = data
                .ybar
                .iter()
                .zip(&fx)
                .map(|(y, t)| (y - t).abs())
                .fold(0.0, f64::max);
            assert!(worst <= 5.0 / 100.0, "seed {seed}: {worst}");
        }

        let xs = simulate_outer(20_000, 2, 4).unwrap();
        let fx = eval_f(&f, &xs).unwrap();
        let data = simulate_inner(&f, &xs, 1, 1.0, 5).unwrap();
        let var = data
            .ybar
            .iter()
            .zip(&fx)
            .map(|(y, t)| (y - t).powi(2))
            .sum::<f64>()
            / 20_000.0;
        assert!((0.9..=1.1).contains(&var), "{var}");
    }

    #[test]
    fn theta_of_constant_and_linear() {
        let f = TestFunction::constant(3, 1.5);
        let th = true_theta(&f, &FunctionalSpec::NestedExpectation(Eta::Square), 1000, 1).unwrap();
        assert_eq!(th.value, 2.25);

        let g = TestFunction::linear(vec![1.0], 0.0);
        let th = true_theta(&g, &FunctionalSpec::var(0.5).unwrap(), 10_000, 2).unwrap();
        assert!((th.value - 0.5).abs() <= 2.0 / 100.0);
        assert_eq!(
            th,
            true_theta(&g, &FunctionalSpec::var(0.5).unwrap(), 10_000, 2).unwrap()
        );
    }

    #[test]
    fn theta_resolutions_agree() {
        let f = make_test_function(KernelSpec::laplace(10), 1000, 17).unwrap();
        let spec = FunctionalSpec::NestedExpectation(Eta::Square);
        let coarse = true_theta(&f, &spec, 10_000, 1).unwrap();
        let fine = true_theta(&f, &spec, 1_000_000, 2).unwrap();
        let se = coarse.std_error.unwrap();
        assert!(
            (coarse.value - fine.value).abs() <= 3.0 * se,
            "{} vs {} (se {se})",
            coarse.value,
            fine.value
        );
    }

    #[test]
    fn theta_doubling_is_consistent() {
        let f = make_test_function(KernelSpec::gaussian(2), 100, 3).unwrap();
        let spec = FunctionalSpec::NestedExpectation(Eta::Square);
        for seed in 0..20 {
            let a = true_theta(&f, &spec, 2000, seed).unwrap();
            let b = true_theta(&f, &spec, 4000, seed + 1000).unwrap();
            assert!(
                (a.value - b.value).abs() < 4.0 * a.std_error.unwrap(),
                "seed {seed}"
            );
        }
    }

    #[test]
    fn documents_round_trip() {
        let f = make_test_function(KernelSpec::matern(2.5, 2).unwrap(), 5, 3).unwrap();
        let back =
            TestFunction::from_document(&Document::parse(&f.to_document().render()).unwrap())
                .unwrap();
        assert_eq!(back, f);
        let lin = TestFunction::linear(vec![0.5, -1.0], 2.0);
        let back =
            TestFunction::from_document(&Document::parse(&lin.to_document().render()).unwrap())
                .unwrap();
        assert_eq!(back, lin);

        let data = simulate_inner(&f, &simulate_outer(7, 2, 1).unwrap(), 3, 0.5, 2).unwrap();
        let back =
            NestedDataset::from_document(&Document::parse(&data.to_document().render()).unwrap())
                .unwrap();
        assert_eq!(back, data);
    }
}
