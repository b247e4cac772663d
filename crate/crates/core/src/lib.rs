//! Nested simulation with least-squares estimators on sieves.
//!
//! The crate fits conditional-expectation surfaces `f(x) = E[Y | X = x]` from
//! two-level simulated data with interchangeable estimators (sample average,
//! kernel ridge regression, KRR on inducing points, sparse ReLU networks),
//! evaluates nested-expectation and value-at-risk functionals on the fitted
//! surfaces, and measures empirical convergence rates against closed-form
//! rate predictions.
//!
//! Module map:
//!
//! * [`kernels`]: kernel evaluation, Gram matrices, RKHS norms, fill distance
//!   and inducing-point selection.
//! * [`synthetic`]: test functions, outer/inner simulation, reference values.
//! * [`estimators`]: the four sieve estimators behind one prediction contract.
//! * [`functionals`]: plug-in nested expectation and VaR.
//! * [`rates`]: budget allocation and rate predictions.
//! * [`harness`]: config-driven experiment runner and result emission.

pub mod error;
pub mod estimators;
pub mod functionals;
pub mod harness;
pub mod kernels;
pub mod rates;
pub mod rng;
pub mod synthetic;
pub mod textfmt;

pub use error::{Error, Result};
pub use estimators::{FittedEstimator, ReluArchitecture, TrainConfig};
pub use functionals::{Eta, FunctionalSpec};
pub use kernels::{KernelFamily, KernelSpec, PointSet};
pub use synthetic::{NestedDataset, TestFunction};
