//! Plug-in functionals: nested expectation `mean(eta(f_hat(x_i)))` and the
//! value-at-risk order statistic `f_hat_(ceil(tau n))`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::estimators::FittedEstimator;
use crate::kernels::PointSet;

/// Saturation level of [`Eta::ExpClipped`].
const EXP_CLIP: f64 = 5.0;

/// Registered smooth maps for the nested-expectation functional.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Eta {
    Square,
    Identity,
    /// `exp(c * tanh(z / c))` with `c = 5`: agrees with `exp` near zero and
    /// keeps bounded first and second derivatives.
    ExpClipped,
}

impl Eta {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Eta::Square => z * z,
            Eta::Identity => z,
            Eta::ExpClipped => (EXP_CLIP * (z / EXP_CLIP).tanh()).exp(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Eta::Square => "square",
            Eta::Identity => "identity",
            Eta::ExpClipped => "exp_clipped",
        }
    }
}

impl FromStr for Eta {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "square" => Ok(Eta::Square),
            "identity" => Ok(Eta::Identity),
            "exp_clipped" => Ok(Eta::ExpClipped),
            other => Err(Error::Config(format!(
                "unknown eta `{other}` (expected square, identity or exp_clipped)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FunctionalSpec {
    NestedExpectation(Eta),
    VaR(f64),
}

impl FunctionalSpec {
    pub fn var(tau: f64) -> Result<Self> {
        check_tau(tau)?;
        Ok(FunctionalSpec::VaR(tau))
    }

    /// Applies the functional to predicted values.
    pub fn apply(&self, values: &[f64]) -> Result<f64> {
        match *self {
            FunctionalSpec::NestedExpectation(eta) => nested_expectation(values, |z| eta.apply(z)),
            FunctionalSpec::VaR(tau) => var_estimate(values, tau),
        }
    }
}

impl fmt::Display for FunctionalSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FunctionalSpec::NestedExpectation(eta) => {
                write!(f, "nested_expectation({})", eta.name())
            }
            FunctionalSpec::VaR(tau) => write!(f, "var({tau})"),
        }
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::invalid("tau", format!("{tau} is not in (0, 1)")));
    }
    Ok(())
}

/// `n^{-1} sum_i eta(values_i)`.
pub fn nested_expectation(values: &[f64], eta: impl Fn(f64) -> f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("values"));
    }
    let sum: f64 = values.iter().map(|&v| eta(v)).sum();
    Ok(sum / values.len() as f64)
}

/// `ceil(x)` that treats values within a relative 1e-12 of an integer as
/// that integer, so products like `0.07 * 100` land on 7.
pub(crate) fn ceil_snapped(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= 1e-12 * r.abs().max(1.0) {
        r
    } else {
        x.ceil()
    }
}

/// 1-based order-statistic index `ceil(tau n)`, clamped to `1..=n`.
pub fn var_index(n: usize, tau: f64) -> usize {
    (ceil_snapped(tau * n as f64) as usize).clamp(1, n)
}

/// The `ceil(tau n)`-th smallest of `values` (1-based, no interpolation).
pub fn var_estimate(values: &[f64], tau: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("values"));
    }
    check_tau(tau)?;
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("values", "contain NaN"));
    }
    let k = var_index(values.len(), tau);
    let mut buf = values.to_vec();
    let (_, kth, _) = buf.select_nth_unstable_by(k - 1, f64::total_cmp);
    Ok(*kth)
}

/// Plug-in estimate: predict on `scenarios`, then apply `spec`.
pub fn estimate_theta(
    est: &FittedEstimator,
    scenarios: &PointSet,
    spec: &FunctionalSpec,
) -> Result<f64> {
    let predicted = est.predict(scenarios)?;
    spec.apply(&predicted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn nested_expectation_examples() {
        assert_eq!(
            nested_expectation(&[2.0, 2.0, 2.0], |z| Eta::Square.apply(z)).unwrap(),
            4.0
        );
        assert_eq!(nested_expectation(&[1.0, 2.0, 6.0], |z| z).unwrap(), 3.0);
        assert!(matches!(
            nested_expectation(&[], |z| z),
            Err(Error::EmptyInput(_))
        ));

        let mut rng = crate::rng::rng_from_seed(1);
        let v: Vec<f64> = (0..1000).map(|_| rng.random_range(-3.0..3.0)).collect();
        // reverse-order Kahan summation as an independent oracle
        let (mut s, mut comp) = (0.0f64, 0.0f64);
        for &x in v.iter().rev() {
            let y = x * x - comp;
            let t = s + y;
            comp = (t - s) - y;
            s = t;
        }
        let oracle = s / 1000.0;
        let got = nested_expectation(&v, |z| z * z).unwrap();
        assert!((got - oracle).abs() <= 1e-12 * oracle.abs());
    }

    #[test]
    fn var_examples() {
        assert_eq!(var_estimate(&[4.0, 1.0, 3.0, 2.0], 0.5).unwrap(), 2.0);
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(var_estimate(&v, 0.99).unwrap(), 99.0);
        assert_eq!(var_index(100, 0.07), 7);
        assert!(var_estimate(&[], 0.5).is_err());
        assert!(var_estimate(&[1.0], 0.0).is_err());
        assert!(var_estimate(&[1.0], 1.0).is_err());

        let mut rng = crate::rng::rng_from_seed(2);
        let v: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
        let mut sorted = v.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(var_estimate(&v, 0.95).unwrap(), sorted[9500 - 1]);
    }

    #[test]
    fn exp_clipped_is_tame() {
        assert!((Eta::ExpClipped.apply(0.1) - 0.1f64.exp()).abs() < 1e-4);
        assert!(Eta::ExpClipped.apply(1e6) <= EXP_CLIP.exp());
        assert_eq!("exp_clipped".parse::<Eta>().unwrap(), Eta::ExpClipped);
        assert!("cube".parse::<Eta>().is_err());
    }

    proptest! {
        #[test]
        fn var_is_equivariant_and_an_element(
            v in proptest::collection::vec(-1e3f64..1e3, 1..200),
            tau in 0.01f64..0.99,
            a in 0.1f64..10.0,
            b in -100f64..100.0,
        ) {
            let q = var_estimate(&v, tau).unwrap();
            prop_assert!(v.contains(&q));
            let w: Vec<f64> = v.iter().map(|x| a * x + b).collect();
            let qw = var_estimate(&w, tau).unwrap();
            prop_assert!((qw - (a * q + b)).abs() <= 1e-12 * (1.0 + qw.abs()));
        }

        #[test]
        fn functionals_permutation_invariant(
            v in proptest::collection::vec(-10f64..10.0, 1..100),
            tau in 0.01f64..0.99,
            seed in any::<u64>(),
        ) {
            let mut rng = crate::rng::rng_from_seed(seed);
            let perm = rand::seq::index::sample(&mut rng, v.len(), v.len()).into_vec();
            let p: Vec<f64> = perm.iter().map(|&i| v[i]).collect();
            prop_assert_eq!(var_estimate(&v, tau).unwrap(), var_estimate(&p, tau).unwrap());
            let a = nested_expectation(&v, |z| z * z).unwrap();
            let b = nested_expectation(&p, |z| z * z).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-12));
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let id = nested_expectation(&v, |z| z).unwrap();
            prop_assert!((id - mean).abs() <= 1e-12 * mean.abs().max(1e-12));
        }
    }
}
