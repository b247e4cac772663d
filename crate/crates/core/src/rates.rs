//! Budget allocation between outer and inner samples, and closed-form
//! convergence-rate predictions `Gamma^{exponent} (ln Gamma)^{log_power}`.
//!
//! Constants in the asymptotic statements are normalized to 1; only the
//! exponents are meaningful.

use std::fmt;

use crate::error::{Error, Result};
use crate::functionals::ceil_snapped;
use crate::kernels::{KernelFamily, KernelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AllocationScheme {
    /// `n ~ Gamma^{2/3}`, `m ~ Gamma^{1/3}`.
    Standard,
    /// `n = Gamma`, `m = 1`.
    Smooth,
}

impl std::str::FromStr for AllocationScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(AllocationScheme::Standard),
            "smooth" => Ok(AllocationScheme::Smooth),
            other => Err(Error::Config(format!(
                "unknown allocation `{other}` (expected standard or smooth)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BudgetAllocation {
    pub scheme: AllocationScheme,
    pub budget: u64,
    pub n: usize,
    pub m: usize,
}

/// Splits `budget` into `n` outer scenarios with `m` inner samples each.
///
/// Standard: `n = round(Gamma^{2/3})` (half up) and `m = max(1, floor(Gamma / n))`,
/// so that `n m <= Gamma < n (m + 1)`. Smooth: `n = Gamma`, `m = 1`.
pub fn allocate(scheme: AllocationScheme, budget: u64) -> Result<BudgetAllocation> {
    if budget < 8 {
        return Err(Error::invalid(
            "budget",
            format!("{budget} is below the minimum of 8"),
        ));
    }
    let (n, m) = match scheme {
        AllocationScheme::Standard => {
            let c = (budget as f64).cbrt();
            let n = ((c * c) + 0.5).floor() as u64;
            (n, (budget / n).max(1))
        }
        AllocationScheme::Smooth => (budget, 1),
    };
    Ok(BudgetAllocation {
        scheme,
        budget,
        n: n as usize,
        m: m as usize,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateSieve {
    SampleAverage,
    Sobolev,
    GaussianRkhs,
    Relu,
}

impl fmt::Display for RateSieve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RateSieve::SampleAverage => "sample_average",
            RateSieve::Sobolev => "sobolev",
            RateSieve::GaussianRkhs => "gaussian_rkhs",
            RateSieve::Relu => "relu",
        })
    }
}

/// `O(Gamma^{exponent} (ln Gamma)^{log_power})`.
#[derive(Debug, Clone, PartialEq)]
pub struct RatePrediction {
    pub sieve: RateSieve,
    pub exponent: f64,
    pub log_power: f64,
    pub description: String,
}

/// Rates for a kernel whose RKHS is norm-equivalent to the Sobolev space of order `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct SobolevRates {
    /// Critical radius `delta_{n,m} ~ (nm)^{-s/(2s+d)}`.
    pub delta: RatePrediction,
    /// Nested-expectation error at `m = 1`: `n^{-1/2} + n^{-2s/(2s+d)}`.
    /// The `-1/2` branch wins exactly when `s > d/2`.
    pub theta: RatePrediction,
}

/// Nested-expectation error of the sample-average estimator under the
/// standard allocation: `Gamma^{-1/3}`.
pub fn predict_standard_rate() -> RatePrediction {
    RatePrediction {
        sieve: RateSieve::SampleAverage,
        exponent: -1.0 / 3.0,
        log_power: 0.0,
        description: "sample average, n ~ Gamma^(2/3), m ~ Gamma^(1/3)".into(),
    }
}

fn check_dim(d: usize) -> Result<f64> {
    if d == 0 {
        return Err(Error::invalid("d", "must be positive"));
    }
    Ok(d as f64)
}

pub fn predict_sobolev_rate(s: f64, d: usize) -> Result<SobolevRates> {
    let df = check_dim(d)?;
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::invalid("s", format!("{s} is not positive")));
    }
    let r = s / (2.0 * s + df);
    Ok(SobolevRates {
        delta: RatePrediction {
            sieve: RateSieve::Sobolev,
            exponent: -r,
            log_power: 0.0,
            description: format!("critical radius (nm)^(-s/(2s+d)), s={s}, d={d}"),
        },
        theta: RatePrediction {
            sieve: RateSieve::Sobolev,
            exponent: (-0.5f64).max(-2.0 * r),
            log_power: 0.0,
            description: format!("nested expectation n^(-1/2) + n^(-2s/(2s+d)), s={s}, d={d}"),
        },
    })
}

/// `delta_{n,m} ~ (nm)^{-1/2} (ln nm)^{(d+1)/2}`.
pub fn predict_gaussian_rkhs_rate(d: usize) -> Result<RatePrediction> {
    let df = check_dim(d)?;
    Ok(RatePrediction {
        sieve: RateSieve::GaussianRkhs,
        exponent: -0.5,
        log_power: (df + 1.0) / 2.0,
        description: format!("critical radius (nm)^(-1/2) log^((d+1)/2), d={d}"),
    })
}

/// `delta_{n,m} = Delta_n ~ n^{-s/(2s+d)} ln n` for the sparse ReLU sieve.
pub fn predict_relu_rate(s: f64, d: usize) -> Result<RatePrediction> {
    let df = check_dim(d)?;
    if !(s >= 1.0 && s.is_finite()) {
        return Err(Error::invalid("s", format!("{s} is not >= 1")));
    }
    Ok(RatePrediction {
        sieve: RateSieve::Relu,
        exponent: -s / (2.0 * s + df),
        log_power: 1.0,
        description: format!("critical radius n^(-s/(2s+d)) log n, s={s}, d={d}"),
    })
}

/// VaR error `|base|^kappa + n^{-1/(2 gamma)}` with `kappa = alpha beta / gamma`.
///
/// The slower of the two terms is returned; on an exact tie of exponents the
/// branch with the larger log power wins.
pub fn predict_var_rate(
    base: &RatePrediction,
    alpha: f64,
    beta: f64,
    gamma: f64,
) -> Result<RatePrediction> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid("alpha", format!("{alpha} is not in (0, 1]")));
    }
    if !(gamma >= 1.0 && gamma.is_finite()) {
        return Err(Error::invalid("gamma", format!("{gamma} is not >= 1")));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::invalid("beta", format!("{beta} is not in (0, 1]")));
    }
    let kappa = alpha * beta / gamma;
    let first = (kappa * base.exponent, kappa * base.log_power);
    let second = (-1.0 / (2.0 * gamma), 0.0);
    let take_first = first.0 > second.0 || (first.0 == second.0 && first.1 >= second.1);
    let (exponent, log_power) = if take_first { first } else { second };
    let description = if take_first && kappa == 1.0 {
        base.description.clone()
    } else if take_first {
        format!("VaR, kappa={kappa}: ({})^kappa", base.description)
    } else {
        format!("VaR, quantile term n^(-1/(2 gamma)), gamma={gamma}")
    };
    Ok(RatePrediction {
        sieve: base.sieve,
        exponent,
        log_power,
        description,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleMode {
    /// `n^{d/(2s+d)}` for Sobolev-type kernels, `(ln n)^{d/2}` for the Gaussian.
    Theory,
    /// `sqrt(n)` for Sobolev-type kernels, `(ln n)^3` for the Gaussian.
    Experiment,
}

impl std::str::FromStr for ScheduleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "theory" => Ok(ScheduleMode::Theory),
            "experiment" => Ok(ScheduleMode::Experiment),
            other => Err(Error::Config(format!(
                "unknown schedule `{other}` (expected theory or experiment)"
            ))),
        }
    }
}

/// Number of inducing points `S_n = ceil(...)`, at least 1.
pub fn inducing_count_schedule(spec: &KernelSpec, mode: ScheduleMode, n: f64) -> Result<usize> {
    if !(n >= 2.0 && n.is_finite()) {
        return Err(Error::invalid("n", format!("{n} is below 2")));
    }
    let d = check_dim(spec.dim)?;
    let raw = match (spec.family, mode) {
        (KernelFamily::Gaussian, ScheduleMode::Theory) => n.ln().powf(d / 2.0),
        (KernelFamily::Gaussian, ScheduleMode::Experiment) => n.ln().powi(3),
        (_, ScheduleMode::Theory) => {
            let s = spec
                .sobolev_order()
                .expect("non-Gaussian kernels have a Sobolev order");
            n.powf(d / (2.0 * s + d))
        }
        (_, ScheduleMode::Experiment) => n.sqrt(),
    };
    Ok((ceil_snapped(raw) as usize).max(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn allocation_examples() {
        let a = allocate(AllocationScheme::Standard, 1000).unwrap();
        assert_eq!((a.n, a.m), (100, 10));
        let a = allocate(AllocationScheme::Smooth, 5000).unwrap();
        assert_eq!((a.n, a.m), (5000, 1));
        let a = allocate(AllocationScheme::Standard, 1_000_000).unwrap();
        assert_eq!((a.n, a.m), (10_000, 100));
        // 10^4: 10^{8/3} = 464.16
        let a = allocate(AllocationScheme::Standard, 10_000).unwrap();
        assert_eq!((a.n, a.m), (464, 21));
        assert!(allocate(AllocationScheme::Standard, 7).is_err());
    }

    #[test]
    fn standard_rate() {
        assert_eq!(predict_standard_rate().exponent, -1.0 / 3.0);
    }

    #[test]
    fn sobolev_examples() {
        for d in 1..6 {
            let r = predict_sobolev_rate(d as f64, d).unwrap();
            assert!((r.delta.exponent + 1.0 / 3.0).abs() < 1e-12);
        }
        let r = predict_sobolev_rate(1.0, 1).unwrap();
        assert!((r.delta.exponent + 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.theta.exponent, -0.5);
        // Laplace in d = 10: s = 5.5 > d/2
        assert_eq!(predict_sobolev_rate(5.5, 10).unwrap().theta.exponent, -0.5);
        // s = 1, d = 4: 2s/(2s+d) = 1/3
        assert!((predict_sobolev_rate(1.0, 4).unwrap().theta.exponent + 1.0 / 3.0).abs() < 1e-12);
        assert!(predict_sobolev_rate(0.0, 1).is_err());
        assert!(predict_sobolev_rate(1.0, 0).is_err());
    }

    #[test]
    fn gaussian_and_relu_examples() {
        let g = predict_gaussian_rkhs_rate(10).unwrap();
        assert_eq!((g.exponent, g.log_power), (-0.5, 5.5));
        let r = predict_relu_rate(2.0, 2).unwrap();
        assert!((r.exponent + 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.log_power, 1.0);
        assert!((predict_relu_rate(1e9, 3).unwrap().exponent + 0.5).abs() < 1e-8);
        assert!((predict_relu_rate(1.0, 10).unwrap().exponent + 1.0 / 12.0).abs() < 1e-12);
        assert!(predict_relu_rate(0.5, 2).is_err());
    }

    #[test]
    fn var_examples() {
        let g = predict_gaussian_rkhs_rate(4).unwrap();
        let v = predict_var_rate(&g, 1.0, 1.0, 1.0).unwrap();
        assert_eq!((v.exponent, v.log_power), (-0.5, 2.5));

        let (s, d) = (3.0, 2usize);
        let base = predict_relu_rate(s, d).unwrap();
        let alpha = d as f64 / (d as f64 + 2.0);
        let (beta, gamma) = (1.0, 1.5);
        let v = predict_var_rate(&base, alpha, beta, gamma).unwrap();
        let expected = -(s / (2.0 * s + d as f64)) * alpha * beta / gamma;
        assert!((v.exponent - expected).abs() < 1e-12);
        assert!((v.log_power - alpha * beta / gamma).abs() < 1e-12);

        // small beta flattens the first branch to -0.005
        let v = predict_var_rate(&g, 1.0, 0.01, 1.0).unwrap();
        assert!((v.exponent + 0.005).abs() < 1e-12);
        // kappa = 1/4: -3/32 beats the quantile term -1/8
        let v = predict_var_rate(&base, 1.0, 1.0, 4.0).unwrap();
        assert_eq!((v.exponent, v.log_power), (-0.09375, 0.25));
        // exponents tie at -1/4; the log factor decides
        let v = predict_var_rate(&g, 1.0, 1.0, 2.0).unwrap();
        assert_eq!((v.exponent, v.log_power), (-0.25, 1.25));

        assert!(predict_var_rate(&g, 0.0, 1.0, 1.0).is_err());
        assert!(predict_var_rate(&g, 1.0, 1.0, 0.5).is_err());
        assert!(predict_var_rate(&g, 1.0, 1.5, 2.0).is_err());
    }

    #[test]
    fn schedule_examples() {
        let lap = KernelSpec::laplace(10);
        assert_eq!(
            inducing_count_schedule(&lap, ScheduleMode::Experiment, 4900.0).unwrap(),
            70
        );
        let gau = KernelSpec::gaussian(10);
        let e2 = 2f64.exp();
        assert_eq!(
            inducing_count_schedule(&gau, ScheduleMode::Experiment, e2).unwrap(),
            8
        );
        // (ln n)^{d/2} at ln n = 4
        let gau2 = KernelSpec::gaussian(2);
        assert_eq!(
            inducing_count_schedule(&gau2, ScheduleMode::Theory, 4f64.exp()).unwrap(),
            4
        );
        let gau4 = KernelSpec::gaussian(4);
        assert_eq!(
            inducing_count_schedule(&gau4, ScheduleMode::Theory, 4f64.exp()).unwrap(),
            16
        );
        // Matérn-1/2 in d = 1: s = 1 = d
        let m = KernelSpec::matern(0.5, 1).unwrap();
        assert_eq!(
            inducing_count_schedule(&m, ScheduleMode::Theory, 1000.0).unwrap(),
            10
        );
        assert_eq!(
            inducing_count_schedule(&gau, ScheduleMode::Experiment, 1000.0).unwrap(),
            330
        );
        assert!(inducing_count_schedule(&gau, ScheduleMode::Experiment, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn allocation_invariants(budget in 1_000u64..100_000_000) {
            let a = allocate(AllocationScheme::Standard, budget).unwrap();
            let used = (a.n * a.m) as u64;
            prop_assert!(used <= budget && budget < (a.n * (a.m + 1)) as u64);
            prop_assert!(2 * used >= budget);
        }

        #[test]
        fn sobolev_monotone(s in 0.1f64..20.0, ds in 0.01f64..5.0, d in 1usize..30) {
            let a = predict_sobolev_rate(s, d).unwrap().delta.exponent;
            let b = predict_sobolev_rate(s + ds, d).unwrap().delta.exponent;
            let c = predict_sobolev_rate(s, d + 1).unwrap().delta.exponent;
            prop_assert!(b < a);
            prop_assert!(c > a);
            prop_assert!(a <= 0.0 && a > -0.5);
        }

        #[test]
        fn var_identity_law(s in 1.0f64..10.0, d in 1usize..20) {
            for base in [
                predict_relu_rate(s, d).unwrap(),
                predict_gaussian_rkhs_rate(d).unwrap(),
                predict_sobolev_rate(s, d).unwrap().delta,
            ] {
                prop_assert_eq!(predict_var_rate(&base, 1.0, 1.0, 1.0).unwrap(), base);
            }
        }
    }
}
