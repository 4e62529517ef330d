//! Gaussian CVaR of the cost-return and the 2-Wasserstein distance between
//! one-dimensional Gaussians.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cost-return distribution `N(mean, std²)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianCostReturn {
    pub mean: f64,
    pub std: f64,
}

impl GaussianCostReturn {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !(std >= 0.0) {
            return Err(Error::config("std", format!("must be >= 0, got {std}")));
        }
        Ok(Self { mean, std })
    }
}

/// How the tail coefficient multiplying the std is computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoefficientMode {
    /// `φ(Φ⁻¹(1−α)) / α`, the CVaR of a standard normal over its upper
    /// α-tail.
    #[default]
    ExactGaussianCvar,
    /// `φ(α) / Φ(α)`, taken literally.
    PaperLiteral,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiskConfig {
    pub alpha: f64,
    pub coefficient_mode: CoefficientMode,
}

impl Default for RiskConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            coefficient_mode: CoefficientMode::ExactGaussianCvar,
        }
    }
}

impl RiskConfig {
    pub fn new(alpha: f64, coefficient_mode: CoefficientMode) -> Result<Self> {
        let cfg = Self {
            alpha,
            coefficient_mode,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha > 0.0 && self.alpha <= 1.0 {
            Ok(())
        } else {
            Err(Error::config(
                "risk.alpha",
                format!("risk.alpha ∈ (0,1] required, got {}", self.alpha),
            ))
        }
    }
}

pub fn normal_pdf(x: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Inverse standard-normal CDF: Acklam's rational approximation followed by
/// one Halley refinement step. Returns `±∞` at 1 and 0.
pub fn normal_quantile(p: f64) -> f64 {
    if p.is_nan() || !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.024_25;

    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };

    // Halley step on Φ(x) − p.
    let e = normal_cdf(x) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

/// Multiplier applied to the std in the closed-form CVaR. Always `>= 0`.
pub fn risk_coefficient(cfg: &RiskConfig) -> Result<f64> {
    cfg.validate()?;
    let alpha = cfg.alpha;
    Ok(match cfg.coefficient_mode {
        CoefficientMode::ExactGaussianCvar => {
            if alpha == 1.0 {
                0.0
            } else {
                normal_pdf(normal_quantile(1.0 - alpha)) / alpha
            }
        }
        CoefficientMode::PaperLiteral => normal_pdf(alpha) / normal_cdf(alpha),
    })
}

/// `mean + coefficient · std`.
pub fn cvar(g: &GaussianCostReturn, cfg: &RiskConfig) -> Result<f64> {
    Ok(g.mean + risk_coefficient(cfg)? * g.std)
}

/// Squared 2-Wasserstein distance between two 1-d Gaussians.
pub fn wasserstein2_sq(p: &GaussianCostReturn, q: &GaussianCostReturn) -> f64 {
    let dm = p.mean - q.mean;
    let ds = p.std - q.std;
    dm * dm + ds * ds
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Maclaurin series of erf; converges quickly for |x| < 2.
    fn erf_series(x: f64) -> f64 {
        let mut term = x;
        let mut sum = x;
        let mut n = 0.0;
        loop {
            n += 1.0;
            term *= -x * x / n;
            let add = term / (2.0 * n + 1.0);
            sum += add;
            if add.abs() < 1e-18 {
                break;
            }
        }
        sum * 2.0 / std::f64::consts::PI.sqrt()
    }

    #[test]
    fn full_tail_coefficient_is_zero() {
        let cfg = RiskConfig::new(1.0, CoefficientMode::ExactGaussianCvar).unwrap();
        assert_eq!(risk_coefficient(&cfg).unwrap(), 0.0);
    }

    #[test]
    fn exact_coefficient_at_tenth() {
        let cfg = RiskConfig::new(0.1, CoefficientMode::ExactGaussianCvar).unwrap();
        let k = risk_coefficient(&cfg).unwrap();
        assert!((k - 1.7550).abs() < 1e-4, "{k}");
    }

    #[test]
    fn paper_literal_matches_series_oracle() {
        let cfg = RiskConfig::new(0.5, CoefficientMode::PaperLiteral).unwrap();
        let x: f64 = 0.5;
        let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let cdf = 0.5 * (1.0 + erf_series(x / std::f64::consts::SQRT_2));
        let k = risk_coefficient(&cfg).unwrap();
        assert!((k - pdf / cdf).abs() < 1e-10);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for p in [1e-10, 1e-4, 0.01, 0.3, 0.5, 0.9, 0.999, 1.0 - 1e-9] {
            let x = normal_quantile(p);
            assert!((normal_cdf(x) - p).abs() < 1e-12 * p.max(1e-3), "{p}");
        }
        assert_eq!(normal_quantile(0.0), f64::NEG_INFINITY);
    }

    #[test]
    fn cdf_matches_series_oracle() {
        for x in [-2.5, -1.0, -0.1, 0.0, 0.7, 1.9] {
            let oracle = 0.5 * (1.0 + erf_series(x / std::f64::consts::SQRT_2));
            assert!((normal_cdf(x) - oracle).abs() < 1e-14);
        }
    }

    #[test]
    fn invalid_alpha_rejected() {
        assert!(RiskConfig::new(0.0, CoefficientMode::ExactGaussianCvar).is_err());
        let err = RiskConfig::new(1.5, CoefficientMode::PaperLiteral).unwrap_err();
        assert!(err.to_string().contains("risk.alpha ∈ (0,1]"));
    }

    #[test]
    fn degenerate_distribution_cvar_is_mean() {
        let g = GaussianCostReturn::new(-42.0, 0.0).unwrap();
        for alpha in [0.05, 0.1, 0.5, 1.0] {
            let cfg = RiskConfig::new(alpha, CoefficientMode::ExactGaussianCvar).unwrap();
            assert_eq!(cvar(&g, &cfg).unwrap(), -42.0);
        }
    }

    #[test]
    fn wasserstein_examples() {
        let a = GaussianCostReturn::new(0.0, 1.0).unwrap();
        assert_eq!(wasserstein2_sq(&a, &a), 0.0);
        assert_eq!(
            wasserstein2_sq(&a, &GaussianCostReturn::new(3.0, 1.0).unwrap()),
            9.0
        );
        assert_eq!(
            wasserstein2_sq(&a, &GaussianCostReturn::new(0.0, 2.0).unwrap()),
            1.0
        );
    }

    #[test]
    fn negative_std_rejected() {
        assert!(GaussianCostReturn::new(0.0, -1e-9).is_err());
    }

    proptest! {
        #[test]
        fn coefficient_nonincreasing_in_alpha(a in 0.001f64..1.0, b in 0.001f64..1.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let k = |alpha| risk_coefficient(
                &RiskConfig::new(alpha, CoefficientMode::ExactGaussianCvar).unwrap()).unwrap();
            prop_assert!(k(lo) >= k(hi) - 1e-12);
            prop_assert!(k(hi) >= 0.0);
        }

        #[test]
        fn cvar_is_affine_and_above_mean(
            m in -500.0f64..500.0, s in 0.0f64..100.0, alpha in 0.001f64..=1.0,
            literal in any::<bool>(),
        ) {
            let mode = if literal { CoefficientMode::PaperLiteral } else { CoefficientMode::ExactGaussianCvar };
            let cfg = RiskConfig::new(alpha, mode).unwrap();
            let unit = cvar(&GaussianCostReturn::new(0.0, 1.0).unwrap(), &cfg).unwrap();
            let v = cvar(&GaussianCostReturn::new(m, s).unwrap(), &cfg).unwrap();
            prop_assert!((v - (m + s * unit)).abs() <= 1e-9 * (1.0 + v.abs()));
            prop_assert!(v >= m);
        }

        #[test]
        fn wasserstein_symmetric_nonnegative(
            m1 in -10.0f64..10.0, s1 in 0.0f64..5.0, m2 in -10.0f64..10.0, s2 in 0.0f64..5.0,
        ) {
            let p = GaussianCostReturn::new(m1, s1).unwrap();
            let q = GaussianCostReturn::new(m2, s2).unwrap();
            prop_assert_eq!(wasserstein2_sq(&p, &q), wasserstein2_sq(&q, &p));
            prop_assert!(wasserstein2_sq(&p, &q) >= 0.0);
        }
    }
}
