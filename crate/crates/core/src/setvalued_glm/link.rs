//! Normal-noise link function.
//!
//! With `d ~ N(0, σ²)` the probability of observing `s = 1` is `F(u)` where
//! `u = C - φᵀθ`, so `F` is the normal CDF with scale `σ` and `f` its density.

use serde::{Deserialize, Serialize};

use super::GlmError;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Normal CDF / PDF pair with scale `sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalLink {
    sigma: f64,
}

impl Default for NormalLink {
    fn default() -> Self {
        Self { sigma: 1.0 }
    }
}

impl NormalLink {
    pub fn new(sigma: f64) -> Result<Self, GlmError> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(GlmError::InvalidNoiseScale(sigma));
        }
        Ok(Self { sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// `F(u)`. Uses `erfc` so the lower tail keeps full relative precision.
    pub fn cdf(&self, u: f64) -> f64 {
        0.5 * libm::erfc(-u / (self.sigma * std::f64::consts::SQRT_2))
    }

    /// `1 - F(u)`, evaluated directly rather than by subtraction.
    pub fn sf(&self, u: f64) -> f64 {
        0.5 * libm::erfc(u / (self.sigma * std::f64::consts::SQRT_2))
    }

    /// `f(u) = F'(u)`.
    pub fn pdf(&self, u: f64) -> f64 {
        let z = u / self.sigma;
        FRAC_1_SQRT_2PI * (-0.5 * z * z).exp() / self.sigma
    }

    /// `F⁻¹(p)` by bisection; only used for decision-boundary checks.
    pub fn quantile(&self, p: f64) -> f64 {
        if p <= 0.0 {
            return f64::NEG_INFINITY;
        }
        if p >= 1.0 {
            return f64::INFINITY;
        }
        let (mut lo, mut hi) = (-40.0 * self.sigma, 40.0 * self.sigma);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Upper bound on `-d²/du² log F(u)` and `-d²/du² log(1 - F(u))`.
    ///
    /// For the normal family this is `1/σ²`, which is what lets `A/σ²`
    /// majorize the negative log-likelihood Hessian.
    pub(crate) fn curvature_bound(&self) -> f64 {
        1.0 / (self.sigma * self.sigma)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Maclaurin series for erf; independent of libm.
    fn erf_series(x: f64) -> f64 {
        let mut term = x;
        let mut sum = x;
        for n in 1..200 {
            term *= -x * x / n as f64;
            let add = term / (2 * n + 1) as f64;
            sum += add;
            if add.abs() < 1e-17 {
                break;
            }
        }
        2.0 / std::f64::consts::PI.sqrt() * sum
    }

    fn phi_series(u: f64) -> f64 {
        0.5 * (1.0 + erf_series(u / std::f64::consts::SQRT_2))
    }

    #[test]
    fn cdf_matches_series_oracle() {
        let link = NormalLink::default();
        for &u in &[-3.0, -1.96, -1.0, -0.3, 0.0, 0.4, 1.0, 1.96, 2.5] {
            assert!((link.cdf(u) - phi_series(u)).abs() < 1e-13, "u = {u}");
        }
        assert!((link.cdf(1.96) - 0.975_002_104_851_780).abs() < 1e-12);
        assert!((link.cdf(-1.0) - 0.158_655_253_931_457).abs() < 1e-12);
    }

    #[test]
    fn complement_sums_to_one() {
        let link = NormalLink::new(1.7).unwrap();
        for i in -50..50 {
            let u = i as f64 * 0.2;
            assert!((link.cdf(u) + link.sf(u) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn pdf_is_derivative_of_cdf() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for sigma in [0.5, 1.0, 2.0] {
            let link = NormalLink::new(sigma).unwrap();
            for _ in 0..100 {
                let u: f64 = rng.gen_range(-4.0..4.0) * sigma;
                let h = 1e-5;
                let fd = (link.cdf(u + h) - link.cdf(u - h)) / (2.0 * h);
                assert!((fd - link.pdf(u)).abs() < 1e-6, "sigma {sigma} u {u}");
            }
        }
    }

    #[test]
    fn cdf_is_monotone_with_limits() {
        let link = NormalLink::default();
        let mut prev = 0.0;
        for i in -400..=400 {
            let v = link.cdf(i as f64 * 0.05);
            assert!(v >= prev);
            prev = v;
        }
        assert!(link.cdf(-40.0) < 1e-300);
        assert_eq!(link.cdf(40.0), 1.0);
    }

    #[test]
    fn quantile_inverts_cdf() {
        let link = NormalLink::new(0.8).unwrap();
        for p in [0.01, 0.3, 0.5, 0.9, 0.999] {
            assert!((link.cdf(link.quantile(p)) - p).abs() < 1e-12);
        }
        assert!(link.quantile(0.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_sigma() {
        assert!(NormalLink::new(0.0).is_err());
        assert!(NormalLink::new(-1.0).is_err());
        assert!(NormalLink::new(f64::NAN).is_err());
    }
}
