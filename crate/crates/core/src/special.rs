//! Scalar special functions used throughout the crate.
//!
//! Gamma-family and incomplete-beta evaluations are delegated to `statrs`;
//! the helpers here add the normal distribution and a few numerically
//! stable transforms used by the network head.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

pub use statrs::function::beta::ln_beta;
pub use statrs::function::gamma::{digamma, ln_gamma};

/// Regularized incomplete beta function `I_x(a, b)`, with exact endpoints.
pub fn beta_reg(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        statrs::function::beta::beta_reg(a, b, x)
    }
}

/// Inverse of [`beta_reg`] in `x`.
pub fn inv_beta_reg(a: f64, b: f64, p: f64) -> f64 {
    if p <= 0.0 {
        0.0
    } else if p >= 1.0 {
        1.0
    } else {
        statrs::function::beta::inv_beta_reg(a, b, p)
    }
}

/// Standard normal CDF.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z * FRAC_1_SQRT_2)
}

/// Standard normal quantile function.
pub fn norm_ppf(p: f64) -> f64 {
    if p <= 0.0 {
        f64::NEG_INFINITY
    } else if p >= 1.0 {
        f64::INFINITY
    } else {
        -SQRT_2 * statrs::function::erf::erfc_inv(2.0 * p)
    }
}

/// Standard normal log-density.
pub fn norm_logpdf(z: f64) -> f64 {
    -0.5 * z * z - 0.5 * (2.0 * PI).ln()
}

/// `log(1 + exp(z))` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z + (-z).exp()
    } else if z < -30.0 {
        z.exp()
    } else {
        z.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `v > 0`.
pub fn inv_softplus(v: f64) -> f64 {
    if v > 30.0 {
        v + (-(-v).exp()).ln_1p()
    } else {
        v.exp_m1().ln()
    }
}

/// Logistic sigmoid, the derivative of [`softplus`].
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log Σ exp(v_i)`; `-inf` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_quantiles() {
        assert!((norm_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((norm_ppf(0.9) - 1.281_551_565_544_6).abs() < 1e-10);
        for &p in &[1e-6, 0.01, 0.3, 0.5, 0.77, 0.999] {
            assert!((norm_cdf(norm_ppf(p)) - p).abs() < 1e-12 * p.max(1e-3) * 1e3);
        }
    }

    #[test]
    fn softplus_round_trip() {
        for &v in &[1e-4, 0.3, 1.0, 5.0, 40.0] {
            assert!((softplus(inv_softplus(v)) - v).abs() < 1e-12 * v.max(1.0));
        }
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn digamma_reference_values() {
        // psi(1) = -gamma_E, psi(2) = 1 - gamma_E
        let euler = 0.577_215_664_901_532_9;
        assert!((digamma(1.0) + euler).abs() < 1e-12);
        assert!((digamma(2.0) - (1.0 - euler)).abs() < 1e-12);
        assert!((digamma(0.5) - (-euler - 2.0 * 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn incomplete_beta_endpoints() {
        assert_eq!(beta_reg(2.0, 5.0, 0.0), 0.0);
        assert_eq!(beta_reg(2.0, 5.0, 1.0), 1.0);
        assert!((beta_reg(2.0, 2.0, 0.5) - 0.5).abs() < 1e-14);
    }
}
