//! Gaussian kernel helpers.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
#[inline]
pub fn norm_pdf(u: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * u * u).exp()
}

/// Standard normal distribution function.
#[inline]
pub fn norm_cdf(u: f64) -> f64 {
    0.5 * libm::erfc(-u * FRAC_1_SQRT_2)
}

/// Unnormalized product-kernel weight exp(−½ Σ ((x − c)/h)²).
#[inline]
pub fn product_weight(x: &[f64], center: &[f64], h: &[f64]) -> f64 {
    let mut s = 0.0;
    for j in 0..x.len() {
        let u = (x[j] - center[j]) / h[j];
        s += u * u;
    }
    (-0.5 * s).exp()
}

/// Density of N(0, 2) at u, the convolution of two standard Gaussian kernels.
#[inline]
pub fn norm_pdf_conv(u: f64) -> f64 {
    (-0.25 * u * u).exp() / (2.0 * PI.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_reference_values() {
        assert!((norm_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((norm_cdf(1.959_963_984_540_054) - 0.975).abs() < 1e-12);
        assert!((norm_cdf(-3.0) - 0.001_349_898_031_630_094_6).abs() < 1e-15);
    }

    #[test]
    fn pdf_is_cdf_derivative() {
        for &u in &[-2.0, -0.3, 0.0, 0.7, 2.5] {
            let fd = (norm_cdf(u + 1e-6) - norm_cdf(u - 1e-6)) / 2e-6;
            assert!((fd - norm_pdf(u)).abs() < 1e-9);
        }
    }
}
