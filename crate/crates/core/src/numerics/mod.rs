//! Numeric kernels shared by the rest of the crate.

mod bessel;
mod lstsq;
mod rng;
mod wasserstein;

pub use bessel::{bessel_j, bessel_j_range, MAX_BESSEL_ORDER};
pub use lstsq::{least_squares, DenseMatrix};
pub use rng::{splitmix64, standard_normal, RandomStream};
pub use wasserstein::wasserstein1;

/// Complex scalar used for every characteristic-function value.
pub type ComplexValue = num_complex::Complex64;

/// `e^{iθ}` for real `θ`.
#[inline]
pub fn unit_phase(theta: f64) -> ComplexValue {
    let (s, c) = theta.sin_cos();
    ComplexValue::new(c, s)
}

/// Complementary error function.
#[inline]
pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

/// Standard normal cumulative distribution function.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Pairwise (cascade) summation; the association order depends only on the length.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if values.len() <= BLOCK {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_phase_has_unit_modulus() {
        for k in -50..50 {
            let theta = k as f64 * 0.731;
            assert!((unit_phase(theta).norm() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn conjugation_is_an_involution() {
        let z = ComplexValue::new(0.3, -1.7);
        assert_eq!(z.conj().conj(), z);
        assert_eq!(z.norm_sqr(), 0.3 * 0.3 + 1.7 * 1.7);
    }

    #[test]
    fn pairwise_sum_matches_naive_on_small_input() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 499_500.0);
    }
}
