use crate::{Error, Result};

/// 1-Wasserstein distance between two equal-size empirical laws:
/// the mean absolute difference of the order statistics.
pub fn wasserstein1(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptySample);
    }
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    xs.sort_unstable_by(f64::total_cmp);
    ys.sort_unstable_by(f64::total_cmp);
    let total: f64 = xs.iter().zip(&ys).map(|(a, b)| (a - b).abs()).sum();
    Ok(total / xs.len() as f64)
}
