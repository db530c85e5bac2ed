//! The discretized characteristic-function loss
//! `L̂(θ) = Σ_ℓ β_ℓ |φ*(u_ℓ) − φ̂(u_ℓ)|²` and its coupled gradient estimator.

use std::f64::consts::SQRT_2;

use rayon::prelude::*;

use crate::charfn::{empirical_cf_values, CfTable, FrequencyGrid};
use crate::numerics::{pairwise_sum, ComplexValue};
use crate::rollout::{TrajectoryBatch, CHUNK};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradientEstimate {
    pub loss: f64,
    pub grad: Vec<f64>,
    /// `φ*(u_ℓ) − φ̂(u_ℓ)`.
    pub per_node_residual: Vec<ComplexValue>,
    pub grad_norm: f64,
}

/// Loss value, residuals, and the per-sample coefficients `c_j` with
/// `∇L̂ = Σ_j c_j ∇_θR_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct LossTerms {
    pub loss: f64,
    pub residual: Vec<ComplexValue>,
    pub coefficients: Vec<f64>,
}

fn residuals(returns: &[f64], target: &CfTable, grid: &FrequencyGrid) -> Result<(f64, Vec<ComplexValue>)> {
    target.check_grid(grid)?;
    let phi = empirical_cf_values(returns, &grid.nodes)?;
    let residual: Vec<ComplexValue> = target.values.iter().zip(&phi).map(|(t, p)| t - p).collect();
    let terms: Vec<f64> = residual
        .iter()
        .zip(&grid.weights)
        .map(|(r, b)| b * r.norm_sqr())
        .collect();
    Ok((pairwise_sum(&terms), residual))
}

/// Loss on a plain sample of terminal returns.
pub fn cf_loss_from_returns(returns: &[f64], target: &CfTable, grid: &FrequencyGrid) -> Result<f64> {
    Ok(residuals(returns, target, grid)?.0)
}

pub fn cf_loss(batch: &TrajectoryBatch, target: &CfTable, grid: &FrequencyGrid) -> Result<f64> {
    cf_loss_from_returns(&batch.returns, target, grid)
}

/// Everything the gradient needs except the sensitivities themselves.
///
/// With `a + ib = φ* − φ̂`,
/// `c_j = −(2/M) Σ_ℓ β_ℓ u_ℓ (b_ℓ cos(u_ℓR_j) − a_ℓ sin(u_ℓR_j))`.
pub fn loss_terms(returns: &[f64], target: &CfTable, grid: &FrequencyGrid) -> Result<LossTerms> {
    let (loss, residual) = residuals(returns, target, grid)?;
    let m = returns.len() as f64;
    // fold β_ℓ u_ℓ into the residual once
    let scaled: Vec<(f64, f64, f64)> = residual
        .iter()
        .zip(&grid.nodes)
        .zip(&grid.weights)
        .map(|((r, &u), &b)| (u, b * u * r.re, b * u * r.im))
        .collect();
    let coefficients = returns
        .par_iter()
        .map(|&rj| {
            let mut acc = 0.0;
            for &(u, a, b) in &scaled {
                let (s, c) = (u * rj).sin_cos();
                acc += b * c - a * s;
            }
            -2.0 * acc / m
        })
        .collect();
    Ok(LossTerms {
        loss,
        residual,
        coefficients,
    })
}

/// `Σ_j c_j row_j` over the dense `M × p` matrix, reduced in fixed chunks.
pub(crate) fn combine_rows(coefficients: &[f64], rows: &[f64], p: usize) -> Vec<f64> {
    let m = coefficients.len();
    let partials: Vec<Vec<f64>> = (0..m.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; p];
            for j in c * CHUNK..((c + 1) * CHUNK).min(m) {
                let w = coefficients[j];
                for (a, g) in acc.iter_mut().zip(&rows[j * p..(j + 1) * p]) {
                    *a += w * g;
                }
            }
            acc
        })
        .collect();
    let mut out = vec![0.0; p];
    for part in partials {
        for (o, v) in out.iter_mut().zip(part) {
            *o += v;
        }
    }
    out
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Loss and gradient estimate from one batch carrying `∇_θR_T`.
pub fn cf_loss_gradient(batch: &TrajectoryBatch, target: &CfTable, grid: &FrequencyGrid) -> Result<GradientEstimate> {
    let rows = batch
        .grad
        .as_ref()
        .ok_or_else(|| Error::Capability("batch was simulated without sensitivities".into()))?;
    let terms = loss_terms(&batch.returns, target, grid)?;
    let grad = combine_rows(&terms.coefficients, rows, batch.n_params);
    Ok(GradientEstimate {
        loss: terms.loss,
        grad_norm: norm(&grad),
        grad,
        per_node_residual: terms.residual,
    })
}

/// Closed-form loss against `N(0, 1)` with weight `(2π)^{-1/2} e^{-u²/2}` on all of ℝ.
pub fn epps_pulley_loss(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    let m = samples.len() as f64;
    let rows: Vec<f64> = samples
        .par_iter()
        .map(|x| samples.iter().map(|y| (-0.5 * (x - y) * (x - y)).exp()).sum::<f64>())
        .collect();
    let pair = pairwise_sum(&rows) / (m * m);
    let single: Vec<f64> = samples.iter().map(|x| (-0.25 * x * x).exp()).collect();
    Ok(pair - SQRT_2 * pairwise_sum(&single) / m + 1.0 / 3f64.sqrt())
}

/// `C_w = Σ_ℓ β_ℓ |e^{iu_ℓ} − 1|²`.
pub fn bernoulli_constant(grid: &FrequencyGrid) -> f64 {
    let terms: Vec<f64> = grid
        .nodes
        .iter()
        .zip(&grid.weights)
        .map(|(u, b)| b * 2.0 * (1.0 - u.cos()))
        .collect();
    pairwise_sum(&terms)
}

/// Loss of a Bernoulli(p) law against `δ_1`: `C_w (1 − p)²`.
pub fn bernoulli_loss(p: f64, grid: &FrequencyGrid) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("probability {p} outside [0, 1]")));
    }
    Ok(bernoulli_constant(grid) * (1.0 - p) * (1.0 - p))
}

/// `Ŝ = 4 B Σ_ℓ |β_ℓ u_ℓ|`, the almost-sure bound on the gradient estimate
/// when every `‖∇_θR_j‖ ≤ B`.
pub fn gradient_bound(grid: &FrequencyGrid, grad_r_bound: f64) -> f64 {
    4.0 * grad_r_bound * grid.nodes.iter().zip(&grid.weights).map(|(u, b)| (b * u).abs()).sum::<f64>()
}

/// Bias bound `Ŝ / M`.
pub fn bias_bound(grid: &FrequencyGrid, grad_r_bound: f64, m: usize) -> Result<f64> {
    if m == 0 {
        return Err(Error::EmptySample);
    }
    if !(grad_r_bound > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "gradient bound must be positive, got {grad_r_bound}"
        )));
    }
    Ok(gradient_bound(grid, grad_r_bound) / m as f64)
}
