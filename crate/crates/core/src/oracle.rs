//! Analytic reference solutions.
//!
//! * One-step cosine model `R = V cos(s₀ + a + σε)`: the Jacobi–Anger
//!   expansion turns `φ_R = φ*` into a linear system for the Fourier modes
//!   `ψ(k) = E[e^{ika}]` of the action law.
//! * Torus model: deconvolving a target's modes by the wrapped-Gaussian noise.

use std::f64::consts::{PI, TAU};

use rand::Rng;

use crate::charfn::{CfTable, FrequencyGrid};
use crate::environment::EnvSpec;
use crate::numerics::{bessel_j_range, least_squares, unit_phase, ComplexValue, DenseMatrix, RandomStream, MAX_BESSEL_ORDER};
use crate::{Error, Result};
use rand_distr::StandardNormal;

const SYMMETRY_TOL: f64 = 1e-9;
const MODULUS_TOL: f64 = 1e-9;
const RIDGE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct JacobiAngerProblem {
    pub s0: f64,
    pub sigma: f64,
    pub v: f64,
    pub k_modes: usize,
    pub grid: FrequencyGrid,
    /// Retry with a `1e-10` ridge instead of failing on rank deficiency.
    pub ridge_on_deficiency: bool,
}

impl JacobiAngerProblem {
    pub fn new(s0: f64, sigma: f64, v: f64, k_modes: usize, grid: FrequencyGrid) -> Result<Self> {
        let p = Self {
            s0,
            sigma,
            v,
            k_modes,
            grid,
            ridge_on_deficiency: true,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_modes == 0 || self.k_modes > MAX_BESSEL_ORDER as usize {
            return Err(Error::UnsupportedOrder {
                order: self.k_modes as u32,
                max: MAX_BESSEL_ORDER,
            });
        }
        if !(self.sigma > 0.0 && self.v > 0.0 && self.s0.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "need sigma > 0 and V > 0 (sigma={}, V={})",
                self.sigma, self.v
            )));
        }
        if self.grid.nodes.len() < self.k_modes {
            return Err(Error::InvalidParameter(format!(
                "{} nodes cannot determine {} modes",
                self.grid.nodes.len(),
                self.k_modes
            )));
        }
        Ok(())
    }

    /// The matching one-step cosine environment.
    pub fn env(&self) -> EnvSpec {
        EnvSpec::cosine(self.s0, self.sigma, self.v)
    }

    fn damping(&self, k: usize) -> f64 {
        (-0.5 * (k * k) as f64 * self.sigma * self.sigma).exp()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModeSolution {
    /// `x_k`, `k = 1..=K`.
    pub x: Vec<f64>,
    /// `ψ(0..=K)`, `ψ(0) = 1`.
    pub psi: Vec<ComplexValue>,
    /// Max over nodes of `|forward_cf − φ*|`.
    pub residual_norm: f64,
    pub odd_mode_max: f64,
    /// Modes whose modulus exceeded 1 and was clipped.
    pub clipped: Vec<usize>,
    pub ridge: bool,
}

fn check_symmetric(target: &CfTable, grid: &FrequencyGrid) -> Result<()> {
    target.check_grid(grid)?;
    let mut worst: f64 = target.values.iter().fold(0.0, |m, v| m.max(v.im.abs()));
    let n = grid.n_nodes;
    // node l mirrors node n − l on the uniform grid
    for l in 1..n {
        let (a, b) = (&target.values[l], &target.values[n - l]);
        if (grid.nodes[l] + grid.nodes[n - l]).abs() <= 1e-9 * grid.k_max {
            worst = worst.max((a.re - b.re).abs());
        }
    }
    if worst > SYMMETRY_TOL {
        return Err(Error::Symmetry { max_imag: worst });
    }
    Ok(())
}

pub fn solve_modes(problem: &JacobiAngerProblem, target: &CfTable) -> Result<ModeSolution> {
    problem.validate()?;
    let grid = &problem.grid;
    check_symmetric(target, grid)?;
    let kk = problem.k_modes;
    // The first node −K has no partner on the left-point grid; the target is
    // even, so its mirror +K is added to keep the row set symmetric.
    let mut nodes: Vec<(f64, f64)> = grid.nodes.iter().zip(&target.values).map(|(u, v)| (*u, v.re)).collect();
    nodes.push((-grid.nodes[0], target.values[0].re));
    let rows = nodes.len();
    let mut a = DenseMatrix::zeros(rows, kk);
    let mut b = vec![0.0; rows];
    for (l, &(u, phi)) in nodes.iter().enumerate() {
        let j = bessel_j_range(kk as u32, u * problem.v)?;
        for k in 1..=kk {
            a[(l, k - 1)] = 2.0 * j[k] * problem.damping(k);
        }
        b[l] = phi - j[0];
    }
    let (x, ridge) = match least_squares(&a, &b) {
        Ok(x) => (x, false),
        Err(Error::RankDeficient { column }) if !problem.ridge_on_deficiency => {
            return Err(Error::RankDeficient { column: column + 1 })
        }
        Err(Error::RankDeficient { .. }) => {
            let mut aug = DenseMatrix::zeros(rows + kk, kk);
            for l in 0..rows {
                for k in 0..kk {
                    aug[(l, k)] = a[(l, k)];
                }
            }
            for k in 0..kk {
                aug[(rows + k, k)] = RIDGE.sqrt();
            }
            b.resize(rows + kk, 0.0);
            let x = least_squares(&aug, &b).map_err(|e| match e {
                Error::RankDeficient { column } => Error::RankDeficient { column: column + 1 },
                other => other,
            })?;
            (x, true)
        }
        Err(e) => return Err(e),
    };

    let mut psi = vec![ComplexValue::new(1.0, 0.0)];
    let mut clipped = Vec::new();
    for (i, &xk) in x.iter().enumerate() {
        let k = (i + 1) as f64;
        // ψ(k) = i^{−k} e^{−iks₀} x_k
        let mut p = unit_phase(-k * (0.5 * PI + problem.s0)) * xk;
        if p.norm() > 1.0 + MODULUS_TOL {
            clipped.push(i + 1);
            p /= p.norm();
        }
        psi.push(p);
    }
    let odd_mode_max = x.iter().step_by(2).fold(0.0f64, |m, v| m.max(v.abs()));
    let mut sol = ModeSolution {
        x,
        psi,
        residual_norm: 0.0,
        odd_mode_max,
        clipped,
        ridge,
    };
    let fwd = forward_cf(&sol, problem)?;
    sol.residual_norm = fwd
        .values
        .iter()
        .zip(&target.values)
        .fold(0.0, |m, (f, t)| m.max((f - t).norm()));
    Ok(sol)
}

/// `φ_R(u) = Σ_{|k|≤K} i^k J_k(uV) e^{iks₀} e^{−k²σ²/2} ψ(k)`.
pub fn forward_cf(solution: &ModeSolution, problem: &JacobiAngerProblem) -> Result<CfTable> {
    let kk = solution.psi.len() - 1;
    let values = problem
        .grid
        .nodes
        .iter()
        .map(|&u| {
            let j = bessel_j_range(kk as u32, u * problem.v)?;
            let mut acc = ComplexValue::new(j[0], 0.0) * solution.psi[0];
            for k in 1..=kk {
                let kf = k as f64;
                let phase = unit_phase(kf * (0.5 * PI + problem.s0));
                let plus = phase * solution.psi[k];
                // k → −k: i^{−k} (−1)^k = i^k, and ψ(−k) = conj ψ(k)
                let minus = unit_phase(kf * (0.5 * PI - problem.s0)) * solution.psi[k].conj();
                acc += (plus + minus) * (j[k] * problem.damping(k));
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    Ok(CfTable {
        nodes: problem.grid.nodes.clone(),
        values,
    })
}

/// Tabulated action density on an interval of length at most `2π`.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionDensity {
    pub lo: f64,
    pub hi: f64,
    pub x: Vec<f64>,
    pub values: Vec<f64>,
    pub interval_integral: f64,
    pub period_integral: f64,
    pub min_value: f64,
}

fn density_at(psi: &[ComplexValue], x: f64) -> f64 {
    let mut acc = 1.0;
    for (k, p) in psi.iter().enumerate().skip(1) {
        acc += 2.0 * (p * unit_phase(-(k as f64) * x)).re;
    }
    acc / TAU
}

fn trapezoid(y: &[f64], h: f64) -> f64 {
    if y.len() < 2 {
        return 0.0;
    }
    h * (y.iter().sum::<f64>() - 0.5 * (y[0] + y[y.len() - 1]))
}

/// `p(x) = (1/2π)(1 + 2 Σ_{k≥1} Re(ψ(k) e^{−ikx}))` on `n_points` nodes.
pub fn reconstruct_density(solution: &ModeSolution, interval: (f64, f64), n_points: usize) -> Result<ActionDensity> {
    let (lo, hi) = interval;
    if !(hi > lo) || hi - lo > TAU * (1.0 + 1e-12) {
        return Err(Error::Domain(format!("interval [{lo}, {hi}] must be nonempty and at most 2π wide")));
    }
    if n_points < 2 {
        return Err(Error::InvalidParameter("need at least 2 density points".into()));
    }
    let h = (hi - lo) / (n_points - 1) as f64;
    let x: Vec<f64> = (0..n_points).map(|i| lo + i as f64 * h).collect();
    let values: Vec<f64> = x.iter().map(|&x| density_at(&solution.psi, x)).collect();
    // the trapezoid rule is exact for trig polynomials of degree < period points
    let n_period = 4 * solution.psi.len() + 64;
    let hp = TAU / n_period as f64;
    let period: Vec<f64> = (0..=n_period).map(|i| density_at(&solution.psi, lo + i as f64 * hp)).collect();
    Ok(ActionDensity {
        lo,
        hi,
        interval_integral: trapezoid(&values, h),
        period_integral: trapezoid(&period, hp),
        min_value: values.iter().cloned().fold(f64::INFINITY, f64::min),
        x,
        values,
    })
}

/// Inverse-CDF sampler for a tabulated density; negative lobes are clipped to 0.
#[derive(Clone, Debug)]
pub struct DensitySampler {
    x: Vec<f64>,
    cdf: Vec<f64>,
}

impl DensitySampler {
    pub fn new(density: &ActionDensity) -> Result<Self> {
        let p: Vec<f64> = density.values.iter().map(|v| v.max(0.0)).collect();
        let mut cdf = vec![0.0; p.len()];
        for i in 1..p.len() {
            cdf[i] = cdf[i - 1] + 0.5 * (p[i] + p[i - 1]) * (density.x[i] - density.x[i - 1]);
        }
        let total = *cdf.last().unwrap_or(&0.0);
        if !(total > 0.0) {
            return Err(Error::Domain("density has no positive mass".into()));
        }
        cdf.iter_mut().for_each(|c| *c /= total);
        Ok(Self {
            x: density.x.clone(),
            cdf,
        })
    }

    /// Quantile at `q ∈ [0, 1]`, linear between table points.
    pub fn quantile(&self, q: f64) -> f64 {
        let i = self.cdf.partition_point(|c| *c < q).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let w = if c1 > c0 { (q - c0) / (c1 - c0) } else { 0.0 };
        self.x[i - 1] + w.clamp(0.0, 1.0) * (self.x[i] - self.x[i - 1])
    }

    pub fn sample(&self, m: usize, stream: RandomStream) -> Vec<f64> {
        let mut rng = stream.rng();
        (0..m).map(|_| self.quantile(rng.random::<f64>())).collect()
    }
}

/// Terminal returns of the cosine model when actions are drawn from `sampler`.
pub fn cosine_returns(problem: &JacobiAngerProblem, sampler: &DensitySampler, m: usize, stream: RandomStream) -> Result<Vec<f64>> {
    let env = problem.env();
    let actions = sampler.sample(m, stream.substream(0));
    let mut rng = stream.substream(1).rng();
    actions
        .iter()
        .map(|&a| {
            let eps: f64 = rng.sample(StandardNormal);
            let s1 = env.step(0, problem.s0, a, eps)?.next_state;
            Ok(env.reward(1, s1, 0.0)?.value)
        })
        .collect()
}

/// `ψ̂(k) = (1/M) Σ_j e^{ik a_j}`, `k = 0..=K`.
pub fn estimate_modes(samples: &[f64], k_modes: usize) -> Result<Vec<ComplexValue>> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    let inv = 1.0 / samples.len() as f64;
    Ok((0..=k_modes)
        .map(|k| {
            let mut acc = ComplexValue::new(0.0, 0.0);
            for a in samples {
                acc += unit_phase(k as f64 * a);
            }
            acc * inv
        })
        .collect())
}

/// `ν̂(n) = μ̂*(n) e^{ins₀} e^{σ²n²/2}` for `n = 0..=N`.
pub fn torus_deconvolve(target_modes: &[ComplexValue], s0: f64, sigma: f64) -> Result<Vec<ComplexValue>> {
    let first = target_modes.first().ok_or(Error::EmptySample)?;
    if (first - ComplexValue::new(1.0, 0.0)).norm() > 1e-12 {
        return Err(Error::InvalidParameter(format!("target mode 0 must be 1, got {first}")));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!("noise scale must be positive, got {sigma}")));
    }
    let nu: Vec<ComplexValue> = target_modes
        .iter()
        .enumerate()
        .map(|(n, mu)| {
            let n = n as f64;
            mu * unit_phase(n * s0) * (0.5 * sigma * sigma * n * n).exp()
        })
        .collect();
    let bad: Vec<i64> = nu
        .iter()
        .enumerate()
        .filter(|(_, v)| v.norm() > 1.0 + MODULUS_TOL)
        .map(|(n, _)| n as i64)
        .collect();
    if !bad.is_empty() {
        return Err(Error::InfeasibleTarget { modes: bad });
    }
    Ok(nu)
}

/// Forward map `μ̂(n) = ν̂(n) e^{−ins₀} e^{−σ²n²/2}`.
pub fn torus_convolve(policy_modes: &[ComplexValue], s0: f64, sigma: f64) -> Vec<ComplexValue> {
    policy_modes
        .iter()
        .enumerate()
        .map(|(n, nu)| {
            let n = n as f64;
            nu * unit_phase(-n * s0) * (-0.5 * sigma * sigma * n * n).exp()
        })
        .collect()
}

/// Modes `n = 0..=N` of the wrapped normal `WN(m, σ²)` in the `e^{−inx}` convention.
pub fn wrapped_gaussian_modes(n_max: usize, m: f64, sigma2: f64) -> Vec<ComplexValue> {
    (0..=n_max)
        .map(|n| crate::charfn::wrapped_gaussian_mode(n as f64, m, sigma2))
        .collect()
}
