//! Stochastic-gradient outer loop: step schedules, stall detection with
//! restarts, and the stationarity diagnostic `Σ (α_k/A_K) ‖g_k‖²`.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::charfn::{CfTable, FrequencyGrid};
use crate::environment::EnvSpec;
use crate::loss::{cf_loss_gradient, loss_terms, norm, GradientEstimate};
use crate::numerics::splitmix64;
use crate::numerics::{ComplexValue, RandomStream};
use crate::policy::{PolicyConfig, PolicyParams};
use crate::rollout::{GoodEventConfig, Simulator, DEFAULT_MEMORY_BUDGET};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StepSchedule {
    Constant {
        alpha: f64,
    },
    /// `α_k = a / (k + k₀)`.
    RobbinsMonro {
        a: f64,
        k0: f64,
    },
    Adam {
        alpha: f64,
        #[serde(default = "beta1")]
        beta1: f64,
        #[serde(default = "beta2")]
        beta2: f64,
        #[serde(default = "adam_eps")]
        eps: f64,
    },
}

fn beta1() -> f64 {
    0.9
}
fn beta2() -> f64 {
    0.999
}
fn adam_eps() -> f64 {
    1e-8
}

impl StepSchedule {
    pub fn adam(alpha: f64) -> Self {
        StepSchedule::Adam {
            alpha,
            beta1: beta1(),
            beta2: beta2(),
            eps: adam_eps(),
        }
    }

    pub fn rate(&self, k: usize) -> f64 {
        match *self {
            StepSchedule::Constant { alpha } | StepSchedule::Adam { alpha, .. } => alpha,
            StepSchedule::RobbinsMonro { a, k0 } => a / (k as f64 + k0),
        }
    }

    /// `A_K = Σ_{k<K} α_k`.
    pub fn partial_sum(&self, k_max: usize) -> f64 {
        (0..k_max).map(|k| self.rate(k)).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            StepSchedule::Constant { alpha } => alpha > 0.0,
            StepSchedule::RobbinsMonro { a, k0 } => a > 0.0 && k0 >= 1.0,
            StepSchedule::Adam {
                alpha,
                beta1,
                beta2,
                eps,
            } => alpha > 0.0 && (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid step schedule {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Trajectories per iteration.
    #[serde(rename = "M")]
    pub m: usize,
    pub max_iters: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_stall")]
    pub stall_window: usize,
    #[serde(default)]
    pub restart_limit: usize,
    #[serde(default)]
    pub seed: u64,
    pub schedule: StepSchedule,
    #[serde(default)]
    pub good: GoodEventConfig,
    #[serde(default = "default_budget")]
    pub memory_budget: usize,
    /// Warn when `‖θ‖_∞` leaves this box.
    #[serde(default)]
    pub param_box: Option<f64>,
}

fn default_threshold() -> f64 {
    1e-3
}
fn default_stall() -> usize {
    1000
}
fn default_budget() -> usize {
    DEFAULT_MEMORY_BUDGET
}

impl TrainConfig {
    pub fn new(m: usize, max_iters: usize, schedule: StepSchedule) -> Self {
        Self {
            m,
            max_iters,
            threshold: default_threshold(),
            stall_window: default_stall(),
            restart_limit: 0,
            seed: 0,
            schedule,
            good: GoodEventConfig::default(),
            memory_budget: DEFAULT_MEMORY_BUDGET,
            param_box: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.m == 0 {
            return bad("batch size M must be at least 1");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1");
        }
        if !(self.threshold >= 0.0) {
            return bad("threshold must be nonnegative");
        }
        if self.stall_window == 0 {
            return bad("stall_window must be at least 1");
        }
        self.good.validate()?;
        self.schedule.validate()
    }

    /// Seed of restart `attempt`; attempt 0 uses the configured seed.
    pub fn attempt_seed(&self, attempt: usize) -> u64 {
        if attempt == 0 {
            self.seed
        } else {
            splitmix64(self.seed ^ splitmix64(attempt as u64))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub attempt: usize,
    pub k: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub alpha: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub records: Vec<IterRecord>,
    /// Parameters at the lowest observed loss (the converging ones on success).
    pub params: PolicyParams,
    pub best_loss: f64,
    pub restarts: usize,
    pub converged: bool,
    pub wall_time: Duration,
    pub warnings: Vec<String>,
}

impl TrainReport {
    pub fn final_attempt(&self) -> &[IterRecord] {
        let last = self.records.last().map_or(0, |r| r.attempt);
        let start = self.records.iter().position(|r| r.attempt == last).unwrap_or(0);
        &self.records[start..]
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.loss)
    }
}

/// Data handed to the observer once per iteration, before the update.
pub struct IterEvent<'a> {
    pub record: &'a IterRecord,
    /// `θ_k`, the parameters that produced this iteration's batch.
    pub params: &'a PolicyParams,
    pub grad: &'a [f64],
}

/// `Σ_{k<K} (α_k/A_K) ‖g_k‖²` over the final attempt.
pub fn weighted_grad_average(report: &TrainReport, k_max: usize) -> Result<f64> {
    weighted_average(report.final_attempt(), k_max)
}

pub fn weighted_average(records: &[IterRecord], k_max: usize) -> Result<f64> {
    if k_max == 0 {
        return Err(Error::Domain("weighted average over zero iterations".into()));
    }
    if k_max > records.len() {
        return Err(Error::Domain(format!(
            "asked for {k_max} iterations, only {} recorded",
            records.len()
        )));
    }
    let recs = &records[..k_max];
    let a_k: f64 = recs.iter().map(|r| r.alpha).sum();
    Ok(recs.iter().map(|r| r.alpha * r.grad_norm * r.grad_norm).sum::<f64>() / a_k)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

/// One loss/gradient evaluation, streaming when the dense matrix would not fit.
pub fn estimate_gradient(
    sim: &Simulator,
    m: usize,
    stream: RandomStream,
    target: &CfTable,
    grid: &FrequencyGrid,
) -> Result<GradientEstimate> {
    match sim.run(m, stream, true) {
        Ok(batch) => cf_loss_gradient(&batch, target, grid),
        Err(Error::MemoryBudget { .. }) => {
            let returns = sim.returns(m, stream)?;
            let terms = loss_terms(&returns, target, grid)?;
            let grad = sim.weighted_gradient(stream, &terms.coefficients)?;
            Ok(GradientEstimate {
                loss: terms.loss,
                grad_norm: norm(&grad),
                grad,
                per_node_residual: terms.residual,
            })
        }
        Err(e) => Err(e),
    }
}

pub fn train(
    env: &EnvSpec,
    policy: &PolicyConfig,
    target: &CfTable,
    grid: &FrequencyGrid,
    config: &TrainConfig,
) -> Result<TrainReport> {
    train_with_observer(env, policy, target, grid, config, &mut |_| {})
}

pub fn train_with_observer(
    env: &EnvSpec,
    policy: &PolicyConfig,
    target: &CfTable,
    grid: &FrequencyGrid,
    config: &TrainConfig,
    observer: &mut dyn FnMut(&IterEvent),
) -> Result<TrainReport> {
    let start = Instant::now();
    env.validate()?;
    config.validate()?;
    target.check_grid(grid)?;
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    let mut best: Option<(f64, PolicyParams)> = None;

    for attempt in 0..=config.restart_limit {
        let seed = config.attempt_seed(attempt);
        let cfg = if attempt == 0 {
            policy.clone()
        } else {
            PolicyConfig {
                seed,
                ..policy.clone()
            }
        };
        let mut params = PolicyParams::init(&cfg)?;
        let mut adam = Adam {
            m: vec![0.0; params.len()],
            v: vec![0.0; params.len()],
            t: 0,
        };
        let mut attempt_best = f64::INFINITY;
        let mut last_improvement = 0;
        let mut warned = false;

        for k in 0..config.max_iters {
            let est = {
                let sim = Simulator::new(env, &params, config.good)?.with_memory_budget(config.memory_budget);
                estimate_gradient(&sim, config.m, RandomStream::new(seed, k as u64), target, grid)
            }
            .map_err(|e| match e {
                Error::Divergence { trajectory, stage } => Error::Domain(format!(
                    "attempt {attempt} iteration {k}: trajectory {trajectory} diverged at stage {stage}"
                )),
                other => other,
            })?;
            let alpha = config.schedule.rate(k);
            let record = IterRecord {
                attempt,
                k,
                loss: est.loss,
                grad_norm: est.grad_norm,
                alpha,
            };
            records.push(record);
            observer(&IterEvent {
                record: &record,
                params: &params,
                grad: &est.grad,
            });
            if best.as_ref().is_none_or(|(l, _)| est.loss < *l) {
                best = Some((est.loss, params.clone()));
            }
            if est.loss < config.threshold {
                return Ok(TrainReport {
                    records,
                    params,
                    best_loss: est.loss,
                    restarts: attempt,
                    converged: true,
                    wall_time: start.elapsed(),
                    warnings,
                });
            }
            if est.loss < attempt_best {
                attempt_best = est.loss;
                last_improvement = k;
            } else if k - last_improvement >= config.stall_window {
                break;
            }
            update(&mut params.theta, &est.grad, &config.schedule, alpha, &mut adam);
            if let Some(bound) = config.param_box {
                if !warned && params.max_abs() > bound {
                    warned = true;
                    warnings.push(format!(
                        "attempt {attempt} iteration {k}: |theta|_inf = {} exceeds {bound}",
                        params.max_abs()
                    ));
                }
            }
        }
    }
    let (best_loss, params) = best.expect("at least one iteration ran");
    Ok(TrainReport {
        records,
        params,
        best_loss,
        restarts: config.restart_limit,
        converged: false,
        wall_time: start.elapsed(),
        warnings,
    })
}

fn update(theta: &mut [f64], grad: &[f64], schedule: &StepSchedule, alpha: f64, adam: &mut Adam) {
    match *schedule {
        StepSchedule::Constant { .. } | StepSchedule::RobbinsMonro { .. } => {
            for (t, g) in theta.iter_mut().zip(grad) {
                *t -= alpha * g;
            }
        }
        StepSchedule::Adam { beta1, beta2, eps, .. } => {
            adam.t += 1;
            let c1 = 1.0 - beta1.powi(adam.t);
            let c2 = 1.0 - beta2.powi(adam.t);
            for i in 0..theta.len() {
                let g = grad[i];
                adam.m[i] = beta1 * adam.m[i] + (1.0 - beta1) * g;
                adam.v[i] = beta2 * adam.v[i] + (1.0 - beta2) * g * g;
                theta[i] -= alpha * (adam.m[i] / c1) / ((adam.v[i] / c2).sqrt() + eps);
            }
        }
    }
}

/// Outcome of [`bias_decay_probe`].
#[derive(Clone, Debug, PartialEq)]
pub struct BiasProbe {
    pub m_list: Vec<usize>,
    /// Estimated `‖E[g_M] − g_∞‖` per batch size.
    pub errors: Vec<f64>,
    /// Plain `‖mean(g_M) − g_∞‖`, dominated by Monte-Carlo noise at large M.
    pub raw_errors: Vec<f64>,
    /// Log-log slope; `NaN` when every error is zero.
    pub slope: f64,
}

/// Empirical CF `φ̂` and its gradient `∇φ̂` (node-major, `p` wide) of one batch.
struct CfMoments {
    phi: Vec<ComplexValue>,
    dphi: Vec<ComplexValue>,
}

fn cf_moments(sim: &Simulator, m: usize, stream: RandomStream, nodes: &[f64], p: usize) -> Result<CfMoments> {
    const PIECE: usize = 1 << 15;
    let mut phi = vec![ComplexValue::new(0.0, 0.0); nodes.len()];
    let mut dphi = vec![ComplexValue::new(0.0, 0.0); nodes.len() * p];
    // large batches are simulated in pieces on disjoint substreams
    let pieces = m.div_ceil(PIECE);
    for piece in 0..pieces {
        let size = PIECE.min(m - piece * PIECE);
        let s = if pieces == 1 { stream } else { stream.substream(piece as u64) };
        let batch = sim.run(size, s, true)?;
        let rows = batch.grad.as_ref().expect("gradients requested");
        for (l, &u) in nodes.iter().enumerate() {
            let d = &mut dphi[l * p..(l + 1) * p];
            for (j, &r) in batch.returns.iter().enumerate() {
                let e = crate::numerics::unit_phase(u * r);
                phi[l] += e;
                // i u e^{iuR}
                let w = ComplexValue::new(-u * e.im, u * e.re);
                for (di, g) in d.iter_mut().zip(&rows[j * p..(j + 1) * p]) {
                    *di += w * g;
                }
            }
        }
    }
    let inv = 1.0 / m as f64;
    phi.iter_mut().for_each(|v| *v *= inv);
    dphi.iter_mut().for_each(|v| *v *= inv);
    Ok(CfMoments { phi, dphi })
}

/// `g = −2 Σ β Re(conj(φ* − φ̂) ∇φ̂)`.
fn gradient_from_moments(mo: &CfMoments, target: &CfTable, grid: &FrequencyGrid, p: usize) -> Vec<f64> {
    let mut g = vec![0.0; p];
    for l in 0..grid.n_nodes {
        let res = (target.values[l] - mo.phi[l]).conj();
        for (gi, d) in g.iter_mut().zip(&mo.dphi[l * p..(l + 1) * p]) {
            *gi -= 2.0 * grid.weights[l] * (res * d).re;
        }
    }
    g
}

/// Log-log slope of the estimator bias against the batch size.
///
/// The estimator is quadratic in the empirical moments `(φ̂, ∇φ̂)`, so
/// `g_M − g_∞` splits into a zero-mean linear part and the remainder
/// `2 Σ β Re(conj(φ̂ − φ_∞)(∇φ̂ − ∇φ_∞))` which carries the whole bias. The
/// errors are the norms of the remainder averaged over `repetitions` batches;
/// dropping the linear part keeps the noise below the `1/M` signal.
#[allow(clippy::too_many_arguments)]
pub fn bias_decay_probe(
    env: &EnvSpec,
    params: &PolicyParams,
    target: &CfTable,
    grid: &FrequencyGrid,
    m_list: &[usize],
    repetitions: usize,
    seed: u64,
    reference_m: usize,
) -> Result<BiasProbe> {
    if m_list.len() < 3 || m_list.windows(2).any(|w| w[0] >= w[1]) || m_list[0] == 0 {
        return Err(Error::InvalidParameter(
            "batch sizes must be at least three strictly increasing positive values".into(),
        ));
    }
    if repetitions == 0 {
        return Err(Error::InvalidParameter("need at least one repetition".into()));
    }
    target.check_grid(grid)?;
    let sim = Simulator::new(env, params, GoodEventConfig::default())?;
    let p = params.len();
    let reference = cf_moments(&sim, reference_m, RandomStream::new(seed, u64::MAX), &grid.nodes, p)?;
    let g_inf = gradient_from_moments(&reference, target, grid, p);

    let mut errors = Vec::new();
    let mut raw_errors = Vec::new();
    for (i, &m) in m_list.iter().enumerate() {
        let mut rem = vec![0.0; p];
        let mut raw = vec![0.0; p];
        for rep in 0..repetitions {
            let stream = RandomStream::new(seed, (i * repetitions + rep) as u64);
            let mo = cf_moments(&sim, m, stream, &grid.nodes, p)?;
            let g = gradient_from_moments(&mo, target, grid, p);
            for (r, gi) in raw.iter_mut().zip(&g) {
                *r += gi;
            }
            for l in 0..grid.n_nodes {
                let dphi = (mo.phi[l] - reference.phi[l]).conj();
                let b = 2.0 * grid.weights[l];
                for ((ri, d), dr) in rem
                    .iter_mut()
                    .zip(&mo.dphi[l * p..(l + 1) * p])
                    .zip(&reference.dphi[l * p..(l + 1) * p])
                {
                    *ri += b * (dphi * (d - dr)).re;
                }
            }
        }
        let n = repetitions as f64;
        errors.push(norm(&rem) / n);
        raw_errors.push(raw.iter().zip(&g_inf).map(|(r, g)| (r / n - g).powi(2)).sum::<f64>().sqrt());
    }
    let slope = if errors.iter().all(|e| *e == 0.0) {
        f64::NAN
    } else {
        log_log_slope(m_list, &errors)
    };
    Ok(BiasProbe {
        m_list: m_list.to_vec(),
        errors,
        raw_errors,
        slope,
    })
}

fn log_log_slope(m: &[usize], e: &[f64]) -> f64 {
    let x: Vec<f64> = m.iter().map(|v| (*v as f64).ln()).collect();
    let y: Vec<f64> = e.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}
