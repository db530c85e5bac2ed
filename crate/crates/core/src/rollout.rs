//! Batched trajectory simulation with exact pathwise sensitivities `∇_θR_T`.
//!
//! Trajectory `j` draws all of its noise from `base.substream(j)`: `z_t` and
//! then `ε_{t+1}` for each stage, so a batch is bit-identical whatever the
//! size of the worker pool.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::EnvSpec;
use crate::numerics::{normal_cdf, RandomStream};
use crate::policy::{Policy, PolicyParams, Workspace};
use crate::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Trajectories per reduction chunk. Fixed so sums do not depend on threads.
pub const CHUNK: usize = 64;

/// Default cap for the dense `M × |θ|` sensitivity matrix (2 GiB).
pub const DEFAULT_MEMORY_BUDGET: usize = 2 << 30;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Truncation {
    /// Project onto `[-B, B]`.
    #[default]
    Clip,
    /// Redraw until inside `[-B, B]`.
    Resample,
    Off,
}

/// Noise truncation realizing the good event.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoodEventConfig {
    pub z_bound: f64,
    pub eps_bound: f64,
    #[serde(default)]
    pub mode: Truncation,
    /// Threshold for the state-deviation counter `|s_t − mean_t| > η`.
    #[serde(default)]
    pub state_deviation_bound: Option<f64>,
}

impl Default for GoodEventConfig {
    fn default() -> Self {
        Self {
            z_bound: 6.0,
            eps_bound: 6.0,
            mode: Truncation::Clip,
            state_deviation_bound: None,
        }
    }
}

impl GoodEventConfig {
    pub fn off() -> Self {
        Self {
            mode: Truncation::Off,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.z_bound >= 1.0 && self.eps_bound >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "noise bounds must be >= 1 (z_bound={}, eps_bound={})",
                self.z_bound, self.eps_bound
            )));
        }
        Ok(())
    }

    fn draw(&self, rng: &mut ChaCha8Rng, bound: f64) -> f64 {
        let x: f64 = rng.sample(StandardNormal);
        match self.mode {
            Truncation::Off => x,
            Truncation::Clip => x.clamp(-bound, bound),
            Truncation::Resample => {
                let mut x = x;
                while x.abs() > bound {
                    x = rng.sample(StandardNormal);
                }
                x
            }
        }
    }
}

/// Fixed closed-form policies used to generate target samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ReferencePolicy {
    /// `a = gain · s`.
    LinearFeedback { gain: f64 },
    Constant { value: f64 },
    /// `a = lo + (hi − lo) Φ(z)`, uniform on `[lo, hi]`.
    Uniform { lo: f64, hi: f64 },
}

impl ReferencePolicy {
    fn action(&self, s: f64, z: f64) -> f64 {
        match *self {
            ReferencePolicy::LinearFeedback { gain } => gain * s,
            ReferencePolicy::Constant { value } => value,
            ReferencePolicy::Uniform { lo, hi } => lo + (hi - lo) * normal_cdf(z),
        }
    }
}

/// `M` simulated trajectories, stored row-major by trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryBatch {
    pub m: usize,
    pub horizon: usize,
    /// `s[j·(T+1) + t]`.
    pub states: Vec<f64>,
    /// `a[j·T + t]`.
    pub actions: Vec<f64>,
    /// Cumulative stage rewards `R[j·(T+1) + t]`, `R_0 = 0`.
    pub rewards: Vec<f64>,
    /// `R_T` including the terminal reward when the model has one.
    pub returns: Vec<f64>,
    pub z: Vec<f64>,
    /// `ε_{t+1}` stored at `j·T + t`.
    pub eps: Vec<f64>,
    /// `∇_θR_T` rows, `n_params` wide.
    pub grad: Option<Vec<f64>>,
    pub n_params: usize,
    /// Number of `(j, t)` with `|s_t − mean_t| > η`.
    pub state_deviations: usize,
}

impl TrajectoryBatch {
    pub fn grad_row(&self, j: usize) -> Option<&[f64]> {
        let p = self.n_params;
        self.grad.as_ref().map(|g| &g[j * p..(j + 1) * p])
    }

    pub fn state(&self, j: usize, t: usize) -> f64 {
        self.states[j * (self.horizon + 1) + t]
    }

    pub fn action(&self, j: usize, t: usize) -> f64 {
        self.actions[j * self.horizon + t]
    }

    pub fn reward(&self, j: usize, t: usize) -> f64 {
        self.rewards[j * (self.horizon + 1) + t]
    }

    /// Batch mean of `∇_θR_T`.
    pub fn mean_grad(&self) -> Option<Vec<f64>> {
        let p = self.n_params;
        let g = self.grad.as_ref()?;
        let mut out = vec![0.0; p];
        for row in g.chunks_exact(p) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|v| *v /= self.m as f64);
        Some(out)
    }

    /// `traj,t,s,a,R` rows; the last row of each trajectory carries `R_T` and an empty action.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("traj,t,s,a,R\n");
        let t_max = self.horizon;
        for j in 0..self.m {
            for t in 0..t_max {
                out.push_str(&format!(
                    "{j},{t},{:?},{:?},{:?}\n",
                    self.state(j, t),
                    self.action(j, t),
                    self.reward(j, t)
                ));
            }
            out.push_str(&format!("{j},{t_max},{:?},,{:?}\n", self.state(j, t_max), self.returns[j]));
        }
        out
    }
}

enum Actor<'a> {
    Net(Policy<'a>),
    Reference(ReferencePolicy),
}

struct Scratch {
    ws: Option<Workspace>,
    g: Vec<f64>,
    ds: Vec<f64>,
    dr: Vec<f64>,
    da: Vec<f64>,
}

struct Trajectory {
    states: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    ret: f64,
    z: Vec<f64>,
    eps: Vec<f64>,
}

/// Simulation context shared by all workers.
pub struct Simulator<'a> {
    env: &'a EnvSpec,
    actor: Actor<'a>,
    good: GoodEventConfig,
    memory_budget: usize,
}

impl<'a> Simulator<'a> {
    pub fn new(env: &'a EnvSpec, params: &'a PolicyParams, good: GoodEventConfig) -> Result<Self> {
        env.validate()?;
        good.validate()?;
        params.config.validate()?;
        Ok(Self {
            env,
            actor: Actor::Net(Policy::new(params)),
            good,
            memory_budget: DEFAULT_MEMORY_BUDGET,
        })
    }

    pub fn reference(env: &'a EnvSpec, policy: ReferencePolicy, good: GoodEventConfig) -> Result<Self> {
        env.validate()?;
        good.validate()?;
        Ok(Self {
            env,
            actor: Actor::Reference(policy),
            good,
            memory_budget: DEFAULT_MEMORY_BUDGET,
        })
    }

    pub fn with_memory_budget(mut self, bytes: usize) -> Self {
        self.memory_budget = bytes;
        self
    }

    pub fn n_params(&self) -> usize {
        match &self.actor {
            Actor::Net(p) => p.param_count(),
            Actor::Reference(_) => 0,
        }
    }

    fn scratch(&self, with_grad: bool) -> Scratch {
        let p = if with_grad { self.n_params() } else { 0 };
        Scratch {
            ws: match &self.actor {
                Actor::Net(policy) => Some(policy.workspace()),
                Actor::Reference(_) => None,
            },
            g: vec![0.0; p],
            ds: vec![0.0; p],
            dr: vec![0.0; p],
            da: vec![0.0; p],
        }
    }

    /// Simulates trajectory `j`; with `with_grad` the sensitivity `∇_θR_T`
    /// is left in `sc.dr`.
    fn simulate_one(&self, base: RandomStream, j: usize, with_grad: bool, sc: &mut Scratch) -> Result<Trajectory> {
        let env = self.env;
        let horizon = env.horizon;
        let stream = base.substream(j as u64);
        let mut rng = stream.rng();
        let mut s = env.sample_initial(stream.substream(u64::MAX));
        let mut r_cum = 0.0;
        let mut tr = Trajectory {
            states: Vec::with_capacity(horizon + 1),
            actions: Vec::with_capacity(horizon),
            rewards: Vec::with_capacity(horizon + 1),
            ret: 0.0,
            z: Vec::with_capacity(horizon),
            eps: Vec::with_capacity(horizon),
        };
        let with_grad = with_grad && matches!(self.actor, Actor::Net(_));
        if with_grad {
            sc.ds.iter_mut().for_each(|v| *v = 0.0);
            sc.dr.iter_mut().for_each(|v| *v = 0.0);
        }
        let diverged = |stage| Error::Divergence { trajectory: j, stage };
        for t in 0..horizon {
            let z = self.good.draw(&mut rng, self.good.z_bound);
            let eps = self.good.draw(&mut rng, self.good.eps_bound);
            tr.states.push(s);
            tr.rewards.push(r_cum);
            let a = match &self.actor {
                Actor::Reference(rp) => rp.action(s, z),
                Actor::Net(policy) => {
                    let time = policy.config().time_encoding.feature(t, horizon);
                    let ws = sc.ws.as_mut().expect("network workspace");
                    if with_grad {
                        let (a, df_ds, df_dr) = policy.evaluate_into(ws, s, r_cum, z, time, &mut sc.g)?;
                        for i in 0..sc.g.len() {
                            sc.da[i] = sc.g[i] + df_ds * sc.ds[i] + df_dr * sc.dr[i];
                        }
                        a
                    } else {
                        policy.action(ws, s, r_cum, z, time)?
                    }
                }
            };
            if !a.is_finite() {
                return Err(diverged(t));
            }
            let rew = env.reward(t, s, a)?;
            let step = env.step(t, s, a, eps)?;
            if with_grad {
                for i in 0..sc.ds.len() {
                    let (ds, da) = (sc.ds[i], sc.da[i]);
                    sc.dr[i] += rew.dr_ds * ds + rew.dr_da * da;
                    sc.ds[i] = step.df_ds * ds + step.df_da * da;
                }
            }
            r_cum += rew.value;
            s = step.next_state;
            tr.actions.push(a);
            tr.z.push(z);
            tr.eps.push(eps);
            if !(s.is_finite() && r_cum.is_finite()) {
                return Err(diverged(t + 1));
            }
        }
        tr.states.push(s);
        tr.rewards.push(r_cum);
        tr.ret = r_cum;
        if env.has_terminal_reward() {
            let term = env.reward(horizon, s, 0.0)?;
            tr.ret += term.value;
            if with_grad {
                for (dr, ds) in sc.dr.iter_mut().zip(&sc.ds) {
                    *dr += term.dr_ds * ds;
                }
            }
            if !tr.ret.is_finite() {
                return Err(diverged(horizon));
            }
        }
        Ok(tr)
    }

    /// Simulates `m` trajectories, optionally with the dense sensitivity matrix.
    pub fn run(&self, m: usize, base: RandomStream, with_grad: bool) -> Result<TrajectoryBatch> {
        if m == 0 {
            return Err(Error::EmptySample);
        }
        let with_grad = with_grad && matches!(self.actor, Actor::Net(_));
        let p = if with_grad { self.n_params() } else { 0 };
        if with_grad {
            let needed = m.saturating_mul(p).saturating_mul(8);
            if needed > self.memory_budget {
                return Err(Error::MemoryBudget {
                    needed,
                    budget: self.memory_budget,
                });
            }
        }
        let results: Vec<(Trajectory, Vec<f64>)> = (0..m)
            .into_par_iter()
            .map_init(
                || self.scratch(with_grad),
                |sc, j| {
                    let tr = self.simulate_one(base, j, with_grad, sc)?;
                    Ok((tr, if with_grad { sc.dr.clone() } else { Vec::new() }))
                },
            )
            .collect::<Result<_>>()?;

        let horizon = self.env.horizon;
        let mut batch = TrajectoryBatch {
            m,
            horizon,
            states: Vec::with_capacity(m * (horizon + 1)),
            actions: Vec::with_capacity(m * horizon),
            rewards: Vec::with_capacity(m * (horizon + 1)),
            returns: Vec::with_capacity(m),
            z: Vec::with_capacity(m * horizon),
            eps: Vec::with_capacity(m * horizon),
            grad: with_grad.then(|| Vec::with_capacity(m * p)),
            n_params: p,
            state_deviations: 0,
        };
        for (tr, g) in results {
            batch.states.extend(tr.states);
            batch.actions.extend(tr.actions);
            batch.rewards.extend(tr.rewards);
            batch.returns.push(tr.ret);
            batch.z.extend(tr.z);
            batch.eps.extend(tr.eps);
            if let Some(dst) = batch.grad.as_mut() {
                dst.extend(g);
            }
        }
        if let Some(eta) = self.good.state_deviation_bound {
            batch.state_deviations = count_deviations(&batch, eta);
        }
        Ok(batch)
    }

    /// Terminal returns only.
    pub fn returns(&self, m: usize, base: RandomStream) -> Result<Vec<f64>> {
        if m == 0 {
            return Err(Error::EmptySample);
        }
        (0..m)
            .into_par_iter()
            .map_init(|| self.scratch(false), |sc, j| Ok(self.simulate_one(base, j, false, sc)?.ret))
            .collect()
    }

    /// `Σ_j w_j ∇_θR_T^{(j)}` without storing the per-trajectory rows.
    ///
    /// Uses the same streams as [`Simulator::run`], so it reproduces the
    /// dense computation on the same batch.
    pub fn weighted_gradient(&self, base: RandomStream, weights: &[f64]) -> Result<Vec<f64>> {
        let m = weights.len();
        if m == 0 {
            return Err(Error::EmptySample);
        }
        let p = self.n_params();
        let partials: Vec<Vec<f64>> = (0..m.div_ceil(CHUNK))
            .into_par_iter()
            .map_init(
                || self.scratch(true),
                |sc, c| {
                    let mut acc = vec![0.0; p];
                    for j in c * CHUNK..((c + 1) * CHUNK).min(m) {
                        self.simulate_one(base, j, true, sc)?;
                        let w = weights[j];
                        for (a, d) in acc.iter_mut().zip(&sc.dr) {
                            *a += w * d;
                        }
                    }
                    Ok(acc)
                },
            )
            .collect::<Result<_>>()?;
        let mut out = vec![0.0; p];
        for part in partials {
            for (o, v) in out.iter_mut().zip(part) {
                *o += v;
            }
        }
        Ok(out)
    }
}

fn count_deviations(batch: &TrajectoryBatch, eta: f64) -> usize {
    let width = batch.horizon + 1;
    let mut count = 0;
    for t in 0..width {
        let mean = (0..batch.m).map(|j| batch.states[j * width + t]).sum::<f64>() / batch.m as f64;
        count += (0..batch.m)
            .filter(|&j| (batch.states[j * width + t] - mean).abs() > eta)
            .count();
    }
    count
}

/// Simulates `m` trajectories of `params` on `env`.
pub fn simulate_batch(
    env: &EnvSpec,
    params: &PolicyParams,
    m: usize,
    base: RandomStream,
    good: GoodEventConfig,
    with_grad: bool,
) -> Result<TrajectoryBatch> {
    Simulator::new(env, params, good)?.run(m, base, with_grad)
}

/// Terminal returns of a closed-form reference policy.
pub fn reference_returns(
    env: &EnvSpec,
    policy: ReferencePolicy,
    m: usize,
    base: RandomStream,
    good: GoodEventConfig,
) -> Result<Vec<f64>> {
    Simulator::reference(env, policy, good)?.returns(m, base)
}


#[cfg(test)]
mod properties {
    use super::*;
    use crate::policy::{Activation, PolicyConfig};
    use proptest::prelude::*;

    fn params(theta: &[f64]) -> PolicyParams {
        let cfg = PolicyConfig::theory2layer(2, Activation::Tanh, 0);
        let n = cfg.param_count();
        PolicyParams::from_theta(&cfg, theta.iter().cycle().take(n).copied().collect()).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn returns_telescope(theta in prop::collection::vec(-1.0f64..1.0, 1..12), seed in any::<u64>(), which in 0usize..4) {
            let env = [EnvSpec::lq(4), EnvSpec::wealth(3), EnvSpec::cosine(0.5, 0.2, 1.0), EnvSpec::torus(3, 1.0, 0.3)][which].clone();
            let p = params(&theta);
            let b = simulate_batch(&env, &p, 16, RandomStream::new(seed, 0), Default::default(), false).unwrap();
            for j in 0..b.m {
                prop_assert_eq!(b.reward(j, 0), 0.0);
                for t in 0..env.horizon {
                    let step = if env.has_terminal_reward() {
                        0.0
                    } else {
                        env.reward(t, b.state(j, t), b.action(j, t)).unwrap().value
                    };
                    prop_assert_eq!(b.reward(j, t + 1), b.reward(j, t) + step);
                }
                let terminal = if env.has_terminal_reward() {
                    env.reward(env.horizon, b.state(j, env.horizon), 0.0).unwrap().value
                } else {
                    0.0
                };
                prop_assert_eq!(b.returns[j], b.reward(j, env.horizon) + terminal);
            }
        }

        #[test]
        fn clipped_noise_respects_bounds(seed in any::<u64>(), zb in 1.0f64..4.0, eb in 1.0f64..4.0) {
            let good = GoodEventConfig { z_bound: zb, eps_bound: eb, ..Default::default() };
            let b = simulate_batch(&EnvSpec::lq(5), &params(&[0.3]), 200, RandomStream::new(seed, 1), good, false).unwrap();
            prop_assert!(b.z.iter().all(|z| z.abs() <= zb));
            prop_assert!(b.eps.iter().all(|e| e.abs() <= eb));
        }

        #[test]
        fn common_random_numbers_reproduce_batches(theta in prop::collection::vec(-1.0f64..1.0, 1..12), seed in any::<u64>()) {
            let p = params(&theta);
            let env = EnvSpec::lq(3);
            let a = simulate_batch(&env, &p, 8, RandomStream::new(seed, 2), Default::default(), true).unwrap();
            let b = simulate_batch(&env, &p, 8, RandomStream::new(seed, 2), Default::default(), true).unwrap();
            prop_assert_eq!(a.returns, b.returns);
            prop_assert_eq!(a.grad, b.grad);
        }
    }
}
