//! Controlled dynamics `s_{t+1} = F(s_t, a_t, ε_{t+1})` and rewards, with the
//! first derivatives needed by the pathwise gradient.

use std::f64::consts::TAU;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::numerics::RandomStream;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepResult {
    pub next_state: f64,
    pub df_ds: f64,
    pub df_da: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardResult {
    pub value: f64,
    pub dr_ds: f64,
    pub dr_da: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitialState {
    Fixed { value: f64 },
    Normal { mean: f64, std: f64 },
}

/// How the wealth model reads the action.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InvestMode {
    /// The action is the amount of money held in the stock.
    Amount,
    /// The action is the fraction of current wealth held in the stock.
    #[default]
    Fraction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EnvKind {
    /// `s + a + σ_ε ε`, reward `-(s² + a²)/2`.
    Lq { sigma_eps: f64 },
    /// Discretized Black–Scholes wealth with terminal reward `scale · s_T`.
    Wealth {
        rate: f64,
        mu: f64,
        sigma: f64,
        dt: f64,
        #[serde(default)]
        invest: InvestMode,
        #[serde(default = "one")]
        terminal_scale: f64,
    },
    /// `s + a + σ_ε ε` with terminal reward `V cos(s_T)`.
    Cosine {
        sigma_eps: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// `(s + a + σ_ε ε) mod 2π` with terminal reward `s_T`.
    Torus { sigma_eps: f64 },
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub horizon: usize,
    pub initial_state: InitialState,
    /// Hard clip applied to actions inside the model.
    #[serde(default)]
    pub action_bounds: Option<(f64, f64)>,
    #[serde(flatten)]
    pub kind: EnvKind,
}

impl EnvSpec {
    /// Linear-quadratic model with `σ_ε = 0.1` and `s_0 = 0`.
    pub fn lq(horizon: usize) -> Self {
        Self {
            horizon,
            initial_state: InitialState::Fixed { value: 0.0 },
            action_bounds: None,
            kind: EnvKind::Lq { sigma_eps: 0.1 },
        }
    }

    /// Wealth model with `s_0 = 100`, `r = 0.02`, `μ = 0.06`, `σ = 0.4`, `Δt = 0.05`.
    pub fn wealth(horizon: usize) -> Self {
        Self {
            horizon,
            initial_state: InitialState::Fixed { value: 100.0 },
            action_bounds: None,
            kind: EnvKind::Wealth {
                rate: 0.02,
                mu: 0.06,
                sigma: 0.4,
                dt: 0.05,
                invest: InvestMode::Fraction,
                terminal_scale: 1.0,
            },
        }
    }

    /// One-step cosine-reward model.
    pub fn cosine(s0: f64, sigma_eps: f64, amplitude: f64) -> Self {
        Self {
            horizon: 1,
            initial_state: InitialState::Fixed { value: s0 },
            action_bounds: None,
            kind: EnvKind::Cosine {
                sigma_eps,
                amplitude,
            },
        }
    }

    pub fn torus(horizon: usize, s0: f64, sigma_eps: f64) -> Self {
        Self {
            horizon,
            initial_state: InitialState::Fixed { value: s0 },
            action_bounds: None,
            kind: EnvKind::Torus { sigma_eps },
        }
    }

    pub fn with_action_bounds(mut self, lo: f64, hi: f64) -> Self {
        self.action_bounds = Some((lo, hi));
        self
    }

    pub fn has_terminal_reward(&self) -> bool {
        !matches!(self.kind, EnvKind::Lq { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if let Some((lo, hi)) = self.action_bounds {
            if !(lo < hi) {
                return bad(format!("action bounds [{lo}, {hi}] are empty"));
            }
        }
        if let InitialState::Normal { std, .. } = self.initial_state {
            if !(std >= 0.0) {
                return bad(format!("initial-state std must be >= 0, got {std}"));
            }
        }
        match self.kind {
            EnvKind::Lq { sigma_eps }
            | EnvKind::Cosine { sigma_eps, .. }
            | EnvKind::Torus { sigma_eps }
                if !(sigma_eps >= 0.0 && sigma_eps.is_finite()) =>
            {
                bad(format!("noise scale must be >= 0, got {sigma_eps}"))
            }
            EnvKind::Wealth { sigma, dt, .. } if !(sigma > 0.0 && dt > 0.0) => {
                bad(format!("wealth needs sigma > 0 and dt > 0 (sigma={sigma}, dt={dt})"))
            }
            _ => Ok(()),
        }
    }

    fn clip(&self, a: f64) -> (f64, f64) {
        match self.action_bounds {
            Some((lo, _)) if a < lo => (lo, 0.0),
            Some((_, hi)) if a > hi => (hi, 0.0),
            _ => (a, 1.0),
        }
    }

    pub fn step(&self, t: usize, s: f64, a: f64, eps: f64) -> Result<StepResult> {
        if t >= self.horizon {
            return Err(Error::Stage {
                stage: t,
                horizon: self.horizon,
            });
        }
        let (a, da) = self.clip(a);
        let r = match self.kind {
            EnvKind::Lq { sigma_eps } | EnvKind::Cosine { sigma_eps, .. } => StepResult {
                next_state: s + a + sigma_eps * eps,
                df_ds: 1.0,
                df_da: 1.0,
            },
            EnvKind::Torus { sigma_eps } => {
                let mut next = (s + a + sigma_eps * eps).rem_euclid(TAU);
                if next >= TAU {
                    next = 0.0;
                }
                // derivative 1 almost everywhere; the wrap set has measure zero
                StepResult {
                    next_state: next,
                    df_ds: 1.0,
                    df_da: 1.0,
                }
            }
            EnvKind::Wealth {
                rate,
                mu,
                sigma,
                dt,
                invest,
                ..
            } => {
                let growth = (rate * dt).exp();
                let y = (-rate * dt).exp()
                    * ((mu - 0.5 * sigma * sigma) * dt + sigma * dt.sqrt() * eps).exp()
                    - 1.0;
                match invest {
                    InvestMode::Amount => StepResult {
                        next_state: growth * (s + a * y),
                        df_ds: growth,
                        df_da: growth * y,
                    },
                    InvestMode::Fraction => StepResult {
                        next_state: growth * s * (1.0 + a * y),
                        df_ds: growth * (1.0 + a * y),
                        df_da: growth * s * y,
                    },
                }
            }
        };
        Ok(StepResult {
            df_da: r.df_da * da,
            ..r
        })
    }

    /// Stage reward for `t < T`; terminal reward at `t = T` when the model has one.
    pub fn reward(&self, t: usize, s: f64, a: f64) -> Result<RewardResult> {
        if t > self.horizon {
            return Err(Error::Stage {
                stage: t,
                horizon: self.horizon,
            });
        }
        if t == self.horizon {
            return self.terminal_reward(s);
        }
        let (a, da) = self.clip(a);
        let r = match self.kind {
            EnvKind::Lq { .. } => RewardResult {
                value: -0.5 * (s * s + a * a),
                dr_ds: -s,
                dr_da: -a * da,
            },
            _ => RewardResult {
                value: 0.0,
                dr_ds: 0.0,
                dr_da: 0.0,
            },
        };
        Ok(r)
    }

    fn terminal_reward(&self, s: f64) -> Result<RewardResult> {
        let (value, dr_ds) = match self.kind {
            EnvKind::Lq { .. } => {
                return Err(Error::Capability(
                    "linear-quadratic model has no terminal reward".into(),
                ))
            }
            EnvKind::Wealth { terminal_scale, .. } => (terminal_scale * s, terminal_scale),
            EnvKind::Cosine { amplitude, .. } => (amplitude * s.cos(), -amplitude * s.sin()),
            EnvKind::Torus { .. } => (s, 1.0),
        };
        Ok(RewardResult {
            value,
            dr_ds,
            dr_da: 0.0,
        })
    }

    pub fn sample_initial(&self, stream: RandomStream) -> f64 {
        match self.initial_state {
            InitialState::Fixed { value } => value,
            InitialState::Normal { mean, std } => {
                let z: f64 = StandardNormal.sample(&mut stream.rng());
                mean + std * z
            }
        }
    }
}


#[cfg(test)]
mod properties {
    use super::*;
    use proptest::prelude::*;

    fn central(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        (f(x + 1e-5) - f(x - 1e-5)) / 2e-5
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn wealth_without_stock_grows_at_the_riskless_rate(s in 1.0f64..500.0, eps in -6.0f64..6.0) {
            for invest in [InvestMode::Amount, InvestMode::Fraction] {
                let mut env = EnvSpec::wealth(3);
                if let EnvKind::Wealth { invest: ref mut i, .. } = env.kind {
                    *i = invest;
                }
                let next = env.step(1, s, 0.0, eps).unwrap().next_state;
                prop_assert_eq!(next, (0.02f64 * 0.05).exp() * s);
            }
        }

        #[test]
        fn torus_lands_in_the_period(s in 0.0f64..TAU, a in -50.0f64..50.0, eps in -6.0f64..6.0) {
            let next = EnvSpec::torus(2, 0.0, 0.7).step(0, s, a, eps).unwrap().next_state;
            prop_assert!((0.0..TAU).contains(&next));
        }

        #[test]
        fn step_and_reward_derivatives(s in -3.0f64..3.0, a in -2.0f64..2.0, eps in -4.0f64..4.0) {
            let envs = [EnvSpec::lq(2), EnvSpec::cosine(0.0, 0.2, 1.3), EnvSpec::wealth(2)];
            for env in envs {
                let s = if matches!(env.kind, EnvKind::Wealth { .. }) { 100.0 + 10.0 * s } else { s };
                let st = env.step(0, s, a, eps).unwrap();
                let fs = central(|x| env.step(0, x, a, eps).unwrap().next_state, s);
                let fa = central(|x| env.step(0, s, x, eps).unwrap().next_state, a);
                prop_assert!((st.df_ds - fs).abs() <= 1e-6 * st.df_ds.abs().max(1.0));
                prop_assert!((st.df_da - fa).abs() <= 1e-6 * st.df_da.abs().max(1.0));
                let t = if env.has_terminal_reward() { env.horizon } else { 0 };
                let r = env.reward(t, s, a).unwrap();
                let rs = central(|x| env.reward(t, x, a).unwrap().value, s);
                prop_assert!((r.dr_ds - rs).abs() <= 1e-6 * r.dr_ds.abs().max(1.0));
            }
        }
    }
}
