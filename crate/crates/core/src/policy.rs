//! Neural randomized Markov policy `a = f(θ, s, R, z, τ)` with exact
//! reverse-mode gradients with respect to the parameters and the inputs.
//!
//! Two architectures share one flat parameter vector:
//!
//! * `theory2layer`: `w² σ(W¹x + b¹) + b²` with `x = (s, R, z, τ)`;
//! * `residual-mlp`: input layer, `blocks` residual blocks
//!   `h ← h + σ(LN(W h + b))`, and a linear scalar head.
//!
//! The output layer starts at zero, so a fresh policy plays `a ≡ 0` (before
//! the optional squash).

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::RandomStream;
use crate::{Error, Result};

const LN_EPS: f64 = 1e-5;
const INPUTS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    #[serde(rename = "theory2layer")]
    Theory2Layer,
    ResidualMlp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    #[inline]
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Time feature fed to the network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeEncoding {
    /// `τ = (T − t)/T ∈ [0, 1]`.
    #[default]
    TimeToGo,
    /// The raw stage index `t`.
    RawStage,
}

impl TimeEncoding {
    pub fn feature(self, t: usize, horizon: usize) -> f64 {
        match self {
            TimeEncoding::TimeToGo => (horizon - t) as f64 / horizon as f64,
            TimeEncoding::RawStage => t as f64,
        }
    }
}

/// Affine normalization of the state and reward inputs:
/// the network sees `(s − s_shift)·s_scale` and `(R − r_shift)·r_scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub s_shift: f64,
    pub s_scale: f64,
    pub r_shift: f64,
    pub r_scale: f64,
}

impl Default for InputNorm {
    fn default() -> Self {
        Self {
            s_shift: 0.0,
            s_scale: 1.0,
            r_shift: 0.0,
            r_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub architecture: Architecture,
    pub width: usize,
    #[serde(default)]
    pub blocks: usize,
    pub activation: Activation,
    #[serde(default)]
    pub layer_norm: bool,
    /// Smooth squash into `(a_min, a_max)`.
    #[serde(default)]
    pub output_squash: Option<(f64, f64)>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub time_encoding: TimeEncoding,
    #[serde(default)]
    pub input_norm: InputNorm,
}

impl PolicyConfig {
    pub fn theory2layer(width: usize, activation: Activation, seed: u64) -> Self {
        Self {
            architecture: Architecture::Theory2Layer,
            width,
            blocks: 0,
            activation,
            layer_norm: false,
            output_squash: None,
            seed,
            time_encoding: TimeEncoding::TimeToGo,
            input_norm: InputNorm::default(),
        }
    }

    pub fn residual_mlp(width: usize, blocks: usize, activation: Activation, seed: u64) -> Self {
        Self {
            architecture: Architecture::ResidualMlp,
            width,
            blocks,
            activation,
            layer_norm: true,
            output_squash: None,
            seed,
            time_encoding: TimeEncoding::TimeToGo,
            input_norm: InputNorm::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.width == 0 {
            return bad("policy width must be at least 1");
        }
        if self.architecture == Architecture::Theory2Layer && self.blocks != 0 {
            return bad("theory2layer has no residual blocks");
        }
        if let Some((lo, hi)) = self.output_squash {
            if !(lo < hi) {
                return bad("output squash interval is empty");
            }
        }
        let n = &self.input_norm;
        if !(n.s_scale.is_finite() && n.r_scale.is_finite() && n.s_shift.is_finite() && n.r_shift.is_finite()) {
            return bad("input normalization must be finite");
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self)
    }

    pub fn param_count(&self) -> usize {
        self.layout().len
    }
}

/// A named tensor inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorSlot {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl TensorSlot {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.rows * self.cols
    }
}

#[derive(Clone, Debug)]
struct DenseLayer {
    w: usize,
    b: usize,
    ln: Option<(usize, usize)>,
    fan_in: usize,
}

/// Shape table of the parameter vector.
#[derive(Clone, Debug)]
pub struct Layout {
    pub slots: Vec<TensorSlot>,
    len: usize,
    input: DenseLayer,
    blocks: Vec<DenseLayer>,
    out_w: usize,
    out_b: usize,
}

impl Layout {
    fn new(cfg: &PolicyConfig) -> Self {
        let p = cfg.width;
        let mut slots = Vec::new();
        let mut len = 0;
        let mut push = |name: String, rows: usize, cols: usize| {
            let offset = len;
            slots.push(TensorSlot {
                name,
                offset,
                rows,
                cols,
            });
            len += rows * cols;
            offset
        };
        let residual = cfg.architecture == Architecture::ResidualMlp;
        let affine_ln = residual && cfg.layer_norm;
        let dense = |push: &mut dyn FnMut(String, usize, usize) -> usize,
                         prefix: &str,
                         fan_in: usize| {
            let w = push(format!("{prefix}.w"), p, fan_in);
            let b = push(format!("{prefix}.b"), p, 1);
            let ln = affine_ln.then(|| {
                (
                    push(format!("{prefix}.ln.gamma"), p, 1),
                    push(format!("{prefix}.ln.beta"), p, 1),
                )
            });
            DenseLayer { w, b, ln, fan_in }
        };
        let input = dense(&mut push, if residual { "in" } else { "hidden" }, INPUTS);
        let blocks = (0..cfg.blocks)
            .map(|i| dense(&mut push, &format!("block{i}"), p))
            .collect();
        let out_w = push("out.w".into(), 1, p);
        let out_b = push("out.b".into(), 1, 1);
        Self {
            slots,
            len,
            input,
            blocks,
            out_w,
            out_b,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn slot(&self, name: &str) -> Option<&TensorSlot> {
        self.slots.iter().find(|s| s.name == name)
    }
}

/// Flat parameter vector plus the architecture it belongs to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub config: PolicyConfig,
    pub theta: Vec<f64>,
}

impl PolicyParams {
    pub fn init(config: &PolicyConfig) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        let mut theta = vec![0.0; layout.len];
        let mut rng = RandomStream::new(config.seed, 0).rng();
        let mut fill = |layer: &DenseLayer, theta: &mut [f64]| {
            let bound = 1.0 / (layer.fan_in as f64).sqrt();
            let p = config.width;
            for v in &mut theta[layer.w..layer.w + p * layer.fan_in] {
                *v = rng.random_range(-bound..bound);
            }
            for v in &mut theta[layer.b..layer.b + p] {
                *v = rng.random_range(-bound..bound);
            }
            if let Some((g, _)) = layer.ln {
                theta[g..g + p].iter_mut().for_each(|v| *v = 1.0);
            }
        };
        fill(&layout.input, &mut theta);
        for block in &layout.blocks {
            fill(block, &mut theta);
        }
        // output layer stays exactly zero
        Ok(Self {
            config: config.clone(),
            theta,
        })
    }

    pub fn from_theta(config: &PolicyConfig, theta: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let expected = config.param_count();
        if theta.len() != expected {
            return Err(Error::LengthMismatch {
                left: expected,
                right: theta.len(),
            });
        }
        Ok(Self {
            config: config.clone(),
            theta,
        })
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("policy params serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: PolicyParams = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: "<checkpoint>".into(),
            message: e.to_string(),
        })?;
        Self::from_theta(&p.config, p.theta)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.theta.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Policy output with its exact partial derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyEval {
    pub action: f64,
    pub grad_theta: Vec<f64>,
    pub df_ds: f64,
    pub df_dr: f64,
}

/// Activation storage for one layer.
#[derive(Clone, Debug, Default)]
struct LayerTape {
    input: Vec<f64>,
    pre: Vec<f64>,
    xhat: Vec<f64>,
    inv_std: f64,
    act_in: Vec<f64>,
    out: Vec<f64>,
}

impl LayerTape {
    fn sized(p: usize, fan_in: usize) -> Self {
        Self {
            input: vec![0.0; fan_in],
            pre: vec![0.0; p],
            xhat: vec![0.0; p],
            inv_std: 0.0,
            act_in: vec![0.0; p],
            out: vec![0.0; p],
        }
    }
}

/// Reusable evaluation state; one per worker thread.
#[derive(Clone, Debug)]
pub struct Workspace {
    layers: Vec<LayerTape>,
    delta: Vec<f64>,
    dpre: Vec<f64>,
    dprev: Vec<f64>,
}

/// A policy ready for evaluation: parameters plus their shape table.
#[derive(Clone, Debug)]
pub struct Policy<'a> {
    params: &'a PolicyParams,
    layout: Layout,
}

impl<'a> Policy<'a> {
    pub fn new(params: &'a PolicyParams) -> Self {
        Self {
            layout: params.config.layout(),
            params,
        }
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.params.config
    }

    pub fn param_count(&self) -> usize {
        self.layout.len
    }

    pub fn workspace(&self) -> Workspace {
        let p = self.params.config.width;
        let mut layers = vec![LayerTape::sized(p, INPUTS)];
        layers.extend(self.layout.blocks.iter().map(|_| LayerTape::sized(p, p)));
        Workspace {
            layers,
            delta: vec![0.0; p],
            dpre: vec![0.0; p],
            dprev: vec![0.0; p],
        }
    }

    fn check_time(&self, time: f64) -> Result<()> {
        if self.params.config.time_encoding == TimeEncoding::TimeToGo && !(0.0..=1.0).contains(&time) {
            return Err(Error::Domain(format!("time-to-go {time} outside [0, 1]")));
        }
        Ok(())
    }

    /// Allocating convenience wrapper around [`Policy::evaluate_into`].
    pub fn evaluate(&self, s: f64, r: f64, z: f64, time: f64) -> Result<PolicyEval> {
        let mut ws = self.workspace();
        let mut grad = vec![0.0; self.layout.len];
        let (action, df_ds, df_dr) = self.evaluate_into(&mut ws, s, r, z, time, &mut grad)?;
        Ok(PolicyEval {
            action,
            grad_theta: grad,
            df_ds,
            df_dr,
        })
    }

    /// Action only.
    pub fn action(&self, ws: &mut Workspace, s: f64, r: f64, z: f64, time: f64) -> Result<f64> {
        self.check_time(time)?;
        let y = self.forward(ws, s, r, z, time);
        Ok(self.squash(y).0)
    }

    /// Writes `∇_θ f` into `grad` (overwriting it) and returns `(f, ∂f/∂s, ∂f/∂R)`.
    pub fn evaluate_into(
        &self,
        ws: &mut Workspace,
        s: f64,
        r: f64,
        z: f64,
        time: f64,
        grad: &mut [f64],
    ) -> Result<(f64, f64, f64)> {
        self.check_time(time)?;
        if grad.len() != self.layout.len {
            return Err(Error::LengthMismatch {
                left: self.layout.len,
                right: grad.len(),
            });
        }
        let y = self.forward(ws, s, r, z, time);
        let (action, dy) = self.squash(y);
        let dx = self.backward(ws, dy, grad);
        let norm = &self.params.config.input_norm;
        Ok((action, dx[0] * norm.s_scale, dx[1] * norm.r_scale))
    }

    fn squash(&self, y: f64) -> (f64, f64) {
        match self.params.config.output_squash {
            None => (y, 1.0),
            Some((lo, hi)) => {
                let t = y.tanh();
                (lo + (hi - lo) * 0.5 * (t + 1.0), (hi - lo) * 0.5 * (1.0 - t * t))
            }
        }
    }

    fn forward(&self, ws: &mut Workspace, s: f64, r: f64, z: f64, time: f64) -> f64 {
        let cfg = &self.params.config;
        let theta = &self.params.theta;
        let norm = &cfg.input_norm;
        let x = [
            (s - norm.s_shift) * norm.s_scale,
            (r - norm.r_shift) * norm.r_scale,
            z,
            time,
        ];
        let lnorm = cfg.layer_norm;
        ws.layers[0].input.copy_from_slice(&x);
        dense_forward(&self.layout.input, theta, cfg.activation, lnorm, &mut ws.layers[0]);
        for (i, block) in self.layout.blocks.iter().enumerate() {
            let (done, rest) = ws.layers.split_at_mut(i + 1);
            let prev = &done[i];
            let tape = &mut rest[0];
            // input of block i is the running hidden state h_i
            if i == 0 {
                tape.input.copy_from_slice(&prev.out);
            } else {
                for ((dst, h), u) in tape.input.iter_mut().zip(&prev.input).zip(&prev.out) {
                    *dst = h + u;
                }
            }
            dense_forward(block, theta, cfg.activation, lnorm, tape);
        }
        let w = &theta[self.layout.out_w..self.layout.out_w + cfg.width];
        let hidden = self.final_hidden(ws);
        let mut y = theta[self.layout.out_b];
        for (wi, hi) in w.iter().zip(hidden) {
            y += wi * hi;
        }
        y
    }

    /// Hidden state fed to the output head.
    fn final_hidden<'w>(&self, ws: &'w mut Workspace) -> &'w [f64] {
        let n = self.layout.blocks.len();
        if n == 0 {
            return &ws.layers[0].out;
        }
        let last = &mut ws.layers[n];
        // h_{n} = h_{n-1} + u_{n-1}; stash it in `delta` scratch space
        for ((d, h), u) in ws.delta.iter_mut().zip(&last.input).zip(&last.out) {
            *d = h + u;
        }
        &ws.delta
    }

    fn backward(&self, ws: &mut Workspace, dy: f64, grad: &mut [f64]) -> [f64; INPUTS] {
        let cfg = &self.params.config;
        let theta = &self.params.theta;
        let p = cfg.width;
        let n = self.layout.blocks.len();

        // output head; ws.delta holds the final hidden state when n > 0
        grad[self.layout.out_b] = dy;
        {
            let hidden: &[f64] = if n == 0 { &ws.layers[0].out } else { &ws.delta };
            for (g, h) in grad[self.layout.out_w..self.layout.out_w + p].iter_mut().zip(hidden) {
                *g = dy * h;
            }
        }
        let w_out = &theta[self.layout.out_w..self.layout.out_w + p];
        // ws.dprev carries dL/dh for the current hidden state
        for (d, w) in ws.dprev.iter_mut().zip(w_out) {
            *d = dy * w;
        }
        for i in (0..n).rev() {
            // h_{i+1} = h_i + u_i: gradient reaches h_i directly and through u_i
            ws.delta.copy_from_slice(&ws.dprev);
            let layer = &self.layout.blocks[i];
            dense_backward(
                layer,
                theta,
                cfg.activation,
                cfg.layer_norm,
                &ws.layers[i + 1],
                &ws.delta,
                &mut ws.dpre,
                grad,
            );
            // dprev = delta + Wᵀ dpre
            let w = &theta[layer.w..layer.w + p * p];
            for (j, d) in ws.dprev.iter_mut().enumerate() {
                *d = ws.delta[j];
            }
            for (row, dp) in w.chunks_exact(p).zip(&ws.dpre) {
                for (d, wij) in ws.dprev.iter_mut().zip(row) {
                    *d += dp * wij;
                }
            }
        }
        ws.delta.copy_from_slice(&ws.dprev);
        dense_backward(
            &self.layout.input,
            theta,
            cfg.activation,
            cfg.layer_norm,
            &ws.layers[0],
            &ws.delta,
            &mut ws.dpre,
            grad,
        );
        let w = &theta[self.layout.input.w..self.layout.input.w + p * INPUTS];
        let mut dx = [0.0; INPUTS];
        for (row, dp) in w.chunks_exact(INPUTS).zip(&ws.dpre) {
            for (d, wij) in dx.iter_mut().zip(row) {
                *d += dp * wij;
            }
        }
        dx
    }
}

/// `out = σ(LN(W·input + b))`, LN optional; affine LN parameters when present.
fn dense_forward(layer: &DenseLayer, theta: &[f64], act: Activation, lnorm: bool, tape: &mut LayerTape) {
    let p = tape.pre.len();
    let fan_in = layer.fan_in;
    let w = &theta[layer.w..layer.w + p * fan_in];
    let b = &theta[layer.b..layer.b + p];
    for ((pre, row), bi) in tape.pre.iter_mut().zip(w.chunks_exact(fan_in)).zip(b) {
        let mut acc = *bi;
        for (wij, xj) in row.iter().zip(&tape.input) {
            acc += wij * xj;
        }
        *pre = acc;
    }
    if lnorm {
        let mean = tape.pre.iter().sum::<f64>() / p as f64;
        let var = tape.pre.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / p as f64;
        tape.inv_std = 1.0 / (var + LN_EPS).sqrt();
        for (xh, v) in tape.xhat.iter_mut().zip(&tape.pre) {
            *xh = (v - mean) * tape.inv_std;
        }
        match layer.ln {
            Some((g, be)) => {
                let gamma = &theta[g..g + p];
                let beta = &theta[be..be + p];
                for (k, a) in tape.act_in.iter_mut().enumerate() {
                    *a = gamma[k] * tape.xhat[k] + beta[k];
                }
            }
            None => tape.act_in.copy_from_slice(&tape.xhat),
        }
    } else {
        tape.act_in.copy_from_slice(&tape.pre);
    }
    for (o, a) in tape.out.iter_mut().zip(&tape.act_in) {
        *o = act.apply(*a);
    }
}

/// Given `dout = ∂L/∂out`, writes parameter gradients and `dpre = ∂L/∂pre`.
#[allow(clippy::too_many_arguments)]
fn dense_backward(
    layer: &DenseLayer,
    theta: &[f64],
    act: Activation,
    lnorm: bool,
    tape: &LayerTape,
    dout: &[f64],
    dpre: &mut [f64],
    grad: &mut [f64],
) {
    let p = tape.pre.len();
    let fan_in = layer.fan_in;
    // through the activation
    for k in 0..p {
        dpre[k] = dout[k] * act.derivative(tape.act_in[k], tape.out[k]);
    }
    if lnorm {
        if let Some((g, be)) = layer.ln {
            for k in 0..p {
                grad[g + k] = dpre[k] * tape.xhat[k];
                grad[be + k] = dpre[k];
                dpre[k] *= theta[g + k];
            }
        }
        // dpre currently holds ∂L/∂x̂
        let mean_d = dpre.iter().sum::<f64>() / p as f64;
        let mean_dx = dpre.iter().zip(&tape.xhat).map(|(d, x)| d * x).sum::<f64>() / p as f64;
        for k in 0..p {
            dpre[k] = tape.inv_std * (dpre[k] - mean_d - tape.xhat[k] * mean_dx);
        }
    }
    grad[layer.b..layer.b + p].copy_from_slice(dpre);
    let gw = &mut grad[layer.w..layer.w + p * fan_in];
    for (row, dp) in gw.chunks_exact_mut(fan_in).zip(dpre.iter()) {
        for (g, x) in row.iter_mut().zip(&tape.input) {
            *g = dp * x;
        }
    }
}


#[cfg(test)]
mod properties {
    use super::*;
    use proptest::prelude::*;

    fn config(residual: bool) -> PolicyConfig {
        if residual {
            PolicyConfig::residual_mlp(4, 1, Activation::Tanh, 1)
        } else {
            PolicyConfig::theory2layer(3, Activation::Tanh, 1)
        }
    }

    fn with_theta(cfg: &PolicyConfig, values: &[f64]) -> PolicyParams {
        let n = cfg.param_count();
        PolicyParams::from_theta(cfg, values.iter().cycle().take(n).copied().collect()).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn fresh_policy_plays_zero(seed in any::<u64>(), residual in any::<bool>(),
                                   s in -50.0f64..50.0, r in -50.0f64..50.0, z in -6.0f64..6.0, time in 0.0f64..=1.0) {
            let mut cfg = config(residual);
            cfg.seed = seed;
            let params = PolicyParams::init(&cfg).unwrap();
            prop_assert_eq!(Policy::new(&params).evaluate(s, r, z, time).unwrap().action, 0.0);
        }

        #[test]
        fn squashed_actions_stay_inside(theta in prop::collection::vec(-2.0f64..2.0, 7..40), lo in -3.0f64..0.0, width in 0.1f64..5.0,
                                        s in -10.0f64..10.0, r in -10.0f64..10.0, z in -6.0f64..6.0, time in 0.0f64..=1.0) {
            let mut cfg = config(false);
            cfg.output_squash = Some((lo, lo + width));
            let params = with_theta(&cfg, &theta);
            let a = Policy::new(&params).evaluate(s, r, z, time).unwrap().action;
            prop_assert!(a > lo && a < lo + width);
        }

        #[test]
        fn evaluation_is_pure(theta in prop::collection::vec(-1.0f64..1.0, 7..40), residual in any::<bool>(),
                              s in -5.0f64..5.0, r in -5.0f64..5.0, z in -3.0f64..3.0, time in 0.0f64..=1.0) {
            let params = with_theta(&config(residual), &theta);
            let policy = Policy::new(&params);
            let first = policy.evaluate(s, r, z, time).unwrap();
            let mut ws = policy.workspace();
            policy.action(&mut ws, 1.0, 2.0, 3.0, 0.5).unwrap();
            prop_assert_eq!(policy.evaluate(s, r, z, time).unwrap(), first);
        }

        #[test]
        fn gradients_match_central_differences(theta in prop::collection::vec(-1.0f64..1.0, 7..40), residual in any::<bool>(),
                                               s in -2.0f64..2.0, r in -2.0f64..2.0, z in -2.0f64..2.0, time in 0.0f64..=1.0) {
            let cfg = config(residual);
            let params = with_theta(&cfg, &theta);
            let eval = Policy::new(&params).evaluate(s, r, z, time).unwrap();
            let action = |p: &PolicyParams, s: f64, r: f64| Policy::new(p).evaluate(s, r, z, time).unwrap().action;
            let h = 1e-5;
            let close = |analytic: f64, numeric: f64| (analytic - numeric).abs() <= (1e-4 * analytic.abs()).max(1e-6);
            for i in 0..params.len() {
                let (mut up, mut dn) = (params.clone(), params.clone());
                up.theta[i] += h;
                dn.theta[i] -= h;
                let numeric = (action(&up, s, r) - action(&dn, s, r)) / (2.0 * h);
                prop_assert!(close(eval.grad_theta[i], numeric), "θ[{}]: {} vs {}", i, eval.grad_theta[i], numeric);
            }
            prop_assert!(close(eval.df_ds, (action(&params, s + h, r) - action(&params, s - h, r)) / (2.0 * h)));
            prop_assert!(close(eval.df_dr, (action(&params, s, r + h) - action(&params, s, r - h)) / (2.0 * h)));
        }
    }
}
