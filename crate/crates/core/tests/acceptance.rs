//! End-to-end acceptance checks. Each test prints one PASS/FAIL line with the
//! measured value and its bound before asserting.

use std::f64::consts::{PI, TAU};
use std::time::Instant;

use distmatch_core::charfn::{
    build_uniform_grid, build_weighted_grid, empirical_cf, epanechnikov_quantile, target_cf, CfTable,
    FrequencyGrid, TargetSpec,
};
use distmatch_core::environment::{EnvKind, EnvSpec};
use distmatch_core::loss::{bernoulli_loss, cf_loss, cf_loss_from_returns, cf_loss_gradient, epps_pulley_loss};
use distmatch_core::numerics::{bessel_j, standard_normal, wasserstein1};
use distmatch_core::oracle::{
    cosine_returns, reconstruct_density, solve_modes, torus_convolve, torus_deconvolve, DensitySampler,
    JacobiAngerProblem,
};
use distmatch_core::policy::{Activation, InputNorm, PolicyConfig, PolicyParams};
use distmatch_core::rollout::{reference_returns, GoodEventConfig, ReferencePolicy, Simulator};
use distmatch_core::trainer::{bias_decay_probe, train, StepSchedule, TrainConfig, TrainReport};
use distmatch_core::{ComplexValue, Error, RandomStream};
use rand::Rng;

fn report(name: &str, pass: bool, detail: String) {
    println!("[acceptance] {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
}

fn scaled_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (1e-3 * numeric.abs()).max(1e-5)
}

fn random_params(width: usize, seed: u64) -> PolicyParams {
    let mut params = PolicyParams::init(&PolicyConfig::theory2layer(width, Activation::Tanh, seed)).unwrap();
    let mut rng = RandomStream::new(seed, 77).rng();
    for t in params.theta.iter_mut() {
        *t = rng.random_range(-1.0..1.0);
    }
    params
}

fn lq_target(grid: &FrequencyGrid) -> CfTable {
    let samples = reference_returns(
        &EnvSpec::lq(10),
        ReferencePolicy::LinearFeedback { gain: -0.5 },
        100_000,
        RandomStream::new(12345, 0),
        GoodEventConfig::default(),
    )
    .unwrap();
    empirical_cf(&samples, grid).unwrap()
}

/// Central differences of `f` along every coordinate of `params`.
fn central_differences(params: &PolicyParams, h: f64, f: impl Fn(&PolicyParams) -> f64) -> Vec<f64> {
    (0..params.len())
        .map(|i| {
            let mut up = params.clone();
            up.theta[i] += h;
            let mut dn = params.clone();
            dn.theta[i] -= h;
            (f(&up) - f(&dn)) / (2.0 * h)
        })
        .collect()
}

#[test]
fn pathwise_gradient_exactness() {
    let start = Instant::now();
    let m = 32;
    let mut worst = 0.0f64;
    for (env, offset) in [(EnvSpec::lq(3), 0), (EnvSpec::cosine(0.4, 0.1, 1.0), 1000)] {
        for trial in 0..50 {
            let params = random_params(4, offset + trial);
            let stream = RandomStream::new(9, offset + trial);
            let batch = Simulator::new(&env, &params, GoodEventConfig::default()).unwrap().run(m, stream, true).unwrap();
            let analytic = batch.mean_grad().unwrap();
            let numeric = central_differences(&params, 1e-5, |p| {
                let r = Simulator::new(&env, p, GoodEventConfig::default()).unwrap().returns(m, stream).unwrap();
                r.iter().sum::<f64>() / m as f64
            });
            for (a, n) in analytic.iter().zip(&numeric) {
                worst = worst.max(scaled_error(*a, *n));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= 1.0 && secs < 60.0;
    report("pathwise gradient exactness", pass, format!("worst scaled error {worst:.3e} ≤ 1, {secs:.1}s < 60s"));
    assert!(pass);
}

#[test]
fn estimator_identity() {
    let start = Instant::now();
    let grid = build_uniform_grid(10.0, 128, 0.05).unwrap();
    let target = lq_target(&grid);
    let env = EnvSpec::lq(10);
    let mut worst = 0.0f64;
    for trial in 0..10 {
        let params = random_params(4, 500 + trial);
        let stream = RandomStream::new(21, trial);
        let batch = Simulator::new(&env, &params, GoodEventConfig::default()).unwrap().run(64, stream, true).unwrap();
        let analytic = cf_loss_gradient(&batch, &target, &grid).unwrap().grad;
        let numeric = central_differences(&params, 1e-6, |p| {
            let b = Simulator::new(&env, p, GoodEventConfig::default()).unwrap().run(64, stream, false).unwrap();
            cf_loss(&b, &target, &grid).unwrap()
        });
        for (a, n) in analytic.iter().zip(&numeric) {
            worst = worst.max(scaled_error(*a, *n));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= 1.0 && secs < 60.0;
    report("estimator identity", pass, format!("worst scaled error {worst:.3e} ≤ 1, {secs:.1}s < 60s"));
    assert!(pass);
}

#[test]
fn bias_decay() {
    let start = Instant::now();
    let env = EnvSpec::lq(5);
    let grid = build_uniform_grid(10.0, 64, 0.05).unwrap();
    let target = lq_target(&grid);
    let mut params = random_params(3, 7);
    for t in params.theta.iter_mut() {
        *t *= 0.5;
    }
    let m_list = [256, 1024, 4096];
    let probe = bias_decay_probe(&env, &params, &target, &grid, &m_list, 200, 3, 1_000_000).unwrap();
    // least-squares slope of log error on log M
    let x: Vec<f64> = m_list.iter().map(|m| (*m as f64).ln()).collect();
    let y: Vec<f64> = probe.errors.iter().map(|e| e.ln()).collect();
    let (mx, my) = (x.iter().sum::<f64>() / 3.0, y.iter().sum::<f64>() / 3.0);
    let slope = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>()
        / x.iter().map(|a| (a - mx).powi(2)).sum::<f64>();
    let secs = start.elapsed().as_secs_f64();
    let pass = (-1.3..=-0.7).contains(&slope) && (slope - probe.slope).abs() < 1e-12 && secs < 600.0;
    report("bias decay", pass, format!("slope {slope:.3} in [-1.3, -0.7], errors {:?}, {secs:.1}s < 600s", probe.errors));
    assert!(pass);
}

#[test]
fn epps_pulley_equivalence() {
    let start = Instant::now();
    // trapezoid rule for ∫ |e^{-u²/2} − φ̂(u)|² (2π)^{-1/2} e^{-u²/2} du on [−40, 40]
    let n_nodes = 16_000;
    let du = 80.0 / n_nodes as f64;
    let nodes: Vec<f64> = (0..=n_nodes).map(|i| -40.0 + i as f64 * du).collect();
    let quadrature = |s: &[f64]| -> f64 {
        let m = s.len() as f64;
        nodes
            .iter()
            .enumerate()
            .map(|(i, &u)| {
                let (mut re, mut im) = (0.0, 0.0);
                for x in s {
                    re += (u * x).cos();
                    im += (u * x).sin();
                }
                let (dr, di) = ((-0.5 * u * u).exp() - re / m, -im / m);
                let w = if i == 0 || i == n_nodes { 0.5 } else { 1.0 };
                w * du * (dr * dr + di * di) * (-0.5 * u * u).exp() / (2.0 * PI).sqrt()
            })
            .sum()
    };
    let grid = build_weighted_grid(40.0, 32_000, 0.5, 1.0 / (2.0 * PI).sqrt()).unwrap();
    let normal = target_cf(&TargetSpec::StandardNormal, &grid).unwrap();
    let mut rng = RandomStream::new(4, 0).rng();
    let (mut worst, mut worst_grid) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let n = rng.random_range(1..=30);
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let closed = epps_pulley_loss(&s).unwrap();
        worst = worst.max((closed - quadrature(&s)).abs());
        worst_grid = worst_grid.max((closed - cf_loss_from_returns(&s, &normal, &grid).unwrap()).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= 1e-6 && worst_grid <= 1e-6 && secs < 60.0;
    report(
        "Epps-Pulley equivalence",
        pass,
        format!("quadrature gap {worst:.3e}, grid-loss gap {worst_grid:.3e} ≤ 1e-6, {secs:.1}s < 60s"),
    );
    assert!(pass);
}

#[test]
fn bernoulli_reduction() {
    let grid = build_uniform_grid(20.0, 4000, 0.05).unwrap();
    let target = target_cf(&TargetSpec::DiracAt { c: 1.0 }, &grid).unwrap();
    let cw: f64 = grid.nodes.iter().zip(&grid.weights).map(|(u, b)| b * 2.0 * (1.0 - u.cos())).sum();
    let mut worst = 0.0f64;
    for p in [0.0, 0.25, 0.5, 1.0] {
        for m in [4usize, 8, 100] {
            let ones = (p * m as f64).round() as usize;
            let s: Vec<f64> = (0..m).map(|j| if j < ones { 1.0 } else { 0.0 }).collect();
            let direct = cf_loss_from_returns(&s, &target, &grid).unwrap();
            worst = worst.max((direct - cw * (1.0 - p) * (1.0 - p)).abs());
            worst = worst.max((direct - bernoulli_loss(p, &grid).unwrap()).abs());
        }
    }
    let pass = worst <= 1e-10;
    report("Bernoulli reduction", pass, format!("identity error {worst:.3e} ≤ 1e-10"));
    assert!(pass);
}

#[test]
fn jacobi_anger_oracle() {
    let start = Instant::now();
    let grid = build_uniform_grid(16.0, 8001, 0.05).unwrap();
    let problem = JacobiAngerProblem::new(0.0, 0.1, 1.0, 16, grid).unwrap();
    let target = target_cf(&TargetSpec::Epanechnikov, &problem.grid).unwrap();
    let sol = solve_modes(&problem, &target).unwrap();

    // forward map summed here over k = −16..=16 from the Bessel expansion,
    // with ψ(−k) = conj ψ(k) and J_{−k} = (−1)^k J_k
    let i = ComplexValue::new(0.0, 1.0);
    let mut residual = 0.0f64;
    for (u, t) in problem.grid.nodes.iter().zip(&target.values) {
        let mut phi = ComplexValue::new(bessel_j(0, *u).unwrap(), 0.0);
        for k in 1..=16u32 {
            let damp = (-0.5 * (k * k) as f64 * 0.01).exp();
            let jk = bessel_j(k, *u).unwrap();
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            phi += i.powu(k) * jk * damp * sol.psi[k as usize];
            phi += i.powi(-(k as i32)) * sign * jk * damp * sol.psi[k as usize].conj();
        }
        residual = residual.max((phi - t).norm());
    }
    let odd = (1..=16).step_by(2).map(|k| sol.psi[k].norm()).fold(0.0, f64::max);

    let density = reconstruct_density(&sol, (-PI, PI), 2001).unwrap();
    let sampler = DensitySampler::new(&density).unwrap();
    let m = 100_000;
    let returns = cosine_returns(&problem, &sampler, m, RandomStream::new(5, 1)).unwrap();
    let mut rng = RandomStream::new(5, 2).rng();
    let exact: Vec<f64> = (0..m).map(|_| epanechnikov_quantile(rng.random::<f64>())).collect();
    let w1 = wasserstein1(&returns, &exact).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let pass = residual <= 1e-3 && sol.residual_norm <= 1e-3 && odd <= 1e-8 && w1 <= 0.05 && secs < 300.0;
    report(
        "Jacobi-Anger oracle",
        pass,
        format!("residual {residual:.3e} ≤ 1e-3, odd modes {odd:.3e} ≤ 1e-8, W1 {w1:.4} ≤ 0.05, {secs:.1}s < 300s"),
    );
    assert!(pass);
}

#[test]
fn torus_deconvolution() {
    let (s0, sigma) = (0.7, 0.4);
    let mut worst = 0.0f64;
    for (m, var) in [(0.0, 0.5), (2.0, 0.3), (PI, 1.2), (5.5, 0.17)] {
        // target wrapped normal, so the policy law is WN(m − s0, var − σ²)
        let target: Vec<ComplexValue> = (0..=20)
            .map(|n| ComplexValue::from_polar((-0.5 * var * (n * n) as f64).exp(), -(n as f64) * m))
            .collect();
        let nu = torus_deconvolve(&target, s0, sigma).unwrap();
        for (n, v) in nu.iter().enumerate() {
            let n = n as f64;
            let expect = ComplexValue::from_polar((-0.5 * (var - sigma * sigma) * n * n).exp(), -n * (m - s0));
            worst = worst.max((v - expect).norm());
        }
        let back = torus_convolve(&nu, s0, sigma);
        worst = worst.max(back.iter().zip(&target).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max));
    }
    let dirac: Vec<ComplexValue> = (0..=8).map(|n| ComplexValue::from_polar(1.0, -(n as f64))).collect();
    let sharp: Vec<ComplexValue> = (0..=8).map(|n| ComplexValue::new((-0.01 * (n * n) as f64).exp(), 0.0)).collect();
    let rejected = [dirac, sharp]
        .iter()
        .all(|t| matches!(torus_deconvolve(t, s0, sigma), Err(Error::InfeasibleTarget { .. })));
    let pass = worst <= 1e-12 && rejected;
    report(
        "torus deconvolution",
        pass,
        format!("round-trip error {worst:.3e} ≤ 1e-12, infeasible targets rejected: {rejected}"),
    );
    assert!(pass);
}

fn lq_train_config(seed: u64, schedule: StepSchedule) -> (PolicyConfig, TrainConfig) {
    let policy = PolicyConfig::theory2layer(8, Activation::Tanh, seed);
    let mut train = TrainConfig::new(4096, 500, schedule);
    train.threshold = 5e-3;
    train.restart_limit = 3;
    train.seed = seed;
    (policy, train)
}

#[test]
fn lq_training() {
    let start = Instant::now();
    let env = EnvSpec::lq(10);
    let grid = build_uniform_grid(10.0, 512, 0.05).unwrap();
    let target = lq_target(&grid);
    let mut reached = 0;
    let mut finals = Vec::new();
    for seed in 0..10 {
        let (policy, cfg) = lq_train_config(seed, StepSchedule::adam(0.01));
        let rep = train(&env, &policy, &target, &grid, &cfg).unwrap();
        let last = rep.final_loss().unwrap();
        reached += usize::from(rep.converged && last <= 5e-3);
        finals.push(last);
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = reached >= 8 && secs < 1800.0;
    report(
        "LQ training",
        pass,
        format!(
            "{reached}/10 seeds reach loss ≤ 5e-3 (need 8), final losses [{}], {secs:.0}s < 1800s",
            finals.iter().map(|l| format!("{l:.2e}")).collect::<Vec<_>>().join(", ")
        ),
    );
    assert!(pass);
}

fn wealth_env() -> EnvSpec {
    let mut env = EnvSpec::wealth(20);
    if let EnvKind::Wealth { terminal_scale, .. } = &mut env.kind {
        // returns are s_T / s_0
        *terminal_scale = 0.01;
    }
    env
}

fn wealth_run(target: &CfTable, grid: &FrequencyGrid, threshold: f64) -> TrainReport {
    let mut policy = PolicyConfig::theory2layer(8, Activation::Tanh, 0);
    policy.input_norm = InputNorm { s_shift: 100.0, s_scale: 0.01, r_shift: 0.0, r_scale: 1.0 };
    let mut cfg = TrainConfig::new(16_384, 800, StepSchedule::adam(0.1));
    cfg.threshold = threshold;
    cfg.stall_window = 300;
    cfg.restart_limit = 1;
    train(&wealth_env(), &policy, target, grid, &cfg).unwrap()
}

#[test]
fn wealth_training() {
    let start = Instant::now();
    let env = wealth_env();
    let grid = build_uniform_grid(10.0, 512, 0.05).unwrap();
    let m_eval = 100_000;

    // case 1: everything in the stock, s_T / s_0 = exp((μ − σ²/2)TΔt + σ√(TΔt) Z)
    let horizon: f64 = 20.0 * 0.05;
    let lognormal = |stream| -> Vec<f64> {
        standard_normal(stream, m_eval)
            .into_iter()
            .map(|z| ((0.06 - 0.5 * 0.16) * horizon + 0.4 * horizon.sqrt() * z).exp())
            .collect()
    };
    let target = empirical_cf(&lognormal(RandomStream::new(12345, 0)), &grid).unwrap();
    let rep = wealth_run(&target, &grid, 4e-4);
    let learned = Simulator::new(&env, &rep.params, GoodEventConfig::default())
        .unwrap()
        .returns(m_eval, RandomStream::new(99, 0))
        .unwrap();
    let w1 = wasserstein1(&learned, &lognormal(RandomStream::new(777, 0))).unwrap();
    let loss1 = rep.final_loss().unwrap();

    // case 2: uniform fraction, matched only in loss
    let uniform = reference_returns(
        &env,
        ReferencePolicy::Uniform { lo: 0.0, hi: 1.0 },
        m_eval,
        RandomStream::new(12345, 0),
        GoodEventConfig::default(),
    )
    .unwrap();
    let target2 = empirical_cf(&uniform, &grid).unwrap();
    let rep2 = wealth_run(&target2, &grid, 1e-3);
    let loss2 = rep2.final_loss().unwrap();

    let secs = start.elapsed().as_secs_f64();
    let pass = loss1 <= 1e-2 && w1 <= 0.02 && loss2 <= 1e-2 && secs < 1800.0;
    report(
        "wealth training",
        pass,
        format!(
            "case 1 loss {loss1:.2e} ≤ 1e-2, W1/s0 {w1:.4} ≤ 0.02; case 2 loss {loss2:.2e} ≤ 1e-2; {secs:.0}s < 1800s"
        ),
    );
    assert!(pass);
}

#[test]
fn convergence_diagnostic_trend() {
    let env = EnvSpec::lq(10);
    let grid = build_uniform_grid(10.0, 512, 0.05).unwrap();
    let target = lq_target(&grid);
    let k = 100;
    let mut holds = 0;
    let mut ratios = Vec::new();
    for seed in 0..10 {
        let (policy, mut cfg) = lq_train_config(seed, StepSchedule::Constant { alpha: 3e-4 });
        cfg.max_iters = 2 * k;
        cfg.threshold = 0.0;
        cfg.restart_limit = 0;
        let rep = train(&env, &policy, &target, &grid, &cfg).unwrap();
        let recs = rep.final_attempt();
        assert_eq!(recs.len(), 2 * k);
        // Σ_{i<K} α_i ‖g_i‖² / Σ_{i<K} α_i
        let wga = |n: usize| {
            let a: f64 = recs[..n].iter().map(|r| r.alpha).sum();
            recs[..n].iter().map(|r| r.alpha * r.grad_norm * r.grad_norm).sum::<f64>() / a
        };
        let ratio = wga(2 * k) / wga(k);
        holds += usize::from(ratio <= 1.1);
        ratios.push(ratio);
    }
    let pass = holds >= 8;
    report(
        "convergence-diagnostic trend",
        pass,
        format!("{holds}/10 runs with average at 2K ≤ 1.1× average at K (need 8), ratios {ratios:.3?}"),
    );
    assert!(pass);
}

#[test]
fn wrapped_targets_live_on_the_circle() {
    // a sanity anchor for the torus model: samples reduced mod 2π stay in [0, 2π)
    let env = EnvSpec::torus(3, 1.0, 0.5);
    let params = random_params(4, 3);
    let r = Simulator::new(&env, &params, GoodEventConfig::default()).unwrap().returns(1000, RandomStream::new(1, 1)).unwrap();
    assert!(r.iter().all(|x| (0.0..TAU).contains(x)));
}
