//! `distmatch verify`: invariant suites with measured values.

use std::f64::consts::PI;

use distmatch_core::charfn::{build_uniform_grid, build_weighted_grid, empirical_cf, target_cf, TargetSpec};
use distmatch_core::environment::EnvSpec;
use distmatch_core::loss::{bernoulli_loss, cf_loss, cf_loss_from_returns, cf_loss_gradient, epps_pulley_loss};
use distmatch_core::oracle::{forward_cf, solve_modes, torus_convolve, torus_deconvolve, wrapped_gaussian_modes, JacobiAngerProblem};
use distmatch_core::policy::{Activation, PolicyConfig, PolicyParams};
use distmatch_core::rollout::{reference_returns, GoodEventConfig, ReferencePolicy, Simulator};
use distmatch_core::trainer::bias_decay_probe;
use distmatch_core::{ComplexValue, RandomStream, Result};
use rand::Rng;

use crate::config::ConfigError;
use crate::Failure;

const SUITES: [&str; 5] = ["gradients", "bias", "epps", "bernoulli", "oracle-roundtrip"];

struct Check {
    name: String,
    value: f64,
    limit: String,
    pass: bool,
}

fn check(name: impl Into<String>, value: f64, pass: bool, limit: impl Into<String>) -> Check {
    Check { name: name.into(), value, limit: limit.into(), pass }
}

pub fn run(suite: &str, seed: u64) -> std::result::Result<(), Failure> {
    let names: Vec<&str> = match suite {
        "all" => SUITES.to_vec(),
        s if SUITES.contains(&s) => vec![s],
        s => {
            return Err(ConfigError {
                path: String::new(),
                message: format!("unknown suite `{s}` (expected one of {}, all)", SUITES.join(", ")),
            }
            .into())
        }
    };
    let mut failed = 0;
    for name in names {
        let checks = match name {
            "gradients" => gradients(seed),
            "bias" => bias(seed),
            "epps" => epps(seed),
            "bernoulli" => bernoulli(),
            _ => oracle_roundtrip(),
        }?;
        for c in checks {
            println!("{} {name}/{}: {:.3e} ({})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.limit);
            failed += usize::from(!c.pass);
        }
    }
    if failed == 0 {
        Ok(())
    } else {
        Err(Failure::Checks(failed))
    }
}

/// Worst `|a − b| / max(1e-5, 1e-3|b|)` over coordinates; ≤ 1 passes.
fn worst_ratio(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / (1e-3 * n.abs()).max(1e-5))
        .fold(0.0, f64::max)
}

fn random_params(width: usize, seed: u64) -> Result<PolicyParams> {
    let mut params = PolicyParams::init(&PolicyConfig::theory2layer(width, Activation::Tanh, seed))?;
    let mut rng = RandomStream::new(seed, 1).rng();
    for t in params.theta.iter_mut() {
        *t += rng.random_range(-0.5..0.5);
    }
    Ok(params)
}

fn gradients(seed: u64) -> Result<Vec<Check>> {
    const H: f64 = 1e-5;
    let grid = build_uniform_grid(5.0, 64, 0.05)?;
    let mut out = Vec::new();
    for (label, env) in [("lq", EnvSpec::lq(3)), ("cosine", EnvSpec::cosine(0.3, 0.1, 1.0))] {
        let target = target_cf(&TargetSpec::StandardNormal, &grid)?;
        let (mut worst_r, mut worst_l) = (0.0f64, 0.0f64);
        for trial in 0..10 {
            let params = random_params(4, seed.wrapping_add(trial))?;
            let stream = RandomStream::new(seed, 100 + trial);
            let batch = Simulator::new(&env, &params, GoodEventConfig::default())?.run(64, stream, true)?;
            let analytic_r = batch.mean_grad().expect("batch has gradients");
            let analytic_l = cf_loss_gradient(&batch, &target, &grid)?.grad;
            let (mut fd_r, mut fd_l) = (Vec::new(), Vec::new());
            for i in 0..params.len() {
                let side = |h: f64| -> Result<(f64, f64)> {
                    let mut p = params.clone();
                    p.theta[i] += h;
                    let b = Simulator::new(&env, &p, GoodEventConfig::default())?.run(64, stream, false)?;
                    Ok((b.returns.iter().sum::<f64>() / 64.0, cf_loss(&b, &target, &grid)?))
                };
                let (up, dn) = (side(H)?, side(-H)?);
                fd_r.push((up.0 - dn.0) / (2.0 * H));
                fd_l.push((up.1 - dn.1) / (2.0 * H));
            }
            worst_r = worst_r.max(worst_ratio(&analytic_r, &fd_r));
            worst_l = worst_l.max(worst_ratio(&analytic_l, &fd_l));
        }
        out.push(check(format!("{label} return sensitivity"), worst_r, worst_r <= 1.0, "scaled error ≤ 1"));
        out.push(check(format!("{label} loss gradient"), worst_l, worst_l <= 1.0, "scaled error ≤ 1"));
    }
    Ok(out)
}

fn bias(seed: u64) -> Result<Vec<Check>> {
    let env = EnvSpec::lq(5);
    let grid = build_uniform_grid(10.0, 64, 0.05)?;
    let samples = reference_returns(&env, ReferencePolicy::LinearFeedback { gain: -0.5 }, 100_000, RandomStream::new(1, 0), GoodEventConfig::default())?;
    let target = empirical_cf(&samples, &grid)?;
    let params = random_params(3, seed)?;
    let probe = bias_decay_probe(&env, &params, &target, &grid, &[256, 1024, 4096], 200, seed, 1_000_000)?;
    Ok(vec![check("log-log slope", probe.slope, (-1.3..=-0.7).contains(&probe.slope), "in [-1.3, -0.7]")])
}

fn epps(seed: u64) -> Result<Vec<Check>> {
    let grid = build_weighted_grid(40.0, 32_000, 0.5, 1.0 / (2.0 * PI).sqrt())?;
    let target = target_cf(&TargetSpec::StandardNormal, &grid)?;
    let mut rng = RandomStream::new(seed, 2).rng();
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = rng.random_range(1..50);
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
        worst = worst.max((cf_loss_from_returns(&s, &target, &grid)? - epps_pulley_loss(&s)?).abs());
    }
    Ok(vec![check("quadrature gap", worst, worst <= 1e-6, "≤ 1e-6")])
}

fn bernoulli() -> Result<Vec<Check>> {
    let grid = build_uniform_grid(40.0, 16_000, 0.05)?;
    let target = target_cf(&TargetSpec::DiracAt { c: 1.0 }, &grid)?;
    let mut worst = 0.0f64;
    for p in [0.0, 0.25, 0.5, 1.0] {
        let m = 8;
        let ones = (p * m as f64) as usize;
        let s: Vec<f64> = (0..m).map(|j| if j < ones { 1.0 } else { 0.0 }).collect();
        worst = worst.max((cf_loss_from_returns(&s, &target, &grid)? - bernoulli_loss(p, &grid)?).abs());
    }
    Ok(vec![check("identity error", worst, worst <= 1e-10, "≤ 1e-10")])
}

fn oracle_roundtrip() -> Result<Vec<Check>> {
    let grid = build_uniform_grid(16.0, 8001, 0.05)?;
    let problem = JacobiAngerProblem::new(0.0, 0.1, 1.0, 16, grid)?;
    let target = target_cf(&TargetSpec::Epanechnikov, &problem.grid)?;
    let sol = solve_modes(&problem, &target)?;
    let fwd = forward_cf(&sol, &problem)?;
    let fwd_err = fwd.values.iter().zip(&target.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);

    let mu = wrapped_gaussian_modes(12, 0.4, 0.5);
    let back = torus_convolve(&torus_deconvolve(&mu, 0.2, 0.3)?, 0.2, 0.3);
    let torus_err = back.iter().zip(&mu).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    let dirac: Vec<ComplexValue> = (0..=12).map(|n| ComplexValue::from_polar(1.0, -0.5 * n as f64)).collect();
    let rejected = torus_deconvolve(&dirac, 0.2, 0.3).is_err();
    Ok(vec![
        check("jacobi-anger residual", fwd_err, fwd_err <= 1e-3, "≤ 1e-3"),
        check("jacobi-anger odd modes", sol.odd_mode_max, sol.odd_mode_max <= 1e-8, "≤ 1e-8"),
        check("torus reconvolution", torus_err, torus_err <= 1e-12, "≤ 1e-12"),
        check("dirac rejected", f64::from(u8::from(rejected)), rejected, "infeasible"),
    ])
}
