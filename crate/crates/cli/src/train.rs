//! `distmatch train`.

use std::f64::consts::TAU;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use distmatch_core::charfn::{empirical_cf, epanechnikov_quantile, target_cf, CfTable, FrequencyGrid, TargetSpec};
use distmatch_core::environment::{EnvKind, EnvSpec, InitialState};
use distmatch_core::numerics::{standard_normal, wasserstein1};
use distmatch_core::policy::PolicyParams;
use distmatch_core::rollout::{reference_returns, GoodEventConfig, Simulator};
use distmatch_core::trainer::{train_with_observer, TrainConfig, TrainReport};
use distmatch_core::RandomStream;
use rand::Rng;
use serde_json::json;

use crate::config::{self, ConfigError, Overrides, TargetConfig};
use crate::io::{histogram_csv, num, samples_text, write_atomic};
use crate::Failure;

const HIST_BINS: usize = 64;
const PROGRESS_EVERY: usize = 25;
/// Trajectories written by `dump_trajectories`.
const DUMP_ROWS: usize = 256;
/// Stream id reserved for target draws.
const TARGET_STREAM: u64 = 0;
/// Stream id of the evaluation rollouts, far from the training batches.
const EVAL_STREAM: u64 = u64::MAX - 1;

pub fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

/// Target CF on the grid, plus terminal samples of the target when it has any.
pub fn resolve_target(
    target: &TargetConfig,
    env: &EnvSpec,
    grid: &FrequencyGrid,
    good: GoodEventConfig,
    n_draws: usize,
) -> Result<(CfTable, Option<Vec<f64>>), Failure> {
    let samples = match target {
        TargetConfig::ReferencePolicy { policy, samples, seed } => {
            reference_returns(env, *policy, *samples, RandomStream::new(*seed, TARGET_STREAM), good)?
        }
        TargetConfig::Lognormal { samples, seed } => {
            let EnvKind::Wealth { mu, sigma, dt, terminal_scale, .. } = env.kind else {
                return Err(ConfigError { path: "target".into(), message: "lognormal targets need a wealth environment".into() }.into());
            };
            let InitialState::Fixed { value: s0 } = env.initial_state else {
                return Err(ConfigError { path: "env.initial_state".into(), message: "lognormal targets need a fixed initial wealth".into() }.into());
            };
            let horizon = env.horizon as f64 * dt;
            standard_normal(RandomStream::new(*seed, TARGET_STREAM), *samples)
                .into_iter()
                .map(|z| terminal_scale * s0 * ((mu - 0.5 * sigma * sigma) * horizon + sigma * horizon.sqrt() * z).exp())
                .collect()
        }
        TargetConfig::Spec(spec) => {
            let table = target_cf(spec, grid)?;
            return Ok((table, spec_samples(spec, n_draws)));
        }
    };
    Ok((empirical_cf(&samples, grid)?, Some(samples)))
}

/// Exact draws from an analytic target, used for histograms and W1.
fn spec_samples(spec: &TargetSpec, n: usize) -> Option<Vec<f64>> {
    let stream = RandomStream::new(0, TARGET_STREAM);
    match spec {
        TargetSpec::EmpiricalSamples { samples } => Some(samples.clone()),
        TargetSpec::StandardNormal => Some(standard_normal(stream, n)),
        TargetSpec::Epanechnikov => {
            let mut rng = stream.rng();
            Some((0..n).map(|_| epanechnikov_quantile(rng.random::<f64>())).collect())
        }
        TargetSpec::DiracAt { c } => Some(vec![*c; n]),
        TargetSpec::WrappedGaussian { m, sigma2 } => Some(
            standard_normal(stream, n)
                .into_iter()
                .map(|z| (m + sigma2.sqrt() * z).rem_euclid(TAU))
                .collect(),
        ),
        TargetSpec::TableFile { .. } => None,
    }
}

fn cf_csv(target: &CfTable, learned: &CfTable) -> String {
    let mut out = String::from("u,target_re,target_im,learned_re,learned_im\n");
    for ((u, t), l) in target.nodes.iter().zip(&target.values).zip(&learned.values) {
        out.push_str(&format!("{},{},{},{},{}\n", num(*u), num(t.re), num(t.im), num(l.re), num(l.im)));
    }
    out
}

fn metrics_csv(report: &TrainReport) -> String {
    let mut out = String::from("iter,loss,grad_norm,alpha\n");
    for (i, r) in report.records.iter().enumerate() {
        out.push_str(&format!("{},{},{},{}\n", i, num(r.loss), num(r.grad_norm), num(r.alpha)));
    }
    out
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), Failure> {
    write_atomic(&dir.join(name), contents).map_err(|e| Failure::Runtime(format!("writing {name}: {e}")))
}

pub fn run(path: &Path, overrides: &Overrides) -> Result<(), Failure> {
    let started = unix_now();
    let loaded = config::load(path, overrides)?;
    let cfg = &loaded.config;
    let (env, policy_cfg, grid_cfg, target_cfg, train_cfg) = cfg.training_parts()?;
    let grid = grid_cfg.build().map_err(|e| ConfigError { path: "grid".into(), message: e.to_string() })?;
    let dir = cfg.outputs.dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display())))?;

    let n_draws = cfg.outputs.eval_samples.unwrap_or(train_cfg.m.max(10_000));
    let (target, target_samples) = resolve_target(target_cfg, env, &grid, train_cfg.good, n_draws)?;
    // equal sizes so W1 is the plain order-statistic coupling
    let n_eval = target_samples.as_ref().map_or(n_draws, Vec::len);

    let every = cfg.outputs.checkpoint_every;
    let mut write_error = None;
    let mut global = 0usize;
    let report = train_with_observer(env, policy_cfg, &target, &grid, train_cfg, &mut |ev| {
        if every > 0 && global % every == 0 && write_error.is_none() {
            let name = format!("checkpoints/iter_{global:06}.json");
            write_error = write(&dir, &name, &ev.params.to_json()).err();
        }
        if global % PROGRESS_EVERY == 0 {
            eprintln!("attempt {} iter {}: loss {:.6}, grad norm {:.4}", ev.record.attempt, ev.record.k, ev.record.loss, ev.record.grad_norm);
        }
        global += 1;
    })?;
    if let Some(e) = write_error {
        return Err(e);
    }

    let learned = evaluate(env, &report.params, train_cfg, n_eval)?;
    let learned_cf = empirical_cf(&learned, &grid)?;
    write(&dir, "metrics.csv", &metrics_csv(&report))?;
    write(&dir, "cf.csv", &cf_csv(&target, &learned_cf))?;
    write(&dir, "policy.json", &report.params.to_json())?;
    write(&dir, "samples_learned.txt", &samples_text(&learned))?;
    let target_draws = target_samples.as_deref().unwrap_or(&[]);
    if !target_draws.is_empty() {
        write(&dir, "samples_target.txt", &samples_text(target_draws))?;
    }
    write(&dir, "hist.csv", &histogram_csv(target_draws, &learned, HIST_BINS))?;
    if cfg.outputs.dump_trajectories {
        let sim = Simulator::new(env, &report.params, train_cfg.good)?;
        let batch = sim.run(DUMP_ROWS.min(n_eval), RandomStream::new(train_cfg.seed, EVAL_STREAM), false)?;
        write(&dir, "trajectories.csv", &batch.to_csv())?;
    }
    let w1 = if target_draws.is_empty() { None } else { Some(wasserstein1(target_draws, &learned)?) };

    let seeds: Vec<u64> = (0..=report.restarts).map(|a| train_cfg.attempt_seed(a)).collect();
    let manifest = json!({
        "config_hash": loaded.hash,
        "config": loaded.value,
        "seeds": {"train": train_cfg.seed, "policy": policy_cfg.seed, "attempts": seeds},
        "version": env!("CARGO_PKG_VERSION"),
        "started_unix": started,
        "finished_unix": unix_now(),
        "metrics": {
            "final_loss": report.final_loss(),
            "best_loss": report.best_loss,
            "iters": report.records.len(),
            "restarts": report.restarts,
            "converged": report.converged,
            "wall_time_s": report.wall_time.as_secs_f64(),
            "W1": w1,
        },
        "warnings": report.warnings,
    });
    write(&dir, "manifest.json", &serde_json::to_string_pretty(&manifest).expect("manifest serializes"))?;

    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let last = report.final_loss().unwrap_or(f64::NAN);
    println!(
        "{}: {} iterations, {} restarts, final loss {last:.6}, best {:.6}{}",
        if report.converged { "converged" } else { "not converged" },
        report.records.len(),
        report.restarts,
        report.best_loss,
        w1.map_or(String::new(), |w| format!(", W1 {w:.6}")),
    );
    println!("artifacts in {}", dir.display());
    if report.converged {
        Ok(())
    } else {
        Err(Failure::Stalled(format!(
            "loss stayed above {} after {} restarts (best {:.6})",
            train_cfg.threshold, report.restarts, report.best_loss
        )))
    }
}

/// Terminal returns of the trained policy on a fresh stream.
fn evaluate(env: &EnvSpec, params: &PolicyParams, train: &TrainConfig, n: usize) -> Result<Vec<f64>, Failure> {
    let sim = Simulator::new(env, params, train.good)?;
    Ok(sim.returns(n, RandomStream::new(train.seed, EVAL_STREAM))?)
}
