//! `distmatch oracle`.

use std::path::Path;

use distmatch_core::charfn::{epanechnikov_quantile, target_cf, TargetSpec};
use distmatch_core::numerics::wasserstein1;
use distmatch_core::oracle::{
    cosine_returns, reconstruct_density, solve_modes, torus_convolve, torus_deconvolve, wrapped_gaussian_modes,
    DensitySampler, JacobiAngerProblem,
};
use distmatch_core::{ComplexValue, RandomStream};
use rand::Rng;
use serde_json::json;

use crate::config::{self, ConfigError, OracleConfig, Overrides, TargetConfig, TorusTarget};
use crate::io::{num, write_atomic};
use crate::Failure;

fn modes_csv(modes: &[ComplexValue], index: &str) -> String {
    let mut out = format!("{index},re,im,abs\n");
    for (k, v) in modes.iter().enumerate() {
        out.push_str(&format!("{k},{},{},{}\n", num(v.re), num(v.im), num(v.norm())));
    }
    out
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), Failure> {
    write_atomic(&dir.join(name), contents).map_err(|e| Failure::Runtime(format!("writing {name}: {e}")))
}

pub fn run(path: &Path, overrides: &Overrides) -> Result<(), Failure> {
    let loaded = config::load(path, overrides)?;
    let cfg = &loaded.config;
    let oracle = cfg
        .oracle
        .as_ref()
        .ok_or_else(|| ConfigError { path: "oracle".into(), message: "section is required for the oracle command".into() })?;
    let dir = &cfg.outputs.dir;
    std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    let summary = match oracle {
        OracleConfig::JacobiAnger { s0, sigma, v, k_modes, grid, density_points, interval, samples, seed } => {
            let spec = match &cfg.target {
                None => TargetSpec::Epanechnikov,
                Some(TargetConfig::Spec(spec)) => spec.clone(),
                Some(_) => {
                    return Err(ConfigError {
                        path: "target".into(),
                        message: "the Jacobi–Anger oracle needs an analytic target".into(),
                    }
                    .into())
                }
            };
            let grid = grid.build().map_err(|e| ConfigError { path: "oracle.grid".into(), message: e.to_string() })?;
            let problem = JacobiAngerProblem::new(*s0, *sigma, *v, *k_modes, grid)?;
            let target = target_cf(&spec, &problem.grid)?;
            let sol = solve_modes(&problem, &target)?;
            let density = reconstruct_density(&sol, *interval, *density_points)?;
            write(dir, "modes.csv", &modes_csv(&sol.psi, "k"))?;
            let mut text = String::from("x,p\n");
            for (x, p) in density.x.iter().zip(&density.values) {
                text.push_str(&format!("{},{}\n", num(*x), num(*p)));
            }
            write(dir, "density.csv", &text)?;

            // returns driven by the reconstructed density against exact target draws
            let sampler = DensitySampler::new(&density)?;
            let learned = cosine_returns(&problem, &sampler, *samples, RandomStream::new(*seed, 1))?;
            let w1 = match spec {
                TargetSpec::Epanechnikov => {
                    let mut rng = RandomStream::new(*seed, 0).rng();
                    let exact: Vec<f64> = (0..*samples).map(|_| epanechnikov_quantile(rng.random::<f64>())).collect();
                    Some(wasserstein1(&exact, &learned)?)
                }
                _ => None,
            };
            println!(
                "residual {:.3e}, odd modes {:.3e}, density min {:.3e}{}",
                sol.residual_norm,
                sol.odd_mode_max,
                density.min_value,
                w1.map_or(String::new(), |w| format!(", W1 {w:.5}"))
            );
            if !sol.clipped.is_empty() {
                eprintln!("warning: modes {:?} exceeded modulus 1 and were clipped", sol.clipped);
            }
            json!({
                "kind": "jacobi-anger",
                "residual_norm": sol.residual_norm,
                "odd_mode_max": sol.odd_mode_max,
                "clipped": sol.clipped,
                "ridge": sol.ridge,
                "interval_integral": density.interval_integral,
                "period_integral": density.period_integral,
                "density_min": density.min_value,
                "W1": w1,
            })
        }
        OracleConfig::TorusDeconvolve { s0, sigma, modes, target } => {
            let mu = match target {
                TorusTarget::WrappedGaussian { m, sigma2 } => wrapped_gaussian_modes(*modes, *m, *sigma2),
                // ∫ e^{−inx} δ_c(dx)
                TorusTarget::DiracAt { c } => (0..=*modes).map(|n| ComplexValue::from_polar(1.0, -(n as f64) * c)).collect(),
            };
            let nu = torus_deconvolve(&mu, *s0, *sigma)?;
            let back = torus_convolve(&nu, *s0, *sigma);
            let err = back.iter().zip(&mu).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            write(dir, "nu_modes.csv", &modes_csv(&nu, "n"))?;
            println!("deconvolved {} modes, reconvolution error {err:.3e}", nu.len());
            json!({"kind": "torus-deconvolve", "modes": nu.len(), "reconvolution_error": err})
        }
    };
    let summary = json!({"config_hash": loaded.hash, "oracle": summary});
    write(dir, "oracle.json", &serde_json::to_string_pretty(&summary).expect("summary serializes"))?;
    Ok(())
}
