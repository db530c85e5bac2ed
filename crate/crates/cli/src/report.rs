//! `distmatch report`: summary.json from the artifacts of a finished run.

use std::path::Path;

use distmatch_core::numerics::wasserstein1;
use serde_json::{json, Value};

use crate::io::{read_csv, read_samples, write_atomic};
use crate::Failure;

fn missing(what: String) -> Failure {
    Failure::Config(crate::config::ConfigError { path: String::new(), message: what })
}

pub fn run(dir: &Path) -> Result<(), Failure> {
    for name in ["metrics.csv", "cf.csv"] {
        if !dir.join(name).is_file() {
            return Err(missing(format!("{} has no {name}", dir.display())));
        }
    }
    let (header, rows) = read_csv(&dir.join("metrics.csv")).map_err(missing)?;
    let loss_col = header
        .iter()
        .position(|h| h == "loss")
        .ok_or_else(|| missing("metrics.csv has no loss column".into()))?;
    let final_loss = rows.last().map(|r| r[loss_col]);
    let (_, cf_rows) = read_csv(&dir.join("cf.csv")).map_err(missing)?;

    let target = dir.join("samples_target.txt");
    let learned = dir.join("samples_learned.txt");
    let w1 = if target.is_file() && learned.is_file() {
        let t = read_samples(&target).map_err(missing)?;
        let l = read_samples(&learned).map_err(missing)?;
        Some(wasserstein1(&t, &l)?)
    } else {
        None
    };
    let restarts = std::fs::read_to_string(dir.join("manifest.json"))
        .ok()
        .and_then(|t| serde_json::from_str::<Value>(&t).ok())
        .and_then(|m| m["metrics"]["restarts"].as_u64());

    let summary = json!({
        "final_loss": final_loss,
        "W1": w1,
        "iters": rows.len(),
        "restarts": restarts,
        "cf_nodes": cf_rows.len(),
    });
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_atomic(&dir.join("summary.json"), &text)?;
    println!("{text}");
    Ok(())
}
