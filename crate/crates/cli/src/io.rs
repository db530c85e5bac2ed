//! Atomic file output and small CSV helpers.

use std::fs;
use std::path::{Path, PathBuf};

/// Writes `contents` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)
}

/// Shortest decimal that parses back to the same `f64`.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn samples_text(values: &[f64]) -> String {
    let mut out = String::with_capacity(values.len() * 20);
    for v in values {
        out.push_str(&num(*v));
        out.push('\n');
    }
    out
}

pub fn read_samples(path: &Path) -> Result<Vec<f64>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.trim().parse::<f64>().map_err(|e| format!("{}: {e}", path.display())))
        .collect()
}

/// Reads a CSV with a header row into named columns of floats.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| format!("{} is empty", path.display()))?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = line
            .split(',')
            .map(|f| f.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| format!("{} line {}: {e}", path.display(), i + 2))?;
        rows.push(row);
    }
    Ok((header, rows))
}

/// `bin_lo,bin_hi,target_count,learned_count` over the pooled sample range.
pub fn histogram_csv(target: &[f64], learned: &[f64], bins: usize) -> String {
    let pooled = target.iter().chain(learned);
    let lo = pooled.clone().cloned().fold(f64::INFINITY, f64::min);
    let mut hi = pooled.cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        hi = lo + 1.0;
    }
    let width = (hi - lo) / bins as f64;
    let count = |xs: &[f64]| {
        let mut c = vec![0usize; bins];
        for x in xs {
            let b = (((x - lo) / width) as usize).min(bins - 1);
            c[b] += 1;
        }
        c
    };
    let (ct, cl) = (count(target), count(learned));
    let mut out = String::from("bin_lo,bin_hi,target_count,learned_count\n");
    for b in 0..bins {
        let a = lo + b as f64 * width;
        let z = if b + 1 == bins { hi } else { lo + (b + 1) as f64 * width };
        out.push_str(&format!("{},{},{},{}\n", num(a), num(z), ct[b], cl[b]));
    }
    out
}
