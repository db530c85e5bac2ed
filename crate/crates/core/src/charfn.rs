//! Frequency grids, weight functions, empirical and analytic characteristic
//! functions.

use std::f64::consts::PI;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::numerics::{erfc, unit_phase, ComplexValue};
use crate::{Error, Result};

/// Uniform quadrature grid on `[-K, K)` with Gaussian weight `w(u) = c·e^{-α u²}`.
///
/// Nodes are `u_ℓ = -K + ℓ·Δu` for `ℓ = 0..L`, `Δu = 2K/L`, and the weights
/// are the left-point rectangle rule `β_ℓ = w(u_ℓ)·Δu`. The last node is
/// `K − Δu`, so the grid is symmetric only up to its first node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    pub k_max: f64,
    pub n_nodes: usize,
    pub alpha: f64,
    /// Constant factor `c` of the weight function; 1 unless a normalized
    /// density is used as weight.
    pub weight_scale: f64,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl FrequencyGrid {
    pub fn spacing(&self) -> f64 {
        2.0 * self.k_max / self.n_nodes as f64
    }

    pub fn weight_fn(&self, u: f64) -> f64 {
        self.weight_scale * (-self.alpha * u * u).exp()
    }

    /// True when `other` has bit-identical nodes.
    pub fn same_nodes(&self, nodes: &[f64]) -> bool {
        self.nodes.len() == nodes.len()
            && self
                .nodes
                .iter()
                .zip(nodes)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

pub fn build_uniform_grid(k_max: f64, n_nodes: usize, alpha: f64) -> Result<FrequencyGrid> {
    build_weighted_grid(k_max, n_nodes, alpha, 1.0)
}

pub fn build_weighted_grid(
    k_max: f64,
    n_nodes: usize,
    alpha: f64,
    weight_scale: f64,
) -> Result<FrequencyGrid> {
    if !(k_max > 0.0 && k_max.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "grid half-width must be positive, got {k_max}"
        )));
    }
    if n_nodes < 2 {
        return Err(Error::InvalidParameter(format!(
            "grid needs at least 2 nodes, got {n_nodes}"
        )));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) || !(weight_scale > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "weight exponent must be nonnegative and scale positive (alpha={alpha}, scale={weight_scale})"
        )));
    }
    let du = 2.0 * k_max / n_nodes as f64;
    let nodes: Vec<f64> = (0..n_nodes).map(|l| -k_max + l as f64 * du).collect();
    let weights = nodes
        .iter()
        .map(|u| weight_scale * (-alpha * u * u).exp() * du)
        .collect();
    Ok(FrequencyGrid {
        k_max,
        n_nodes,
        alpha,
        weight_scale,
        nodes,
        weights,
    })
}

/// Characteristic-function values on a grid's nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct CfTable {
    pub nodes: Vec<f64>,
    pub values: Vec<ComplexValue>,
}

impl CfTable {
    pub fn check_grid(&self, grid: &FrequencyGrid) -> Result<()> {
        if grid.same_nodes(&self.nodes) && self.values.len() == self.nodes.len() {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    /// Reads a `u,re,im` CSV whose nodes must equal `grid`'s bit for bit.
    pub fn read_csv(path: &Path, grid: &FrequencyGrid) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parse_err = |line: usize, message: &str| Error::Parse {
            path: path.to_path_buf(),
            message: format!("line {line}: {message}"),
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header.trim() == "u,re,im" => {}
            _ => return Err(parse_err(1, "expected header `u,re,im`")),
        }
        let mut nodes = Vec::new();
        let mut values = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(parse_err(i + 1, "expected 3 fields"));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| parse_err(i + 1, &e.to_string()))
            };
            nodes.push(num(fields[0])?);
            values.push(ComplexValue::new(num(fields[1])?, num(fields[2])?));
        }
        let table = CfTable { nodes, values };
        table.check_grid(grid)?;
        Ok(table)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("u,re,im\n");
        for (u, v) in self.nodes.iter().zip(&self.values) {
            out.push_str(&format!("{u},{},{}\n", v.re, v.im));
        }
        out
    }
}

/// Target law description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TargetSpec {
    EmpiricalSamples { samples: Vec<f64> },
    StandardNormal,
    Epanechnikov,
    DiracAt { c: f64 },
    /// `sigma2` is the variance of the wrapped normal.
    WrappedGaussian { m: f64, sigma2: f64 },
    TableFile { path: std::path::PathBuf },
}

impl TargetSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            TargetSpec::EmpiricalSamples { samples } if samples.is_empty() => {
                Err(Error::EmptySample)
            }
            TargetSpec::WrappedGaussian { sigma2, .. } if !(*sigma2 > 0.0) => Err(
                Error::InvalidParameter(format!("wrapped-gaussian variance must be > 0, got {sigma2}")),
            ),
            _ => Ok(()),
        }
    }
}

/// Reads one real per line.
pub fn read_samples(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        out.push(line.parse::<f64>().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", i + 1),
        })?);
    }
    if out.is_empty() {
        return Err(Error::EmptySample);
    }
    Ok(out)
}

pub fn empirical_cf(samples: &[f64], grid: &FrequencyGrid) -> Result<CfTable> {
    Ok(CfTable {
        nodes: grid.nodes.clone(),
        values: empirical_cf_values(samples, &grid.nodes)?,
    })
}

pub(crate) fn empirical_cf_values(samples: &[f64], nodes: &[f64]) -> Result<Vec<ComplexValue>> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    let inv = 1.0 / samples.len() as f64;
    Ok(nodes
        .par_iter()
        .map(|&u| {
            let (mut c, mut s) = (0.0, 0.0);
            for &r in samples {
                let (si, co) = (u * r).sin_cos();
                c += co;
                s += si;
            }
            ComplexValue::new(c * inv, s * inv)
        })
        .collect())
}

/// `φ_E(u) = 3(sin u − u cos u)/u³`, the Epanechnikov characteristic function.
pub fn epanechnikov_cf(u: f64) -> f64 {
    let a = u.abs();
    if a < 1e-2 {
        // u⁻³ cancellation; Taylor series 1 − u²/10 + u⁴/280 − u⁶/15120 + u⁸/1330560
        let u2 = u * u;
        return 1.0 + u2 * (-1.0 / 10.0 + u2 * (1.0 / 280.0 + u2 * (-1.0 / 15120.0 + u2 / 1_330_560.0)));
    }
    3.0 * (a.sin() - a * a.cos()) / (a * a * a)
}

/// Epanechnikov quantile function on `[-1, 1]`.
pub fn epanechnikov_quantile(p: f64) -> f64 {
    2.0 * ((2.0 * p - 1.0).asin() / 3.0).sin()
}

pub fn target_cf(spec: &TargetSpec, grid: &FrequencyGrid) -> Result<CfTable> {
    spec.validate()?;
    let values = match spec {
        TargetSpec::EmpiricalSamples { samples } => empirical_cf_values(samples, &grid.nodes)?,
        TargetSpec::StandardNormal => grid
            .nodes
            .iter()
            .map(|u| ComplexValue::new((-0.5 * u * u).exp(), 0.0))
            .collect(),
        TargetSpec::Epanechnikov => grid
            .nodes
            .iter()
            .map(|&u| ComplexValue::new(epanechnikov_cf(u), 0.0))
            .collect(),
        TargetSpec::DiracAt { c } => grid.nodes.iter().map(|u| unit_phase(u * c)).collect(),
        TargetSpec::WrappedGaussian { m, sigma2 } => {
            if let Some(u) = grid.nodes.iter().find(|u| u.fract() != 0.0) {
                return Err(Error::Domain(format!(
                    "wrapped-gaussian modes exist only at integer nodes, found {u}"
                )));
            }
            grid.nodes
                .iter()
                // the CF at n is the Fourier coefficient at −n
                .map(|&n| wrapped_gaussian_mode(-n, *m, *sigma2))
                .collect()
        }
        TargetSpec::TableFile { path } => return CfTable::read_csv(path, grid),
    };
    Ok(CfTable {
        nodes: grid.nodes.clone(),
        values,
    })
}

/// Fourier coefficient `∫ e^{-inx} dμ(x)` of the wrapped normal `WN(m, σ²)`.
pub fn wrapped_gaussian_mode(n: f64, m: f64, sigma2: f64) -> ComplexValue {
    unit_phase(-n * m) * (-0.5 * sigma2 * n * n).exp()
}

/// Upper bound on the loss mass outside `[-K, K]` for the weight `e^{-α u²}`,
/// using `|φ* − φ|² ≤ 4`: `4·√(π/α)·erfc(K√α)`.
pub fn cf_tail_mass(k_max: f64, alpha: f64) -> Result<f64> {
    if !(k_max > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "half-width must be positive, got {k_max}"
        )));
    }
    if !(alpha > 0.0) {
        return Err(Error::Domain(
            "weight exponent 0 has unbounded tail mass".into(),
        ));
    }
    Ok(4.0 * (PI / alpha).sqrt() * erfc(k_max * alpha.sqrt()))
}
