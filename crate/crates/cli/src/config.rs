//! Run configuration: one JSON document with a `version` field and a section
//! per command. Unknown keys are rejected everywhere.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Deserialize;
use sha2::{Digest, Sha256};
use specbulk_core::{CovarianceSpec, ModelSpec, SolverOptions};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub model: ModelSpec,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub seed: u64,
    pub density: Option<DensitySection>,
    pub solve: Option<SolveSection>,
    pub simulate: Option<SimulateSection>,
    pub equivalents: Option<EquivalentsSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensitySection {
    pub x_min: f64,
    pub x_max: f64,
    pub points: usize,
    /// Support threshold; defaults to `1e-4 · max density`.
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveSection {
    #[serde(default)]
    pub z: Vec<[f64; 2]>,
    /// Also report `g'(z)`.
    #[serde(default)]
    pub derivative: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquivalentsSection {
    pub z1: Option<[f64; 2]>,
    pub z2: Option<[f64; 2]>,
    /// `σ²` values for the log-det and class-trace functionals.
    #[serde(default)]
    pub sigma2: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub trials: usize,
    pub histogram: Option<HistogramSection>,
    pub outliers: Option<OutlierSection>,
    pub convergence: Option<ConvergenceSection>,
    pub second_order: Option<SecondOrderSection>,
    pub variance_scaling: Option<VarianceSection>,
    pub norm_bound: Option<Empty>,
    pub zero_eigenvalues: Option<Empty>,
    pub wireless: Option<WirelessSection>,
    pub radius_fuzz: Option<FuzzSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Empty {}

/// Density grid used as the reference for histogram and outlier checks.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub x_min: f64,
    pub x_max: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramSection {
    pub lo: f64,
    pub hi: f64,
    pub width: f64,
    pub l1_threshold: Option<f64>,
    pub grid: GridSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutlierSection {
    pub threshold: Option<f64>,
    pub grid: GridSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceSection {
    pub z: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SecondOrderSection {
    pub pairs: Vec<[[f64; 2]; 2]>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarianceSection {
    pub z: [f64; 2],
    pub p_list: Vec<usize>,
    #[serde(default = "default_ratio_window")]
    pub ratio_window: [f64; 2],
}

fn default_ratio_window() -> [f64; 2] {
    [2.5, 6.0]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WirelessSection {
    pub sigma2: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FuzzSection {
    pub cases: usize,
}

/// A parsed config with the SHA-256 of its raw bytes.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(64);
    for b in Sha256::digest(bytes).iter() {
        write!(out, "{b:02x}").unwrap();
    }
    out
}

pub fn load(path: &Path) -> Result<LoadedConfig, String> {
    let bytes = fs::read(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let mut config = parse(&bytes)?;
    // Dense covariance files are resolved against the config's directory.
    if let Some(dir) = path.parent() {
        for class in &mut config.model.classes {
            if let CovarianceSpec::Dense { path } = &mut class.covariance {
                if path.is_relative() {
                    *path = dir.join(&*path);
                }
            }
        }
    }
    Ok(LoadedConfig {
        config,
        sha256: sha256_hex(&bytes),
    })
}

pub fn parse(bytes: &[u8]) -> Result<RunConfig, String> {
    let config: RunConfig =
        serde_json::from_slice(bytes).map_err(|e| format!("invalid config: {e}"))?;
    if config.version != CONFIG_VERSION {
        return Err(format!(
            "unsupported config version {} (expected {CONFIG_VERSION})",
            config.version
        ));
    }
    config
        .solver
        .validate()
        .map_err(|e| format!("invalid solver section: {e}"))?;
    if let Some(sim) = &config.simulate {
        if sim.trials == 0 {
            return Err("simulate.trials must be positive".into());
        }
    }
    Ok(config)
}
