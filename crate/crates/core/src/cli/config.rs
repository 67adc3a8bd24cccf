use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::engine::{Budget, MutationParams};
use crate::transforms::{TransformKind, Weights};

use super::CliError;

/// Keys accepted in a run configuration file. Relative paths are taken
/// from the file's directory.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub target: Option<usize>,
    pub jobs: Option<usize>,
    pub budget_passes: Option<u64>,
    pub budget_seconds: Option<f64>,
    pub m_range: Option<(u32, u32)>,
    pub c_grid: Option<Vec<f64>>,
    pub tau: Option<f64>,
    pub random_emit_probability: Option<f64>,
    /// Intrusion weights by kind name.
    pub weights: Option<BTreeMap<String, f64>>,
    /// Inclusion probabilities by kind name.
    pub inclusion: Option<BTreeMap<String, f64>>,
    pub pair_cap: Option<usize>,
    pub fuel: Option<u64>,
    pub inputs: Option<usize>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub budget_passes: Option<u64>,
    pub target: Option<usize>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub manifest: Option<PathBuf>,
}

/// Fully resolved configuration, echoed into every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub config_file: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub target: Option<usize>,
    pub jobs: usize,
    pub pair_cap: usize,
    pub fuel: u64,
    pub inputs: usize,
    pub params: MutationParams,
}

pub const DEFAULT_FUEL: u64 = 1_000_000;
pub const DEFAULT_INPUTS: usize = 16;
pub const DEFAULT_BUDGET_PASSES: u64 = 100;

fn by_kind(
    field: &str,
    map: &BTreeMap<String, f64>,
    base: [f64; 10],
) -> Result<[f64; 10], CliError> {
    let mut out = base;
    for (name, v) in map {
        let kind: TransformKind = name
            .parse()
            .map_err(|e| CliError::Config(format!("{field}: {e}")))?;
        out[kind.index()] = *v;
    }
    Ok(out)
}

impl RunConfig {
    /// Reads the file named in `ov.config`, if any, and applies `ov`.
    pub fn resolve(ov: &Overrides) -> Result<RunConfig, CliError> {
        let (file, dir) = match &ov.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
                let file: FileConfig = toml::from_str(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                (file, path.parent().map(Path::to_path_buf))
            }
            None => (FileConfig::default(), None),
        };
        let rel = |p: PathBuf| match (&dir, p.is_relative()) {
            (Some(d), true) => d.join(p),
            _ => p,
        };
        if file.budget_passes.is_some() && file.budget_seconds.is_some() {
            return Err(CliError::Config(
                "set only one of budget_passes and budget_seconds".into(),
            ));
        }
        let budget = match (ov.budget_passes, file.budget_passes, file.budget_seconds) {
            (Some(p), _, _) | (None, Some(p), _) => Budget::Passes(p),
            (None, None, Some(s)) => {
                if !(s > 0.0 && s.is_finite()) {
                    return Err(CliError::Config(format!(
                        "budget_seconds: {s} is not positive"
                    )));
                }
                Budget::WallClock(Duration::from_secs_f64(s))
            }
            (None, None, None) => Budget::Passes(DEFAULT_BUDGET_PASSES),
        };
        let defaults = MutationParams::default();
        let params = MutationParams {
            m_range: file.m_range.unwrap_or(defaults.m_range),
            c_grid: file.c_grid.unwrap_or(defaults.c_grid),
            seed: ov.seed.or(file.seed).unwrap_or(0),
            budget,
            tau: file.tau,
            random_emit_probability: file
                .random_emit_probability
                .unwrap_or(defaults.random_emit_probability),
            weights: Weights(match &file.weights {
                Some(m) => by_kind("weights", m, defaults.weights.0)?,
                None => defaults.weights.0,
            }),
            inclusion: match &file.inclusion {
                Some(m) => by_kind("inclusion", m, defaults.inclusion)?,
                None => defaults.inclusion,
            },
        };
        params
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        let cfg = RunConfig {
            config_file: ov.config.clone(),
            manifest: ov.manifest.clone().or(file.manifest.map(rel)),
            out: ov.out.clone().or(file.out.map(rel)),
            target: ov.target.or(file.target),
            jobs: ov.jobs.or(file.jobs).unwrap_or(1).max(1),
            pair_cap: file.pair_cap.unwrap_or(50),
            fuel: file.fuel.unwrap_or(DEFAULT_FUEL),
            inputs: file.inputs.unwrap_or(DEFAULT_INPUTS),
            params,
        };
        if cfg.fuel == 0 {
            return Err(CliError::Config("fuel must be positive".into()));
        }
        if cfg.target == Some(0) {
            return Err(CliError::Config("target must be positive".into()));
        }
        Ok(cfg)
    }

    pub fn manifest(&self) -> Result<&Path, CliError> {
        self.manifest
            .as_deref()
            .ok_or_else(|| CliError::Config("no manifest given".into()))
    }

    pub fn out(&self) -> Result<&Path, CliError> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Config("no output directory given".into()))
    }
}
