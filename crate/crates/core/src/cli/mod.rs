//! Batch commands behind the `blockmorph` binary. Each returns a
//! serializable report embedding the resolved configuration.

mod config;

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asm::BinaryImage;
use crate::cluster::{cluster_corpus, ClusterReport};
use crate::corpus::{corpus_stats, load_manifest, save_manifest, Corpus, StatsConfig, StatsReport};
use crate::engine::{Engine, EngineError, RunReport};
use crate::interp::{equivalent, Verdict};
use crate::synth::random_inputs;
use crate::textio::{decode_container, parse_asm, MAGIC};

pub use config::{
    FileConfig, Overrides, RunConfig, DEFAULT_BUDGET_PASSES, DEFAULT_FUEL, DEFAULT_INPUTS,
};

/// File name of the manifest inside a corpus directory.
pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CliError {
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("pipeline error: {0}")]
    Pipeline(String),
}

impl CliError {
    /// 1 verification or pipeline failure, 2 configuration, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Verification(_) | CliError::Pipeline(_) => 1,
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

fn io(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

fn write_report<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let path = dir.join(name);
    fs::write(&path, to_json(value)).map_err(|e| io(&path, e))?;
    Ok(path)
}

/// Refuses an output directory that holds the input manifest.
fn check_out_dir(out: &Path, inputs: &[&Path]) -> Result<(), CliError> {
    let out_abs = fs::canonicalize(out).ok();
    for input in inputs {
        let dir = input
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        let dir_abs = fs::canonicalize(dir).map_err(|e| io(dir, e))?;
        if out_abs.as_deref() == Some(dir_abs.as_path()) {
            return Err(CliError::Config(format!(
                "output directory {} holds the input {}; choose a distinct directory",
                out.display(),
                input.display()
            )));
        }
    }
    Ok(())
}

fn load(path: &Path) -> Result<Corpus, CliError> {
    load_manifest(path).map_err(|e| CliError::Io(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutateReport {
    pub config: RunConfig,
    pub manifest: PathBuf,
    pub run: RunReport,
}

/// Clusters the corpus, runs the engine and writes the augmented corpus
/// (originals plus emissions) and `report.json` under the output directory.
pub fn cmd_mutate(cfg: &RunConfig) -> Result<MutateReport, CliError> {
    let manifest = cfg.manifest()?;
    let out = cfg.out()?;
    check_out_dir(out, &[manifest])?;
    let corpus = load(manifest)?;
    let engine = Engine {
        jobs: cfg.jobs,
        ..Engine::default()
    };
    let output = engine
        .run(&corpus, &cfg.params, cfg.target)
        .map_err(|e| match e {
            EngineError::Params(p) => CliError::Config(p.to_string()),
            EngineError::EmptyCorpus => CliError::Config(e.to_string()),
            other => CliError::Pipeline(other.to_string()),
        })?;
    let augmented = output.augmented(&corpus);
    let out_manifest = out.join(MANIFEST_FILE);
    fs::create_dir_all(out).map_err(|e| io(out, e))?;
    save_manifest(&augmented, &out_manifest).map_err(|e| CliError::Io(e.to_string()))?;
    let report = MutateReport {
        config: cfg.clone(),
        manifest: out_manifest,
        run: output.report,
    };
    write_report(out, "report.json", &report)?;
    Ok(report)
}

/// Reads a program from a container file or from assembly text.
pub fn load_program(path: &Path) -> Result<BinaryImage, CliError> {
    let bytes = fs::read(path).map_err(|e| io(path, e))?;
    if bytes.starts_with(MAGIC) {
        return decode_container(&bytes)
            .map(|(img, _, _)| img)
            .map_err(|e| io(path, e));
    }
    let text = String::from_utf8(bytes).map_err(|e| io(path, e))?;
    parse_asm(&text).map_err(|e| io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub config: RunConfig,
    pub original: PathBuf,
    pub mutated: PathBuf,
    pub inputs: usize,
    pub equal: bool,
    pub verdict: Verdict,
}

impl VerifyReport {
    pub fn exit_code(&self) -> i32 {
        if self.equal {
            0
        } else {
            1
        }
    }
}

/// Runs both programs on `cfg.inputs` seeded random input vectors.
pub fn cmd_verify(
    original: &Path,
    mutated: &Path,
    cfg: &RunConfig,
) -> Result<VerifyReport, CliError> {
    let a = load_program(original)?;
    let b = load_program(mutated)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.params.seed);
    let inputs = random_inputs(&mut rng, cfg.inputs.max(1));
    let verdict = equivalent(&a, &b, &inputs, cfg.fuel);
    let report = VerifyReport {
        config: cfg.clone(),
        original: original.to_path_buf(),
        mutated: mutated.to_path_buf(),
        inputs: inputs.len(),
        equal: verdict.is_equal(),
        verdict,
    };
    if let Some(out) = &cfg.out {
        check_out_dir(out, &[original, mutated])?;
        write_report(out, "verify.json", &report)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterCommandReport {
    pub config: RunConfig,
    pub clusters: ClusterReport,
}

pub fn cmd_cluster(cfg: &RunConfig) -> Result<ClusterCommandReport, CliError> {
    let manifest = cfg.manifest()?;
    let corpus = load(manifest)?;
    let report = ClusterCommandReport {
        config: cfg.clone(),
        clusters: cluster_corpus(&corpus).report(),
    };
    if let Some(out) = &cfg.out {
        check_out_dir(out, &[manifest])?;
        write_report(out, "cluster.json", &report)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsCommandReport {
    pub config: RunConfig,
    pub stats: StatsReport,
}

pub fn cmd_stats(cfg: &RunConfig) -> Result<StatsCommandReport, CliError> {
    let manifest = cfg.manifest()?;
    let corpus = load(manifest)?;
    let stats = corpus_stats(
        &corpus,
        StatsConfig {
            pair_cap: cfg.pair_cap,
            seed: cfg.params.seed,
        },
    );
    let report = StatsCommandReport {
        config: cfg.clone(),
        stats,
    };
    if let Some(out) = &cfg.out {
        check_out_dir(out, &[manifest])?;
        write_report(out, "stats.json", &report)?;
    }
    Ok(report)
}
