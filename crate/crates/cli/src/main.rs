use std::path::PathBuf;
use std::process::ExitCode;

use blockmorph::cli::{
    cmd_cluster, cmd_mutate, cmd_stats, cmd_verify, to_json, CliError, Overrides, RunConfig,
};
use clap::{Args, Parser, Subcommand};

/// Semantics-preserving corpus augmentation.
#[derive(Debug, Parser)]
#[command(name = "blockmorph", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Run configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Total mutation iterations allowed.
    #[arg(long, global = true)]
    budget_passes: Option<u64>,
    /// Stop after this many emitted samples.
    #[arg(long, global = true)]
    target: Option<usize>,
    /// Output directory; never the input corpus directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Augment a corpus and write it with a run report.
    Mutate {
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Compare two programs on seeded random inputs.
    Verify { original: PathBuf, mutated: PathBuf },
    /// Report the text-section clusters of a corpus.
    Cluster {
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Report family, block-change and pairwise-diff statistics.
    Stats {
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<i32, CliError> {
    let manifest = match &cli.command {
        Command::Mutate { manifest }
        | Command::Cluster { manifest }
        | Command::Stats { manifest } => manifest.clone(),
        Command::Verify { .. } => None,
    };
    let g = cli.global;
    let cfg = RunConfig::resolve(&Overrides {
        config: g.config,
        seed: g.seed,
        budget_passes: g.budget_passes,
        target: g.target,
        out: g.out,
        jobs: g.jobs,
        manifest,
    })?;
    let (json, code) = match &cli.command {
        Command::Mutate { .. } => (to_json(&cmd_mutate(&cfg)?), 0),
        Command::Verify { original, mutated } => {
            let r = cmd_verify(original, mutated, &cfg)?;
            (to_json(&r), r.exit_code())
        }
        Command::Cluster { .. } => (to_json(&cmd_cluster(&cfg)?), 0),
        Command::Stats { .. } => (to_json(&cmd_stats(&cfg)?), 0),
    };
    print!("{json}");
    Ok(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("blockmorph: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
