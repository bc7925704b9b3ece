use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fluctlab::io::{load_config, rerun, run_command, Command, RunManifest, Suite};
use fluctlab::Result;

#[derive(Parser)]
#[command(
    name = "fluctlab",
    version,
    about = "Resolvent bounds and fluctuation fields for weakly asymmetric exclusion"
)]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "FLUCTLAB_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Two-point functions and time-averaged squares by Monte Carlo.
    Simulate(RunArgs),
    /// Symmetric-resolvent quadratic forms on the pair sector.
    Resolvent(RunArgs),
    /// Run one verification suite.
    Verify {
        #[arg(long)]
        suite: Suite,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Re-execute a run from its manifest and compare output digests.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn execute(cmd: Command, args: &RunArgs, workers: usize) -> Result<i32> {
    let mut cfg = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let outcome = run_command(cmd, &cfg, &args.out, workers)?;
    for o in &outcome.manifest.outputs {
        println!("{}  {}", o.sha256, args.out.join(&o.file).display());
    }
    if let Command::Verify(suite) = cmd {
        println!("{suite}: {}", if outcome.pass { "pass" } else { "FAIL" });
    }
    Ok(outcome.exit_code())
}

fn execute_rerun(manifest: &Path, out: &Path, workers: usize) -> Result<i32> {
    let m = RunManifest::load(manifest)?;
    let report = rerun(&m, out, workers)?;
    if report.identical {
        println!("all {} outputs byte-identical", m.outputs.len());
        Ok(0)
    } else {
        for f in &report.mismatched {
            println!("differs: {f}");
        }
        Ok(1)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let workers = cli
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    let result = match &cli.cmd {
        Cmd::Simulate(a) => execute(Command::Simulate, a, workers),
        Cmd::Resolvent(a) => execute(Command::Resolvent, a, workers),
        Cmd::Verify { suite, run } => execute(Command::Verify(*suite), run, workers),
        Cmd::Rerun { manifest, out } => execute_rerun(manifest, out, workers),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
