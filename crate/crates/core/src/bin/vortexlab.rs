use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vortexlab::harness::commands::{self, Command};

#[derive(Parser)]
#[command(name = "vortexlab", version, about = "Vortex-noise SPDE laboratory")]
struct Cli {
    /// JSON configuration for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed of `simulate` and `converge`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; all cores when omitted.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory, `out/<subcommand>` by default.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Covariance tables, structural checks and the ℓ-ladder hypotheses.
    Covariance,
    /// Pair integrals, Green-function asymptotics and far-field bounds.
    Asymptotics,
    /// One trajectory or an ensemble of the vortex-noise SPDE.
    Simulate,
    /// The deterministic eddy-viscosity limit equation.
    Limit,
    /// Ensemble study across the ℓ-ladder against the limit.
    Converge,
    /// Aggregates the summaries of earlier runs.
    Report,
    /// Re-runs the command recorded in a manifest and compares CSV digests.
    Replay {
        manifest: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let cmd = match &cli.cmd {
        Sub::Covariance => Command::Covariance,
        Sub::Asymptotics => Command::Asymptotics,
        Sub::Simulate => Command::Simulate,
        Sub::Limit => Command::Limit,
        Sub::Converge => Command::Converge,
        Sub::Report => Command::Report,
        Sub::Replay { manifest } => {
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out/replay"));
            return match commands::replay(manifest, &out) {
                Ok(r) => {
                    for (name, same) in &r.files {
                        println!("{} {name}", if *same { "identical" } else { "DIFFERS  " });
                    }
                    if r.identical() {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(1)
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            };
        }
    };
    let config = match &cli.config {
        None => None,
        Some(p) => match std::fs::read(p)
            .map_err(|e| e.to_string())
            .and_then(|b| serde_json::from_slice(&b).map_err(|e| e.to_string()))
        {
            Ok(v) => Some(v),
            Err(e) => {
                eprintln!("error: cannot read {}: {e}", p.display());
                return ExitCode::from(2);
            }
        },
    };
    let out = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("out").join(cmd.name()));
    match commands::run(cmd, config.as_ref(), cli.seed, &out) {
        Ok(o) => {
            for (k, v) in &o.verdicts {
                println!("{} {k}", if *v { "PASS" } else { "FAIL" });
            }
            println!("results in {}", out.display());
            if o.pass() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
