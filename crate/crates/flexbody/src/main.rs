use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use flexbody::{run, CliError, ExperimentConfig, Inputs, RunSpec, Scenario};

/// Runs one experiment scenario and writes CSV tables plus a JSON summary.
#[derive(Debug, Parser)]
#[command(name = "flexbody", version)]
struct Args {
    scenario: Scenario,
    /// JSON configuration; omitted fields take their defaults.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Sim-trained bundle (`sim_bundle.json` from train-sim).
    #[arg(long)]
    bundle: Option<PathBuf>,
    /// Fine-tuned bundle (`real_bundle.json` from fine-tune).
    #[arg(long)]
    fine_tuned_bundle: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = serde_json::json!({ "error": { "kind": "usage", "message": e.to_string() } });
            eprintln!("{err}");
            return ExitCode::from(2);
        }
    };
    match execute(args) {
        Ok(summary) => {
            println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(args: Args) -> Result<flexbody::Summary, CliError> {
    let config = ExperimentConfig::load(&args.config)?;
    run(&RunSpec {
        scenario: args.scenario,
        config,
        seed: args.seed,
        out: args.out,
        inputs: Inputs {
            bundle: args.bundle,
            fine_tuned_bundle: args.fine_tuned_bundle,
        },
    })
}
