//! Command-line runner for scenario files.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use trustpath::crypto::hash;
use trustpath::scenario::{parse_scenario, run_scenario, ScenarioError, Toggles};
use trustpath::tpm::golden_pcr;

#[derive(Parser)]
#[command(name = "trustpath", about = "Deterministic trusted-path simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and report pass/fail.
    Run {
        scenario_file: PathBuf,
        /// RNG seed; the trace is a pure function of (scenario, seed).
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the rendered event trace to this file.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Weaken the defense that pins the provisioned AIK.
        #[arg(long)]
        no_aik_pinning: bool,
        /// Weaken the defense that hides the TPM from the VM.
        #[arg(long)]
        expose_tpm_to_os: bool,
        /// Weaken the defense that intercepts VM debug instructions.
        #[arg(long)]
        disable_debug_tweak: bool,
    },
    /// Compute the reference PCR value for a list of hex boot stages.
    GoldenPcr {
        /// Hex-encoded stage blobs, hashed and extended in order.
        stages: Vec<String>,
    },
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run {
            scenario_file,
            seed,
            trace,
            no_aik_pinning,
            expose_tpm_to_os,
            disable_debug_tweak,
        } => {
            let text = match std::fs::read_to_string(&scenario_file) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("config error: cannot read {}: {e}", scenario_file.display());
                    return ExitCode::from(2);
                }
            };
            let cfg = match parse_scenario(&text) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("{e}");
                    return ExitCode::from(2);
                }
            };
            let toggles = Toggles {
                no_aik_pinning,
                expose_tpm_to_os,
                disable_debug_tweak,
            };
            let result = match run_scenario(&cfg, toggles, seed) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("{e}");
                    return ExitCode::from(2);
                }
            };
            if let Some(path) = trace {
                if let Err(e) = std::fs::write(&path, result.machine.trace.render()) {
                    eprintln!("config error: cannot write trace {}: {e}", path.display());
                    return ExitCode::from(2);
                }
            }
            if result.failures.is_empty() {
                println!("{}: pass (seed={seed})", cfg.name);
                ExitCode::SUCCESS
            } else {
                eprintln!("{}", ScenarioError::Expectation(result.failures.clone()));
                println!("{}: fail (seed={seed})", cfg.name);
                ExitCode::from(1)
            }
        }
        Command::GoldenPcr { stages } => {
            let mut measurements = Vec::new();
            for (i, s) in stages.iter().enumerate() {
                match hex::decode(s) {
                    Ok(b) => measurements.push(hash(&b)),
                    Err(e) => {
                        eprintln!("config error: stage {i}: bad hex: {e}");
                        return ExitCode::from(2);
                    }
                }
            }
            println!("{}", golden_pcr(&measurements).to_hex());
            ExitCode::SUCCESS
        }
    }
}
