use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sybil_lab::aggregators::AggregatorKind;
use sybil_lab::attacks::Strategy;
use sybil_lab::exec::Execution;
use sybil_lab::secagg::RoundTranscript;
use sybil_lab::sim::{resolve_out, run_scenario, sweep, ProtocolMode, RunOutput, ScenarioConfig};
use sybil_lab::{Error, Result};

#[derive(Parser)]
#[command(
    name = "sybil-lab",
    version,
    about = "Federated learning poisoning and secure aggregation laboratory"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_parser = ["plaintext", "crypto"])]
        mode: Option<String>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Re-check every proof and the aggregate recorded in a round transcript.
    VerifyTranscript {
        file: PathBuf,
    },
    /// Run the scenario once per value of a dotted config key.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Dotted key, e.g. `attack.sybils`.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    ListAggregators,
    ListAttacks,
}

fn execution(threads: Option<usize>) -> Result<Execution> {
    match threads {
        Some(0) => Err(Error::config("--threads", "must be at least 1")),
        Some(1) => Ok(Execution::Sequential),
        Some(_n) => {
            #[cfg(feature = "parallel")]
            rayon::ThreadPoolBuilder::new()
                .num_threads(_n)
                .build_global()
                .map_err(|e| Error::config("--threads", e.to_string()))?;
            Ok(Execution::Parallel)
        }
        None => Ok(Execution::Parallel),
    }
}

fn load(config: &Path) -> Result<ScenarioConfig> {
    ScenarioConfig::load(config)
}

fn report(out: &RunOutput, dir: &Path) {
    let s = &out.summary;
    println!(
        "rounds {}/{}  main_acc {:.4}  backdoor_acc {:.4}  rejected {}  aborted {}",
        s.rounds_run,
        s.rounds_planned,
        s.final_main_acc,
        s.final_backdoor_acc,
        s.total_rejected,
        s.aborted_rounds.len()
    );
    println!("checksum {}", s.final_checksum);
    println!("outputs in {}", dir.display());
}

fn abort_status(out: &RunOutput) -> ExitCode {
    if out.summary.stopped_on_abort {
        eprintln!("run stopped: round {} aborted", out.summary.rounds_run);
        ExitCode::from(3)
    } else {
        ExitCode::SUCCESS
    }
}

fn real_main(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            mode,
            threads,
        } => {
            let mut cfg = load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(m) = mode {
                cfg.mode = m.parse::<ProtocolMode>()?;
            }
            if let Some(o) = out {
                cfg.out = o;
            }
            cfg.validate()?;
            let exec = execution(threads)?;
            let dir = resolve_out(&cfg.out);
            let result = run_scenario(&cfg, Some(&dir), exec)?;
            report(&result, &dir);
            Ok(abort_status(&result))
        }
        Command::VerifyTranscript { file } => {
            let tr = RoundTranscript::read(&file)?;
            let rep = tr.reverify(Execution::Parallel);
            println!(
                "round {}  envelopes {}  included {}  profile {}",
                tr.round,
                tr.envelopes.len(),
                tr.included.len(),
                tr.profile.name()
            );
            for id in &rep.verdict_mismatches {
                println!("client {id}: recorded verdict differs from recomputed");
            }
            if rep.is_consistent() {
                println!("transcript consistent");
                Ok(ExitCode::SUCCESS)
            } else {
                println!("transcript INCONSISTENT (outcome matches: {})", rep.outcome_matches);
                Ok(ExitCode::from(1))
            }
        }
        Command::Sweep {
            config,
            param,
            values,
            out,
            threads,
        } => {
            let mut cfg = load(&config)?;
            if let Some(o) = out {
                cfg.out = o;
            }
            let exec = execution(threads)?;
            let dir = resolve_out(&cfg.out);
            let runs = sweep(&cfg, &param, &values, Some(&dir), exec)?;
            let mut code = ExitCode::SUCCESS;
            for (v, r) in &runs {
                println!("{param}={v}");
                report(r, &dir.join(format!("{param}={v}")));
                if r.summary.stopped_on_abort {
                    code = ExitCode::from(3);
                }
            }
            Ok(code)
        }
        Command::ListAggregators => {
            for k in AggregatorKind::ALL {
                println!("{:<20} {}", k.name(), k.summary());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::ListAttacks => {
            for s in Strategy::ALL {
                println!("{:<22} {}", s.name(), s.summary());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match real_main(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
