use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mflab::harness::{run_config, validate, ConfigFile, ExperimentName, ExperimentReport};
use mflab::Error;

const EXIT_FAIL: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_RESOURCE: u8 = 4;

#[derive(Parser)]
#[command(name = "mflab", version, about = "Mean-field and semiclassical limit experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every job of a configuration file.
    Run {
        config: PathBuf,
        /// Root of the output directories (one subdirectory per job).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed overriding the file and job seeds.
        #[arg(long)]
        seed: Option<u64>,
        /// Jobs run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Print the known experiments and their defaults.
    ListExperiments,
    /// Check a configuration file without running it.
    Validate { config: PathBuf },
}

fn exit_code(e: &Error) -> u8 {
    if e.is_resource() {
        EXIT_RESOURCE
    } else if e.is_config() {
        EXIT_CONFIG
    } else {
        EXIT_FAIL
    }
}

fn print_report(r: &ExperimentReport) {
    let status = if r.passed() { "PASS" } else { "FAIL" };
    println!("{status} {} ({})", r.label, r.experiment);
    for v in &r.verdicts {
        println!(
            "  {} {:<28} rows={:<5} worst_margin={:.3e}  [{}]",
            if v.passed { "ok  " } else { "FAIL" },
            v.check,
            v.rows,
            v.worst_margin,
            v.anchor
        );
    }
    for w in &r.warnings {
        println!("  warning: {w}");
    }
    if let Some(f) = &r.failure {
        println!("  aborted: {f}");
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::ListExperiments => {
            for e in ExperimentName::ALL {
                println!("{:<26} {}", e.as_str(), e.describe());
            }
            Ok(0)
        }
        Command::Validate { config } => ConfigFile::load(&config).and_then(|file| {
            for job in file.resolved_jobs(None, None) {
                validate(&job)?;
                println!("ok {}", job.job_name());
            }
            Ok(0)
        }),
        Command::Run {
            config,
            out,
            seed,
            jobs,
        } => ConfigFile::load(&config)
            .and_then(|file| run_config(&file, out.as_deref(), seed, jobs))
            .map(|results| {
                let mut code = 0;
                for r in results {
                    match r {
                        Ok(report) => {
                            print_report(&report);
                            if !report.passed() {
                                code = code.max(EXIT_FAIL);
                            }
                        }
                        Err(e) => {
                            eprintln!("error: {e}");
                            code = code.max(exit_code(&e));
                        }
                    }
                }
                code
            }),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
