//! Experiment harness: configuration, execution and reports.
//!
//! Every experiment checks one or more inequalities. Each checked instance
//! becomes a [`MetricRow`] `lhs ≤ rhs + tol`, and a [`Verdict`] passes when
//! it has at least one row and all of them hold, so verdicts can be
//! recomputed from `metrics.csv` alone.
//!
//! ```
//! use mflab::harness::{run_experiment, ExperimentConfig, ExperimentName};
//!
//! let mut cfg = ExperimentConfig::new(ExperimentName::WignerHusimiSuite);
//! cfg.grid = Some(mflab::harness::GridSpec { m: 64, l: 16.0 });
//! cfg.scale_list = Some(vec![0.5]);
//! cfg.trials = Some(2);
//! let report = run_experiment(&cfg).unwrap();
//! assert!(report.verdict("husimi_nonnegative").unwrap().passed);
//! ```

mod cache;
mod config;
mod experiments;
mod report;

use std::path::Path;

use rayon::prelude::*;

pub use cache::{CheckpointCache, CACHE_ENV};
pub use config::{ConfigFile, DensitySpec, ExperimentConfig, ExperimentName, GridSpec, PotentialSpec, SCHEMA_VERSION};
pub use experiments::DEFAULT_SEED;
pub use report::{emit_plots, read_metrics_csv, write_atomic, ExperimentReport, MetricRow, Provenance, Series, Verdict};

use crate::error::{Error, Result};

/// Checks that a job's parameters resolve and fit the resource caps,
/// without running it.
pub fn validate(cfg: &ExperimentConfig) -> Result<()> {
    experiments::plan(cfg).map(|_| ())
}

/// Runs one job with the checkpoint cache taken from the environment.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    run_experiment_with(cfg, CheckpointCache::from_env().as_ref())
}

/// Runs one job. Configuration and resource errors are returned as errors;
/// any other failure ends the run early and is recorded in
/// [`ExperimentReport::failure`]. When the job has an output directory, the
/// report and artifacts are written there.
pub fn run_experiment_with(cfg: &ExperimentConfig, cache: Option<&CheckpointCache>) -> Result<ExperimentReport> {
    let plan = experiments::plan(cfg)?;
    let seed = cfg.seed.unwrap_or(DEFAULT_SEED);
    let ctx = experiments::Ctx { cfg, seed, cache };
    let mut rec = report::Recorder::new();
    log::info!("running {}", cfg.job_name());
    let failure = match experiments::run(&plan, &ctx, &mut rec) {
        Ok(()) => None,
        Err(e) if e.is_config() || e.is_resource() => return Err(e),
        Err(e) => {
            log::error!("{} aborted: {e}", cfg.job_name());
            Some(e.to_string())
        }
    };
    let (mut report, files) = rec.finish(cfg, seed, failure);
    if let Some(dir) = report::job_dir(cfg) {
        report::write_report(&mut report, &files, &dir)?;
    }
    Ok(report)
}

/// Runs every job of a configuration file on `jobs` worker threads. Results
/// are in job order.
pub fn run_config(
    file: &ConfigFile,
    out: Option<&Path>,
    seed: Option<u64>,
    jobs: usize,
) -> Result<Vec<Result<ExperimentReport>>> {
    let resolved = file.resolved_jobs(out, seed);
    for job in &resolved {
        validate(job)?;
    }
    let cache = CheckpointCache::from_env();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} workers: {e}")))?;
    Ok(pool.install(|| {
        resolved
            .par_iter()
            .map(|job| run_experiment_with(job, cache.as_ref()))
            .collect()
    }))
}
