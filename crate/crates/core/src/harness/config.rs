//! Experiment configuration files.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "seed": 7,
//!   "output_dir": "runs",
//!   "jobs": [
//!     { "experiment": "dobrushin", "trials": 20 },
//!     { "experiment": "joint_limit", "scale": 0.5, "n_list": [3] }
//!   ]
//! }
//! ```
//!
//! Unknown keys are rejected at every level. Fields left out take the
//! defaults of the chosen experiment (see [`ExperimentName::describe`]).

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::potentials::PotentialName;
use crate::sampling::{DensityName, FgEstimator};

pub const SCHEMA_VERSION: u32 = 1;

/// The experiments known to the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentName {
    KlimontovichEquivalence,
    Dobrushin,
    FournierGuillin,
    QuantumMeanfield,
    KlimontovichQuantum,
    WignerHusimiSuite,
    PseudoDistanceSuite,
    JointLimit,
}

impl ExperimentName {
    pub const ALL: [ExperimentName; 8] = [
        ExperimentName::KlimontovichEquivalence,
        ExperimentName::Dobrushin,
        ExperimentName::FournierGuillin,
        ExperimentName::QuantumMeanfield,
        ExperimentName::KlimontovichQuantum,
        ExperimentName::WignerHusimiSuite,
        ExperimentName::PseudoDistanceSuite,
        ExperimentName::JointLimit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentName::KlimontovichEquivalence => "klimontovich_equivalence",
            ExperimentName::Dobrushin => "dobrushin",
            ExperimentName::FournierGuillin => "fournier_guillin",
            ExperimentName::QuantumMeanfield => "quantum_meanfield",
            ExperimentName::KlimontovichQuantum => "klimontovich_quantum",
            ExperimentName::WignerHusimiSuite => "wigner_husimi_suite",
            ExperimentName::PseudoDistanceSuite => "pseudo_distance_suite",
            ExperimentName::JointLimit => "joint_limit",
        }
    }

    /// One-line summary with the default parameters.
    pub fn describe(self) -> &'static str {
        match self {
            ExperimentName::KlimontovichEquivalence => {
                "N-body flow vs Vlasov particle flow on identical atoms; gaussian V, d=3, N=64, t=1, dt=1e-3"
            }
            ExperimentName::Dobrushin => {
                "MK1 stability of Vlasov solutions, coupling growth and first moments; 100 pairs of 128 atoms, d=3"
            }
            ExperimentName::FournierGuillin => {
                "Empirical-measure MK1 rate, gaussian_phase in d=3, N=64..4096, 20 trials"
            }
            ExperimentName::QuantumMeanfield => {
                "N-body Schrödinger vs Hartree on the torus, cosine V, M=32, hbar=1, t=0.5, N=2..4"
            }
            ExperimentName::KlimontovichQuantum => {
                "Klimontovich duality on random states and the evolution-equation residual, M=32"
            }
            ExperimentName::WignerHusimiSuite => {
                "Wigner values, mass and Husimi positivity for excited, coherent and random states"
            }
            ExperimentName::PseudoDistanceSuite => {
                "Bounds on the quantum-classical transport cost: pinned coherent case and Töplitz sandwich"
            }
            ExperimentName::JointLimit => {
                "Joint mean-field and classical limit: MK2(f(t), Husimi(R_N:1(t)))² against its bound; d=1, N=3, eps=0.5"
            }
        }
    }
}

impl fmt::Display for ExperimentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentName::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    pub name: PotentialName,
    #[serde(default)]
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensitySpec {
    pub name: DensityName,
    #[serde(default)]
    pub params: Vec<f64>,
    /// Space dimension `d`; phase space is `R^d × R^d`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    /// Moment order; defaults to `2d`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
}

/// Periodic grid with `m` points on a box of side `l`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub m: usize,
    pub l: f64,
}

/// One job. Every field but `experiment` is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential: Option<PotentialSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<DensitySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_list: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    /// `ε` or `ħ`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    /// Several values of `ε` for the phase-space suites.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale_list: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    /// Stored snapshots after the initial time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outputs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimator: Option<FgEstimator>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentName) -> Self {
        Self {
            experiment,
            label: None,
            potential: None,
            density: None,
            n_list: None,
            grid: None,
            scale: None,
            scale_list: None,
            t_end: None,
            dt: None,
            outputs: None,
            trials: None,
            estimator: None,
            seed: None,
            output_dir: None,
        }
    }

    /// Name of the job's output directory.
    pub fn job_name(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.experiment.to_string())
    }

    /// SHA-256 of the job's canonical JSON, output directory excluded.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.output_dir = None;
        let bytes = serde_json::to_vec(&canon).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// A configuration file: shared defaults and a list of jobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub jobs: Vec<ExperimentConfig>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ConfigFile = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        if cfg.jobs.is_empty() {
            return Err(Error::Config("no jobs".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Jobs with the file-level seed and output directory filled in, then the
    /// overrides applied. Output directories get one subdirectory per job,
    /// with numeric suffixes keeping repeated names apart.
    pub fn resolved_jobs(&self, out: Option<&Path>, seed: Option<u64>) -> Vec<ExperimentConfig> {
        let root = out.map(Path::to_path_buf).or_else(|| self.output_dir.clone());
        let mut seen = std::collections::HashMap::new();
        self.jobs
            .iter()
            .map(|job| {
                let mut job = job.clone();
                job.seed = seed.or(job.seed).or(self.seed);
                let name = job.job_name();
                let count = seen.entry(name.clone()).or_insert(0usize);
                *count += 1;
                let dir = if *count == 1 { name } else { format!("{name}-{count}") };
                job.output_dir = root.as_ref().map(|r| r.join(dir));
                job
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rejects() {
        let ok = r#"{"schema_version":1,"seed":3,"jobs":[{"experiment":"dobrushin","trials":4}]}"#;
        let cfg = ConfigFile::parse(ok).unwrap();
        assert_eq!(cfg.jobs[0].trials, Some(4));
        for bad in [
            r#"{"schema_version":1,"jobs":[{"experiment":"dobrushin","trails":4}]}"#,
            r#"{"schema_version":1,"jobs":[],"extra":1}"#,
            r#"{"schema_version":2,"jobs":[{"experiment":"dobrushin"}]}"#,
            r#"{"schema_version":1,"jobs":[{"experiment":"nope"}]}"#,
            r#"{"schema_version":1,"jobs":[]}"#,
            r#"{"schema_version":1,"jobs":[{"experiment":"dobrushin","potential":{"name":"gaussian","parms":[1]}}]}"#,
        ] {
            assert!(matches!(ConfigFile::parse(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn resolution_and_hash() {
        let text = r#"{"schema_version":1,"seed":3,"output_dir":"o","jobs":[
            {"experiment":"dobrushin"},{"experiment":"dobrushin"},{"experiment":"joint_limit","seed":9}]}"#;
        let cfg = ConfigFile::parse(text).unwrap();
        let jobs = cfg.resolved_jobs(None, None);
        assert_eq!(jobs[0].seed, Some(3));
        assert_eq!(jobs[2].seed, Some(9));
        assert_eq!(jobs[1].output_dir.as_deref(), Some(Path::new("o/dobrushin-2")));
        assert_eq!(jobs[0].hash(), jobs[1].hash());
        let over = cfg.resolved_jobs(Some(Path::new("x")), Some(5));
        assert_eq!(over[2].seed, Some(5));
        assert_eq!(over[0].output_dir.as_deref(), Some(Path::new("x/dobrushin")));
        assert_ne!(over[0].hash(), jobs[0].hash());
        assert_eq!("joint_limit".parse::<ExperimentName>().unwrap(), ExperimentName::JointLimit);
    }
}
