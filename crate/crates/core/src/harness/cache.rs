//! Checkpoint reuse for expensive quantum evolutions.
//!
//! With `MFLAB_CACHE=<dir>` set, evolved wave functions are stored as
//! `MFQ1` files next to a JSON sidecar holding the config hash. A later run
//! reuses them only when the hash matches; any other checkpoint is refused
//! and recomputed.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::report::write_atomic;
use crate::error::{Error, Result};
use crate::quantum::{read_checkpoint, write_checkpoint, WaveFunction, DEFAULT_AMPLITUDE_CAP};

pub const CACHE_ENV: &str = "MFLAB_CACHE";

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    config_hash: String,
    key: String,
    count: usize,
}

#[derive(Debug, Clone)]
pub struct CheckpointCache {
    dir: PathBuf,
}

impl CheckpointCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn from_env() -> Option<Self> {
        std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()).map(Self::new)
    }

    fn sidecar(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    fn state(&self, key: &str, i: usize) -> PathBuf {
        self.dir.join(format!("{key}.{i}.mfq"))
    }

    /// The stored sequence under `key`, if it was written for `hash`.
    pub fn load(&self, key: &str, hash: &str) -> Result<Option<Vec<WaveFunction>>> {
        let path = self.sidecar(key);
        if !path.exists() {
            return Ok(None);
        }
        let side: Sidecar = serde_json::from_slice(&std::fs::read(&path)?)?;
        if side.config_hash != hash || side.key != key {
            return Err(Error::Artifact(format!(
                "checkpoint '{key}' was written for config {}, not {hash}",
                side.config_hash
            )));
        }
        let mut out = Vec::with_capacity(side.count);
        for i in 0..side.count {
            let f = File::open(self.state(key, i))?;
            out.push(read_checkpoint(BufReader::new(f), DEFAULT_AMPLITUDE_CAP)?);
        }
        Ok(Some(out))
    }

    pub fn store(&self, key: &str, hash: &str, states: &[WaveFunction]) -> Result<()> {
        std::fs::create_dir_all(&self.dir)?;
        for (i, psi) in states.iter().enumerate() {
            let path = self.state(key, i);
            let tmp = path.with_extension("mfq.tmp");
            write_checkpoint(psi, BufWriter::new(File::create(&tmp)?))?;
            std::fs::rename(&tmp, &path)?;
        }
        let side = Sidecar {
            config_hash: hash.into(),
            key: key.into(),
            count: states.len(),
        };
        write_atomic(&self.sidecar(key), &serde_json::to_vec_pretty(&side)?)
    }

    /// Loads the sequence under `key` or computes and stores it. Refused
    /// checkpoints are reported through `warnings` and recomputed.
    pub fn get_or_compute(
        &self,
        key: &str,
        hash: &str,
        warnings: &mut Vec<String>,
        compute: impl FnOnce() -> Result<Vec<WaveFunction>>,
    ) -> Result<Vec<WaveFunction>> {
        match self.load(key, hash) {
            Ok(Some(states)) => {
                log::info!("reusing checkpoint '{key}'");
                return Ok(states);
            }
            Ok(None) => {}
            Err(e) => warnings.push(format!("refused checkpoint: {e}")),
        }
        let states = compute()?;
        self.store(key, hash, &states)?;
        Ok(states)
    }
}

/// Runs `compute` through the cache when one is configured.
pub(crate) fn cached(
    cache: Option<&CheckpointCache>,
    key: &str,
    hash: &str,
    warnings: &mut Vec<String>,
    compute: impl FnOnce() -> Result<Vec<WaveFunction>>,
) -> Result<Vec<WaveFunction>> {
    match cache {
        Some(c) => c.get_or_compute(key, hash, warnings, compute),
        None => compute(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::SpatialGrid;

    #[test]
    fn reuse_and_refusal() {
        let dir = tempfile::tempdir().unwrap();
        let cache = CheckpointCache::new(dir.path());
        let g = SpatialGrid::new(8, 3.0).unwrap();
        let psi = WaveFunction::gaussian_packet(g, 1.0, 0.0, 0.5, 0.4).unwrap();
        let mut warnings = Vec::new();
        let mut calls = 0;
        let first = cache
            .get_or_compute("k", "h1", &mut warnings, || {
                calls += 1;
                Ok(vec![psi.clone(), psi.clone()])
            })
            .unwrap();
        let again = cache
            .get_or_compute("k", "h1", &mut warnings, || {
                calls += 1;
                Ok(vec![])
            })
            .unwrap();
        assert_eq!(calls, 1);
        assert_eq!(first, again);
        assert!(matches!(cache.load("k", "h2"), Err(Error::Artifact(_))));
        let other = cache
            .get_or_compute("k", "h2", &mut warnings, || Ok(vec![psi.clone()]))
            .unwrap();
        assert_eq!(other.len(), 1);
        assert_eq!(warnings.len(), 1);
    }
}
