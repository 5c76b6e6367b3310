use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{HarnessError, PhaseSeeds, Result, RunConfig};
use crate::envdata::StateNormalizer;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub phase: String,
    pub seconds: f64,
}

/// Record of one CLI run: what went in, what came out, and how long each
/// phase took.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: RunConfig,
    pub seeds: PhaseSeeds,
    /// SHA-256 over the command, config, seed and any input artifacts.
    pub input_hash: String,
    pub phases: Vec<PhaseTiming>,
    /// Output files, relative to the run directory.
    pub outputs: Vec<String>,
    /// Dataset state statistics used for normalization, when a dataset was involved.
    pub state_normalizer: Option<StateNormalizer>,
    pub warnings: Vec<String>,
}

/// Content hash of a run's inputs. Input files are hashed by content, so
/// the same bytes under a different path hash identically.
pub fn input_hash(command: &str, config: &RunConfig, seed: u64, inputs: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    h.update(command.as_bytes());
    h.update([0]);
    h.update(serde_json::to_vec(config).expect("config serializes"));
    h.update([0]);
    h.update(seed.to_le_bytes());
    for bytes in inputs {
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    }
    hex::encode(h.finalize())
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig, seed: u64, inputs: &[&[u8]]) -> Self {
        Self {
            command: command.to_string(),
            config: config.clone(),
            seeds: PhaseSeeds::split(seed),
            input_hash: input_hash(command, config, seed, inputs),
            phases: Vec::new(),
            outputs: Vec::new(),
            state_normalizer: None,
            warnings: Vec::new(),
        }
    }

    /// Runs `f` and records its wall-clock time under `phase`.
    pub fn time<T>(&mut self, phase: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f();
        self.phases.push(PhaseTiming {
            phase: phase.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        out
    }

    pub fn output(&mut self, name: &str) {
        if !self.outputs.iter().any(|o| o == name) {
            self.outputs.push(name.to_string());
        }
    }

    /// Writes `manifest.json` into `dir` after checking that every listed
    /// output exists there.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for name in &self.outputs {
            if !dir.join(name).is_file() {
                return Err(HarnessError::Argument(format!("manifest lists missing output {name}")));
            }
        }
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Argument(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_and_sensitive() {
        let cfg = RunConfig::default();
        let a = input_hash("gen-data", &cfg, 1, &[b"abc"]);
        assert_eq!(a, input_hash("gen-data", &cfg, 1, &[b"abc"]));
        assert_eq!(a.len(), 64);
        assert_ne!(a, input_hash("gen-data", &cfg, 2, &[b"abc"]));
        assert_ne!(a, input_hash("gen-data", &cfg, 1, &[b"abd"]));
        assert_ne!(a, input_hash("train-morse", &cfg, 1, &[b"abc"]));
        // length prefixes keep input boundaries apart
        assert_ne!(
            input_hash("x", &cfg, 0, &[b"ab", b"c"]),
            input_hash("x", &cfg, 0, &[b"a", b"bc"])
        );
    }

    #[test]
    fn write_requires_listed_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::new("gen-data", &RunConfig::default(), 0, &[]);
        m.output("missing.csv");
        assert!(m.write(dir.path()).is_err());
        fs::write(dir.path().join("missing.csv"), "x").unwrap();
        m.write(dir.path()).unwrap();
        let back = RunManifest::read(dir.path()).unwrap();
        assert_eq!(back.input_hash, m.input_hash);
        assert_eq!(back.outputs, m.outputs);
    }
}
