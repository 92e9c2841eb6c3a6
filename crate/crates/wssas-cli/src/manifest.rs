//! Run manifest and output-directory locking.
//!
//! Artifacts are immutable files; the manifest is the only file a step
//! mutates. Every artifact is recorded with a SHA-256 content digest, so
//! two runs can be compared for bit-identical output by comparing digest
//! sets. One subcommand at a time may hold an output directory (lock file).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;

pub const MANIFEST_FILE: &str = "manifest.json";
const LOCK_FILE: &str = ".lock";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub completed_at: String,
    pub artifacts: BTreeMap<String, ArtifactRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config: PipelineConfig,
    pub steps: BTreeMap<String, StepRecord>,
}

impl Manifest {
    pub fn load_or_new(out_dir: &Path, config: &PipelineConfig) -> Result<Self> {
        let path = out_dir.join(MANIFEST_FILE);
        if path.exists() {
            let raw = fs::read_to_string(&path)
                .with_context(|| format!("cannot read {}", path.display()))?;
            let manifest =
                serde_json::from_str(&raw).with_context(|| format!("corrupt {}", path.display()))?;
            Ok(manifest)
        } else {
            Ok(Self {
                config: config.clone(),
                steps: BTreeMap::new(),
            })
        }
    }

    pub fn save(&self, out_dir: &Path) -> Result<()> {
        let path = out_dir.join(MANIFEST_FILE);
        let raw = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, raw).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(())
    }

    /// A step is complete when it was recorded and all its artifacts still
    /// exist on disk.
    pub fn step_complete(&self, out_dir: &Path, step: &str) -> bool {
        self.steps.get(step).is_some_and(|record| {
            record
                .artifacts
                .values()
                .all(|a| out_dir.join(&a.path).exists())
        })
    }

    pub fn record_step(&mut self, out_dir: &Path, step: &str, files: &[&str]) -> Result<()> {
        let mut artifacts = BTreeMap::new();
        for file in files {
            let full = out_dir.join(file);
            let bytes = fs::read(&full)
                .with_context(|| format!("artifact {} missing after step", full.display()))?;
            artifacts.insert(
                (*file).to_owned(),
                ArtifactRecord {
                    path: (*file).to_owned(),
                    sha256: hex_digest(&bytes),
                },
            );
        }
        self.steps.insert(
            step.to_owned(),
            StepRecord {
                completed_at: chrono::Utc::now().to_rfc3339(),
                artifacts,
            },
        );
        self.save(out_dir)
    }

    /// All (artifact name, digest) pairs, the determinism fingerprint of a
    /// run.
    pub fn digest_set(&self) -> BTreeMap<String, String> {
        self.steps
            .values()
            .flat_map(|s| s.artifacts.iter())
            .map(|(name, a)| (name.clone(), a.sha256.clone()))
            .collect()
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

/// Exclusive lock on an output directory, released on drop.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(out_dir: &Path) -> Result<Self> {
        fs::create_dir_all(out_dir)
            .with_context(|| format!("cannot create {}", out_dir.display()))?;
        let path = out_dir.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                bail!(
                    "output directory {} is locked by another run (remove {} if stale)",
                    out_dir.display(),
                    path.display()
                )
            }
            Err(e) => Err(e).with_context(|| format!("cannot lock {}", out_dir.display())),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
