//! Run manifests: the resolved configuration, seed, worker count, code
//! version and the digests of every artifact a run produced. Re-running
//! with the same manifest reproduces bit-identical artifacts for
//! deterministic subcommands and seeded Monte Carlo alike.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OutputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub workers: usize,
    pub version: String,
    pub wall_clock_ms: u128,
    pub outputs: Vec<OutputDigest>,
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hex::encode(hasher.finalize()))
}

pub struct ManifestBuilder {
    subcommand: String,
    config: serde_json::Value,
    seed: u64,
    workers: usize,
    started: std::time::Instant,
    outputs: Vec<PathBuf>,
}

impl ManifestBuilder {
    pub fn new(subcommand: &str, config: serde_json::Value, seed: u64, workers: usize) -> Self {
        ManifestBuilder {
            subcommand: subcommand.to_string(),
            config,
            seed,
            workers,
            started: std::time::Instant::now(),
            outputs: Vec::new(),
        }
    }

    pub fn record(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    pub fn write(self, out_dir: &Path) -> anyhow::Result<PathBuf> {
        let outputs = self
            .outputs
            .iter()
            .map(|p| {
                Ok(OutputDigest {
                    path: p
                        .strip_prefix(out_dir)
                        .unwrap_or(p)
                        .to_string_lossy()
                        .into_owned(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        let manifest = RunManifest {
            subcommand: self.subcommand,
            config: self.config,
            seed: self.seed,
            workers: self.workers,
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_clock_ms: self.started.elapsed().as_millis(),
            outputs,
        };
        let path = out_dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(&path, text)?;
        Ok(path)
    }
}
