//! Run manifests: every output directory records the resolved configuration,
//! seed, tool version, and digests of the input files that shaped the run.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub tool_version: String,
    pub input_digests: std::collections::BTreeMap<String, String>,
    pub started: String,
    pub finished: String,
}

pub struct ManifestBuilder {
    subcommand: String,
    config: serde_json::Value,
    seed: u64,
    inputs: Vec<PathBuf>,
    started: chrono::DateTime<chrono::Utc>,
}

impl ManifestBuilder {
    pub fn new(subcommand: &str, config: serde_json::Value, seed: u64) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            config,
            seed,
            inputs: Vec::new(),
            started: chrono::Utc::now(),
        }
    }

    pub fn input(&mut self, path: &Path) -> &mut Self {
        self.inputs.push(path.to_path_buf());
        self
    }

    /// Write `manifest.json` into the output directory.
    pub fn write(self, out_dir: &Path) -> io::Result<()> {
        let mut digests = std::collections::BTreeMap::new();
        for p in &self.inputs {
            let bytes = fs::read(p)?;
            digests.insert(p.display().to_string(), format!("{:x}", Sha256::digest(&bytes)));
        }
        let manifest = RunManifest {
            subcommand: self.subcommand,
            config: self.config,
            seed: self.seed,
            tool_version: format!(
                "{} (build {})",
                env!("CARGO_PKG_VERSION"),
                env!("BUILD_DIGEST")
            ),
            input_digests: digests,
            started: self.started.to_rfc3339(),
            finished: chrono::Utc::now().to_rfc3339(),
        };
        let file = fs::File::create(out_dir.join("manifest.json"))?;
        serde_json::to_writer_pretty(io::BufWriter::new(file), &manifest)?;
        Ok(())
    }
}
