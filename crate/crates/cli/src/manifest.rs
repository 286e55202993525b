//! Run manifests written next to every artifact as `<artifact>.manifest.json`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    /// Wall-clock seconds per named phase.
    pub timings: BTreeMap<String, f64>,
    pub started_unix: u64,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut h = Sha256::new();
    io::copy(&mut f, &mut h)?;
    Ok(hex::encode(h.finalize()))
}

pub fn sidecar_path(artifact: &Path) -> PathBuf {
    let mut s = artifact.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// Collects manifest fields while a command runs.
pub struct Recorder {
    manifest: RunManifest,
    phase_start: Instant,
}

impl Recorder {
    pub fn new(command: &str) -> Self {
        let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        Self {
            manifest: RunManifest {
                command: command.to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                config: BTreeMap::new(),
                seed: None,
                inputs: Vec::new(),
                outputs: Vec::new(),
                timings: BTreeMap::new(),
                started_unix,
            },
            phase_start: Instant::now(),
        }
    }

    pub fn config(&mut self, key: &str, value: impl ToString) {
        self.manifest.config.insert(key.to_string(), value.to_string());
    }

    pub fn seed(&mut self, seed: u64) {
        self.manifest.seed = Some(seed);
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let sha256 = sha256_file(path)?;
        self.manifest.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256,
        });
        Ok(())
    }

    /// Records the time since the previous phase ended.
    pub fn phase(&mut self, name: &str) {
        let now = Instant::now();
        self.manifest
            .timings
            .insert(name.to_string(), (now - self.phase_start).as_secs_f64());
        self.phase_start = now;
    }

    /// Digests the outputs and writes one sidecar per output.
    pub fn finish(mut self, outputs: &[&Path]) -> Result<()> {
        for p in outputs {
            let sha256 = sha256_file(p)?;
            self.manifest.outputs.push(FileDigest {
                path: p.display().to_string(),
                sha256,
            });
        }
        for p in outputs {
            let path = sidecar_path(p);
            let mut w =
                BufWriter::new(File::create(&path).with_context(|| format!("cannot create {}", path.display()))?);
            serde_json::to_writer_pretty(&mut w, &self.manifest)?;
            writeln!(w)?;
            w.flush()?;
        }
        Ok(())
    }
}
