//! Per-run record of flags, file digests and timing, written next to the
//! main output as `<out>.manifest.json`.

use std::fs::File;
use std::io::{self, Read};
use std::path::Path;

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: &'static str,
    pub flags: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub exit_code: u8,
    /// Excluded from reproducibility comparisons.
    pub wall_time_secs: f64,
}

pub fn digest(path: &Path) -> io::Result<FileDigest> {
    let mut f = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut bytes = 0;
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        bytes += n as u64;
    }
    let sha256 = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256,
        bytes,
    })
}

impl RunManifest {
    pub fn new(subcommand: &'static str, flags: &impl Serialize) -> anyhow::Result<Self> {
        Ok(Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            subcommand,
            flags: serde_json::to_value(flags)?,
            inputs: Vec::new(),
            outputs: Vec::new(),
            seed: None,
            threads: None,
            exit_code: 0,
            wall_time_secs: 0.0,
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<(), splicequant::Error> {
        let d = digest(path).map_err(|e| splicequant::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        self.inputs.push(d);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> anyhow::Result<()> {
        self.outputs
            .push(digest(path).with_context(|| format!("cannot hash {}", path.display()))?);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
    }
}
