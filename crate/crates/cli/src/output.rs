use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// First 8 bytes of the SHA-256 of `bytes`, as hex.
pub fn digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)[..8].iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("{}", path.display()))?;
    Ok(digest(&bytes))
}

/// Writes through a sibling temp file and renames it into place, so an
/// interrupted run never leaves a partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("{}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("{}", path.display()))?;
    Ok(())
}

/// Sends `bytes` to `out`, or to stdout when no path was given.
pub fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, bytes),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(bytes)?;
            stdout.flush()?;
            Ok(())
        }
    }
}

/// `rankings.jsonl` -> `rankings.jsonl.run.json`.
pub fn run_manifest_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_os_string();
    name.push(".run.json");
    PathBuf::from(name)
}

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub role: &'static str,
    pub path: String,
    pub digest: String,
}

#[derive(Debug, Serialize)]
pub struct StageTime {
    pub stage: &'static str,
    pub seconds: f64,
}

/// Provenance record written next to a result file.
#[derive(Debug, Serialize)]
pub struct RunManifest<C: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config: C,
    pub inputs: Vec<InputDigest>,
    pub output: InputDigest,
    pub stages: Vec<StageTime>,
}

impl<C: Serialize> RunManifest<C> {
    pub fn new(command: &'static str, config: C) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            config,
            inputs: Vec::new(),
            output: InputDigest {
                role: "output",
                path: String::new(),
                digest: String::new(),
            },
            stages: Vec::new(),
        }
    }

    pub fn input(&mut self, role: &'static str, path: &Path) -> Result<()> {
        self.inputs.push(InputDigest {
            role,
            path: path.display().to_string(),
            digest: file_digest(path)?,
        });
        Ok(())
    }

    pub fn stage(&mut self, stage: &'static str, started: std::time::Instant) {
        self.stages.push(StageTime {
            stage,
            seconds: started.elapsed().as_secs_f64(),
        });
    }

    /// Records the result file and writes the manifest beside it.
    pub fn finish(mut self, out: &Path, out_bytes: &[u8]) -> Result<()> {
        self.output = InputDigest {
            role: "output",
            path: out.display().to_string(),
            digest: digest(out_bytes),
        };
        let mut json = serde_json::to_vec_pretty(&self)?;
        json.push(b'\n');
        write_atomic(&run_manifest_path(out), &json)
    }
}
