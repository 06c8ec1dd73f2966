use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};
use sqsglu::{Error, Result};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Clone, Debug, Serialize)]
pub struct InputHash {
    pub path: PathBuf,
    pub sha256: String,
}

/// Written to `<out>/manifest.json` when a run starts and rewritten when it ends.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<InputHash>,
    /// Paths relative to the output directory.
    pub outputs: Vec<PathBuf>,
    pub started_unix: f64,
    pub finished_unix: Option<f64>,
    pub status: String,
    #[serde(skip)]
    out_dir: PathBuf,
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = fs::File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

impl RunManifest {
    pub fn start(subcommand: &str, out_dir: &Path, config: impl Serialize, seeds: Vec<u64>) -> Result<Self> {
        fs::create_dir_all(out_dir)?;
        let m = RunManifest {
            subcommand: subcommand.to_string(),
            argv: std::env::args().collect(),
            config: serde_json::to_value(config).map_err(|e| Error::Format(e.to_string()))?,
            seeds,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_unix: now(),
            finished_unix: None,
            status: "running".into(),
            out_dir: out_dir.to_path_buf(),
        };
        m.write()?;
        Ok(m)
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        let sha256 = sha256_file(path)?;
        self.inputs.push(InputHash {
            path: path.to_path_buf(),
            sha256,
        });
        self.write()
    }

    /// Absolute path for a new output file, recorded in the manifest.
    pub fn output(&mut self, name: impl Into<PathBuf>) -> PathBuf {
        let rel: PathBuf = name.into();
        let full = self.out_dir.join(&rel);
        if !self.outputs.contains(&rel) {
            self.outputs.push(rel);
        }
        full
    }

    pub fn finish(mut self, ok: bool) -> Result<()> {
        self.finished_unix = Some(now());
        self.status = if ok { "ok" } else { "failed" }.into();
        self.write()
    }

    fn write(&self) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(self.out_dir.join(MANIFEST_NAME), text + "\n")?;
        Ok(())
    }
}
