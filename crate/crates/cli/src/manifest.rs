use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Record of one command invocation: resolved config, hashed inputs, outputs.
///
/// Written with status `running` before work starts and rewritten on success.
#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    /// sha256 of every input file, keyed by path.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub started_unix: u64,
    pub wall_clock_secs: Option<f64>,
    pub status: String,
    #[serde(skip)]
    path: PathBuf,
    #[serde(skip)]
    start: Option<Instant>,
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let mut f = fs::File::open(path).with_context(|| format!("{}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Input files of a graph directory (manifest plus referenced CSVs).
pub fn graph_files(dir: &Path) -> Vec<PathBuf> {
    let manifest = if dir.is_dir() { dir.join("manifest.json") } else { dir.to_path_buf() };
    let base = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut files = vec![manifest.clone()];
    if let Ok(text) = fs::read_to_string(&manifest) {
        if let Ok(m) = serde_json::from_str::<cfgd::graph::GraphManifest>(&text) {
            files.extend([m.edges, m.features, m.labels].into_iter().map(|f| base.join(f)));
        }
    }
    files
}

impl RunManifest {
    pub fn begin(
        out_dir: &Path,
        command: &str,
        config: serde_json::Value,
        seed: Option<u64>,
        inputs: &[PathBuf],
    ) -> anyhow::Result<Self> {
        fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
        let mut hashes = BTreeMap::new();
        for p in inputs {
            hashes.insert(p.display().to_string(), sha256_file(p)?);
        }
        let m = Self {
            command: command.into(),
            args: std::env::args().collect(),
            config,
            seed,
            inputs: hashes,
            outputs: Vec::new(),
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            wall_clock_secs: None,
            status: "running".into(),
            path: out_dir.join("manifest.json"),
            start: Some(Instant::now()),
        };
        m.write()?;
        Ok(m)
    }

    fn write(&self) -> anyhow::Result<()> {
        fs::write(&self.path, serde_json::to_string_pretty(self)?).with_context(|| format!("{}", self.path.display()))
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn finish(mut self) -> anyhow::Result<()> {
        self.wall_clock_secs = self.start.map(|s| s.elapsed().as_secs_f64());
        self.status = "ok".into();
        self.write()
    }
}
