use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;

use treeprobe::conllu::{parse_conllu, Treebank};
use treeprobe::embeddings::{read_skip_list, read_store, EmbeddingStore};

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn read_treebank(path: &Path) -> Result<Treebank> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    parse_conllu(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingStore> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_store(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

pub fn read_skips(path: Option<&Path>) -> Result<std::collections::HashSet<String>> {
    match path {
        None => Ok(Default::default()),
        Some(p) => {
            let file = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            Ok(read_skip_list(BufReader::new(file))?)
        }
    }
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Record of one command invocation, written next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: Option<u64>,
    pub toolkit_version: &'static str,
    pub started_unix: u64,
    pub finished_unix: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_clock_seconds: Option<f64>,
    /// Command arguments as given.
    pub arguments: Vec<String>,
}

impl RunManifest {
    pub fn start(command: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            config_path: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            seed: None,
            toolkit_version: env!("CARGO_PKG_VERSION"),
            started_unix: unix_now(),
            finished_unix: 0,
            wall_clock_seconds: None,
            arguments: std::env::args().skip(1).collect(),
        }
    }

    /// Writes an output file atomically and records it.
    pub fn emit(&mut self, path: PathBuf, bytes: &[u8]) -> Result<()> {
        atomic_write(&path, bytes)?;
        self.outputs.push(path);
        Ok(())
    }

    pub fn finish(mut self, dir: &Path) -> Result<()> {
        self.finished_unix = unix_now();
        let path = dir.join(format!("{}.manifest.json", self.command));
        self.outputs.push(path.clone());
        let json = serde_json::to_string_pretty(&self)?;
        atomic_write(&path, format!("{json}\n").as_bytes())
    }
}
