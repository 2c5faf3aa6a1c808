use std::path::{Path, PathBuf};

use callo::{Error, Result};
use serde::Serialize;
use serde_json::Value;

/// Everything needed to repeat a run: the exact command line, the parsed
/// arguments and every configuration resolved from them.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub argv: Vec<String>,
    pub seed: u64,
    pub threads: Option<usize>,
    pub args: Value,
    pub resolved: Value,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(command: &'static str, seed: u64, threads: Option<usize>, args: &impl Serialize) -> Self {
        Self {
            tool: "callo",
            version: env!("CARGO_PKG_VERSION"),
            command,
            argv: std::env::args().collect(),
            seed,
            threads,
            args: serde_json::to_value(args).expect("arguments serialize"),
            resolved: Value::Object(Default::default()),
            outputs: Vec::new(),
        }
    }

    pub fn resolve(&mut self, key: &str, value: impl Serialize) {
        if let Value::Object(map) = &mut self.resolved {
            map.insert(key.to_string(), serde_json::to_value(value).expect("config serializes"));
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join("run.json");
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| io(&path, e))
    }
}

pub fn io(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io(path, e))
}
