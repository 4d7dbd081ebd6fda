//! `manifest.json`: the arguments, configuration and content hashes of one run.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Arguments after the program name, without `--threads` and `--out`.
    pub argv: Vec<String>,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    /// Input path as given → SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Path relative to the output directory → SHA-256.
    pub artifacts: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<(), CliError> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::io(dir, e))?;
    entries.sort_by_key(|e| e.path());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            walk(root, &p, out)?;
        } else {
            let rel = p.strip_prefix(root).expect("walked under root").to_string_lossy().replace('\\', "/");
            if rel != "manifest.json" {
                out.insert(rel, sha256_file(&p)?);
            }
        }
    }
    Ok(())
}

impl Manifest {
    pub fn new(command: &str, argv: Vec<String>) -> Self {
        Self {
            tool: "sparsesplat".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            argv,
            seed: None,
            config: serde_json::Value::Null,
            inputs: BTreeMap::new(),
            artifacts: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        if path.is_dir() {
            let mut files = BTreeMap::new();
            walk(path, path, &mut files)?;
            for (rel, h) in files {
                self.inputs.insert(format!("{}/{rel}", path.display()), h);
            }
        } else {
            self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        }
        Ok(())
    }

    /// Hashes everything under `out` and writes `out/manifest.json`.
    pub fn finish(mut self, out: &Path) -> Result<(), CliError> {
        self.artifacts.clear();
        walk(out, out, &mut self.artifacts)?;
        let text = serde_json::to_string_pretty(&self).map_err(CliError::json)?;
        let path = out.join("manifest.json");
        fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(CliError::json)
    }
}
