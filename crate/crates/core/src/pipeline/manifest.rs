use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::content_hash;

pub const MANIFEST: &str = "manifest.json";

/// Provenance record written next to every command output.
///
/// Paths are relative to the workspace root with `/` separators and the
/// record carries no timestamps, so identical runs give identical bytes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: serde_json::Value,
    /// Input path to content hash at the time of the run.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub version: String,
}

impl Manifest {
    pub fn new(stage: impl Into<String>, seed: u64, config: serde_json::Value) -> Result<Self> {
        let config_hash = content_hash(&serde_json::to_vec(&config)?);
        Ok(Manifest {
            stage: stage.into(),
            seed,
            config_hash,
            config,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        })
    }

    pub fn add_input(&mut self, root: &Path, path: &Path) -> Result<()> {
        self.inputs.insert(relative(root, path), file_hash(path)?);
        Ok(())
    }

    pub fn add_output(&mut self, root: &Path, path: &Path) -> Result<()> {
        self.outputs.insert(relative(root, path), file_hash(path)?);
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Inputs whose current content no longer matches the recorded hash.
    pub fn stale_inputs(&self, root: &Path) -> Vec<String> {
        self.inputs
            .iter()
            .filter(|(rel, hash)| file_hash(&root.join(rel)).ok().as_ref() != Some(*hash))
            .map(|(rel, _)| rel.clone())
            .collect()
    }
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(content_hash(&bytes))
}

/// `path` relative to `root`, `/`-separated; unrelated paths are kept whole.
pub fn relative(root: &Path, path: &Path) -> String {
    let rel: PathBuf = path.strip_prefix(root).map(Path::to_path_buf).unwrap_or_else(|_| path.to_path_buf());
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_changed_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let input = root.join("a.txt");
        std::fs::write(&input, "one").unwrap();
        let mut m = Manifest::new("test", 3, serde_json::json!({"k": 1})).unwrap();
        m.add_input(root, &input).unwrap();
        assert_eq!(m.inputs.keys().collect::<Vec<_>>(), ["a.txt"]);
        assert!(m.stale_inputs(root).is_empty());
        std::fs::write(&input, "two").unwrap();
        assert_eq!(m.stale_inputs(root), ["a.txt"]);
        std::fs::remove_file(&input).unwrap();
        assert_eq!(m.stale_inputs(root), ["a.txt"]);
    }

    #[test]
    fn round_trips_and_hashes_config() {
        let dir = tempfile::tempdir().unwrap();
        let a = Manifest::new("s", 1, serde_json::json!({"k": 1})).unwrap();
        let b = Manifest::new("s", 1, serde_json::json!({"k": 2})).unwrap();
        assert_ne!(a.config_hash, b.config_hash);
        a.write(dir.path()).unwrap();
        assert_eq!(Manifest::read(dir.path()).unwrap(), a);
    }
}
