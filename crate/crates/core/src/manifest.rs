//! Run manifests: a JSON record of what a subcommand ran with, written
//! atomically next to its outputs.

use crate::Result;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config_path: Option<String>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub seed: Option<u64>,
    pub version: String,
    pub started_at: String,
    pub finished_at: String,
}

impl RunManifest {
    pub fn new(subcommand: &str) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            config_path: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            seed: None,
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: chrono::Utc::now().to_rfc3339(),
            finished_at: String::new(),
        }
    }

    /// Manifest path adjacent to an output file.
    pub fn path_for(output: &Path) -> PathBuf {
        let stem = output
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into());
        output.with_file_name(format!("{stem}.manifest.json"))
    }

    /// Stamps the end time and writes atomically next to `output`.
    pub fn write_next_to(mut self, output: &Path) -> Result<()> {
        self.finished_at = chrono::Utc::now().to_rfc3339();
        let path = Self::path_for(output);
        let text = serde_json::to_string_pretty(&self)?;
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(text.as_bytes())?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, &path)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn manifest_lands_next_to_the_output() {
        let dir = tempdir().unwrap();
        let out = dir.path().join("dataset.csv");
        let mut m = RunManifest::new("generate");
        m.outputs.push(out.display().to_string());
        m.seed = Some(42);
        m.write_next_to(&out).unwrap();
        let text = std::fs::read_to_string(dir.path().join("dataset.manifest.json")).unwrap();
        let back: RunManifest = serde_json::from_str(&text).unwrap();
        assert_eq!(back.subcommand, "generate");
        assert_eq!(back.seed, Some(42));
        assert!(!back.finished_at.is_empty());
    }
}
