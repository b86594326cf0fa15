//! Run manifest: the completion marker written after every artifact of a
//! command has landed on disk. The run id is a content hash of the command,
//! its configuration, and its input files, so reruns of the same work carry
//! the same id and manifests differ only in their timing field.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{AimError, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub run_id: String,
    pub command: String,
    pub config: serde_json::Value,
    /// sha256 of each input file the command consumed, keyed by role.
    pub inputs: BTreeMap<String, String>,
    /// Artifact paths relative to the manifest's directory.
    pub artifacts: BTreeMap<String, PathBuf>,
    pub seconds: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(2 * digest.len());
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| AimError::io(&path.display().to_string(), e))?;
    Ok(sha256_hex(&bytes))
}

impl RunManifest {
    pub fn new(
        command: &str,
        config: serde_json::Value,
        inputs: BTreeMap<String, String>,
    ) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(command.as_bytes());
        hasher.update(b"\n");
        hasher.update(config.to_string().as_bytes());
        for (role, hash) in &inputs {
            hasher.update(b"\n");
            hasher.update(role.as_bytes());
            hasher.update(b":");
            hasher.update(hash.as_bytes());
        }
        let digest = hasher.finalize();
        let run_id: String = digest[..6].iter().map(|b| format!("{b:02x}")).collect();
        Self {
            version: MANIFEST_VERSION,
            run_id,
            command: command.to_string(),
            config,
            inputs,
            artifacts: BTreeMap::new(),
            seconds: 0.0,
        }
    }

    pub fn add_artifact(&mut self, role: &str, path: &Path) {
        let name = path
            .file_name()
            .map(PathBuf::from)
            .unwrap_or_else(|| path.to_path_buf());
        self.artifacts.insert(role.to_string(), name);
    }

    /// Verifies every artifact exists next to `path`, then writes the
    /// manifest there. Call this last.
    pub fn write(&self, path: &Path) -> Result<()> {
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        for (role, artifact) in &self.artifacts {
            let full = dir.join(artifact);
            if !full.exists() {
                return Err(AimError::Usage(format!(
                    "artifact {role} missing at {}",
                    full.display()
                )));
            }
        }
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| AimError::Format {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        fs::write(path, text + "\n").map_err(|e| AimError::io(&path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| AimError::io(&path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| AimError::Format {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_inputs() -> BTreeMap<String, String> {
        BTreeMap::from([("dataset".to_string(), "ab".repeat(32))])
    }

    #[test]
    fn run_id_depends_on_command_config_and_inputs() {
        let cfg = serde_json::json!({"episodes": 10});
        let base = RunManifest::new("train", cfg.clone(), sample_inputs());
        assert_eq!(base.run_id.len(), 12);
        assert!(base.run_id.chars().all(|c| c.is_ascii_hexdigit()));

        let same = RunManifest::new("train", cfg.clone(), sample_inputs());
        assert_eq!(base.run_id, same.run_id);

        let other_cmd = RunManifest::new("analyze", cfg.clone(), sample_inputs());
        assert_ne!(base.run_id, other_cmd.run_id);

        let other_cfg =
            RunManifest::new("train", serde_json::json!({"episodes": 11}), sample_inputs());
        assert_ne!(base.run_id, other_cfg.run_id);

        let other_inputs = RunManifest::new(
            "train",
            cfg,
            BTreeMap::from([("dataset".to_string(), "cd".repeat(32))]),
        );
        assert_ne!(base.run_id, other_inputs.run_id);
    }

    #[test]
    fn timing_does_not_change_the_run_id() {
        let mut a = RunManifest::new("train", serde_json::json!({}), BTreeMap::new());
        let b = RunManifest::new("train", serde_json::json!({}), BTreeMap::new());
        a.seconds = 123.4;
        assert_eq!(a.run_id, b.run_id);
    }

    #[test]
    fn write_requires_every_artifact_to_exist() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::new("train", serde_json::json!({}), BTreeMap::new());
        m.add_artifact("runlog", &dir.path().join("run_aim.jsonl"));
        let path = dir.path().join("manifest.json");
        assert!(matches!(m.write(&path), Err(AimError::Usage(_))));

        fs::write(dir.path().join("run_aim.jsonl"), b"{}\n").unwrap();
        m.write(&path).unwrap();
        let loaded = RunManifest::load(&path).unwrap();
        assert_eq!(loaded, m);
    }

    #[test]
    fn artifacts_are_stored_as_bare_file_names() {
        let mut m = RunManifest::new("analyze", serde_json::json!({}), BTreeMap::new());
        m.add_artifact("spectrum", Path::new("/some/deep/dir/spectrum.csv"));
        assert_eq!(
            m.artifacts.get("spectrum"),
            Some(&PathBuf::from("spectrum.csv"))
        );
    }

    #[test]
    fn file_hash_matches_byte_hash() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("blob");
        fs::write(&path, b"aim").unwrap();
        assert_eq!(sha256_file(&path).unwrap(), sha256_hex(b"aim"));
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
