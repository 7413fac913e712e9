//! Run manifests: a JSON record of what ran, with which settings, reading
//! and producing which files. Written last so the artifact hashes cover the
//! final bytes of every output.

use std::path::{Path, PathBuf};
use std::time::Instant;

use agreesum_core::error::{CoreError, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// One emitted file with the digest of its final contents.
#[derive(Debug, Serialize)]
pub struct ArtifactRef {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Echo of the effective (post-override) configuration.
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<ArtifactRef>,
    pub duration_seconds: f64,
}

/// Collects manifest fields while a subcommand runs; `write` stamps the
/// duration, hashes the outputs, and lands the file atomically.
pub struct ManifestBuilder {
    subcommand: String,
    seed: Option<u64>,
    config: serde_json::Value,
    inputs: Vec<String>,
    outputs: Vec<PathBuf>,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(subcommand: &str) -> Self {
        ManifestBuilder {
            subcommand: subcommand.to_string(),
            seed: None,
            config: serde_json::Value::Null,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    pub fn config(&mut self, value: serde_json::Value) {
        self.config = value;
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.display().to_string());
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    pub fn write(self, manifest_path: &Path) -> Result<()> {
        let outputs = self
            .outputs
            .iter()
            .map(|p| {
                Ok(ArtifactRef {
                    path: p.display().to_string(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest = RunManifest {
            subcommand: self.subcommand,
            seed: self.seed,
            config: self.config,
            inputs: self.inputs,
            outputs,
            duration_seconds: self.started.elapsed().as_secs_f64(),
        };
        write_json_atomic(&manifest, manifest_path)
    }
}

/// Hex SHA-256 of a file's contents.
pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| CoreError::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

/// Hex SHA-256 of a string (cache keys, scorer identities).
pub fn sha256_str(text: &str) -> String {
    hex(&Sha256::digest(text.as_bytes()))
}

fn hex(digest: &[u8]) -> String {
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Pretty-printed JSON landed via a same-directory temp file and rename, so
/// a crash mid-write never leaves a truncated file under the final name.
pub fn write_json_atomic<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| CoreError::Validation(format!("serializing {}: {e}", path.display())))?;
    bytes.push(b'\n');
    let mut tmp_name = path
        .file_name()
        .ok_or_else(|| CoreError::Argument(format!("{} has no file name", path.display())))?
        .to_owned();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    std::fs::write(&tmp, &bytes).map_err(|e| CoreError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| CoreError::io(path, e))
}

/// `{path}{suffix}` as a sibling file — `model.ckpt` + `.manifest.json` →
/// `model.ckpt.manifest.json`.
pub fn sibling(path: &Path, suffix: &str) -> Result<PathBuf> {
    let mut name = path
        .file_name()
        .ok_or_else(|| CoreError::Argument(format!("{} has no file name", path.display())))?
        .to_owned();
    name.push(suffix);
    Ok(path.with_file_name(name))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_hashes_outputs_and_lands_atomically() {
        let dir = tempfile::tempdir().unwrap();
        let artifact = dir.path().join("a.txt");
        std::fs::write(&artifact, "hello").unwrap();

        let mut builder = ManifestBuilder::new("demo");
        builder.seed(7);
        builder.config(serde_json::json!({"k": 1}));
        builder.input(Path::new("in.jsonl"));
        builder.output(&artifact);
        let manifest_path = dir.path().join("manifest.json");
        builder.write(&manifest_path).unwrap();

        let text = std::fs::read_to_string(&manifest_path).unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value["subcommand"], "demo");
        assert_eq!(value["seed"], 7);
        assert_eq!(value["inputs"][0], "in.jsonl");
        // Known digest of "hello".
        assert_eq!(
            value["outputs"][0]["sha256"],
            "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"
        );
        assert!(value["duration_seconds"].as_f64().unwrap() >= 0.0);
        // No temp file left behind.
        assert!(!dir.path().join("manifest.json.tmp").exists());
    }

    #[test]
    fn sibling_appends_to_the_full_file_name() {
        let p = sibling(Path::new("out/model.ckpt"), ".manifest.json").unwrap();
        assert_eq!(p, Path::new("out/model.ckpt.manifest.json"));
        assert!(sibling(Path::new("/"), ".x").is_err());
    }
}
