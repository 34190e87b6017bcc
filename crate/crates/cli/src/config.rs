//! Config-file layering and repro stamps.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use liveness_core::audio_io::write_atomic;

/// Bad flags, config files or config values; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// `defaults` overlaid with the JSON object in `path`; unknown keys are rejected
/// by the target type.
pub fn layered<T: Serialize + DeserializeOwned>(defaults: &T, path: Option<&Path>) -> Result<T> {
    let mut value = serde_json::to_value(defaults)?;
    if let Some(path) = path {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config file {}: {e}", path.display())))?;
        let over: Value = serde_json::from_str(&text)
            .map_err(|e| usage(format!("config file {} is not valid JSON: {e}", path.display())))?;
        if !over.is_object() {
            return Err(usage(format!("config file {} must hold a JSON object", path.display())));
        }
        merge(&mut value, over);
    }
    serde_json::from_value(value).map_err(|e| {
        let src = path.map(|p| p.display().to_string()).unwrap_or_else(|| "defaults".into());
        usage(format!("invalid config in {src}: {e}"))
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// `dir/stem.suffix` next to a file output.
pub fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.{suffix}"))
}

/// Resolved configuration, seed and input digests of one run.
#[derive(Serialize)]
pub struct Stamp<'a, C: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub seed: u64,
    pub config: &'a C,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub inputs: BTreeMap<String, InputRecord>,
}

#[derive(Serialize, serde::Deserialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
}

impl<'a, C: Serialize> Stamp<'a, C> {
    pub fn new(command: &'a str, seed: u64, config: &'a C) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed,
            config,
            config_hash: None,
            inputs: BTreeMap::new(),
        }
    }

    pub fn input(mut self, role: &str, path: &Path) -> Result<Self> {
        self.inputs.insert(
            role.to_string(),
            InputRecord {
                path: path.display().to_string(),
                sha256: file_digest(path)?,
            },
        );
        Ok(self)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes()).with_context(|| format!("cannot write {}", path.display()))
}
