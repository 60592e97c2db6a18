use std::fmt;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

/// Input that failed validation; maps to exit code 1.
#[derive(Debug)]
pub struct ValidationFailed(pub String);

impl fmt::Display for ValidationFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ValidationFailed {}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Writes to `path`, or to stdout when absent.
pub fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable value");
    s.push('\n');
    s
}

/// Records the command, its resolved seed and parameters next to its outputs.
pub fn write_manifest(
    dir: &Path,
    command: &str,
    seed: u64,
    params: serde_json::Value,
) -> Result<()> {
    let m = serde_json::json!({
        "command": command,
        "seed": seed,
        "version": env!("CARGO_PKG_VERSION"),
        "params": params,
    });
    write_text(&dir.join("manifest.json"), &to_json(&m))
}
