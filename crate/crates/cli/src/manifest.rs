//! Run manifests: the resolved settings of every command that writes files.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Serialize)]
struct Manifest<'a, A: Serialize, E: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    arguments: &'a A,
    #[serde(skip_serializing_if = "Option::is_none")]
    resolved: Option<&'a E>,
}

/// Writes `manifest.toml` into `dir`. `resolved` carries anything derived
/// from the arguments, such as a loaded configuration or diagnostics.
pub fn write_manifest<A: Serialize, E: Serialize>(
    dir: &Path,
    command: &'static str,
    arguments: &A,
    resolved: Option<&E>,
) -> Result<()> {
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command,
        arguments,
        resolved,
    };
    let text = toml::to_string(&manifest).context("serializing the manifest")?;
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}
