//! Output writing: every artifact embeds the run manifest, CSVs as leading
//! comment lines and JSON documents as a top-level field, and every file is
//! written atomically.

use std::path::Path;

use serde_json::json;

use certshift::manifest::{write_atomic, RunManifest};

use crate::error::{runtime, CliError};

/// Builds a manifest with the effective parameters already attached. Output
/// paths and thread counts stay out: they must not change result bytes.
pub fn manifest_with(
    command: &str,
    seed: u64,
    params: &[(&str, serde_json::Value)],
) -> RunManifest {
    let mut manifest = RunManifest::new(command, seed);
    for (key, value) in params {
        manifest
            .parameters
            .insert((*key).to_owned(), value.clone());
    }
    manifest
}

pub fn manifest_hash_hex(manifest: &RunManifest) -> String {
    format!("{:016x}", manifest.hash())
}

fn manifest_comment(manifest: &RunManifest) -> String {
    let compact = serde_json::to_string(manifest).expect("manifest serializes");
    format!(
        "# manifest: {compact}\n# manifest_hash: {}\n",
        manifest_hash_hex(manifest)
    )
}

pub fn render_csv(manifest: &RunManifest, header: &str, rows: &[String]) -> String {
    let mut out = manifest_comment(manifest);
    out.push_str(header);
    out.push('\n');
    for row in rows {
        out.push_str(row);
        out.push('\n');
    }
    out
}

pub fn write_csv(
    path: &Path,
    manifest: &RunManifest,
    header: &str,
    rows: &[String],
) -> Result<(), CliError> {
    write_bytes(path, render_csv(manifest, header, rows).as_bytes())
}

/// Writes `{"manifest": ..., <key>: <payload>}` as pretty JSON.
pub fn write_json(
    path: &Path,
    manifest: &RunManifest,
    key: &str,
    payload: impl serde::Serialize,
) -> Result<(), CliError> {
    let doc = json!({ "manifest": manifest, key: payload });
    let mut text = serde_json::to_string_pretty(&doc).expect("document serializes");
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn write_bytes(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    write_atomic(path, contents)
        .map_err(|e| runtime(format!("writing {}: {e}", path.display())))
}

/// Empty cell for a missing optional value.
pub fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
