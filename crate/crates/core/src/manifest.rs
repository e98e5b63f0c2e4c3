//! Run manifests and atomic output writing.
//!
//! Every artifact the tool emits embeds a manifest describing exactly how it
//! was produced: tool version, pinned generator, master seed, and the
//! effective parameters. Manifests contain no timestamps, so identical
//! configurations serialize to identical bytes and outputs can be compared
//! with a plain byte diff.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::smoothing::GENERATOR_NAME;

/// FNV-1a 64-bit hash; used for dataset checksums and manifest hashes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Provenance block embedded in every output file.
///
/// Parameters are kept in a sorted map so serialization order, and therefore
/// the manifest hash, is stable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub generator: String,
    pub command: String,
    pub master_seed: u64,
    pub parameters: BTreeMap<String, serde_json::Value>,
}

impl RunManifest {
    pub fn new(command: &str, master_seed: u64) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            generator: GENERATOR_NAME.to_owned(),
            command: command.to_owned(),
            master_seed,
            parameters: BTreeMap::new(),
        }
    }

    pub fn with_param(
        mut self,
        key: &str,
        value: impl Serialize,
    ) -> Result<Self, serde_json::Error> {
        self.parameters
            .insert(key.to_owned(), serde_json::to_value(value)?);
        Ok(self)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    /// Hash of the canonical JSON form.
    pub fn hash(&self) -> u64 {
        fnv1a64(self.to_json().as_bytes())
    }
}

/// Writes `contents` to `path` via a same-directory temporary file and
/// rename, so readers never observe a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let file_name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        file_name.to_string_lossy(),
        std::process::id()
    ));
    std::fs::write(&tmp, contents)?;
    match std::fs::rename(&tmp, path) {
        Ok(()) => Ok(()),
        Err(e) => {
            let _ = std::fs::remove_file(&tmp);
            Err(e)
        }
    }
}
