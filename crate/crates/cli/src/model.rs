//! Model persistence: a versioned JSON file holding the parameters of a
//! built-in model, or the command line of an external scorer.

use std::path::Path;

use serde::{Deserialize, Serialize};

use certshift::classifier::ClassifierHandle;
use certshift::manifest::RunManifest;

use crate::error::CliError;
use crate::output::write_bytes;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    /// "logistic", "nearest_centroid", or "external".
    pub kind: String,
    pub num_classes: u32,
    pub height: usize,
    pub width: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centroids: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<RunManifest>,
}

pub fn save_model(
    path: &Path,
    handle: &ClassifierHandle,
    manifest: &RunManifest,
) -> Result<(), CliError> {
    let (height, width) = handle.input_shape();
    let mut file = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        kind: String::new(),
        num_classes: handle.num_classes(),
        height,
        width,
        weights: None,
        bias: None,
        centroids: None,
        command: None,
        manifest: Some(manifest.clone()),
    };
    if let Some((weights, bias)) = handle.logistic_params() {
        file.kind = "logistic".to_owned();
        file.weights = Some(weights.to_vec());
        file.bias = Some(bias.to_vec());
    } else if let Some(centroids) = handle.centroid_params() {
        file.kind = "nearest_centroid".to_owned();
        file.centroids = Some(centroids.to_vec());
    } else {
        return Err(CliError::Config(
            "external handles have no parameters to save; write the model file by hand".to_owned(),
        ));
    }
    let mut text = serde_json::to_string_pretty(&file).expect("model serializes");
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn load_model(path: &Path) -> Result<ClassifierHandle, CliError> {
    let config = |detail: String| CliError::Config(format!("model {}: {detail}", path.display()));
    let bytes = std::fs::read(path).map_err(|e| config(e.to_string()))?;
    let file: ModelFile = serde_json::from_slice(&bytes).map_err(|e| config(e.to_string()))?;
    if file.format_version != MODEL_FORMAT_VERSION {
        return Err(config(format!(
            "format version {} is not {MODEL_FORMAT_VERSION}",
            file.format_version
        )));
    }
    let missing = |field: &str| config(format!("kind {:?} needs field {field:?}", file.kind));
    match file.kind.as_str() {
        "logistic" => ClassifierHandle::logistic(
            file.weights.ok_or_else(|| missing("weights"))?,
            file.bias.ok_or_else(|| missing("bias"))?,
            file.height,
            file.width,
        ),
        "nearest_centroid" => ClassifierHandle::nearest_centroid(
            file.centroids.ok_or_else(|| missing("centroids"))?,
            file.height,
            file.width,
        ),
        "external" => ClassifierHandle::external(
            file.command.ok_or_else(|| missing("command"))?,
            file.num_classes,
            file.height,
            file.width,
        ),
        other => return Err(config(format!("unknown model kind {other:?}"))),
    }
    .map_err(|e| config(e.to_string()))
}
