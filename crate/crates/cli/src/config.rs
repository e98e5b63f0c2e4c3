//! TOML config overlay and flag merging.
//!
//! Every subcommand accepts `--config file.toml` holding flat key/value
//! pairs named after its long flags; explicitly passed flags win. Unknown
//! keys are rejected before any work starts.

use std::path::Path;

use serde::de::DeserializeOwned;

use certshift::smoothing::SmoothingSpec;
use certshift::transform::TransformKind;

use crate::error::CliError;

#[derive(Debug, Default)]
pub struct Overlay {
    table: toml::value::Table,
}

impl Overlay {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let table: toml::value::Table = toml::from_str(&text).map_err(|e| {
            CliError::Config(format!("config {} is not valid TOML: {e}", path.display()))
        })?;
        Ok(Self { table })
    }

    /// Rejects keys the current subcommand does not understand.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<(), CliError> {
        for key in self.table.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(CliError::Config(format!(
                    "unknown config key {key:?}; this subcommand accepts: {}",
                    allowed.join(", ")
                )));
            }
        }
        Ok(())
    }

    pub fn get<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.table.get(key) {
            None => Ok(None),
            Some(value) => value
                .clone()
                .try_into()
                .map(Some)
                .map_err(|e| CliError::Config(format!("config key {key:?}: {e}"))),
        }
    }
}

/// Flag beats config beats default.
pub fn pick<T>(flag: Option<T>, config: Option<T>, default: T) -> T {
    flag.or(config).unwrap_or(default)
}

pub fn pick_opt<T>(flag: Option<T>, config: Option<T>) -> Option<T> {
    flag.or(config)
}

pub fn pick_required<T>(flag: Option<T>, config: Option<T>, key: &str) -> Result<T, CliError> {
    flag.or(config)
        .ok_or_else(|| CliError::Config(format!("missing required option --{key}")))
}

/// Smoothing flags shared by every subcommand that evaluates a model.
#[derive(Debug, Clone, clap::Args)]
pub struct SmoothingArgs {
    /// Noise family: gaussian-param, uniform-param, uniform-hue,
    /// channel-select, pixel-gaussian, or none.
    #[arg(long)]
    pub smoothing: Option<String>,
    /// Gaussian standard deviation (gaussian-param, pixel-gaussian).
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Uniform box width, noise drawn from [0, scale] (uniform-param).
    #[arg(long)]
    pub scale: Option<f64>,
    /// Transform space for parameter noise: color-shift, hue-shift, sv-shift.
    #[arg(long)]
    pub smoothing_transform: Option<String>,
    /// Rejected on sight: the degradation bound is paired to the smoothing
    /// family automatically and cannot be chosen independently.
    #[arg(long)]
    pub psi: Option<String>,
}

impl SmoothingArgs {
    pub const KEYS: [&'static str; 5] =
        ["smoothing", "sigma", "scale", "smoothing-transform", "psi"];

    pub fn resolve(&self, overlay: &Overlay) -> Result<Option<SmoothingSpec>, CliError> {
        if pick_opt(self.psi.clone(), overlay.get("psi")?).is_some() {
            return Err(CliError::Config(
                "--psi is rejected: the bound is derived from the smoothing family, \
                 never chosen by hand"
                    .to_owned(),
            ));
        }
        let family = pick(
            self.smoothing.clone(),
            overlay.get("smoothing")?,
            "none".to_owned(),
        );
        let sigma = pick_opt(self.sigma, overlay.get("sigma")?);
        let scale = pick_opt(self.scale, overlay.get("scale")?);
        let transform = pick_opt(
            self.smoothing_transform.clone(),
            overlay.get("smoothing-transform")?,
        );
        let need_sigma = || {
            sigma.ok_or_else(|| CliError::Config(format!("smoothing {family:?} needs --sigma")))
        };
        let need_transform = || {
            transform.clone().ok_or_else(|| {
                CliError::Config(format!("smoothing {family:?} needs --smoothing-transform"))
            })
        };
        let spec = match family.as_str() {
            "none" => return Ok(None),
            "gaussian-param" => {
                SmoothingSpec::gaussian_param(need_sigma()?, parse_transform(&need_transform()?)?)
            }
            "uniform-param" => {
                let a = scale.ok_or_else(|| {
                    CliError::Config("smoothing \"uniform-param\" needs --scale".to_owned())
                })?;
                SmoothingSpec::uniform_param(a, parse_transform(&need_transform()?)?)
            }
            "uniform-hue" => Ok(SmoothingSpec::uniform_hue()),
            "channel-select" => Ok(SmoothingSpec::channel_select()),
            "pixel-gaussian" => SmoothingSpec::pixel_gaussian(need_sigma()?),
            other => {
                return Err(CliError::Config(format!(
                    "unknown smoothing family {other:?}"
                )))
            }
        }
        .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(Some(spec))
    }
}

pub fn parse_transform(name: &str) -> Result<TransformKind, CliError> {
    match name {
        "color-shift" => Ok(TransformKind::ColorShift),
        "hue-shift" => Ok(TransformKind::HueShift),
        "sv-shift" => Ok(TransformKind::SvShift),
        "vector-translate" => Ok(TransformKind::VectorTranslate),
        other => Err(CliError::Config(format!("unknown transform {other:?}"))),
    }
}

/// Parses a comma-separated list of finite floats.
pub fn parse_float_list(text: &str, flag: &str) -> Result<Vec<f64>, CliError> {
    let values: Result<Vec<f64>, _> = text.split(',').map(|t| t.trim().parse::<f64>()).collect();
    let values =
        values.map_err(|e| CliError::Config(format!("--{flag} {text:?}: {e}")))?;
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Config(format!(
            "--{flag} needs a nonempty list of finite numbers"
        )));
    }
    Ok(values)
}
