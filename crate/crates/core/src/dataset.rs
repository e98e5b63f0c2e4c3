//! Dataset generation and file formats.
//!
//! The synthetic generator makes color-classification sets whose labels live
//! in hue, so the supported transformation families move samples across
//! decision-relevant features. Ingestion max-normalizes every image, which
//! the color-shift family requires.
//!
//! Native binary layout: header magic "SCRT", format version, then counts
//! and per-sample records, all little-endian; a JSON sidecar carries
//! provenance and an FNV-1a checksum of the binary payload.

use std::io::Read;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{hsv_to_rgb, max_normalize, HsvImage, Image, ImageError, TAU};
use crate::manifest::{fnv1a64, write_atomic};
use crate::smoothing::SeedPolicy;
use crate::transform::wrap_angle;

const MAGIC: &[u8; 4] = b"SCRT";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("need at least as many samples as classes, and at least 2 classes")]
    InvalidArgs,
    #[error("sample ids must be unique and dense from 0")]
    NonDenseIds,
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: u32, num_classes: u32 },
    #[error("image {id} is not max-normalized (global max {max})")]
    NotNormalized { id: u32, max: f32 },
    #[error("malformed dataset file: {detail}")]
    MalformedFile { detail: String },
    #[error("dataset format or checksum mismatch: {detail}")]
    VersionMismatch { detail: String },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One labeled sample. Ids are stable across subsetting and shuffling, and
/// key all per-sample noise seeds.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: u32,
    pub label: u32,
    pub image: Image,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    samples: Vec<Sample>,
    num_classes: u32,
}

impl Dataset {
    /// Validates ids (unique, dense from 0), label range, and per-image
    /// max-normalization.
    pub fn new(samples: Vec<Sample>, num_classes: u32) -> Result<Self, DatasetError> {
        if num_classes < 2 || samples.is_empty() {
            return Err(DatasetError::InvalidArgs);
        }
        let mut seen = vec![false; samples.len()];
        for s in &samples {
            let idx = s.id as usize;
            if idx >= samples.len() || seen[idx] {
                return Err(DatasetError::NonDenseIds);
            }
            seen[idx] = true;
            if s.label >= num_classes {
                return Err(DatasetError::LabelOutOfRange {
                    label: s.label,
                    num_classes,
                });
            }
            let max = s.image.global_max();
            if (f64::from(max) - 1.0).abs() > 1e-5 {
                return Err(DatasetError::NotNormalized { id: s.id, max });
            }
        }
        Ok(Self {
            samples,
            num_classes,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn num_classes(&self) -> u32 {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Sidecar manifest written next to a dataset file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub n: u32,
    pub height: u32,
    pub width: u32,
    pub num_classes: u32,
    pub provenance: String,
    pub checksum_fnv1a64: String,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.push_str(".meta.json");
    path.with_file_name(name)
}

/// Generates the synthetic color-classification dataset.
///
/// Class k's images have a dominant hue centered at 2*pi*k/classes with
/// per-image center jitter and per-pixel jitter in hue, saturation, and
/// brightness. Sampling is keyed by sample id, so the same seed always
/// produces the same dataset regardless of generation order.
pub fn generate_synthetic(
    n: u32,
    classes: u32,
    size: u32,
    seed: u64,
) -> Result<Dataset, DatasetError> {
    if classes < 2 || n < classes || size == 0 {
        return Err(DatasetError::InvalidArgs);
    }
    let policy = SeedPolicy::new(seed);
    let h = size as usize;
    let w = size as usize;
    let mut samples = Vec::with_capacity(n as usize);
    for id in 0..n {
        let label = id % classes;
        let mut rng = ChaCha12Rng::seed_from_u64(policy.sample_seed(id));
        let hue_center = TAU * f64::from(label) / f64::from(classes)
            + Normal::new(0.0f64, 0.10).unwrap().sample(&mut rng);
        let s_center: f64 = Normal::new(0.65, 0.10).unwrap().sample(&mut rng);
        let v_center: f64 = Normal::new(0.70, 0.10).unwrap().sample(&mut rng);
        let hue_pixel = Normal::new(0.0f64, 0.35).unwrap();
        let sv_pixel = Normal::new(0.0f64, 0.15).unwrap();
        let mut pixels = Vec::with_capacity(h * w * 3);
        for _ in 0..h * w {
            let hue = wrap_angle(hue_center + hue_pixel.sample(&mut rng));
            let s = (s_center + sv_pixel.sample(&mut rng)).clamp(0.05, 1.0);
            let v = (v_center + sv_pixel.sample(&mut rng)).clamp(0.05, 1.0);
            pixels.push(hue as f32);
            pixels.push(s as f32);
            pixels.push(v as f32);
        }
        let hsv = HsvImage::new(h, w, pixels)?;
        let image = max_normalize(&hsv_to_rgb(&hsv))?;
        samples.push(Sample { id, label, image });
    }
    Dataset::new(samples, classes)
}

/// Reads the standard CIFAR-10 binary layout: per record one label byte then
/// 3072 channel-major bytes. Pixels are scaled to [0, 1] and each image is
/// max-normalized.
pub fn read_cifar10_binary(path: &Path) -> Result<Dataset, DatasetError> {
    const RECORD: usize = 1 + 3 * 1024;
    let bytes = std::fs::read(path)?;
    if bytes.is_empty() || bytes.len() % RECORD != 0 {
        return Err(DatasetError::MalformedFile {
            detail: format!("file length {} is not a multiple of {RECORD}", bytes.len()),
        });
    }
    let n = bytes.len() / RECORD;
    let mut samples = Vec::with_capacity(n);
    for (i, record) in bytes.chunks_exact(RECORD).enumerate() {
        let label = u32::from(record[0]);
        if label >= 10 {
            return Err(DatasetError::MalformedFile {
                detail: format!("record {i} has label byte {label}"),
            });
        }
        let mut pixels = vec![0.0f32; 3 * 1024];
        for c in 0..3 {
            for p in 0..1024 {
                pixels[p * 3 + c] = f32::from(record[1 + c * 1024 + p]) / 255.0;
            }
        }
        let image = max_normalize(&Image::new(32, 32, pixels)?)?;
        samples.push(Sample {
            id: i as u32,
            label,
            image,
        });
    }
    Dataset::new(samples, 10)
}

/// Writes the dataset in the native binary format plus its JSON sidecar.
pub fn write_dataset(
    dataset: &Dataset,
    path: &Path,
    provenance: &str,
) -> Result<(), DatasetError> {
    let first = &dataset.samples()[0];
    let (h, w) = (first.image.height() as u32, first.image.width() as u32);
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    for v in [
        FORMAT_VERSION,
        dataset.len() as u32,
        h,
        w,
        dataset.num_classes(),
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for s in dataset.samples() {
        buf.extend_from_slice(&s.id.to_le_bytes());
        buf.extend_from_slice(&s.label.to_le_bytes());
        for &p in s.image.pixels() {
            buf.extend_from_slice(&p.to_le_bytes());
        }
    }
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        n: dataset.len() as u32,
        height: h,
        width: w,
        num_classes: dataset.num_classes(),
        provenance: provenance.to_owned(),
        checksum_fnv1a64: format!("{:016x}", fnv1a64(&buf)),
    };
    write_atomic(path, &buf)?;
    let sidecar = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_atomic(&sidecar_path(path), sidecar.as_bytes())?;
    Ok(())
}

/// Reads a native dataset file, verifying the sidecar checksum when the
/// sidecar is present.
pub fn read_dataset(path: &Path) -> Result<Dataset, DatasetError> {
    let bytes = std::fs::read(path)?;
    let sidecar = sidecar_path(path);
    if sidecar.exists() {
        let manifest: DatasetManifest = serde_json::from_slice(&std::fs::read(&sidecar)?)
            .map_err(|e| DatasetError::MalformedFile {
                detail: format!("sidecar: {e}"),
            })?;
        let actual = format!("{:016x}", fnv1a64(&bytes));
        if manifest.checksum_fnv1a64 != actual {
            return Err(DatasetError::VersionMismatch {
                detail: format!(
                    "checksum {actual} does not match sidecar {}",
                    manifest.checksum_fnv1a64
                ),
            });
        }
    }
    let mut cursor = std::io::Cursor::new(&bytes);
    let mut magic = [0u8; 4];
    cursor.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(DatasetError::MalformedFile {
            detail: "bad magic".to_owned(),
        });
    }
    let version = read_u32(&mut cursor)?;
    if version != FORMAT_VERSION {
        return Err(DatasetError::VersionMismatch {
            detail: format!("format version {version}, expected {FORMAT_VERSION}"),
        });
    }
    let n = read_u32(&mut cursor)?;
    let h = read_u32(&mut cursor)? as usize;
    let w = read_u32(&mut cursor)? as usize;
    let classes = read_u32(&mut cursor)?;
    let mut samples = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let id = read_u32(&mut cursor)?;
        let label = read_u32(&mut cursor)?;
        let mut pixels = vec![0.0f32; h * w * 3];
        for p in pixels.iter_mut() {
            let mut b = [0u8; 4];
            cursor.read_exact(&mut b).map_err(truncated)?;
            *p = f32::from_le_bytes(b);
        }
        samples.push(Sample {
            id,
            label,
            image: Image::new(h, w, pixels)?,
        });
    }
    let mut rest = Vec::new();
    cursor.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(DatasetError::MalformedFile {
            detail: format!("{} trailing bytes", rest.len()),
        });
    }
    Dataset::new(samples, classes)
}

fn read_u32(cursor: &mut std::io::Cursor<&Vec<u8>>) -> Result<u32, DatasetError> {
    let mut b = [0u8; 4];
    cursor.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn truncated(_: std::io::Error) -> DatasetError {
    DatasetError::MalformedFile {
        detail: "truncated file".to_owned(),
    }
}

/// Serializes one image to the wire form used by the external-scorer
/// protocol and dataset files: row-major little-endian 32-bit floats.
pub fn image_to_le_bytes(img: &Image) -> Vec<u8> {
    let mut out = Vec::with_capacity(img.pixels().len() * 4);
    for &p in img.pixels() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}
