//! Certification engine: one-draw smoothed evaluation, confidence lower
//! bound, and the certified-accuracy curve eps -> max(0, p_lower - psi(eps)).
//!
//! The whole pipeline costs exactly one classifier invocation per sample.
//! Evaluation parallelizes over samples but records are keyed and ordered by
//! position, so results never depend on scheduling; external scorers are
//! sharded one subprocess per worker behind a shared invocation counter.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{ClassifierError, ClassifierHandle};
use crate::dataset::Sample;
use crate::image::Image;
use crate::manifest::fnv1a64;
use crate::psi::{psi_eval, psi_inverse, PsiError, PsiFn};
use crate::smoothing::{randomize_input, SeedPolicy, SmoothingError, SmoothingSpec};
use crate::statbounds::{auto_lower_bound, BoundKind, StatError};
use crate::transform::{apply_transform, transform_distance, ParamVector, TransformError, TransformKind};

#[derive(Debug, Error)]
pub enum CertifyError {
    #[error("no score records to certify")]
    EmptyRecords,
    #[error("shift pair for sample {sample_id} has mismatched labels {clean} vs {shifted}")]
    LabelMismatch { sample_id: u32, clean: u32, shifted: u32 },
    #[error("per-pair distance must be finite and non-negative, got {0}")]
    InvalidDistance(f64),
    #[error("epsilon grid must be ascending, finite, and non-negative")]
    InvalidGrid,
    #[error("record lists must be nonempty and the same length ({clean} vs {shifted})")]
    UnpairedRecords { clean: usize, shifted: usize },
    #[error("parameter list has {params} entries for {samples} samples")]
    ParamCountMismatch { params: usize, samples: usize },
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Smoothing(#[from] SmoothingError),
    #[error(transparent)]
    Stat(#[from] StatError),
    #[error(transparent)]
    Psi(#[from] PsiError),
    #[error(transparent)]
    Transform(#[from] TransformError),
}

/// One Monte-Carlo draw of the smoothed score for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub sample_id: u32,
    pub label: u32,
    /// Raw classifier score on the randomized input, in [0, 1].
    pub score: f64,
    pub noise_seed: u64,
    /// Set when the randomization could not preserve the input's invariants
    /// (e.g. channel selection hit an all-zero channel). Aggregation counts
    /// such draws as 0.
    pub degenerate: bool,
}

impl ScoreRecord {
    /// Score as aggregation sees it: degenerate draws count as 0.
    pub fn effective_score(&self) -> f64 {
        if self.degenerate {
            0.0
        } else {
            self.score
        }
    }
}

/// Mean effective score of a record list.
pub fn mean_score(records: &[ScoreRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().map(ScoreRecord::effective_score).sum::<f64>() / records.len() as f64
}

/// The certified-accuracy curve with the metadata needed to reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateCurve {
    pub epsilons: Vec<f64>,
    pub lower_bounds: Vec<f64>,
    /// Confidence lower bound on E[h-bar] at level 1 - alpha.
    pub p_lower: f64,
    pub alpha: f64,
    pub n: u64,
    /// Success count when scores were binary; absent under Hoeffding.
    pub k: Option<u64>,
    pub bound_kind: BoundKind,
    pub psi: PsiFn,
    pub spec: Option<SmoothingSpec>,
    /// FNV-1a hash of the run manifest this curve was produced under, when
    /// run through the CLI.
    pub manifest_hash: Option<String>,
}

impl CertificateCurve {
    /// Curve value at eps: exact at grid points, conservative (lower
    /// neighbor) between them, 0 beyond the grid.
    pub fn value_at(&self, eps: f64) -> f64 {
        match psi_eval(self.psi, eps) {
            Ok(psi) => (self.p_lower - psi).max(0.0),
            Err(_) => 0.0,
        }
    }

    /// Content hash over the canonical JSON serialization; identical runs
    /// produce identical hashes.
    pub fn content_hash(&self) -> u64 {
        let json = serde_json::to_string(self).expect("curve serializes");
        fnv1a64(json.as_bytes())
    }

    pub fn with_manifest_hash(mut self, hash: String) -> Self {
        self.manifest_hash = Some(hash);
        self
    }
}

/// A coupled (clean, shifted) sample with its declared transform distance.
/// Construction enforces label consistency; cross-label pairs carry infinite
/// distance and are rejected outright.
#[derive(Debug, Clone)]
pub struct ShiftPair {
    pub sample_id: u32,
    pub label: u32,
    pub shifted: Image,
    pub distance: f64,
}

impl ShiftPair {
    pub fn new(
        clean: &Sample,
        shifted: Image,
        shifted_label: u32,
        distance: f64,
    ) -> Result<Self, CertifyError> {
        if clean.label != shifted_label {
            return Err(CertifyError::LabelMismatch {
                sample_id: clean.id,
                clean: clean.label,
                shifted: shifted_label,
            });
        }
        if !(distance.is_finite() && distance >= 0.0) {
            return Err(CertifyError::InvalidDistance(distance));
        }
        Ok(Self {
            sample_id: clean.id,
            label: clean.label,
            shifted,
            distance,
        })
    }
}

/// Applies one transform parameter per sample, returning the coupled pairs
/// with their per-pair distances ‖θᵢ‖.
pub fn shift_dataset(
    samples: &[Sample],
    kind: TransformKind,
    params: &[ParamVector],
) -> Result<Vec<ShiftPair>, CertifyError> {
    if params.len() != samples.len() {
        return Err(CertifyError::ParamCountMismatch {
            params: params.len(),
            samples: samples.len(),
        });
    }
    samples
        .iter()
        .zip(params)
        .map(|(s, theta)| {
            let shifted = apply_transform(kind, &s.image, theta)?;
            let d = transform_distance(kind, theta)?;
            ShiftPair::new(s, shifted, s.label, d)
        })
        .collect()
}

/// Seed stream for random shift parameters, disjoint from evaluation seeds.
const SHIFT_STREAM: u64 = 0x5348_4946;

/// Draws one transform parameter per id: isotropic random direction scaled
/// so every parameter has norm exactly `eps` (hence mean norm `eps`).
/// Draws are keyed by sample id, so assignments are order-independent.
pub fn random_shift_params(
    kind: TransformKind,
    components: usize,
    eps: f64,
    ids: &[u32],
    seeds: &SeedPolicy,
) -> Result<Vec<ParamVector>, CertifyError> {
    if !(eps.is_finite() && eps >= 0.0) {
        return Err(CertifyError::InvalidDistance(eps));
    }
    let dim = kind.param_len(components);
    let stream = seeds.stream(SHIFT_STREAM);
    ids.iter()
        .map(|&id| {
            let mut rng = ChaCha12Rng::seed_from_u64(stream.sample_seed(id));
            let mut values: Vec<f64> =
                (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = kind.param(values.clone())?.norm();
            if norm > 0.0 {
                let factor = eps / norm;
                for v in &mut values {
                    *v *= factor;
                }
            } else {
                values[0] = eps;
            }
            kind.param(values).map_err(Into::into)
        })
        .collect()
}

/// Converts pairs back into samples (shifted images, original ids/labels)
/// so they can run through the evaluation front end.
pub fn pairs_to_samples(pairs: &[ShiftPair]) -> Vec<Sample> {
    pairs
        .iter()
        .map(|p| Sample {
            id: p.sample_id,
            label: p.label,
            image: p.shifted.clone(),
        })
        .collect()
}

/// Mean declared distance: an upper bound on the 1-Wasserstein distance
/// between the empirical clean and shifted distributions, witnessed by the
/// identity coupling.
pub fn wasserstein_upper_bound(pairs: &[ShiftPair]) -> Result<f64, CertifyError> {
    if pairs.is_empty() {
        return Err(CertifyError::EmptyRecords);
    }
    Ok(pairs.iter().map(|p| p.distance).sum::<f64>() / pairs.len() as f64)
}

/// Smoothed evaluation: exactly one noise draw and one classifier call per
/// sample. Deterministic for a given seed policy regardless of thread count.
pub fn evaluate_smoothed(
    samples: &[Sample],
    handle: &ClassifierHandle,
    spec: &SmoothingSpec,
    seeds: &SeedPolicy,
) -> Result<Vec<ScoreRecord>, CertifyError> {
    if samples.is_empty() {
        return Err(CertifyError::EmptyRecords);
    }
    samples
        .par_iter()
        .map_init(
            || handle.clone_sharing_counter(),
            |local, s| {
                let noise_seed = seeds.sample_seed(s.id);
                let draw = randomize_input(&s.image, spec, noise_seed)?;
                let score = local.score(&draw.image, s.label)?;
                Ok(ScoreRecord {
                    sample_id: s.id,
                    label: s.label,
                    score,
                    noise_seed,
                    degenerate: draw.degenerate,
                })
            },
        )
        .collect()
}

/// Un-smoothed evaluation of the same samples; one classifier call each.
pub fn evaluate_plain(
    samples: &[Sample],
    handle: &ClassifierHandle,
) -> Result<Vec<ScoreRecord>, CertifyError> {
    if samples.is_empty() {
        return Err(CertifyError::EmptyRecords);
    }
    samples
        .par_iter()
        .map_init(
            || handle.clone_sharing_counter(),
            |local, s| {
                let score = local.score(&s.image, s.label)?;
                Ok(ScoreRecord {
                    sample_id: s.id,
                    label: s.label,
                    score,
                    noise_seed: 0,
                    degenerate: false,
                })
            },
        )
        .collect()
}

/// Builds the certificate: confidence lower bound on the smoothed accuracy,
/// then the curve eps -> max(0, p_lower - psi(eps)) over the grid.
pub fn certify(
    records: &[ScoreRecord],
    psi: PsiFn,
    alpha: f64,
    eps_grid: &[f64],
) -> Result<CertificateCurve, CertifyError> {
    if records.is_empty() {
        return Err(CertifyError::EmptyRecords);
    }
    if eps_grid.is_empty()
        || eps_grid.iter().any(|e| !e.is_finite() || *e < 0.0)
        || eps_grid.windows(2).any(|w| w[0] > w[1])
    {
        return Err(CertifyError::InvalidGrid);
    }
    let scores: Vec<f64> = records.iter().map(ScoreRecord::effective_score).collect();
    let (p_lower, bound_kind) = auto_lower_bound(&scores, alpha)?;
    let k = match bound_kind {
        BoundKind::ClopperPearson => {
            Some(scores.iter().filter(|&&s| s == 1.0).count() as u64)
        }
        BoundKind::Hoeffding => None,
    };
    let lower_bounds = eps_grid
        .iter()
        .map(|&eps| Ok((p_lower - psi_eval(psi, eps)?).max(0.0)))
        .collect::<Result<Vec<f64>, CertifyError>>()?;
    Ok(CertificateCurve {
        epsilons: eps_grid.to_vec(),
        lower_bounds,
        p_lower,
        alpha,
        n: records.len() as u64,
        k,
        bound_kind,
        psi,
        spec: None,
        manifest_hash: None,
    })
}

/// Default 64-point grid: geometric between the eps where psi crosses 0.01
/// and where it crosses 0.99; linear on [0, 1] when psi is not invertible
/// (flat psi certifies every eps equally, so the grid is cosmetic).
pub fn default_eps_grid(psi: PsiFn) -> Vec<f64> {
    const POINTS: usize = 64;
    let invertible = psi_inverse(psi, 0.01).zip(psi_inverse(psi, 0.99));
    match invertible {
        Some((lo, hi)) if lo > 0.0 && hi > lo => {
            let ratio = hi / lo;
            (0..POINTS)
                .map(|i| lo * ratio.powf(i as f64 / (POINTS - 1) as f64))
                .collect()
        }
        _ => (0..POINTS)
            .map(|i| i as f64 / (POINTS - 1) as f64)
            .collect(),
    }
}

/// Empirical check that an observed clean-vs-shifted accuracy gap stays
/// within psi(eps) plus three-sigma-level sampling slack.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapReport {
    pub clean_mean: f64,
    pub shifted_mean: f64,
    pub gap: f64,
    pub psi_value: f64,
    pub slack: f64,
    pub n: u64,
    pub pass: bool,
}

pub fn gap_check(
    clean_records: &[ScoreRecord],
    shifted_records: &[ScoreRecord],
    psi: PsiFn,
    eps: f64,
) -> Result<GapReport, CertifyError> {
    if clean_records.is_empty() || clean_records.len() != shifted_records.len() {
        return Err(CertifyError::UnpairedRecords {
            clean: clean_records.len(),
            shifted: shifted_records.len(),
        });
    }
    let n = clean_records.len() as u64;
    let clean_mean = mean_score(clean_records);
    let shifted_mean = mean_score(shifted_records);
    let gap = (clean_mean - shifted_mean).abs();
    let psi_value = psi_eval(psi, eps)?;
    let slack = 3.0 * ((2.0f64 / 0.01).ln() / (2.0 * n as f64)).sqrt();
    Ok(GapReport {
        clean_mean,
        shifted_mean,
        gap,
        psi_value,
        slack,
        n,
        pass: gap <= psi_value + slack,
    })
}
