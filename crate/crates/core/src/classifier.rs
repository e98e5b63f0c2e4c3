//! Scoring interface h(x, y), built-in trainable toy classifiers, and the
//! handle around external scorer subprocesses.
//!
//! Built-in scoring is deterministic; every bit of randomness in the
//! pipeline lives in the smoothing draws. Argmax ties break toward the
//! lowest class index so h is well defined everywhere. Handles count their
//! inference calls, which lets tests verify the one-draw-per-sample cost of
//! certification.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::dataset::Sample;
use crate::external::ExternalSession;
use crate::image::Image;
use crate::smoothing::{randomize_input, SeedPolicy, SmoothingError, SmoothingSpec};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("class {class} has no training samples")]
    DegenerateClass { class: u32 },
    #[error("operation is not supported for this classifier kind")]
    UnsupportedKind,
    #[error("input has {actual} components, classifier expects {expected}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: u32, num_classes: u32 },
    #[error("invalid configuration: {detail}")]
    InvalidConfig { detail: String },
    #[error("external scorer failure: {detail}")]
    ScorerFailure { detail: String },
    #[error(transparent)]
    Smoothing(#[from] SmoothingError),
}

enum ClassifierKind {
    NearestCentroid { centroids: Vec<Vec<f64>> },
    Logistic { weights: Vec<Vec<f64>>, bias: Vec<f64> },
    External { command: Vec<String>, session: Mutex<Option<ExternalSession>> },
}

/// A scoring handle: h(x, y) in [0, 1], plus gradients for the logistic
/// kind. Cheap to share by reference across threads; external handles
/// serialize their subprocess I/O internally.
pub struct ClassifierHandle {
    kind: ClassifierKind,
    num_classes: u32,
    height: usize,
    width: usize,
    invocations: Arc<AtomicU64>,
}

impl Clone for ClassifierHandle {
    /// Clones weights; the invocation counter starts fresh and an external
    /// clone spawns its own subprocess on first use.
    fn clone(&self) -> Self {
        let mut cloned = self.clone_sharing_counter();
        cloned.invocations = Arc::new(AtomicU64::new(0));
        cloned
    }
}

impl std::fmt::Debug for ClassifierHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match &self.kind {
            ClassifierKind::NearestCentroid { .. } => "nearest_centroid",
            ClassifierKind::Logistic { .. } => "logistic",
            ClassifierKind::External { .. } => "external",
        };
        f.debug_struct("ClassifierHandle")
            .field("kind", &kind)
            .field("num_classes", &self.num_classes)
            .finish()
    }
}

/// Which built-in model `train` produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainKind {
    NearestCentroid,
    Logistic,
}

/// Training hyperparameters. A smoothing spec turns on noise training: every
/// input is independently randomized before each gradient step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: u32,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub smoothing: Option<SmoothingSpec>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 0.5,
            batch_size: 32,
            smoothing: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(ClassifierError::InvalidConfig {
                detail: "epochs and batch size must be positive".to_owned(),
            });
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ClassifierError::InvalidConfig {
                detail: format!("learning rate {} must be positive", self.learning_rate),
            });
        }
        Ok(())
    }
}

fn features_of(img: &Image) -> Vec<f64> {
    img.pixels().iter().map(|&p| f64::from(p)).collect()
}

/// Numerically stable softmax cross-entropy from logits.
pub fn cross_entropy(logits: &[f64], label: u32) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[label as usize]
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0usize;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl ClassifierHandle {
    pub fn nearest_centroid(
        centroids: Vec<Vec<f64>>,
        height: usize,
        width: usize,
    ) -> Result<Self, ClassifierError> {
        let num_classes = centroids.len() as u32;
        if num_classes < 2 {
            return Err(ClassifierError::InvalidConfig {
                detail: "need at least 2 classes".to_owned(),
            });
        }
        let features = height * width * 3;
        for c in &centroids {
            if c.len() != features {
                return Err(ClassifierError::ShapeMismatch {
                    expected: features,
                    actual: c.len(),
                });
            }
        }
        Ok(Self {
            kind: ClassifierKind::NearestCentroid { centroids },
            num_classes,
            height,
            width,
            invocations: Arc::new(AtomicU64::new(0)),
        })
    }

    pub fn logistic(
        weights: Vec<Vec<f64>>,
        bias: Vec<f64>,
        height: usize,
        width: usize,
    ) -> Result<Self, ClassifierError> {
        let num_classes = weights.len() as u32;
        if num_classes < 2 || bias.len() != weights.len() {
            return Err(ClassifierError::InvalidConfig {
                detail: "need >= 2 classes and one bias per class".to_owned(),
            });
        }
        let features = height * width * 3;
        for row in &weights {
            if row.len() != features {
                return Err(ClassifierError::ShapeMismatch {
                    expected: features,
                    actual: row.len(),
                });
            }
        }
        Ok(Self {
            kind: ClassifierKind::Logistic { weights, bias },
            num_classes,
            height,
            width,
            invocations: Arc::new(AtomicU64::new(0)),
        })
    }

    pub fn external(
        command: Vec<String>,
        num_classes: u32,
        height: usize,
        width: usize,
    ) -> Result<Self, ClassifierError> {
        if num_classes < 2 {
            return Err(ClassifierError::InvalidConfig {
                detail: "need at least 2 classes".to_owned(),
            });
        }
        if command.is_empty() {
            return Err(ClassifierError::InvalidConfig {
                detail: "empty scorer command".to_owned(),
            });
        }
        Ok(Self {
            kind: ClassifierKind::External {
                command,
                session: Mutex::new(None),
            },
            num_classes,
            height,
            width,
            invocations: Arc::new(AtomicU64::new(0)),
        })
    }

    /// Clone that shares the invocation counter; used to shard an external
    /// handle across worker subprocesses while keeping one count.
    pub(crate) fn clone_sharing_counter(&self) -> Self {
        let kind = match &self.kind {
            ClassifierKind::NearestCentroid { centroids } => ClassifierKind::NearestCentroid {
                centroids: centroids.clone(),
            },
            ClassifierKind::Logistic { weights, bias } => ClassifierKind::Logistic {
                weights: weights.clone(),
                bias: bias.clone(),
            },
            ClassifierKind::External { command, .. } => ClassifierKind::External {
                command: command.clone(),
                session: Mutex::new(None),
            },
        };
        Self {
            kind,
            num_classes: self.num_classes,
            height: self.height,
            width: self.width,
            invocations: Arc::clone(&self.invocations),
        }
    }

    pub fn num_classes(&self) -> u32 {
        self.num_classes
    }

    pub fn input_shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn is_external(&self) -> bool {
        matches!(self.kind, ClassifierKind::External { .. })
    }

    /// Total inference calls made through this handle (shared by sharded
    /// clones).
    pub fn invocation_count(&self) -> u64 {
        self.invocations.load(Ordering::SeqCst)
    }

    pub fn reset_invocations(&self) {
        self.invocations.store(0, Ordering::SeqCst);
    }

    /// Logistic parameters, when this is a logistic handle.
    pub fn logistic_params(&self) -> Option<(&[Vec<f64>], &[f64])> {
        match &self.kind {
            ClassifierKind::Logistic { weights, bias } => Some((weights, bias)),
            _ => None,
        }
    }

    /// Per-class centroids, when this is a nearest-centroid handle.
    pub fn centroid_params(&self) -> Option<&[Vec<f64>]> {
        match &self.kind {
            ClassifierKind::NearestCentroid { centroids } => Some(centroids),
            _ => None,
        }
    }

    fn check_shape(&self, img: &Image) -> Result<(), ClassifierError> {
        let expected = self.height * self.width * 3;
        if img.num_components() != expected {
            return Err(ClassifierError::ShapeMismatch {
                expected,
                actual: img.num_components(),
            });
        }
        Ok(())
    }

    fn check_label(&self, label: u32) -> Result<(), ClassifierError> {
        if label >= self.num_classes {
            return Err(ClassifierError::LabelOutOfRange {
                label,
                num_classes: self.num_classes,
            });
        }
        Ok(())
    }

    /// Correctness score h(x, y): 0/1 for built-ins, any value in [0, 1]
    /// for external scorers. One inference call.
    pub fn score(&self, img: &Image, label: u32) -> Result<f64, ClassifierError> {
        self.check_shape(img)?;
        self.check_label(label)?;
        self.invocations.fetch_add(1, Ordering::SeqCst);
        match &self.kind {
            ClassifierKind::NearestCentroid { .. } | ClassifierKind::Logistic { .. } => {
                let pred = self.predict_inner(img);
                Ok(if pred == label { 1.0 } else { 0.0 })
            }
            ClassifierKind::External { command, session } => {
                let mut guard = session.lock().expect("scorer mutex");
                if guard.is_none() {
                    *guard = Some(ExternalSession::spawn(command)?);
                }
                guard.as_mut().expect("spawned").score(img, label)
            }
        }
    }

    /// Predicted class for built-in models. One inference call.
    pub fn predict(&self, img: &Image) -> Result<u32, ClassifierError> {
        self.check_shape(img)?;
        if matches!(self.kind, ClassifierKind::External { .. }) {
            return Err(ClassifierError::UnsupportedKind);
        }
        self.invocations.fetch_add(1, Ordering::SeqCst);
        Ok(self.predict_inner(img))
    }

    fn predict_inner(&self, img: &Image) -> u32 {
        match &self.kind {
            ClassifierKind::NearestCentroid { centroids } => {
                let feats = features_of(img);
                let dists: Vec<f64> = centroids
                    .iter()
                    .map(|c| {
                        -c.iter()
                            .zip(&feats)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                    })
                    .collect();
                argmax_lowest(&dists) as u32
            }
            ClassifierKind::Logistic { weights, bias } => {
                let feats = features_of(img);
                let logits = logits_from(weights, bias, &feats);
                argmax_lowest(&logits) as u32
            }
            ClassifierKind::External { .. } => unreachable!("checked by callers"),
        }
    }

    /// Logits and the gradient of softmax cross-entropy with respect to the
    /// flattened input. Logistic only. One inference call.
    pub fn logits_and_grad(
        &self,
        img: &Image,
        label: u32,
    ) -> Result<(Vec<f64>, Vec<f64>), ClassifierError> {
        self.check_shape(img)?;
        self.logits_and_grad_features(&features_of(img), label)
    }

    /// Same as [`Self::logits_and_grad`] on an f64 feature vector; the
    /// attack loops work in f64 so projection arithmetic is not quantized.
    pub fn logits_and_grad_features(
        &self,
        feats: &[f64],
        label: u32,
    ) -> Result<(Vec<f64>, Vec<f64>), ClassifierError> {
        self.check_label(label)?;
        let ClassifierKind::Logistic { weights, bias } = &self.kind else {
            return Err(ClassifierError::UnsupportedKind);
        };
        let expected = self.height * self.width * 3;
        if feats.len() != expected {
            return Err(ClassifierError::ShapeMismatch {
                expected,
                actual: feats.len(),
            });
        }
        self.invocations.fetch_add(1, Ordering::SeqCst);
        let logits = logits_from(weights, bias, feats);
        let mut p = softmax(&logits);
        p[label as usize] -= 1.0;
        let mut grad = vec![0.0f64; feats.len()];
        for (c, row) in weights.iter().enumerate() {
            let coeff = p[c];
            if coeff != 0.0 {
                for (g, w) in grad.iter_mut().zip(row) {
                    *g += coeff * w;
                }
            }
        }
        Ok((logits, grad))
    }
}

fn logits_from(weights: &[Vec<f64>], bias: &[f64], feats: &[f64]) -> Vec<f64> {
    weights
        .iter()
        .zip(bias)
        .map(|(row, b)| row.iter().zip(feats).map(|(w, x)| w * x).sum::<f64>() + b)
        .collect()
}

/// Trains a built-in model. With a smoothing spec in the config, inputs are
/// independently randomized before every use (noise training); noise seeds
/// derive from the config seed, the epoch, and the sample id.
pub fn train(
    samples: &[Sample],
    num_classes: u32,
    kind: TrainKind,
    config: &TrainConfig,
) -> Result<ClassifierHandle, ClassifierError> {
    config.validate()?;
    if samples.is_empty() || num_classes < 2 {
        return Err(ClassifierError::InvalidConfig {
            detail: "need samples and at least 2 classes".to_owned(),
        });
    }
    let height = samples[0].image.height();
    let width = samples[0].image.width();
    let features = height * width * 3;
    for s in samples {
        if s.image.num_components() != features {
            return Err(ClassifierError::ShapeMismatch {
                expected: features,
                actual: s.image.num_components(),
            });
        }
        if s.label >= num_classes {
            return Err(ClassifierError::LabelOutOfRange {
                label: s.label,
                num_classes,
            });
        }
    }
    let policy = SeedPolicy::new(config.seed);
    let noisy_features = |s: &Sample, epoch: u32| -> Result<Vec<f64>, ClassifierError> {
        match &config.smoothing {
            None => Ok(features_of(&s.image)),
            Some(spec) => {
                let seed = policy.stream(u64::from(epoch)).sample_seed(s.id);
                let draw = randomize_input(&s.image, spec, seed)?;
                Ok(features_of(&draw.image))
            }
        }
    };
    match kind {
        TrainKind::NearestCentroid => {
            let mut sums = vec![vec![0.0f64; features]; num_classes as usize];
            let mut counts = vec![0u64; num_classes as usize];
            for s in samples {
                let feats = noisy_features(s, 0)?;
                let acc = &mut sums[s.label as usize];
                for (a, f) in acc.iter_mut().zip(&feats) {
                    *a += f;
                }
                counts[s.label as usize] += 1;
            }
            for (class, count) in counts.iter().enumerate() {
                if *count == 0 {
                    return Err(ClassifierError::DegenerateClass {
                        class: class as u32,
                    });
                }
                for v in sums[class].iter_mut() {
                    *v /= *count as f64;
                }
            }
            ClassifierHandle::nearest_centroid(sums, height, width)
        }
        TrainKind::Logistic => {
            let mut present = vec![false; num_classes as usize];
            for s in samples {
                present[s.label as usize] = true;
            }
            if let Some(class) = present.iter().position(|p| !p) {
                return Err(ClassifierError::DegenerateClass {
                    class: class as u32,
                });
            }
            let classes = num_classes as usize;
            let mut weights = vec![vec![0.0f64; features]; classes];
            let mut bias = vec![0.0f64; classes];
            let mut order: Vec<usize> = (0..samples.len()).collect();
            let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
            for epoch in 0..config.epochs {
                order.shuffle(&mut rng);
                for batch in order.chunks(config.batch_size) {
                    let scale = 1.0 / batch.len() as f64;
                    let mut grad_w = vec![vec![0.0f64; features]; classes];
                    let mut grad_b = vec![0.0f64; classes];
                    for &idx in batch {
                        let s = &samples[idx];
                        let feats = noisy_features(s, epoch)?;
                        let logits = logits_from(&weights, &bias, &feats);
                        let mut p = softmax(&logits);
                        p[s.label as usize] -= 1.0;
                        for (c, coeff) in p.iter().enumerate() {
                            grad_b[c] += coeff;
                            let row = &mut grad_w[c];
                            for (g, f) in row.iter_mut().zip(&feats) {
                                *g += coeff * f;
                            }
                        }
                    }
                    for c in 0..classes {
                        bias[c] -= config.learning_rate * scale * grad_b[c];
                        let row = &mut weights[c];
                        for (w, g) in row.iter_mut().zip(&grad_w[c]) {
                            *w -= config.learning_rate * scale * g;
                        }
                    }
                }
            }
            ClassifierHandle::logistic(weights, bias, height, width)
        }
    }
}

/// Mean 0/1 accuracy of a handle over samples, without smoothing.
pub fn plain_accuracy(
    handle: &ClassifierHandle,
    samples: &[Sample],
) -> Result<f64, ClassifierError> {
    if samples.is_empty() {
        return Err(ClassifierError::InvalidConfig {
            detail: "empty sample list".to_owned(),
        });
    }
    let mut sum = 0.0;
    for s in samples {
        sum += handle.score(&s.image, s.label)?;
    }
    Ok(sum / samples.len() as f64)
}
