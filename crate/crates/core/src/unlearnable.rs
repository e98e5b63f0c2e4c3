//! Offline unlearnability poisoning and its hardness certificate.
//!
//! The poisoner first trains a proxy by min-min alternation: shrink a
//! per-sample l2-bounded perturbation toward lower loss, then take one
//! proxy parameter step, repeat. The frozen proxy then poisons held-out
//! train and validation splits sample-by-sample. A victim trained on the
//! poisoned data looks accurate on poisoned validation while failing on
//! clean test data; smoothing the victim closes that gap, and the
//! certificate makes the closure quantitative: clean-test accuracy is
//! provably at least the poisoned-validation lower bound minus psi(eps).

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{features_f64, gradient_walk, image_from_features};
use crate::certify::{evaluate_plain, evaluate_smoothed, mean_score, CertifyError};
use crate::classifier::{train, ClassifierError, ClassifierHandle, TrainConfig, TrainKind};
use crate::dataset::{Dataset, Sample};
use crate::psi::{pair_psi, psi_eval, PsiError};
use crate::smoothing::{sample_noise, NoiseDraw, SeedPolicy, SmoothingError, SmoothingKind, SmoothingSpec};
use crate::statbounds::{auto_lower_bound, StatError};

/// Seed-stream tags: proxy initialization, adaptive poison noise, split
/// shuffling, and the three evaluation passes.
const INIT_STREAM: u64 = 0x494e_4954;
const POISON_STREAM: u64 = 0x504f_4953;
const SPLIT_STREAM: u64 = 0x53_504c;
const TRAIN_EVAL_STREAM: u64 = 0x5452_4556;
const VAL_EVAL_STREAM: u64 = 0x5641_4c45;
const TEST_EVAL_STREAM: u64 = 0x5445_5354;

#[derive(Debug, Error)]
pub enum UnlearnError {
    #[error("invalid poison configuration: {detail}")]
    InvalidConfig { detail: String },
    #[error("dataset has {have} samples, splits need {needed}")]
    DatasetTooSmall { needed: usize, have: usize },
    #[error("adaptive poisoning requires pixel-space Gaussian smoothing")]
    UnsupportedSmoothing,
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Smoothing(#[from] SmoothingError),
    #[error(transparent)]
    Stat(#[from] StatError),
    #[error(transparent)]
    Psi(#[from] PsiError),
    #[error(transparent)]
    Certify(#[from] CertifyError),
}

/// Poisoning hyperparameters. The inner step size is fixed at one tenth of
/// the perturbation radius; a zero radius turns the whole pipeline into a
/// no-op control run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoisonConfig {
    /// Per-sample l2 perturbation radius.
    pub eps_budget: f64,
    pub pgd_steps: u32,
    /// Cap on proxy min-min outer iterations.
    pub outer_cap: u32,
    pub proxy_size: usize,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    /// Poison against the smoothed proxy loss instead of the plain one.
    pub adaptive: bool,
    /// Fixed noise draws for the adaptive loss.
    pub adaptive_draws: u32,
    pub seed: u64,
    pub alpha: f64,
}

impl Default for PoisonConfig {
    fn default() -> Self {
        Self {
            eps_budget: 0.5,
            pgd_steps: 20,
            outer_cap: 20,
            proxy_size: 2000,
            train_size: 2000,
            val_size: 1000,
            test_size: 1000,
            adaptive: false,
            adaptive_draws: 8,
            seed: 0,
            alpha: 0.001,
        }
    }
}

impl PoisonConfig {
    pub fn validate(&self) -> Result<(), UnlearnError> {
        if !(self.eps_budget.is_finite() && self.eps_budget >= 0.0) {
            return Err(UnlearnError::InvalidConfig {
                detail: format!("eps budget {} must be finite and non-negative", self.eps_budget),
            });
        }
        if self.pgd_steps == 0 || self.outer_cap == 0 || self.adaptive_draws == 0 {
            return Err(UnlearnError::InvalidConfig {
                detail: "step, cap, and draw counts must be positive".to_owned(),
            });
        }
        if self.proxy_size == 0 || self.train_size == 0 || self.val_size == 0 || self.test_size == 0
        {
            return Err(UnlearnError::InvalidConfig {
                detail: "split sizes must be positive".to_owned(),
            });
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(UnlearnError::InvalidConfig {
                detail: format!("alpha {} outside (0, 1)", self.alpha),
            });
        }
        Ok(())
    }

    fn tau(&self) -> f64 {
        0.1 * self.eps_budget
    }

    fn total_split(&self) -> usize {
        self.proxy_size + self.train_size + self.val_size + self.test_size
    }
}

/// Result of one full poisoning experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoisonReport {
    pub eps_budget: f64,
    pub victim_train_accuracy: f64,
    pub poisoned_val_accuracy: f64,
    pub clean_test_accuracy: f64,
    /// Confidence lower bound on poisoned-validation accuracy.
    pub val_lower_bound: f64,
    pub psi_value: f64,
    /// max(0, val_lower_bound - psi(eps_budget)); the provable floor under
    /// clean test data. Vacuously 0 for an unsmoothed victim.
    pub certified_bound: f64,
    pub smoothing: Option<SmoothingSpec>,
    pub adaptive: bool,
    pub proxy_converged: bool,
    pub proxy_train_accuracy: f64,
    pub n_val: u64,
    pub n_test: u64,
    pub seed: u64,
}

/// Proxy produced by min-min training.
pub struct ProxyOutcome {
    pub handle: ClassifierHandle,
    /// Whether the 99% train-accuracy stop fired before the outer cap.
    pub converged: bool,
    /// Accuracy on its own (perturbed) training inputs at stop time.
    pub train_accuracy: f64,
}

const PROXY_STOP_ACCURACY: f64 = 0.99;
const PROXY_LEARNING_RATE: f64 = 1.0;
const PROXY_INIT_SCALE: f64 = 0.05;

fn logits_of(weights: &[Vec<f64>], bias: &[f64], feats: &[f64]) -> Vec<f64> {
    weights
        .iter()
        .zip(bias)
        .map(|(row, b)| row.iter().zip(feats).map(|(w, x)| w * x).sum::<f64>() + b)
        .collect()
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Min-min proxy training: each outer iteration first runs the full inner
/// perturbation minimization (`pgd_steps` normalized-descent steps of size
/// 0.1*eps on every sample, projected to the eps ball and clamped), then
/// takes one full-batch proxy parameter step on the perturbed data. Stops at
/// 99% perturbed-train accuracy or the outer cap; falling short of the
/// threshold is reported, not an error.
pub fn train_proxy_minmin(
    proxy_split: &[Sample],
    num_classes: u32,
    config: &PoisonConfig,
) -> Result<ProxyOutcome, UnlearnError> {
    config.validate()?;
    if proxy_split.is_empty() || num_classes < 2 {
        return Err(UnlearnError::InvalidConfig {
            detail: "proxy split empty or too few classes".to_owned(),
        });
    }
    let height = proxy_split[0].image.height();
    let width = proxy_split[0].image.width();
    let features = height * width * 3;
    let classes = num_classes as usize;
    // Small random initialization: a zero-weight proxy has a zero input
    // gradient, which would make the first inner phase a no-op.
    let init_seed = SeedPolicy::new(config.seed).stream(INIT_STREAM).master_seed();
    let mut rng = ChaCha12Rng::seed_from_u64(init_seed);
    let normal = Normal::new(0.0, PROXY_INIT_SCALE).expect("fixed scale");
    let mut weights: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..features).map(|_| normal.sample(&mut rng)).collect())
        .collect();
    let mut bias = vec![0.0f64; classes];
    let originals: Vec<Vec<f64>> = proxy_split.iter().map(|s| features_f64(&s.image)).collect();
    let mut perturbed = originals.clone();
    let mut converged = false;
    let mut train_accuracy = 0.0;
    for _ in 0..config.outer_cap {
        let handle = ClassifierHandle::logistic(weights.clone(), bias.clone(), height, width)?;
        if config.eps_budget > 0.0 {
            perturbed = originals
                .par_iter()
                .zip(proxy_split.par_iter())
                .map(|(x0, s)| {
                    gradient_walk(
                        &handle,
                        x0,
                        s.label,
                        config.eps_budget,
                        config.pgd_steps,
                        config.tau(),
                        false,
                        None,
                    )
                })
                .collect::<Result<_, ClassifierError>>()?;
        }
        let scale = 1.0 / perturbed.len() as f64;
        let mut grad_w = vec![vec![0.0f64; features]; classes];
        let mut grad_b = vec![0.0f64; classes];
        let mut correct = 0usize;
        for (feats, s) in perturbed.iter().zip(proxy_split) {
            let logits = logits_of(&weights, &bias, feats);
            if argmax(&logits) == s.label as usize {
                correct += 1;
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for c in 0..classes {
                let coeff = exps[c] / sum - f64::from(s.label as usize == c);
                grad_b[c] += coeff;
                let row = &mut grad_w[c];
                for (g, f) in row.iter_mut().zip(feats) {
                    *g += coeff * f;
                }
            }
        }
        train_accuracy = correct as f64 / perturbed.len() as f64;
        if train_accuracy >= PROXY_STOP_ACCURACY {
            converged = true;
            break;
        }
        for c in 0..classes {
            bias[c] -= PROXY_LEARNING_RATE * scale * grad_b[c];
            let row = &mut weights[c];
            for (w, g) in row.iter_mut().zip(&grad_w[c]) {
                *w -= PROXY_LEARNING_RATE * scale * g;
            }
        }
    }
    Ok(ProxyOutcome {
        handle: ClassifierHandle::logistic(weights, bias, height, width)?,
        converged,
        train_accuracy,
    })
}

/// Poisons each sample independently against the frozen proxy: `pgd_steps`
/// loss-minimizing steps inside the eps ball. Randomness (adaptive noise
/// only) is keyed by sample id, so the output for a sample is the same in
/// any ordering.
pub fn poison_offline(
    samples: &[Sample],
    proxy: &ClassifierHandle,
    config: &PoisonConfig,
    spec: Option<&SmoothingSpec>,
) -> Result<Vec<Sample>, UnlearnError> {
    config.validate()?;
    if config.eps_budget == 0.0 {
        return Ok(samples.to_vec());
    }
    if config.adaptive {
        match spec.map(SmoothingSpec::kind) {
            Some(SmoothingKind::PixelGaussian { .. }) => {}
            _ => return Err(UnlearnError::UnsupportedSmoothing),
        }
    }
    let noise_policy = SeedPolicy::new(config.seed).stream(POISON_STREAM);
    samples
        .par_iter()
        .map_init(
            || proxy.clone_sharing_counter(),
            |local, s| {
                let noise: Option<Vec<Vec<f64>>> = if config.adaptive {
                    let spec = spec.expect("checked above");
                    let draws = (0..config.adaptive_draws)
                        .map(|j| {
                            let seed = noise_policy.stream(u64::from(j)).sample_seed(s.id);
                            match sample_noise(spec, seed, s.image.num_components())? {
                                NoiseDraw::Pixel(n) => {
                                    Ok(n.into_iter().map(f64::from).collect::<Vec<f64>>())
                                }
                                _ => Err(UnlearnError::UnsupportedSmoothing),
                            }
                        })
                        .collect::<Result<Vec<Vec<f64>>, UnlearnError>>()?;
                    Some(draws)
                } else {
                    None
                };
                let x0 = features_f64(&s.image);
                let poisoned = gradient_walk(
                    local,
                    &x0,
                    s.label,
                    config.eps_budget,
                    config.pgd_steps,
                    config.tau(),
                    false,
                    noise.as_deref(),
                )
                .map_err(UnlearnError::from)?;
                Ok(Sample {
                    id: s.id,
                    label: s.label,
                    image: image_from_features(s.image.height(), s.image.width(), &poisoned),
                })
            },
        )
        .collect()
}

/// Carves the dataset into proxy/train/val/test splits by a seeded shuffle.
fn make_splits<'a>(
    dataset: &'a Dataset,
    config: &PoisonConfig,
) -> Result<[Vec<&'a Sample>; 4], UnlearnError> {
    let needed = config.total_split();
    if dataset.len() < needed {
        return Err(UnlearnError::DatasetTooSmall {
            needed,
            have: dataset.len(),
        });
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let shuffle_seed = SeedPolicy::new(config.seed).stream(SPLIT_STREAM).master_seed();
    let mut rng = ChaCha12Rng::seed_from_u64(shuffle_seed);
    use rand::seq::SliceRandom;
    order.shuffle(&mut rng);
    let samples = dataset.samples();
    let mut cursor = order.into_iter().map(|i| &samples[i]);
    let take = |cursor: &mut dyn Iterator<Item = &'a Sample>, n: usize| -> Vec<&'a Sample> {
        cursor.take(n).collect()
    };
    Ok([
        take(&mut cursor, config.proxy_size),
        take(&mut cursor, config.train_size),
        take(&mut cursor, config.val_size),
        take(&mut cursor, config.test_size),
    ])
}

fn owned(samples: &[&Sample]) -> Vec<Sample> {
    samples.iter().map(|s| (*s).clone()).collect()
}

/// Full pipeline: split, train proxy, poison train and validation, train
/// the victim on poisoned data (noise-randomized inputs when a smoothing
/// spec is given), evaluate everything with one smoothing draw per sample,
/// and attach the hardness certificate.
pub fn run_unlearnability_experiment(
    dataset: &Dataset,
    config: &PoisonConfig,
    victim_config: &TrainConfig,
    spec: Option<&SmoothingSpec>,
) -> Result<PoisonReport, UnlearnError> {
    config.validate()?;
    let [proxy_split, train_split, val_split, test_split] = make_splits(dataset, config)?;
    let num_classes = dataset.num_classes();
    let proxy = train_proxy_minmin(&owned(&proxy_split), num_classes, config)?;
    let poisoned_train = poison_offline(&owned(&train_split), &proxy.handle, config, spec)?;
    let poisoned_val = poison_offline(&owned(&val_split), &proxy.handle, config, spec)?;
    let clean_test = owned(&test_split);
    let mut victim_config = victim_config.clone();
    victim_config.smoothing = spec.cloned();
    let victim = train(&poisoned_train, num_classes, TrainKind::Logistic, &victim_config)?;
    let policy = SeedPolicy::new(config.seed);
    let eval = |samples: &[Sample], tag: u64| -> Result<Vec<_>, CertifyError> {
        match spec {
            Some(spec) => evaluate_smoothed(samples, &victim, spec, &policy.stream(tag)),
            None => evaluate_plain(samples, &victim),
        }
    };
    let train_records = eval(&poisoned_train, TRAIN_EVAL_STREAM)?;
    let val_records = eval(&poisoned_val, VAL_EVAL_STREAM)?;
    let test_records = eval(&clean_test, TEST_EVAL_STREAM)?;
    let val_scores: Vec<f64> = val_records.iter().map(|r| r.effective_score()).collect();
    let (val_lower_bound, _) = auto_lower_bound(&val_scores, config.alpha)?;
    let psi_value = match spec {
        Some(spec) => psi_eval(pair_psi(spec), config.eps_budget)?,
        // No smoothing, no degradation bound: the certificate is vacuous.
        None => 1.0,
    };
    Ok(PoisonReport {
        eps_budget: config.eps_budget,
        victim_train_accuracy: mean_score(&train_records),
        poisoned_val_accuracy: mean_score(&val_records),
        clean_test_accuracy: mean_score(&test_records),
        val_lower_bound,
        psi_value,
        certified_bound: (val_lower_bound - psi_value).max(0.0),
        smoothing: spec.cloned(),
        adaptive: config.adaptive,
        proxy_converged: proxy.converged,
        proxy_train_accuracy: proxy.train_accuracy,
        n_val: val_records.len() as u64,
        n_test: test_records.len() as u64,
        seed: config.seed,
    })
}
