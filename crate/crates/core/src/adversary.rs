//! Distributional l2 attackers with honest Wasserstein accounting: a
//! threshold adversary that only spends budget where flipping is cheap, PGD
//! for the differentiable toy models, and the rate-threshold adaptive attack
//! against smoothed classifiers.
//!
//! Every attacker reports a per-sample perturbation norm (0 where it
//! declined to attack); the outcome's Wasserstein bound is the mean of those
//! norms, which the certificates are checked against.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{ClassifierError, ClassifierHandle};
use crate::dataset::Sample;
use crate::image::Image;
use crate::smoothing::{
    randomize_input, sample_noise, NoiseDraw, SeedPolicy, SmoothingError, SmoothingKind,
    SmoothingSpec,
};

/// Overshoot past the decision boundary so the flip survives rounding.
const KAPPA: f64 = 1e-4;
/// Norm tolerance for the multiclass minimal-norm bisection.
const BISECT_TOL: f64 = 1e-2;
/// Seed-stream tags keeping selection noise and evaluation noise disjoint.
const SELECT_STREAM: u64 = 0x5345_4c45_4354;
const EVAL_STREAM: u64 = 0x4556_414c;

#[derive(Debug, Error)]
pub enum AdversaryError {
    #[error("invalid attack budget: {detail}")]
    InvalidBudget { detail: String },
    #[error("attack magnitude must be positive and finite, got {0}")]
    InvalidMagnitude(f64),
    #[error("attack requires a logistic handle (binary for the analytic attack)")]
    UnsupportedModel,
    #[error("smoothed attack losses are defined for pixel-space Gaussian smoothing only")]
    UnsupportedSmoothing,
    #[error("no samples to attack")]
    EmptyDataset,
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Smoothing(#[from] SmoothingError),
}

/// Magnitude grid and iteration budget shared by the attackers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackBudget {
    /// Ascending candidate magnitudes for the adaptive attack.
    pub magnitude_grid: Vec<f64>,
    pub pgd_steps: u32,
    /// Fixed noise draws used for gradient estimates and rate selection.
    pub grad_noise_draws: u32,
    /// Fresh noise draws for final reported scores.
    pub eval_noise_draws: u32,
}

impl Default for AttackBudget {
    fn default() -> Self {
        Self {
            magnitude_grid: (1..=16).map(|i| f64::from(i) / 8.0).collect(),
            pgd_steps: 20,
            grad_noise_draws: 16,
            eval_noise_draws: 100,
        }
    }
}

impl AttackBudget {
    pub fn validate(&self) -> Result<(), AdversaryError> {
        let grid_ok = !self.magnitude_grid.is_empty()
            && self
                .magnitude_grid
                .iter()
                .all(|e| e.is_finite() && *e > 0.0)
            && self.magnitude_grid.windows(2).all(|w| w[0] < w[1]);
        if !grid_ok {
            return Err(AdversaryError::InvalidBudget {
                detail: "magnitude grid must be ascending and positive".to_owned(),
            });
        }
        if self.pgd_steps == 0 || self.grad_noise_draws == 0 || self.eval_noise_draws == 0 {
            return Err(AdversaryError::InvalidBudget {
                detail: "step and draw counts must be positive".to_owned(),
            });
        }
        Ok(())
    }
}

/// Loss the PGD ascent climbs: plain cross-entropy, or its average over a
/// fixed set of smoothing noise draws.
#[derive(Debug, Clone, Copy)]
pub enum PgdLoss<'a> {
    Plain,
    Smoothed {
        spec: &'a SmoothingSpec,
        draws: u32,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerSampleOutcome {
    pub sample_id: u32,
    pub label: u32,
    /// Accounted perturbation norm; 0 when the adversary returned the input.
    pub norm: f64,
    pub attacked: bool,
    /// Post-attack score in [0, 1].
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub gamma: f64,
    pub accuracy: f64,
    pub misclassification_rate: f64,
    /// Mean accounted norm: upper bound on the shift's Wasserstein distance.
    pub wasserstein_bound: f64,
    pub attacked_fraction: f64,
    pub per_sample: Vec<PerSampleOutcome>,
}

fn aggregate(gamma: f64, per_sample: Vec<PerSampleOutcome>) -> AttackOutcome {
    let n = per_sample.len() as f64;
    let accuracy = per_sample.iter().map(|p| p.score).sum::<f64>() / n;
    let wasserstein_bound = per_sample.iter().map(|p| p.norm).sum::<f64>() / n;
    let attacked_fraction = per_sample.iter().filter(|p| p.attacked).count() as f64 / n;
    AttackOutcome {
        gamma,
        accuracy,
        misclassification_rate: 1.0 - accuracy,
        wasserstein_bound,
        attacked_fraction,
        per_sample,
    }
}

pub(crate) fn features_f64(img: &Image) -> Vec<f64> {
    img.pixels().iter().map(|&p| f64::from(p)).collect()
}

pub(crate) fn image_from_features(height: usize, width: usize, feats: &[f64]) -> Image {
    let pixels: Vec<f32> = feats.iter().map(|&v| v.clamp(0.0, 1.0) as f32).collect();
    Image::new(height, width, pixels).expect("clamped features form a valid image")
}

/// Minimal-l2 misclassifying perturbation for a binary logistic model,
/// computed from the margin geometry. Returns the adversarial image and the
/// intended displacement norm; already-misclassified inputs cost 0, and an
/// input the model cannot be pushed across (zero weight difference) reports
/// an infinite norm with the image unchanged.
pub fn min_l2_attack_linear(
    handle: &ClassifierHandle,
    img: &Image,
    label: u32,
) -> Result<(Image, f64), AdversaryError> {
    let Some((weights, bias)) = handle.logistic_params() else {
        return Err(AdversaryError::UnsupportedModel);
    };
    if handle.num_classes() != 2 {
        return Err(AdversaryError::UnsupportedModel);
    }
    let x = features_f64(img);
    let logit = |c: usize| -> f64 {
        weights[c].iter().zip(&x).map(|(w, v)| w * v).sum::<f64>() + bias[c]
    };
    let own = logit(label as usize);
    let other = usize::from(label == 0);
    let rival = logit(other);
    if rival > own {
        return Ok((img.clone(), 0.0));
    }
    let delta_w: Vec<f64> = weights[other]
        .iter()
        .zip(&weights[label as usize])
        .map(|(a, b)| a - b)
        .collect();
    let norm_w = delta_w.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm_w == 0.0 {
        return Ok((img.clone(), f64::INFINITY));
    }
    let t = (own - rival) / norm_w + KAPPA;
    let adv: Vec<f64> = x
        .iter()
        .zip(&delta_w)
        .map(|(v, d)| v + t * d / norm_w)
        .collect();
    Ok((image_from_features(img.height(), img.width(), &adv), t))
}

/// Projected gradient ascent on the chosen loss within the l2 ball of radius
/// `magnitude` around `img`, step size `magnitude / 10`, pixels clamped to
/// [0, 1] after every step. A vanishing gradient stops early and returns the
/// current iterate.
pub fn pgd_attack(
    handle: &ClassifierHandle,
    img: &Image,
    label: u32,
    magnitude: f64,
    steps: u32,
    loss: PgdLoss<'_>,
) -> Result<Image, AdversaryError> {
    if !(magnitude.is_finite() && magnitude > 0.0) {
        return Err(AdversaryError::InvalidMagnitude(magnitude));
    }
    if steps == 0 {
        return Ok(img.clone());
    }
    let noise = match loss {
        PgdLoss::Plain => None,
        PgdLoss::Smoothed { spec, draws, seed } => Some(fixed_pixel_noise(
            spec,
            draws,
            seed,
            img.num_components(),
        )?),
    };
    let x0 = features_f64(img);
    let adv = pgd_core(handle, &x0, label, magnitude, steps, noise.as_deref())?;
    Ok(image_from_features(img.height(), img.width(), &adv))
}

/// Draws `draws` pixel-noise vectors from decorrelated seeds; the fixed set
/// shared by all steps and magnitudes of one smoothed attack.
fn fixed_pixel_noise(
    spec: &SmoothingSpec,
    draws: u32,
    seed: u64,
    components: usize,
) -> Result<Vec<Vec<f64>>, AdversaryError> {
    if !matches!(spec.kind(), SmoothingKind::PixelGaussian { .. }) {
        return Err(AdversaryError::UnsupportedSmoothing);
    }
    let base = SeedPolicy::new(seed);
    (0..draws)
        .map(|j| {
            match sample_noise(spec, base.stream(u64::from(j)).master_seed(), components)? {
                NoiseDraw::Pixel(noise) => {
                    Ok(noise.into_iter().map(f64::from).collect::<Vec<f64>>())
                }
                _ => Err(AdversaryError::UnsupportedSmoothing),
            }
        })
        .collect()
}

fn pgd_core(
    handle: &ClassifierHandle,
    x0: &[f64],
    label: u32,
    magnitude: f64,
    steps: u32,
    noise: Option<&[Vec<f64>]>,
) -> Result<Vec<f64>, AdversaryError> {
    gradient_walk(
        handle,
        x0,
        label,
        magnitude,
        steps,
        magnitude / 10.0,
        true,
        noise,
    )
    .map_err(AdversaryError::from)
}

/// Projected normalized-gradient iteration shared by the attackers (ascent)
/// and the poisoner (descent): steps of `step_size` along the l2-normalized
/// cross-entropy gradient, projected onto the `radius` ball around `x0` and
/// clamped to [0, 1] each step; an optional fixed noise set averages the
/// gradient over smoothing draws. A vanishing gradient stops the walk.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gradient_walk(
    handle: &ClassifierHandle,
    x0: &[f64],
    label: u32,
    radius: f64,
    steps: u32,
    step_size: f64,
    ascent: bool,
    noise: Option<&[Vec<f64>]>,
) -> Result<Vec<f64>, ClassifierError> {
    let mut x = x0.to_vec();
    let signed_step = if ascent { step_size } else { -step_size };
    for _ in 0..steps {
        let grad = match noise {
            None => handle.logits_and_grad_features(&x, label)?.1,
            Some(draws) => {
                let mut acc = vec![0.0f64; x.len()];
                for eta in draws {
                    let z: Vec<f64> = x
                        .iter()
                        .zip(eta)
                        .map(|(v, n)| (v + n).clamp(0.0, 1.0))
                        .collect();
                    let g = handle.logits_and_grad_features(&z, label)?.1;
                    for (a, gi) in acc.iter_mut().zip(&g) {
                        *a += gi;
                    }
                }
                let scale = 1.0 / draws.len() as f64;
                for a in acc.iter_mut() {
                    *a *= scale;
                }
                acc
            }
        };
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gnorm <= 1e-30 {
            break;
        }
        for (xi, gi) in x.iter_mut().zip(&grad) {
            *xi += signed_step * gi / gnorm;
        }
        let mut delta: Vec<f64> = x.iter().zip(x0).map(|(a, b)| a - b).collect();
        let dnorm = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
        if dnorm > radius {
            let shrink = radius / dnorm;
            for d in delta.iter_mut() {
                *d *= shrink;
            }
        }
        for ((xi, x0i), di) in x.iter_mut().zip(x0).zip(&delta) {
            *xi = (x0i + di).clamp(0.0, 1.0);
        }
    }
    Ok(x)
}

/// Minimal flipping norm for a multiclass logistic model: bisection over the
/// PGD magnitude to norm tolerance 1e-2. Reports infinity when even the
/// box-diameter budget cannot flip the prediction.
fn min_norm_attack_pgd(
    handle: &ClassifierHandle,
    img: &Image,
    label: u32,
    steps: u32,
) -> Result<(Image, f64), AdversaryError> {
    if handle.predict(img)? != label {
        return Ok((img.clone(), 0.0));
    }
    let cap = (img.num_components() as f64).sqrt();
    let flipped_at = |e: f64| -> Result<Option<Image>, AdversaryError> {
        let adv = pgd_attack(handle, img, label, e, steps, PgdLoss::Plain)?;
        if handle.predict(&adv)? != label {
            Ok(Some(adv))
        } else {
            Ok(None)
        }
    };
    let Some(mut best) = flipped_at(cap)? else {
        return Ok((img.clone(), f64::INFINITY));
    };
    let (mut lo, mut hi) = (0.0f64, cap);
    while hi - lo > BISECT_TOL {
        let mid = 0.5 * (lo + hi);
        match flipped_at(mid)? {
            Some(adv) => {
                best = adv;
                hi = mid;
            }
            None => lo = mid,
        }
    }
    Ok((best, hi))
}

/// Required norm and adversarial image for one sample, by model shape:
/// analytic for binary logistic, PGD bisection otherwise.
fn required_attack(
    handle: &ClassifierHandle,
    img: &Image,
    label: u32,
    pgd_steps: u32,
) -> Result<(Image, f64), AdversaryError> {
    if handle.num_classes() == 2 {
        min_l2_attack_linear(handle, img, label)
    } else {
        min_norm_attack_pgd(handle, img, label, pgd_steps)
    }
}

/// The threshold adversary: attacks a sample only when its required norm is
/// below `gamma`, otherwise returns the input and saves the budget. Scores
/// are plain (un-smoothed) 0/1 correctness of the attacked model.
pub fn strategic_attack(
    samples: &[Sample],
    handle: &ClassifierHandle,
    gamma: f64,
) -> Result<AttackOutcome, AdversaryError> {
    Ok(strategic_attack_sweep(samples, handle, &[gamma])?
        .pop()
        .expect("one gamma in, one outcome out"))
}

/// Sweeps the threshold over `gammas`, computing each sample's required norm
/// once. Returns one outcome per gamma, in order.
pub fn strategic_attack_sweep(
    samples: &[Sample],
    handle: &ClassifierHandle,
    gammas: &[f64],
) -> Result<Vec<AttackOutcome>, AdversaryError> {
    if samples.is_empty() {
        return Err(AdversaryError::EmptyDataset);
    }
    if handle.logistic_params().is_none() {
        return Err(AdversaryError::UnsupportedModel);
    }
    let prepared: Vec<(u32, u32, Image, f64, f64, f64)> = samples
        .par_iter()
        .map_init(
            || handle.clone_sharing_counter(),
            |local, s| {
                let (adv, norm) = required_attack(local, &s.image, s.label, 20)?;
                let clean_score = f64::from(local.predict(&s.image)? == s.label);
                let adv_score = f64::from(local.predict(&adv)? == s.label);
                Ok((s.id, s.label, adv, norm, clean_score, adv_score))
            },
        )
        .collect::<Result<_, AdversaryError>>()?;
    let outcomes = gammas
        .iter()
        .map(|&gamma| {
            let per_sample = prepared
                .iter()
                .map(|&(sample_id, label, _, norm, clean_score, adv_score)| {
                    let attacked = norm < gamma;
                    PerSampleOutcome {
                        sample_id,
                        label,
                        norm: if attacked { norm } else { 0.0 },
                        attacked,
                        score: if attacked { adv_score } else { clean_score },
                    }
                })
                .collect();
            aggregate(gamma, per_sample)
        })
        .collect();
    Ok(outcomes)
}

/// Per-sample candidate table for the adaptive attack: selection-time
/// misclassification rates and fresh-noise evaluation scores at every
/// candidate magnitude (index 0 is the unattacked input).
struct AdaptiveEntry {
    sample_id: u32,
    label: u32,
    rates: Vec<f64>,
    eval_scores: Vec<f64>,
}

/// The rate-threshold attack on a smoothed classifier: per sample, PGD with
/// the fixed-noise smoothed loss at every magnitude e in the grid, then pick
/// e* as the largest e whose misclassification-rate gain per unit magnitude
/// exceeds gamma; decline to attack when no magnitude clears the bar. Final
/// scores come from a fresh noise stream, decorrelated from selection; e*
/// itself is the accounted norm.
pub fn adaptive_smoothed_attack(
    samples: &[Sample],
    handle: &ClassifierHandle,
    spec: &SmoothingSpec,
    budget: &AttackBudget,
    gamma: f64,
    seeds: &SeedPolicy,
) -> Result<AttackOutcome, AdversaryError> {
    Ok(
        adaptive_attack_sweep(samples, handle, spec, budget, &[gamma], seeds)?
            .pop()
            .expect("one gamma in, one outcome out"),
    )
}

/// Gamma sweep sharing one PGD/rate/evaluation table across thresholds; the
/// per-gamma selection is a table scan, so sweeping is no more expensive
/// than a single attack.
pub fn adaptive_attack_sweep(
    samples: &[Sample],
    handle: &ClassifierHandle,
    spec: &SmoothingSpec,
    budget: &AttackBudget,
    gammas: &[f64],
    seeds: &SeedPolicy,
) -> Result<Vec<AttackOutcome>, AdversaryError> {
    budget.validate()?;
    if samples.is_empty() {
        return Err(AdversaryError::EmptyDataset);
    }
    if !matches!(spec.kind(), SmoothingKind::PixelGaussian { .. }) {
        return Err(AdversaryError::UnsupportedSmoothing);
    }
    if handle.logistic_params().is_none() {
        return Err(AdversaryError::UnsupportedModel);
    }
    let select = seeds.stream(SELECT_STREAM);
    let eval = seeds.stream(EVAL_STREAM);
    let entries: Vec<AdaptiveEntry> = samples
        .par_iter()
        .map_init(
            || handle.clone_sharing_counter(),
            |local, s| {
                let sel_seeds: Vec<u64> = (0..budget.grad_noise_draws)
                    .map(|j| select.stream(u64::from(j)).sample_seed(s.id))
                    .collect();
                let eval_seeds: Vec<u64> = (0..budget.eval_noise_draws)
                    .map(|k| eval.stream(u64::from(k)).sample_seed(s.id))
                    .collect();
                let rate_of = |img: &Image| -> Result<f64, AdversaryError> {
                    let mut wrong = 0u32;
                    for &seed in &sel_seeds {
                        let draw = randomize_input(img, spec, seed)?;
                        if local.predict(&draw.image)? != s.label {
                            wrong += 1;
                        }
                    }
                    Ok(f64::from(wrong) / f64::from(budget.grad_noise_draws))
                };
                let eval_of = |img: &Image| -> Result<f64, AdversaryError> {
                    let mut sum = 0.0;
                    for &seed in &eval_seeds {
                        let draw = randomize_input(img, spec, seed)?;
                        sum += local.score(&draw.image, s.label)?;
                    }
                    Ok(sum / f64::from(budget.eval_noise_draws))
                };
                let noise: Vec<Vec<f64>> = sel_seeds
                    .iter()
                    .map(|&seed| {
                        match sample_noise(spec, seed, s.image.num_components())? {
                            NoiseDraw::Pixel(n) => {
                                Ok(n.into_iter().map(f64::from).collect::<Vec<f64>>())
                            }
                            _ => Err(AdversaryError::UnsupportedSmoothing),
                        }
                    })
                    .collect::<Result<_, AdversaryError>>()?;
                let x0 = features_f64(&s.image);
                let mut rates = vec![rate_of(&s.image)?];
                let mut eval_scores = vec![eval_of(&s.image)?];
                for &e in &budget.magnitude_grid {
                    let adv_feats = pgd_core(
                        local,
                        &x0,
                        s.label,
                        e,
                        budget.pgd_steps,
                        Some(&noise),
                    )?;
                    let adv =
                        image_from_features(s.image.height(), s.image.width(), &adv_feats);
                    rates.push(rate_of(&adv)?);
                    eval_scores.push(eval_of(&adv)?);
                }
                Ok(AdaptiveEntry {
                    sample_id: s.id,
                    label: s.label,
                    rates,
                    eval_scores,
                })
            },
        )
        .collect::<Result<_, AdversaryError>>()?;
    let outcomes = gammas
        .iter()
        .map(|&gamma| {
            let per_sample = entries
                .iter()
                .map(|entry| {
                    let rate0 = entry.rates[0];
                    let chosen = budget
                        .magnitude_grid
                        .iter()
                        .enumerate()
                        .rev()
                        .find(|(i, &e)| (entry.rates[i + 1] - rate0) / e > gamma)
                        .map(|(i, &e)| (i, e));
                    match chosen {
                        Some((i, e_star)) => PerSampleOutcome {
                            sample_id: entry.sample_id,
                            label: entry.label,
                            norm: e_star,
                            attacked: true,
                            score: entry.eval_scores[i + 1],
                        },
                        None => PerSampleOutcome {
                            sample_id: entry.sample_id,
                            label: entry.label,
                            norm: 0.0,
                            attacked: false,
                            score: entry.eval_scores[0],
                        },
                    }
                })
                .collect();
            aggregate(gamma, per_sample)
        })
        .collect();
    Ok(outcomes)
}
