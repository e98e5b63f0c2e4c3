//! Degradation bounds: concave nondecreasing upper bounds on the total
//! variation between the smoothing distributions of two inputs, as a
//! function of their transformation distance.
//!
//! Each smoothing family pairs with exactly one bound. An independent total
//! variation oracle (closed forms plus Monte Carlo for the Gaussian case)
//! lets tests confirm every pairing from the distributions themselves.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::smoothing::{SmoothingKind, SmoothingSpec};
use crate::special::{erf, normal_cdf};
use crate::transform::ParamVector;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PsiError {
    #[error("epsilon must be non-negative, got {value}")]
    NegativeEpsilon { value: f64 },
    #[error("total variation oracle does not support this spec and parameter pairing")]
    UnsupportedPairing,
    #[error("parameter length {actual} does not match smoothing dimension {expected}")]
    ShapeMismatch { expected: usize, actual: usize },
}

/// Upper bound on TV(S(x1), S(x2)) as a function of transformation distance.
///
/// `ErfGaussian` uses the pinned Cody erf (absolute error below 1e-15) and
/// rounds the result up one ulp so the bound never under-states.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PsiFn {
    ErfGaussian { sigma: f64 },
    LinearUniform { a: f64 },
    Zero,
}

/// Evaluates the bound at distance `eps`, rounded up and capped at 1.
pub fn psi_eval(psi: PsiFn, eps: f64) -> Result<f64, PsiError> {
    if !(eps >= 0.0) {
        return Err(PsiError::NegativeEpsilon { value: eps });
    }
    if eps == 0.0 {
        return Ok(0.0);
    }
    let raw = match psi {
        PsiFn::ErfGaussian { sigma } => {
            if sigma == 0.0 {
                1.0
            } else {
                erf(eps / (2.0 * std::f64::consts::SQRT_2 * sigma))
            }
        }
        PsiFn::LinearUniform { a } => (eps / a).min(1.0),
        PsiFn::Zero => 0.0,
    };
    Ok(raw.next_up().min(1.0))
}

/// Smallest distance at which the bound reaches `q`, by bisection on the
/// monotone `psi_eval`. Returns `None` for the zero bound or when `q` is
/// outside the reachable range. Used for placing certificate grids, so only
/// monotonicity matters, not tightness.
pub fn psi_inverse(psi: PsiFn, q: f64) -> Option<f64> {
    if !(0.0..1.0).contains(&q) || q == 0.0 {
        return None;
    }
    let eval = |e: f64| psi_eval(psi, e).expect("non-negative eps");
    match psi {
        PsiFn::Zero => None,
        PsiFn::ErfGaussian { sigma } if sigma == 0.0 => None,
        _ => {
            let mut hi = 1.0f64;
            while eval(hi) < q {
                hi *= 2.0;
                if hi > 1e12 {
                    return None;
                }
            }
            let mut lo = 0.0f64;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if eval(mid) < q {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Some(hi)
        }
    }
}

/// The bound paired with each smoothing family. Exhaustive by construction.
pub fn pair_psi(spec: &SmoothingSpec) -> PsiFn {
    match spec.kind() {
        SmoothingKind::GaussianParam { sigma, .. } => PsiFn::ErfGaussian { sigma },
        SmoothingKind::PixelGaussian { sigma } => PsiFn::ErfGaussian { sigma },
        SmoothingKind::UniformParam { a, .. } => PsiFn::LinearUniform { a },
        SmoothingKind::UniformHue => PsiFn::Zero,
        SmoothingKind::ChannelSelect => PsiFn::Zero,
    }
}

/// Total variation between a smoothing distribution and its shift by
/// `theta`, measured directly from the distributions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvEstimate {
    /// Closed-form value.
    pub exact: f64,
    /// Monte Carlo estimate (Gaussian branch only).
    pub mc_estimate: Option<f64>,
    /// Standard error of the Monte Carlo estimate.
    pub mc_stderr: Option<f64>,
}

/// Computes the total variation oracle for `spec` shifted by `theta`.
///
/// Gaussian: closed form plus a Monte Carlo check on the likelihood-ratio
/// halfspace with `n_samples` common draws (skipped when zero). Uniform box:
/// exact overlap volume. Hue rotation and channel selection: exactly zero,
/// because the wrapped uniform law and the selected-channel law are invariant
/// to their paired transforms.
pub fn tv_oracle(
    spec: &SmoothingSpec,
    theta: &ParamVector,
    n_samples: u32,
    seed: u64,
) -> Result<TvEstimate, PsiError> {
    match spec.kind() {
        SmoothingKind::GaussianParam { sigma, dim } => {
            check_len(theta, dim)?;
            gaussian_tv(sigma, theta.values(), n_samples, seed)
        }
        SmoothingKind::PixelGaussian { sigma } => {
            gaussian_tv(sigma, theta.values(), n_samples, seed)
        }
        SmoothingKind::UniformParam { a, dim } => {
            check_len(theta, dim)?;
            let overlap: f64 = theta
                .values()
                .iter()
                .map(|t| ((a - t.abs()).max(0.0)) / a)
                .product();
            Ok(TvEstimate {
                exact: 1.0 - overlap,
                mc_estimate: None,
                mc_stderr: None,
            })
        }
        SmoothingKind::UniformHue | SmoothingKind::ChannelSelect => Ok(TvEstimate {
            exact: 0.0,
            mc_estimate: None,
            mc_stderr: None,
        }),
    }
}

fn check_len(theta: &ParamVector, expected: usize) -> Result<(), PsiError> {
    if theta.len() != expected {
        return Err(PsiError::ShapeMismatch {
            expected,
            actual: theta.len(),
        });
    }
    Ok(())
}

fn gaussian_tv(
    sigma: f64,
    theta: &[f64],
    n_samples: u32,
    seed: u64,
) -> Result<TvEstimate, PsiError> {
    let r = theta.iter().map(|t| t * t).sum::<f64>().sqrt();
    let exact = if sigma == 0.0 {
        if r == 0.0 {
            0.0
        } else {
            1.0
        }
    } else {
        2.0 * normal_cdf(r / (2.0 * sigma)) - 1.0
    };
    if n_samples == 0 || r == 0.0 || sigma == 0.0 {
        return Ok(TvEstimate {
            exact,
            mc_estimate: if n_samples > 0 && r == 0.0 { Some(0.0) } else { None },
            mc_stderr: if n_samples > 0 && r == 0.0 { Some(0.0) } else { None },
        });
    }
    // TV = P(Z in A) - P(Z + theta in A) for the likelihood-ratio region
    // A = {x : <x, theta> < r^2 / 2}, estimated with common draws.
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("validated sigma");
    let half = r * r / 2.0;
    let mut hits = 0u64;
    for _ in 0..n_samples {
        let dot: f64 = theta.iter().map(|t| t * normal.sample(&mut rng)).sum();
        let in_a = dot < half;
        let shifted_in_a = dot + r * r < half;
        if in_a && !shifted_in_a {
            hits += 1;
        }
    }
    let p = hits as f64 / f64::from(n_samples);
    let stderr = (p * (1.0 - p) / f64::from(n_samples)).sqrt();
    Ok(TvEstimate {
        exact,
        mc_estimate: Some(p),
        mc_stderr: Some(stderr),
    })
}
