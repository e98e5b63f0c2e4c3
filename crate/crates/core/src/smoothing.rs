//! Smoothing distributions and deterministic seeded sampling.
//!
//! A smoothing spec pairs a noise distribution with the space it perturbs:
//! either the parameter space of one transformation family or raw pixel
//! space. Sampling is a pure function of `(spec, seed)`; per-sample seeds are
//! derived from a master seed with a splittable mixer so that evaluation
//! order and thread count cannot change any draw. The generator is pinned to
//! ChaCha12 and recorded in run manifests.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::Image;
use crate::transform::{apply_transform, NormKind, ParamVector, TransformError, TransformKind};

/// Name and version of the pinned pseudo-random generator, recorded in run
/// manifests so certificates are reproducible artifacts.
pub const GENERATOR_NAME: &str = "chacha12/rand_chacha-0.3";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SmoothingError {
    #[error("sigma must be finite and non-negative, got {value}")]
    InvalidSigma { value: f64 },
    #[error("uniform width must be finite and positive, got {value}")]
    InvalidWidth { value: f64 },
    #[error("noise dimension {dim} does not match transform parameter length {expected}")]
    DimMismatch { dim: usize, expected: usize },
    #[error("smoothing kind {kind} cannot pair with {space}")]
    IncompatiblePairing { kind: String, space: String },
    #[error("shift radius is defined only for 3d Gaussian and 2d uniform smoothing")]
    UnsupportedRadius,
    #[error(transparent)]
    Transform(#[from] TransformError),
}

/// Noise family. Sigma zero is allowed as the degenerate point-mass limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SmoothingKind {
    GaussianParam { sigma: f64, dim: usize },
    UniformParam { a: f64, dim: usize },
    UniformHue,
    ChannelSelect,
    PixelGaussian { sigma: f64 },
}

impl SmoothingKind {
    fn name(&self) -> &'static str {
        match self {
            SmoothingKind::GaussianParam { .. } => "gaussian_param",
            SmoothingKind::UniformParam { .. } => "uniform_param",
            SmoothingKind::UniformHue => "uniform_hue",
            SmoothingKind::ChannelSelect => "channel_select",
            SmoothingKind::PixelGaussian { .. } => "pixel_gaussian",
        }
    }
}

/// Where the noise acts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingSpace {
    Transform(TransformKind),
    PixelSpace,
}

impl SmoothingSpace {
    fn name(self) -> &'static str {
        match self {
            SmoothingSpace::Transform(TransformKind::ColorShift) => "color_shift",
            SmoothingSpace::Transform(TransformKind::HueShift) => "hue_shift",
            SmoothingSpace::Transform(TransformKind::SvShift) => "sv_shift",
            SmoothingSpace::Transform(TransformKind::VectorTranslate) => "vector_translate",
            SmoothingSpace::PixelSpace => "pixel_space",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingSpec {
    kind: SmoothingKind,
    space: SmoothingSpace,
}

impl SmoothingSpec {
    pub fn new(kind: SmoothingKind, space: SmoothingSpace) -> Result<Self, SmoothingError> {
        let incompatible = || SmoothingError::IncompatiblePairing {
            kind: kind.name().to_owned(),
            space: space.name().to_owned(),
        };
        match kind {
            SmoothingKind::GaussianParam { sigma, dim } => {
                if !(sigma.is_finite() && sigma >= 0.0) {
                    return Err(SmoothingError::InvalidSigma { value: sigma });
                }
                let SmoothingSpace::Transform(t) = space else {
                    return Err(incompatible());
                };
                check_dim(t, dim)?;
            }
            SmoothingKind::UniformParam { a, dim } => {
                if !(a.is_finite() && a > 0.0) {
                    return Err(SmoothingError::InvalidWidth { value: a });
                }
                let SmoothingSpace::Transform(t) = space else {
                    return Err(incompatible());
                };
                // The linear psi is only a TV bound under an l1 parameter
                // metric; box smoothing over an l2 space would under-report
                // on diagonal shifts.
                if t.norm_kind() != NormKind::L1 {
                    return Err(incompatible());
                }
                check_dim(t, dim)?;
            }
            SmoothingKind::UniformHue => {
                if space != SmoothingSpace::Transform(TransformKind::HueShift) {
                    return Err(incompatible());
                }
            }
            SmoothingKind::ChannelSelect => {
                if space != SmoothingSpace::Transform(TransformKind::ColorShift) {
                    return Err(incompatible());
                }
            }
            SmoothingKind::PixelGaussian { sigma } => {
                if !(sigma.is_finite() && sigma >= 0.0) {
                    return Err(SmoothingError::InvalidSigma { value: sigma });
                }
                if space != SmoothingSpace::PixelSpace {
                    return Err(incompatible());
                }
            }
        }
        Ok(Self { kind, space })
    }

    pub fn gaussian_param(sigma: f64, transform: TransformKind) -> Result<Self, SmoothingError> {
        let dim = fixed_param_len(transform)?;
        Self::new(
            SmoothingKind::GaussianParam { sigma, dim },
            SmoothingSpace::Transform(transform),
        )
    }

    pub fn uniform_param(a: f64, transform: TransformKind) -> Result<Self, SmoothingError> {
        let dim = fixed_param_len(transform)?;
        Self::new(
            SmoothingKind::UniformParam { a, dim },
            SmoothingSpace::Transform(transform),
        )
    }

    pub fn uniform_hue() -> Self {
        Self {
            kind: SmoothingKind::UniformHue,
            space: SmoothingSpace::Transform(TransformKind::HueShift),
        }
    }

    pub fn channel_select() -> Self {
        Self {
            kind: SmoothingKind::ChannelSelect,
            space: SmoothingSpace::Transform(TransformKind::ColorShift),
        }
    }

    pub fn pixel_gaussian(sigma: f64) -> Result<Self, SmoothingError> {
        Self::new(
            SmoothingKind::PixelGaussian { sigma },
            SmoothingSpace::PixelSpace,
        )
    }

    pub fn kind(&self) -> SmoothingKind {
        self.kind
    }

    pub fn space(&self) -> SmoothingSpace {
        self.space
    }
}

fn fixed_param_len(transform: TransformKind) -> Result<usize, SmoothingError> {
    match transform {
        TransformKind::ColorShift => Ok(3),
        TransformKind::HueShift => Ok(1),
        TransformKind::SvShift => Ok(2),
        TransformKind::VectorTranslate => Err(SmoothingError::IncompatiblePairing {
            kind: "fixed-dimension constructor".to_owned(),
            space: "vector_translate".to_owned(),
        }),
    }
}

fn check_dim(transform: TransformKind, dim: usize) -> Result<(), SmoothingError> {
    let expected = match transform {
        TransformKind::ColorShift => 3,
        TransformKind::HueShift => 1,
        TransformKind::SvShift => 2,
        // Depends on image size, checked at application time.
        TransformKind::VectorTranslate => return Ok(()),
    };
    if dim != expected {
        return Err(SmoothingError::DimMismatch { dim, expected });
    }
    Ok(())
}

/// Derives per-sample seeds from a master seed. Same `(master, sample_id)`
/// always yields the same seed regardless of evaluation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPolicy {
    master_seed: u64,
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeedPolicy {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// Seed for one sample's noise draw.
    pub fn sample_seed(&self, sample_id: u32) -> u64 {
        splitmix64(splitmix64(self.master_seed) ^ splitmix64(0xA076_1D64_78BD_642F ^ u64::from(sample_id)))
    }

    /// Derived policy for an independent noise stream (selection vs final
    /// evaluation, repeated trials). Distinct tags give decorrelated streams.
    pub fn stream(&self, tag: u64) -> SeedPolicy {
        SeedPolicy::new(splitmix64(self.master_seed ^ splitmix64(0xE703_7ED1_A0B4_28DB ^ tag)))
    }
}

/// One draw from a smoothing distribution.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseDraw {
    Param(ParamVector),
    Pixel(Vec<f32>),
    Channel(usize),
}

fn rng_for(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// Samples the noise for one input. `components` sizes pixel-space noise and
/// vector-translation parameters; it is ignored for fixed-dimension kinds.
pub fn sample_noise(
    spec: &SmoothingSpec,
    seed: u64,
    components: usize,
) -> Result<NoiseDraw, SmoothingError> {
    let mut rng = rng_for(seed);
    match spec.kind {
        SmoothingKind::GaussianParam { sigma, dim } => {
            let dim = resolve_dim(spec, dim, components)?;
            let normal = Normal::new(0.0, sigma).expect("validated sigma");
            let values: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
            Ok(NoiseDraw::Param(param_for(spec, values)?))
        }
        SmoothingKind::UniformParam { a, dim } => {
            let dim = resolve_dim(spec, dim, components)?;
            let values: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.0..a)).collect();
            Ok(NoiseDraw::Param(param_for(spec, values)?))
        }
        SmoothingKind::UniformHue => {
            let delta = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            Ok(NoiseDraw::Param(param_for(spec, vec![delta])?))
        }
        SmoothingKind::ChannelSelect => Ok(NoiseDraw::Channel(rng.gen_range(0..3))),
        SmoothingKind::PixelGaussian { sigma } => {
            let normal = Normal::new(0.0, sigma).expect("validated sigma");
            let noise = (0..components).map(|_| normal.sample(&mut rng) as f32).collect();
            Ok(NoiseDraw::Pixel(noise))
        }
    }
}

fn resolve_dim(
    spec: &SmoothingSpec,
    dim: usize,
    components: usize,
) -> Result<usize, SmoothingError> {
    if spec.space == SmoothingSpace::Transform(TransformKind::VectorTranslate) {
        if components != 0 && dim != components {
            return Err(SmoothingError::DimMismatch {
                dim,
                expected: components,
            });
        }
        Ok(dim)
    } else {
        Ok(dim)
    }
}

fn param_for(spec: &SmoothingSpec, values: Vec<f64>) -> Result<ParamVector, SmoothingError> {
    let SmoothingSpace::Transform(t) = spec.space else {
        unreachable!("param noise only for transform spaces");
    };
    Ok(t.param(values)?)
}

/// A smoothed input together with a degeneracy flag. Degenerate draws (an
/// all-zero selected channel) are kept, not errored, and scored as failures
/// downstream.
#[derive(Debug, Clone)]
pub struct RandomizedDraw {
    pub image: Image,
    pub degenerate: bool,
}

/// Keeps channel `channel`, rescaled so its own maximum is 1, and zeroes the
/// other two. An all-zero selected channel yields the all-zero image with the
/// degenerate flag set.
pub fn apply_channel_select(img: &Image, channel: usize) -> RandomizedDraw {
    assert!(channel < 3, "channel index out of range");
    let maxima = img.channel_maxima();
    let m = f64::from(maxima[channel]);
    let mut pixels = vec![0.0f32; img.pixels().len()];
    if m > 0.0 {
        for (i, &v) in img.pixels().iter().enumerate() {
            if i % 3 == channel {
                pixels[i] = (f64::from(v) / m).min(1.0) as f32;
            }
        }
    }
    RandomizedDraw {
        image: Image::from_raw(img.height(), img.width(), pixels),
        degenerate: m <= 0.0,
    }
}

/// Applies one random smoothing draw to `img`.
pub fn randomize_input(
    img: &Image,
    spec: &SmoothingSpec,
    seed: u64,
) -> Result<RandomizedDraw, SmoothingError> {
    let components = img.num_components();
    match sample_noise(spec, seed, components)? {
        NoiseDraw::Param(theta) => {
            let SmoothingSpace::Transform(t) = spec.space else {
                unreachable!();
            };
            let image = apply_transform(t, img, &theta)?;
            Ok(RandomizedDraw {
                image,
                degenerate: false,
            })
        }
        NoiseDraw::Channel(c) => Ok(apply_channel_select(img, c)),
        NoiseDraw::Pixel(noise) => {
            let pixels = img
                .pixels()
                .iter()
                .zip(&noise)
                .map(|(&v, &n)| (v + n).clamp(0.0, 1.0))
                .collect();
            Ok(RandomizedDraw {
                image: Image::from_raw(img.height(), img.width(), pixels),
                degenerate: false,
            })
        }
    }
}

/// Expected perturbation norm of one smoothing draw: the Wasserstein radius
/// of the randomly-transformed distribution used by the shifted-evaluation
/// baselines. Defined for the 3d Gaussian (l2) and the 2d uniform (l1).
pub fn smoothing_shift_radius(spec: &SmoothingSpec) -> Result<f64, SmoothingError> {
    match spec.kind {
        SmoothingKind::GaussianParam { sigma, dim: 3 } => {
            Ok(2.0 * std::f64::consts::SQRT_2 * sigma / std::f64::consts::PI.sqrt())
        }
        SmoothingKind::UniformParam { a, dim: 2 } => Ok(a),
        _ => Err(SmoothingError::UnsupportedRadius),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{rgb_to_hsv, TAU};
    use crate::testutil::DeterministicRng;
    use crate::transform::{color_shift, hue_shift_hsv, wrap_angle, TransformKind};
    use std::f64::consts::PI;

    #[test]
    fn gaussian_sample_mean_is_near_zero() {
        let spec = SmoothingSpec::gaussian_param(0.5, TransformKind::ColorShift).unwrap();
        let policy = SeedPolicy::new(71);
        let mut sums = [0.0f64; 3];
        let n = 100_000u32;
        for id in 0..n {
            let NoiseDraw::Param(p) = sample_noise(&spec, policy.sample_seed(id), 0).unwrap()
            else {
                panic!("expected param draw");
            };
            for (s, v) in sums.iter_mut().zip(p.values()) {
                *s += v;
            }
        }
        for s in sums {
            assert!((s / f64::from(n)).abs() < 0.01);
        }
    }

    #[test]
    fn uniform_draws_stay_in_support() {
        let spec = SmoothingSpec::uniform_param(2.0, TransformKind::SvShift).unwrap();
        let policy = SeedPolicy::new(72);
        for id in 0..2000 {
            let NoiseDraw::Param(p) = sample_noise(&spec, policy.sample_seed(id), 0).unwrap()
            else {
                panic!("expected param draw");
            };
            assert!(p.values().iter().all(|&v| (0.0..=2.0).contains(&v)));
        }
    }

    #[test]
    fn same_seed_same_draw_distinct_ids_differ() {
        let spec = SmoothingSpec::gaussian_param(1.0, TransformKind::ColorShift).unwrap();
        let policy = SeedPolicy::new(73);
        let a = sample_noise(&spec, policy.sample_seed(5), 0).unwrap();
        let b = sample_noise(&spec, policy.sample_seed(5), 0).unwrap();
        let c = sample_noise(&spec, policy.sample_seed(6), 0).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn stream_derivation_changes_seeds() {
        let policy = SeedPolicy::new(74);
        let other = policy.stream(1);
        assert_ne!(policy.sample_seed(0), other.sample_seed(0));
        assert_eq!(other.sample_seed(3), policy.stream(1).sample_seed(3));
    }

    #[test]
    fn uniform_hue_draws_in_minus_pi_pi() {
        let spec = SmoothingSpec::uniform_hue();
        let policy = SeedPolicy::new(75);
        for id in 0..2000 {
            let NoiseDraw::Param(p) = sample_noise(&spec, policy.sample_seed(id), 0).unwrap()
            else {
                panic!("expected param draw");
            };
            assert!((-PI..PI).contains(&p.values()[0]));
        }
    }

    #[test]
    fn channel_select_scales_to_own_max() {
        let img = Image::new(1, 2, vec![0.5, 0.3, 0.1, 0.25, 1.0, 0.9]).unwrap();
        let out = apply_channel_select(&img, 0);
        assert!(!out.degenerate);
        let p = out.image.pixels();
        assert!((f64::from(p[0]) - 1.0).abs() < 1e-6);
        assert!((f64::from(p[3]) - 0.5).abs() < 1e-6);
        assert_eq!(p[1], 0.0);
        assert_eq!(p[2], 0.0);
        assert_eq!(p[4], 0.0);
        assert_eq!(p[5], 0.0);
    }

    #[test]
    fn channel_select_flags_all_zero_channel() {
        let img = Image::new(1, 1, vec![0.0, 0.5, 1.0]).unwrap();
        let out = apply_channel_select(&img, 0);
        assert!(out.degenerate);
        assert!(out.image.pixels().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn channel_select_is_invariant_to_color_shift() {
        let mut rng = DeterministicRng::seeded(76);
        for _ in 0..200 {
            let img = rng.random_normalized_image(5, 5);
            let theta = TransformKind::ColorShift
                .param(vec![
                    rng.uniform(-2.0, 2.0),
                    rng.uniform(-2.0, 2.0),
                    rng.uniform(-2.0, 2.0),
                ])
                .unwrap();
            let shifted = color_shift(&img, &theta).unwrap();
            for c in 0..3 {
                let a = apply_channel_select(&img, c);
                let b = apply_channel_select(&shifted, c);
                assert!(a.image.max_abs_diff(&b.image) < 1e-6);
            }
        }
    }

    #[test]
    fn pixel_gaussian_sigma_zero_is_identity() {
        let mut rng = DeterministicRng::seeded(77);
        let img = rng.random_image(4, 4);
        let spec = SmoothingSpec::pixel_gaussian(0.0).unwrap();
        let out = randomize_input(&img, &spec, 99).unwrap();
        assert_eq!(img.pixels(), out.image.pixels());
    }

    #[test]
    fn pixel_gaussian_clamps_to_unit_interval() {
        let mut rng = DeterministicRng::seeded(78);
        let img = rng.random_image(4, 4);
        let spec = SmoothingSpec::pixel_gaussian(1.5).unwrap();
        for seed in 0..50 {
            let out = randomize_input(&img, &spec, seed).unwrap();
            assert!(out.image.pixels().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn randomize_input_is_deterministic() {
        let mut rng = DeterministicRng::seeded(79);
        let img = rng.random_normalized_image(6, 6);
        let spec = SmoothingSpec::gaussian_param(0.5, TransformKind::ColorShift).unwrap();
        let a = randomize_input(&img, &spec, 1234).unwrap();
        let b = randomize_input(&img, &spec, 1234).unwrap();
        assert_eq!(a.image.pixels(), b.image.pixels());
    }

    #[test]
    fn shift_radius_matches_closed_forms() {
        let g = SmoothingSpec::gaussian_param(1.0, TransformKind::ColorShift).unwrap();
        assert!((smoothing_shift_radius(&g).unwrap() - 1.595_769_121_605_731).abs() < 1e-12);
        let g0 = SmoothingSpec::gaussian_param(0.0, TransformKind::ColorShift).unwrap();
        assert_eq!(smoothing_shift_radius(&g0).unwrap(), 0.0);
        let u = SmoothingSpec::uniform_param(0.7, TransformKind::SvShift).unwrap();
        assert_eq!(smoothing_shift_radius(&u).unwrap(), 0.7);
        assert!(matches!(
            smoothing_shift_radius(&SmoothingSpec::uniform_hue()),
            Err(SmoothingError::UnsupportedRadius)
        ));
    }

    #[test]
    fn gaussian3_norm_mc_matches_radius_within_one_percent() {
        let spec = SmoothingSpec::gaussian_param(0.8, TransformKind::ColorShift).unwrap();
        let policy = SeedPolicy::new(80);
        let n = 1_000_000u32;
        let mut sum = 0.0f64;
        for id in 0..n {
            let NoiseDraw::Param(p) = sample_noise(&spec, policy.sample_seed(id), 0).unwrap()
            else {
                panic!("expected param draw");
            };
            sum += p.values().iter().map(|v| v * v).sum::<f64>().sqrt();
        }
        let mc = sum / f64::from(n);
        let exact = smoothing_shift_radius(&spec).unwrap();
        assert!((mc - exact).abs() / exact < 0.01, "mc {mc} exact {exact}");
    }

    #[test]
    fn hue_noise_composes_with_hue_shift() {
        // Rotating by theta then delta equals rotating once by the wrapped
        // sum; comparison is circular because hue is stored mod 2*pi.
        let mut rng = DeterministicRng::seeded(81);
        for _ in 0..200 {
            let img = rng.random_hsv_image(4, 4);
            let theta = rng.uniform(-TAU, TAU);
            let delta = rng.uniform(-PI, PI);
            let a = hue_shift_hsv(&hue_shift_hsv(&img, theta), delta);
            let b = hue_shift_hsv(&img, wrap_angle(theta + delta));
            for (x, y) in a.pixels().chunks_exact(3).zip(b.pixels().chunks_exact(3)) {
                let d = f64::from((x[0] - y[0]).abs());
                let circ = d.min(TAU - d);
                assert!(circ < 1e-5);
                assert_eq!(x[1], y[1]);
                assert_eq!(x[2], y[2]);
            }
        }
    }

    #[test]
    fn wrapped_uniform_hue_is_measure_preserving() {
        // Histogram of w(theta + delta) for delta ~ U[-pi, pi) against the
        // uniform law. Chi-squared with 31 dof, 0.999 quantile.
        let spec = SmoothingSpec::uniform_hue();
        let policy = SeedPolicy::new(82);
        let theta = 1.234;
        let bins = 32usize;
        let n = 100_000u32;
        let mut counts = vec![0u32; bins];
        for id in 0..n {
            let NoiseDraw::Param(p) = sample_noise(&spec, policy.sample_seed(id), 0).unwrap()
            else {
                panic!("expected param draw");
            };
            let w = wrap_angle(theta + p.values()[0]);
            let b = ((w / TAU) * bins as f64) as usize;
            counts[b.min(bins - 1)] += 1;
        }
        let expected = f64::from(n) / bins as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = f64::from(c) - expected;
                d * d / expected
            })
            .sum();
        assert!(chi2 < 61.098_306_081_058_126, "chi2 {chi2}");
    }

    #[test]
    fn spec_validation_rejects_bad_pairings() {
        assert!(SmoothingSpec::new(
            SmoothingKind::UniformHue,
            SmoothingSpace::Transform(TransformKind::ColorShift)
        )
        .is_err());
        assert!(SmoothingSpec::new(
            SmoothingKind::ChannelSelect,
            SmoothingSpace::Transform(TransformKind::HueShift)
        )
        .is_err());
        assert!(SmoothingSpec::new(
            SmoothingKind::PixelGaussian { sigma: 0.5 },
            SmoothingSpace::Transform(TransformKind::ColorShift)
        )
        .is_err());
        assert!(SmoothingSpec::new(
            SmoothingKind::GaussianParam { sigma: 0.5, dim: 2 },
            SmoothingSpace::Transform(TransformKind::ColorShift)
        )
        .is_err());
        assert!(SmoothingSpec::new(
            SmoothingKind::GaussianParam {
                sigma: -1.0,
                dim: 3
            },
            SmoothingSpace::Transform(TransformKind::ColorShift)
        )
        .is_err());
        assert!(SmoothingSpec::new(
            SmoothingKind::UniformParam { a: 0.0, dim: 2 },
            SmoothingSpace::Transform(TransformKind::SvShift)
        )
        .is_err());
        // Box smoothing over an l2 metric would pair the linear psi with a
        // product-form TV that exceeds it on diagonal shifts.
        assert!(matches!(
            SmoothingSpec::uniform_param(1.0, TransformKind::ColorShift),
            Err(SmoothingError::IncompatiblePairing { .. })
        ));
        assert!(matches!(
            SmoothingSpec::uniform_param(1.0, TransformKind::HueShift),
            Err(SmoothingError::IncompatiblePairing { .. })
        ));
    }

    #[test]
    fn randomized_hue_draw_keeps_saturation_and_value() {
        let mut rng = DeterministicRng::seeded(83);
        let img = rng.random_image(5, 5);
        let spec = SmoothingSpec::uniform_hue();
        let out = randomize_input(&img, &spec, 4242).unwrap();
        let before = rgb_to_hsv(&img);
        let after = rgb_to_hsv(&out.image);
        for (a, b) in before
            .pixels()
            .chunks_exact(3)
            .zip(after.pixels().chunks_exact(3))
        {
            assert!((a[1] - b[1]).abs() < 2e-5);
            assert!((a[2] - b[2]).abs() < 2e-5);
        }
    }
}
