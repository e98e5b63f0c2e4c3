//! Parameterized image transformations and the induced shift distance.
//!
//! Every family here satisfies additive composability: applying the transform
//! with `theta1` and then `theta2` equals applying it once with
//! `theta1 + theta2`. That property is what lets a smoothing distribution in
//! parameter space absorb a shift of the same family, so the certification
//! machinery depends on it. `transform_distance` reports the parameter norm,
//! which upper-bounds the distance between an image and its transformed
//! version in the induced transformation metric.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{hsv_to_rgb, rgb_to_hsv, HsvImage, Image, TAU};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error("image is all zeros")]
    AllZeroImage,
    #[error("color shift requires a max-normalized image, global max is {max}")]
    NotNormalized { max: f32 },
    #[error("saturation and brightness are identically zero")]
    DegenerateImage,
    #[error("parameter component {index} is negative ({value})")]
    NegativeParam { index: usize, value: f64 },
    #[error("parameter length {actual} does not match expected {expected}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("parameter component {index} is not finite")]
    NonFiniteParam { index: usize },
}

/// Norm used to measure a parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormKind {
    L1,
    L2,
    /// Absolute value of a single scalar parameter.
    Abs,
}

/// Transformation parameter with the norm its family is measured in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    norm_kind: NormKind,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, norm_kind: NormKind) -> Result<Self, TransformError> {
        for (index, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(TransformError::NonFiniteParam { index });
            }
        }
        Ok(Self { values, norm_kind })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm_kind(&self) -> NormKind {
        self.norm_kind
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Componentwise sum; both operands must share length and norm kind.
    pub fn add(&self, other: &ParamVector) -> Result<ParamVector, TransformError> {
        if self.values.len() != other.values.len() || self.norm_kind != other.norm_kind {
            return Err(TransformError::ShapeMismatch {
                expected: self.values.len(),
                actual: other.values.len(),
            });
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        ParamVector::new(values, self.norm_kind)
    }

    pub fn scale(&self, alpha: f64) -> Result<ParamVector, TransformError> {
        ParamVector::new(self.values.iter().map(|v| v * alpha).collect(), self.norm_kind)
    }

    /// Raw norm under this vector's own norm kind, without any circular
    /// reduction. `transform_distance` applies the per-family reduction.
    pub fn norm(&self) -> f64 {
        match self.norm_kind {
            NormKind::L1 => self.values.iter().map(|v| v.abs()).sum(),
            NormKind::L2 => self.values.iter().map(|v| v * v).sum::<f64>().sqrt(),
            NormKind::Abs => self.values.iter().map(|v| v.abs()).sum(),
        }
    }
}

/// The four transformation families the certifier supports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    ColorShift,
    HueShift,
    SvShift,
    VectorTranslate,
}

impl TransformKind {
    /// Parameter length for an image with `components` scalar entries
    /// (height x width x 3). Only VectorTranslate depends on it.
    pub fn param_len(self, components: usize) -> usize {
        match self {
            TransformKind::ColorShift => 3,
            TransformKind::HueShift => 1,
            TransformKind::SvShift => 2,
            TransformKind::VectorTranslate => components,
        }
    }

    pub fn norm_kind(self) -> NormKind {
        match self {
            TransformKind::ColorShift => NormKind::L2,
            TransformKind::HueShift => NormKind::Abs,
            TransformKind::SvShift => NormKind::L1,
            TransformKind::VectorTranslate => NormKind::L2,
        }
    }

    /// Builds a parameter vector carrying this family's norm kind.
    pub fn param(self, values: Vec<f64>) -> Result<ParamVector, TransformError> {
        ParamVector::new(values, self.norm_kind())
    }
}

/// Wraps an angle into [0, 2*pi).
pub fn wrap_angle(x: f64) -> f64 {
    let r = x - TAU * (x / TAU).floor();
    if r >= TAU || r < 0.0 {
        0.0
    } else {
        r
    }
}

/// Minimal absolute rotation equivalent to `theta`, in [0, pi].
pub fn hue_distance(theta: f64) -> f64 {
    let r = wrap_angle(theta.abs());
    if r > std::f64::consts::PI {
        TAU - r
    } else {
        r
    }
}

fn check_len(theta: &ParamVector, expected: usize) -> Result<(), TransformError> {
    if theta.len() != expected {
        return Err(TransformError::ShapeMismatch {
            expected,
            actual: theta.len(),
        });
    }
    Ok(())
}

/// Scales each channel by 2^theta_c and renormalizes so the global max is 1.
///
/// Input must already be max-normalized; the renormalization is what makes
/// the family additively composable and keeps the zero parameter an exact
/// identity.
pub fn color_shift(img: &Image, theta: &ParamVector) -> Result<Image, TransformError> {
    check_len(theta, 3)?;
    let global_max = img.global_max();
    if global_max == 0.0 {
        return Err(TransformError::AllZeroImage);
    }
    if (f64::from(global_max) - 1.0).abs() > 1e-5 {
        return Err(TransformError::NotNormalized { max: global_max });
    }
    let scale = [
        theta.values()[0].exp2(),
        theta.values()[1].exp2(),
        theta.values()[2].exp2(),
    ];
    let channel_max = img.channel_maxima();
    let mut new_max = 0.0f64;
    for c in 0..3 {
        let m = scale[c] * f64::from(channel_max[c]);
        if m > new_max {
            new_max = m;
        }
    }
    let pixels = img
        .pixels()
        .iter()
        .enumerate()
        .map(|(i, &v)| ((scale[i % 3] * f64::from(v) / new_max).min(1.0)) as f32)
        .collect();
    Ok(Image::from_raw(img.height(), img.width(), pixels))
}

/// Rotates every hue by `theta` radians in HSV space; saturation and
/// brightness pass through untouched.
pub fn hue_shift_hsv(img: &HsvImage, theta: f64) -> HsvImage {
    let pixels = img
        .pixels()
        .chunks_exact(3)
        .flat_map(|p| {
            [
                wrap_angle(f64::from(p[0]) + theta) as f32,
                p[1],
                p[2],
            ]
        })
        .collect();
    HsvImage::from_raw(img.height(), img.width(), pixels)
}

pub fn hue_shift(img: &Image, theta: &ParamVector) -> Result<Image, TransformError> {
    check_len(theta, 1)?;
    let hsv = rgb_to_hsv(img);
    Ok(hsv_to_rgb(&hue_shift_hsv(&hsv, theta.values()[0])))
}

/// Shifts the mean saturation and brightness by factors 2^theta and
/// renormalizes so the larger of the two channel maxima is 1.
///
/// Parameters are restricted to be non-negative; that is the regime in which
/// the family is additively composable.
pub fn sv_shift_hsv(img: &HsvImage, theta: &[f64; 2]) -> Result<HsvImage, TransformError> {
    for (index, &value) in theta.iter().enumerate() {
        if value < 0.0 {
            return Err(TransformError::NegativeParam { index, value });
        }
    }
    let n = (img.height() * img.width()) as f64;
    let mut s_sum = 0.0f64;
    let mut v_sum = 0.0f64;
    let mut s_max = 0.0f64;
    let mut v_max = 0.0f64;
    for p in img.pixels().chunks_exact(3) {
        let s = f64::from(p[1]);
        let v = f64::from(p[2]);
        s_sum += s;
        v_sum += v;
        s_max = s_max.max(s);
        v_max = v_max.max(v);
    }
    let s_off = (theta[0].exp2() - 1.0) * (s_sum / n);
    let v_off = (theta[1].exp2() - 1.0) * (v_sum / n);
    let max = (s_max + s_off).max(v_max + v_off);
    if max <= 0.0 {
        return Err(TransformError::DegenerateImage);
    }
    let pixels = img
        .pixels()
        .chunks_exact(3)
        .flat_map(|p| {
            [
                p[0],
                (((f64::from(p[1]) + s_off) / max).min(1.0)) as f32,
                (((f64::from(p[2]) + v_off) / max).min(1.0)) as f32,
            ]
        })
        .collect();
    Ok(HsvImage::from_raw(img.height(), img.width(), pixels))
}

pub fn sv_shift(img: &Image, theta: &ParamVector) -> Result<Image, TransformError> {
    check_len(theta, 2)?;
    let hsv = rgb_to_hsv(img);
    let shifted = sv_shift_hsv(&hsv, &[theta.values()[0], theta.values()[1]])?;
    Ok(hsv_to_rgb(&shifted))
}

/// Componentwise translation clamped back into [0, 1].
///
/// The clamp keeps outputs valid classifier inputs; composability is exact
/// only while no component saturates.
pub fn vector_translate(img: &Image, theta: &ParamVector) -> Result<Image, TransformError> {
    check_len(theta, img.pixels().len())?;
    let pixels = img
        .pixels()
        .iter()
        .zip(theta.values())
        .map(|(&v, &t)| (f64::from(v) + t).clamp(0.0, 1.0) as f32)
        .collect();
    Ok(Image::from_raw(img.height(), img.width(), pixels))
}

/// Applies the family selected by `kind`.
pub fn apply_transform(
    kind: TransformKind,
    img: &Image,
    theta: &ParamVector,
) -> Result<Image, TransformError> {
    match kind {
        TransformKind::ColorShift => color_shift(img, theta),
        TransformKind::HueShift => hue_shift(img, theta),
        TransformKind::SvShift => sv_shift(img, theta),
        TransformKind::VectorTranslate => vector_translate(img, theta),
    }
}

/// Parameter norm of `theta` under `kind`'s metric: l2 for color shift and
/// vector translation, l1 for SV shift, minimal rotation for hue shift.
///
/// For families where distinct parameters can produce the same image this is
/// an upper bound on the true transformation distance, which is all the
/// certificates need since the degradation bound is nondecreasing.
pub fn transform_distance(kind: TransformKind, theta: &ParamVector) -> Result<f64, TransformError> {
    match kind {
        TransformKind::ColorShift | TransformKind::VectorTranslate => {
            Ok(theta.values().iter().map(|v| v * v).sum::<f64>().sqrt())
        }
        TransformKind::HueShift => {
            check_len(theta, 1)?;
            Ok(hue_distance(theta.values()[0]))
        }
        TransformKind::SvShift => {
            for (index, &value) in theta.values().iter().enumerate() {
                if value < 0.0 {
                    return Err(TransformError::NegativeParam { index, value });
                }
            }
            Ok(theta.values().iter().sum())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::DeterministicRng;
    use std::f64::consts::PI;

    fn cs_param(values: [f64; 3]) -> ParamVector {
        TransformKind::ColorShift.param(values.to_vec()).unwrap()
    }

    #[test]
    fn color_shift_zero_is_exact_identity() {
        let mut rng = DeterministicRng::seeded(11);
        let img = rng.random_normalized_image(6, 5);
        let out = color_shift(&img, &cs_param([0.0, 0.0, 0.0])).unwrap();
        assert_eq!(img.pixels(), out.pixels());
    }

    #[test]
    fn color_shift_single_pixel_worked_example() {
        let img = Image::new(1, 1, vec![0.5, 1.0, 0.25]).unwrap();
        let out = color_shift(&img, &cs_param([1.0, 0.0, 0.0])).unwrap();
        let expect = [1.0f32, 1.0, 0.25];
        for (a, b) in out.pixels().iter().zip(expect) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn color_shift_rejects_unnormalized_input() {
        let img = Image::new(1, 1, vec![0.4, 0.9, 0.2]).unwrap();
        let err = color_shift(&img, &cs_param([0.5, 0.0, 0.0])).unwrap_err();
        assert!(matches!(err, TransformError::NotNormalized { .. }));
    }

    #[test]
    fn color_shift_rejects_all_zero() {
        let img = Image::new(2, 2, vec![0.0; 12]).unwrap();
        let err = color_shift(&img, &cs_param([0.0, 0.0, 0.0])).unwrap_err();
        assert_eq!(err, TransformError::AllZeroImage);
    }

    #[test]
    fn color_shift_rejects_wrong_param_len() {
        let img = Image::new(1, 1, vec![1.0, 0.5, 0.5]).unwrap();
        let theta = ParamVector::new(vec![0.1, 0.2], NormKind::L2).unwrap();
        assert!(matches!(
            color_shift(&img, &theta),
            Err(TransformError::ShapeMismatch { expected: 3, actual: 2 })
        ));
    }

    #[test]
    fn color_shift_composability_and_renormalization() {
        let mut rng = DeterministicRng::seeded(12);
        for _ in 0..1000 {
            let img = rng.random_normalized_image(8, 8);
            let t1 = cs_param([
                rng.uniform(-2.0, 2.0),
                rng.uniform(-2.0, 2.0),
                rng.uniform(-2.0, 2.0),
            ]);
            let t2 = cs_param([
                rng.uniform(-2.0, 2.0),
                rng.uniform(-2.0, 2.0),
                rng.uniform(-2.0, 2.0),
            ]);
            let chained = color_shift(&color_shift(&img, &t1).unwrap(), &t2).unwrap();
            let joint = color_shift(&img, &t1.add(&t2).unwrap()).unwrap();
            assert!(chained.max_abs_diff(&joint) < 1e-6);
            assert!((f64::from(chained.global_max()) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn hue_shift_zero_within_roundtrip_tolerance() {
        let mut rng = DeterministicRng::seeded(13);
        let img = rng.random_image(7, 4);
        let theta = TransformKind::HueShift.param(vec![0.0]).unwrap();
        let out = hue_shift(&img, &theta).unwrap();
        assert!(img.max_abs_diff(&out) < 1e-5);
    }

    #[test]
    fn hue_shift_wraps_three_half_pi_plus_pi() {
        let hsv = HsvImage::new(1, 1, vec![(1.5 * PI) as f32, 1.0, 1.0]).unwrap();
        let out = hue_shift_hsv(&hsv, PI);
        assert!((f64::from(out.pixels()[0]) - PI / 2.0).abs() < 1e-6);
    }

    #[test]
    fn hue_shift_preserves_s_and_v_bitwise() {
        let mut rng = DeterministicRng::seeded(14);
        let hsv = rng.random_hsv_image(6, 6);
        let out = hue_shift_hsv(&hsv, 2.3);
        for (a, b) in hsv.pixels().chunks_exact(3).zip(out.pixels().chunks_exact(3)) {
            assert_eq!(a[1], b[1]);
            assert_eq!(a[2], b[2]);
        }
    }

    #[test]
    fn hue_shift_composability() {
        let mut rng = DeterministicRng::seeded(15);
        let kind = TransformKind::HueShift;
        for _ in 0..1000 {
            let img = rng.random_image(8, 8);
            let a = rng.uniform(-TAU, TAU);
            let b = rng.uniform(-TAU, TAU);
            let t1 = kind.param(vec![a]).unwrap();
            let t2 = kind.param(vec![b]).unwrap();
            let chained = hue_shift(&hue_shift(&img, &t1).unwrap(), &t2).unwrap();
            let joint = hue_shift(&img, &t1.add(&t2).unwrap()).unwrap();
            assert!(chained.max_abs_diff(&joint) < 1e-5);
        }
    }

    #[test]
    fn sv_shift_two_pixel_worked_example() {
        let hsv = HsvImage::new(1, 2, vec![1.0, 0.2, 0.5, 2.0, 0.6, 1.0]).unwrap();
        let out = sv_shift_hsv(&hsv, &[1.0, 0.0]).unwrap();
        let got: Vec<f64> = out.pixels().iter().map(|&v| f64::from(v)).collect();
        assert!((got[1] - 0.6).abs() < 1e-6);
        assert!((got[4] - 1.0).abs() < 1e-6);
        assert!((got[2] - 0.5).abs() < 1e-6);
        assert!((got[5] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn sv_shift_zero_identity_when_prenormalized() {
        // v_max is 1, so the zero parameter divides by exactly 1.
        let mut rng = DeterministicRng::seeded(16);
        let mut pixels = rng.random_hsv_image(4, 4).pixels().to_vec();
        pixels[2] = 1.0;
        let hsv = HsvImage::new(4, 4, pixels).unwrap();
        let img = hsv_to_rgb(&hsv);
        let theta = TransformKind::SvShift.param(vec![0.0, 0.0]).unwrap();
        let out = sv_shift(&img, &theta).unwrap();
        assert!(img.max_abs_diff(&out) < 1e-5);
    }

    #[test]
    fn sv_shift_rejects_negative_params() {
        let hsv = HsvImage::new(1, 1, vec![0.0, 0.5, 0.5]).unwrap();
        let err = sv_shift_hsv(&hsv, &[-0.1, 0.0]).unwrap_err();
        assert!(matches!(err, TransformError::NegativeParam { index: 0, .. }));
    }

    #[test]
    fn sv_shift_rejects_all_black() {
        let img = Image::new(2, 2, vec![0.0; 12]).unwrap();
        let theta = TransformKind::SvShift.param(vec![0.5, 0.5]).unwrap();
        assert_eq!(sv_shift(&img, &theta).unwrap_err(), TransformError::DegenerateImage);
    }

    #[test]
    fn sv_shift_composability() {
        let mut rng = DeterministicRng::seeded(17);
        let kind = TransformKind::SvShift;
        for _ in 0..1000 {
            let img = rng.random_image(8, 8);
            let t1 = kind
                .param(vec![rng.uniform(0.0, 1.5), rng.uniform(0.0, 1.5)])
                .unwrap();
            let t2 = kind
                .param(vec![rng.uniform(0.0, 1.5), rng.uniform(0.0, 1.5)])
                .unwrap();
            let chained = sv_shift(&sv_shift(&img, &t1).unwrap(), &t2).unwrap();
            let joint = sv_shift(&img, &t1.add(&t2).unwrap()).unwrap();
            assert!(chained.max_abs_diff(&joint) < 1e-4);
        }
    }

    #[test]
    fn vector_translate_adds_and_clamps() {
        let img = Image::new(1, 1, vec![0.5, 0.5, 0.9]).unwrap();
        let theta = TransformKind::VectorTranslate
            .param(vec![0.2, 0.2, 0.5])
            .unwrap();
        let out = vector_translate(&img, &theta).unwrap();
        assert!((f64::from(out.pixels()[0]) - 0.7).abs() < 1e-7);
        assert!((f64::from(out.pixels()[1]) - 0.7).abs() < 1e-7);
        assert_eq!(out.pixels()[2], 1.0);
    }

    #[test]
    fn vector_translate_zero_identity() {
        let mut rng = DeterministicRng::seeded(18);
        let img = rng.random_image(3, 5);
        let theta = TransformKind::VectorTranslate
            .param(vec![0.0; 45])
            .unwrap();
        let out = vector_translate(&img, &theta).unwrap();
        assert_eq!(img.pixels(), out.pixels());
    }

    #[test]
    fn vector_translate_shape_mismatch() {
        let img = Image::new(2, 2, vec![0.5; 12]).unwrap();
        let theta = TransformKind::VectorTranslate.param(vec![0.1; 5]).unwrap();
        assert!(matches!(
            vector_translate(&img, &theta),
            Err(TransformError::ShapeMismatch { expected: 12, actual: 5 })
        ));
    }

    #[test]
    fn vector_translate_composability_in_interior() {
        // Components stay inside (0, 1) so the clamp never fires.
        let mut rng = DeterministicRng::seeded(19);
        let kind = TransformKind::VectorTranslate;
        for _ in 0..1000 {
            let img = rng.random_interior_image(4, 4, 0.3, 0.7);
            let t1 = kind.param(rng.random_vec(48, -0.1, 0.1)).unwrap();
            let t2 = kind.param(rng.random_vec(48, -0.1, 0.1)).unwrap();
            let chained = vector_translate(&vector_translate(&img, &t1).unwrap(), &t2).unwrap();
            let joint = vector_translate(&img, &t1.add(&t2).unwrap()).unwrap();
            assert!(chained.max_abs_diff(&joint) < 1e-6);
        }
    }

    #[test]
    fn distance_color_shift_is_l2() {
        let theta = cs_param([3.0, 0.0, 4.0]);
        let d = transform_distance(TransformKind::ColorShift, &theta).unwrap();
        assert!((d - 5.0).abs() < 1e-12);
    }

    #[test]
    fn distance_hue_reduces_to_minimal_rotation() {
        let theta = TransformKind::HueShift.param(vec![1.5 * PI]).unwrap();
        let d = transform_distance(TransformKind::HueShift, &theta).unwrap();
        assert!((d - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn distance_sv_is_l1() {
        let theta = TransformKind::SvShift.param(vec![0.3, 0.2]).unwrap();
        let d = transform_distance(TransformKind::SvShift, &theta).unwrap();
        assert!((d - 0.5).abs() < 1e-12);
    }

    #[test]
    fn distance_sv_rejects_negative() {
        let theta = ParamVector::new(vec![0.3, -0.2], NormKind::L1).unwrap();
        assert!(matches!(
            transform_distance(TransformKind::SvShift, &theta),
            Err(TransformError::NegativeParam { index: 1, .. })
        ));
    }

    #[test]
    fn distance_is_absolutely_homogeneous_for_l1_l2() {
        let mut rng = DeterministicRng::seeded(20);
        for _ in 0..200 {
            let alpha = rng.uniform(-3.0, 3.0);
            let cs = cs_param([
                rng.uniform(-2.0, 2.0),
                rng.uniform(-2.0, 2.0),
                rng.uniform(-2.0, 2.0),
            ]);
            let d1 = transform_distance(TransformKind::ColorShift, &cs).unwrap();
            let d2 =
                transform_distance(TransformKind::ColorShift, &cs.scale(alpha).unwrap()).unwrap();
            assert!((d2 - alpha.abs() * d1).abs() < 1e-9 * (1.0 + d1));

            let sv = TransformKind::SvShift
                .param(vec![rng.uniform(0.0, 2.0), rng.uniform(0.0, 2.0)])
                .unwrap();
            let beta = alpha.abs();
            let d1 = transform_distance(TransformKind::SvShift, &sv).unwrap();
            let d2 = transform_distance(TransformKind::SvShift, &sv.scale(beta).unwrap()).unwrap();
            assert!((d2 - beta * d1).abs() < 1e-9 * (1.0 + d1));
        }
    }

    #[test]
    fn param_vector_rejects_non_finite() {
        assert!(matches!(
            ParamVector::new(vec![0.0, f64::NAN], NormKind::L2),
            Err(TransformError::NonFiniteParam { index: 1 })
        ));
        assert!(ParamVector::new(vec![0.0, f64::INFINITY], NormKind::L2).is_err());
    }

    #[test]
    fn wrap_angle_stays_in_range() {
        assert!((wrap_angle(2.5 * PI) - 0.5 * PI).abs() < 1e-12);
        assert!((wrap_angle(-0.5 * PI) - 1.5 * PI).abs() < 1e-12);
        assert_eq!(wrap_angle(0.0), 0.0);
        let mut rng = DeterministicRng::seeded(21);
        for _ in 0..1000 {
            let w = wrap_angle(rng.uniform(-50.0, 50.0));
            assert!((0.0..TAU).contains(&w));
        }
    }
}
