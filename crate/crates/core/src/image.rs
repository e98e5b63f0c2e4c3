//! Image tensors and colorspace conversions.
//!
//! Images are dense row-major `H x W x 3` arrays of `f32` intensities in
//! `[0, 1]` (RGB order). The HSV counterpart stores hue as an angle in
//! `[0, 2*pi)` radians with saturation and value in `[0, 1]`. Conversions use
//! the standard hexagonal model and run internally in `f64` so that repeated
//! roundtrips stay well inside the `1e-5` tolerance the rest of the crate
//! assumes.

use std::f64::consts::PI;

use thiserror::Error;

pub const TAU: f64 = 2.0 * PI;

#[derive(Debug, Error, PartialEq)]
pub enum ImageError {
    #[error("image has zero pixels")]
    EmptyImage,
    #[error("pixel buffer length {actual} does not match {expected} (h*w*3)")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("component {index} is {value}, outside [0, 1] or not finite")]
    InvalidComponent { index: usize, value: f32 },
    #[error("hue at component {index} is {value}, outside [0, 2*pi)")]
    InvalidHue { index: usize, value: f32 },
    #[error("all image components are zero")]
    AllZeroImage,
}

/// RGB image: row-major `H x W x 3`, intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl Image {
    /// Validates shape and component range.
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self, ImageError> {
        if height == 0 || width == 0 {
            return Err(ImageError::EmptyImage);
        }
        let expected = height * width * 3;
        if pixels.len() != expected {
            return Err(ImageError::ShapeMismatch {
                expected,
                actual: pixels.len(),
            });
        }
        for (i, &p) in pixels.iter().enumerate() {
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(ImageError::InvalidComponent { index: i, value: p });
            }
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    /// Constructs without range checks; used by transforms whose outputs are
    /// clamped or renormalized into range by construction.
    pub(crate) fn from_raw(height: usize, width: usize, pixels: Vec<f32>) -> Self {
        debug_assert_eq!(pixels.len(), height * width * 3);
        Self {
            height,
            width,
            pixels,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn num_components(&self) -> usize {
        self.pixels.len()
    }

    /// Global maximum over all components.
    pub fn global_max(&self) -> f32 {
        self.pixels.iter().copied().fold(0.0, f32::max)
    }

    /// Per-channel maxima `(r_max, g_max, b_max)`.
    pub fn channel_maxima(&self) -> [f32; 3] {
        let mut maxima = [0.0f32; 3];
        for px in self.pixels.chunks_exact(3) {
            for c in 0..3 {
                if px[c] > maxima[c] {
                    maxima[c] = px[c];
                }
            }
        }
        maxima
    }

    /// Largest absolute componentwise difference. Panics on shape mismatch.
    pub fn max_abs_diff(&self, other: &Image) -> f32 {
        assert_eq!(self.pixels.len(), other.pixels.len(), "shape mismatch");
        self.pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

/// HSV image: hue in radians `[0, 2*pi)`, saturation and value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HsvImage {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl HsvImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self, ImageError> {
        if height == 0 || width == 0 {
            return Err(ImageError::EmptyImage);
        }
        let expected = height * width * 3;
        if pixels.len() != expected {
            return Err(ImageError::ShapeMismatch {
                expected,
                actual: pixels.len(),
            });
        }
        for (i, px) in pixels.chunks_exact(3).enumerate() {
            let (h, s, v) = (px[0], px[1], px[2]);
            if !h.is_finite() || h < 0.0 || f64::from(h) >= TAU {
                return Err(ImageError::InvalidHue {
                    index: 3 * i,
                    value: h,
                });
            }
            for (off, &c) in [s, v].iter().enumerate() {
                if !c.is_finite() || !(0.0..=1.0).contains(&c) {
                    return Err(ImageError::InvalidComponent {
                        index: 3 * i + 1 + off,
                        value: c,
                    });
                }
            }
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub(crate) fn from_raw(height: usize, width: usize, pixels: Vec<f32>) -> Self {
        debug_assert_eq!(pixels.len(), height * width * 3);
        Self {
            height,
            width,
            pixels,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }
}

/// Standard hexagonal RGB -> HSV map with hue in radians.
///
/// `v = max(r, g, b)`; `s = 0` when `v = 0`; achromatic pixels get hue 0 so
/// roundtrips are deterministic.
pub fn rgb_to_hsv(img: &Image) -> HsvImage {
    let mut out = Vec::with_capacity(img.pixels.len());
    for px in img.pixels.chunks_exact(3) {
        let (h, s, v) = rgb_pixel_to_hsv(f64::from(px[0]), f64::from(px[1]), f64::from(px[2]));
        out.push(h as f32);
        out.push(s as f32);
        out.push(v as f32);
    }
    HsvImage::from_raw(img.height, img.width, out)
}

/// Inverse of [`rgb_to_hsv`] up to floating-point tolerance.
pub fn hsv_to_rgb(img: &HsvImage) -> Image {
    let mut out = Vec::with_capacity(img.pixels.len());
    for px in img.pixels.chunks_exact(3) {
        let (r, g, b) = hsv_pixel_to_rgb(f64::from(px[0]), f64::from(px[1]), f64::from(px[2]));
        out.push(r.clamp(0.0, 1.0) as f32);
        out.push(g.clamp(0.0, 1.0) as f32);
        out.push(b.clamp(0.0, 1.0) as f32);
    }
    Image::from_raw(img.height, img.width, out)
}

pub(crate) fn rgb_pixel_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let chroma = max - min;

    let h = if chroma == 0.0 {
        0.0
    } else {
        let sector = if max == r {
            ((g - b) / chroma).rem_euclid(6.0)
        } else if max == g {
            (b - r) / chroma + 2.0
        } else {
            (r - g) / chroma + 4.0
        };
        let h = sector * (PI / 3.0);
        if h >= TAU {
            0.0
        } else {
            h
        }
    };
    let s = if max == 0.0 { 0.0 } else { chroma / max };
    (h, s, max)
}

pub(crate) fn hsv_pixel_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    if s == 0.0 {
        return (v, v, v);
    }
    let sector = (h / (PI / 3.0)).rem_euclid(6.0);
    let i = (sector.floor() as usize).min(5);
    let f = sector - i as f64;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

/// Scales the image so its global maximum is exactly one.
///
/// Errors with [`ImageError::AllZeroImage`] when every component is zero.
pub fn max_normalize(img: &Image) -> Result<Image, ImageError> {
    let max = img.global_max();
    if max == 0.0 {
        return Err(ImageError::AllZeroImage);
    }
    let inv = 1.0 / f64::from(max);
    let pixels = img
        .pixels
        .iter()
        .map(|&p| ((f64::from(p) * inv).min(1.0)) as f32)
        .collect();
    Ok(Image::from_raw(img.height, img.width, pixels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::DeterministicRng;

    fn single_pixel(rgb: [f32; 3]) -> Image {
        Image::new(1, 1, rgb.to_vec()).unwrap()
    }

    #[test]
    fn pure_red_maps_to_hue_zero() {
        let hsv = rgb_to_hsv(&single_pixel([1.0, 0.0, 0.0]));
        let px = hsv.pixels();
        assert_eq!(px[0], 0.0);
        assert_eq!(px[1], 1.0);
        assert_eq!(px[2], 1.0);
    }

    #[test]
    fn gray_has_zero_saturation_and_hue_zero() {
        let hsv = rgb_to_hsv(&single_pixel([0.5, 0.5, 0.5]));
        let px = hsv.pixels();
        assert_eq!(px[0], 0.0);
        assert_eq!(px[1], 0.0);
        assert_eq!(px[2], 0.5);
    }

    #[test]
    fn pure_green_maps_to_one_third_turn() {
        let hsv = rgb_to_hsv(&single_pixel([0.0, 1.0, 0.0]));
        let px = hsv.pixels();
        assert!((f64::from(px[0]) - TAU / 3.0).abs() < 1e-6);
        assert_eq!(px[1], 1.0);
        assert_eq!(px[2], 1.0);
    }

    #[test]
    fn hsv_red_back_to_rgb() {
        let hsv = HsvImage::new(1, 1, vec![0.0, 1.0, 1.0]).unwrap();
        let rgb = hsv_to_rgb(&hsv);
        assert_eq!(rgb.pixels(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_saturation_gives_gray() {
        let hsv = HsvImage::new(1, 1, vec![2.5, 0.0, 0.3]).unwrap();
        let rgb = hsv_to_rgb(&hsv);
        assert_eq!(rgb.pixels(), &[0.3, 0.3, 0.3]);
    }

    #[test]
    fn roundtrip_random_images_within_1e5() {
        let mut rng = DeterministicRng::seeded(0x51_1DE5);
        for _ in 0..1000 {
            let img = rng.random_image(4, 4);
            let back = hsv_to_rgb(&rgb_to_hsv(&img));
            assert!(img.max_abs_diff(&back) < 1e-5);
        }
    }

    #[test]
    fn hsv_roundtrip_the_other_way() {
        let mut rng = DeterministicRng::seeded(0xA1B2);
        for _ in 0..1000 {
            let hsv = rng.random_hsv_image(3, 5);
            let back = rgb_to_hsv(&hsv_to_rgb(&hsv));
            // Hue is compared on the circle; low-saturation pixels can move
            // hue arbitrarily, so gate on s*v like the conversion error does.
            for (a, b) in hsv.pixels().chunks_exact(3).zip(back.pixels().chunks_exact(3)) {
                let weight = f64::from(a[1]) * f64::from(a[2]);
                if weight > 1e-3 {
                    let dh = (f64::from(a[0]) - f64::from(b[0])).abs();
                    let dh = dh.min(TAU - dh);
                    assert!(dh < 1e-4, "hue moved by {dh}");
                }
                assert!((a[2] - b[2]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn hue_always_in_range() {
        let mut rng = DeterministicRng::seeded(7);
        for _ in 0..1000 {
            let img = rng.random_image(2, 2);
            for px in rgb_to_hsv(&img).pixels().chunks_exact(3) {
                assert!(px[0] >= 0.0 && f64::from(px[0]) < TAU);
            }
        }
    }

    #[test]
    fn max_normalize_uniform_half() {
        let img = Image::new(1, 2, vec![0.5; 6]).unwrap();
        let out = max_normalize(&img).unwrap();
        assert!(out.pixels().iter().all(|&p| p == 1.0));
    }

    #[test]
    fn max_normalize_is_idempotent() {
        let mut rng = DeterministicRng::seeded(99);
        for _ in 0..100 {
            let img = rng.random_image(3, 3);
            let once = max_normalize(&img).unwrap();
            let twice = max_normalize(&once).unwrap();
            assert!(once.max_abs_diff(&twice) < 1e-7);
        }
    }

    #[test]
    fn max_normalize_hits_one_exactly() {
        let img = Image::new(1, 1, vec![0.25, 0.1, 0.2]).unwrap();
        let out = max_normalize(&img).unwrap();
        assert_eq!(out.global_max(), 1.0);
    }

    #[test]
    fn max_normalize_rejects_all_zero() {
        let img = Image::new(1, 1, vec![0.0, 0.0, 0.0]).unwrap();
        assert_eq!(max_normalize(&img), Err(ImageError::AllZeroImage));
    }

    #[test]
    fn constructor_rejects_out_of_range() {
        assert!(matches!(
            Image::new(1, 1, vec![0.0, 1.5, 0.0]),
            Err(ImageError::InvalidComponent { index: 1, .. })
        ));
        assert!(matches!(
            Image::new(1, 1, vec![0.0, 0.0]),
            Err(ImageError::ShapeMismatch { .. })
        ));
        assert!(matches!(
            HsvImage::new(1, 1, vec![7.0, 0.0, 0.0]),
            Err(ImageError::InvalidHue { .. })
        ));
    }
}
