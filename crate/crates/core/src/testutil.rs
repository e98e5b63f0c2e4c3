//! Deterministic generators shared by the unit tests.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::image::{HsvImage, Image, TAU};

pub struct DeterministicRng {
    rng: ChaCha12Rng,
}

impl DeterministicRng {
    pub fn seeded(seed: u64) -> Self {
        Self {
            rng: ChaCha12Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.gen_range(lo..hi)
    }

    pub fn random_image(&mut self, h: usize, w: usize) -> Image {
        let pixels = (0..h * w * 3)
            .map(|_| self.rng.gen_range(0.0f32..1.0))
            .collect();
        Image::new(h, w, pixels).unwrap()
    }

    /// Random image with components in an interior range, then max-normalized
    /// so color-shift preconditions hold.
    pub fn random_normalized_image(&mut self, h: usize, w: usize) -> Image {
        let img = self.random_interior_image(h, w, 0.05, 1.0);
        crate::image::max_normalize(&img).unwrap()
    }

    pub fn random_interior_image(&mut self, h: usize, w: usize, lo: f32, hi: f32) -> Image {
        let pixels = (0..h * w * 3).map(|_| self.rng.gen_range(lo..hi)).collect();
        Image::new(h, w, pixels).unwrap()
    }

    pub fn random_hsv_image(&mut self, h: usize, w: usize) -> HsvImage {
        let pixels: Vec<f32> = (0..h * w)
            .flat_map(|_| {
                [
                    self.rng.gen_range(0.0..TAU as f32 - 1e-4),
                    self.rng.gen_range(0.0f32..1.0),
                    self.rng.gen_range(0.0f32..1.0),
                ]
            })
            .collect();
        HsvImage::new(h, w, pixels).unwrap()
    }

    pub fn random_vec(&mut self, len: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..len).map(|_| self.rng.gen_range(lo..hi)).collect()
    }
}
