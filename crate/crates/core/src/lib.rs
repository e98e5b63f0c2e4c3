//! Accuracy certification for classifiers under bounded distribution shifts.
//!
//! The pipeline smooths a base classifier by randomizing its input over a
//! parameterized transformation space, estimates the smoothed accuracy with a
//! finite-sample lower confidence bound, and converts that bound into a
//! certificate curve: for every shift budget `eps`, a guaranteed lower bound
//! on the accuracy of the same smoothed classifier on any distribution within
//! transformation-Wasserstein distance `eps` of the evaluation distribution.
//!
//! Modules are layered bottom-up: [`image`] and [`transform`] define the data
//! and the transformation semantics, [`smoothing`] draws the randomization
//! noise, [`psi`] supplies the per-unit-shift degradation bounds, and
//! [`certify`] ties them together. [`adversary`] and [`unlearnable`] contain
//! the two empirical stress tests (strategic test-time shifts and offline
//! poisoning), [`dataset`] and [`manifest`] handle I/O.

pub mod adversary;
pub mod certify;
pub mod classifier;
pub mod dataset;
pub mod external;
pub mod image;
pub mod manifest;
pub mod psi;
pub mod smoothing;
pub mod special;
pub mod statbounds;
pub mod transform;
pub mod unlearnable;

#[cfg(test)]
pub(crate) mod testutil;

pub use certify::{
    certify, evaluate_smoothed, random_shift_params, CertificateCurve, ScoreRecord, ShiftPair,
};
pub use classifier::{ClassifierHandle, TrainConfig, TrainKind};
pub use dataset::{Dataset, Sample};
pub use image::{HsvImage, Image};
pub use psi::PsiFn;
pub use smoothing::{SeedPolicy, SmoothingSpec};
pub use transform::{ParamVector, TransformKind};
