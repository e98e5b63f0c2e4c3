//! End-to-end tests of the external-scorer subprocess protocol against a
//! small Python stub that can be told to behave or misbehave.

use std::path::PathBuf;

use certshift::certify::{certify, evaluate_smoothed};
use certshift::classifier::ClassifierHandle;
use certshift::dataset::Sample;
use certshift::image::Image;
use certshift::psi::PsiFn;
use certshift::smoothing::{SeedPolicy, SmoothingSpec};
use certshift::statbounds::BoundKind;

fn stub_command(mode: &str) -> Vec<String> {
    let script = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/scorer_stub.py");
    vec![
        "python3".to_owned(),
        script.to_string_lossy().into_owned(),
        mode.to_owned(),
    ]
}

fn stub_handle(mode: &str) -> ClassifierHandle {
    ClassifierHandle::external(stub_command(mode), 2, 2, 2).unwrap()
}

fn flat_image(value: f32) -> Image {
    Image::new(2, 2, vec![value; 12]).unwrap()
}

fn tiny_samples(n: u32) -> Vec<Sample> {
    (0..n)
        .map(|i| Sample {
            id: i,
            label: i % 2,
            image: flat_image(0.25 + 0.5 * (f32::from(i as u16 % 3) / 3.0)),
        })
        .collect()
}

#[test]
fn constant_scorer_returns_half_for_everything() {
    let handle = stub_handle("const");
    for i in 0..5 {
        let img = flat_image(0.1 * i as f32);
        assert_eq!(handle.score(&img, 0).unwrap(), 0.5);
    }
    assert_eq!(handle.invocation_count(), 5);
}

#[test]
fn wire_format_is_row_major_little_endian_f32() {
    // The stub echoes the first decoded float; planting a marker in the red
    // channel of pixel (0, 0) pins both element order and byte order.
    let handle = stub_handle("first");
    let mut pixels = vec![0.125_f32; 12];
    pixels[0] = 0.8125;
    let img = Image::new(2, 2, pixels).unwrap();
    assert_eq!(handle.score(&img, 0).unwrap(), 0.8125);

    let mean = stub_handle("mean");
    assert_eq!(mean.score(&flat_image(0.9), 0).unwrap(), 1.0);
    assert_eq!(mean.score(&flat_image(0.1), 0).unwrap(), 0.0);
}

#[test]
fn labels_cross_the_wire() {
    let handle = ClassifierHandle::external(stub_command("label"), 4, 2, 2).unwrap();
    let img = flat_image(0.5);
    assert_eq!(handle.score(&img, 0).unwrap(), 1.0);
    assert_eq!(handle.score(&img, 1).unwrap(), 0.25);
    assert_eq!(handle.score(&img, 2).unwrap(), 1.0);
}

#[test]
fn fractional_scores_flow_into_hoeffding_certificates() {
    let handle = stub_handle("const");
    let samples = tiny_samples(40);
    let spec = SmoothingSpec::pixel_gaussian(0.0).unwrap();
    let records = evaluate_smoothed(&samples, &handle, &spec, &SeedPolicy::new(5)).unwrap();
    assert!(records.iter().all(|r| r.score == 0.5));
    let curve = certify(&records, PsiFn::Zero, 0.05, &[0.0, 1.0]).unwrap();
    assert_eq!(curve.bound_kind, BoundKind::Hoeffding);
    assert!(curve.p_lower < 0.5);
}

#[test]
fn parallel_evaluation_shards_subprocesses_deterministically() {
    let samples = tiny_samples(32);
    let spec = SmoothingSpec::pixel_gaussian(0.0).unwrap();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        let handle = stub_handle("mean");
        let records = pool
            .install(|| evaluate_smoothed(&samples, &handle, &spec, &SeedPolicy::new(9)))
            .unwrap();
        assert_eq!(handle.invocation_count(), samples.len() as u64);
        records
    };
    let solo = run(1);
    let quad = run(4);
    assert_eq!(solo.len(), 32);
    for (a, b) in solo.iter().zip(&quad) {
        assert_eq!(a.sample_id, b.sample_id);
        assert_eq!(a.score.to_bits(), b.score.to_bits());
        assert_eq!(a.noise_seed, b.noise_seed);
    }
    // Sigma 0 keeps inputs intact, so the mean rule is checkable directly.
    for (r, s) in solo.iter().zip(&samples) {
        let mean: f32 = s.image.pixels().iter().sum::<f32>() / 12.0;
        let expected = if mean > 0.5 { 1.0 } else { 0.0 };
        assert_eq!(r.score, expected);
    }
}

#[test]
fn mismatched_reply_id_is_rejected() {
    let handle = stub_handle("wrong-id");
    let err = handle.score(&flat_image(0.5), 0).unwrap_err();
    assert!(err.to_string().contains("does not match"), "{err}");
}

#[test]
fn wrong_protocol_version_is_rejected() {
    let handle = stub_handle("bad-proto");
    let err = handle.score(&flat_image(0.5), 0).unwrap_err();
    assert!(err.to_string().contains("protocol 2"), "{err}");
}

#[test]
fn malformed_reply_is_rejected() {
    let handle = stub_handle("garbage");
    let err = handle.score(&flat_image(0.5), 0).unwrap_err();
    assert!(err.to_string().contains("bad reply"), "{err}");
}

#[test]
fn child_exit_surfaces_as_scorer_failure() {
    let handle = stub_handle("quit");
    let err = handle.score(&flat_image(0.5), 0).unwrap_err();
    assert!(err.to_string().contains("closed its output"), "{err}");
}

#[test]
fn scorer_failure_aborts_parallel_evaluation() {
    let handle = stub_handle("garbage");
    let samples = tiny_samples(16);
    let spec = SmoothingSpec::pixel_gaussian(0.0).unwrap();
    let result = evaluate_smoothed(&samples, &handle, &spec, &SeedPolicy::new(1));
    assert!(result.is_err());
}

#[test]
fn out_of_range_score_is_rejected() {
    let handle = stub_handle("oob");
    let err = handle.score(&flat_image(0.5), 0).unwrap_err();
    assert!(err.to_string().contains("outside [0, 1]"), "{err}");
}
