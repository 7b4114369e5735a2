//! Cross-module behavior over real files: corpus building, batch loading,
//! training determinism and learning, evaluation bookkeeping, and the
//! timing harness.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use tempfile::TempDir;
use wavecomp::archive::{self, build_corpus, load_batch, ArchiveError, BuildOptions, Split};
use wavecomp::bench::synth::{make_synthetic_corpus, SynthOptions};
use wavecomp::bench::{run_bench, write_report_csv};
use wavecomp::classifier::{
    build_model, evaluate, train, DecodeMode, Model, TrainConfig,
};
use wavecomp::codec;
use wavecomp::image::Image;

fn write_noise_pgm(path: &Path, rng: &mut ChaCha20Rng, size: u32) {
    let samples = (0..size as usize * size as usize).map(|_| rng.random::<u8>()).collect();
    Image::new(size, size, samples).unwrap().write_pgm(path).unwrap();
}

/// Tiny labeled corpus from the synthetic generator, canonical size 32.
fn tiny_corpus(dir: &TempDir, classes: usize, per_class: usize, seed: u64) -> archive::LabeledCorpus {
    let src = dir.path().join("src");
    make_synthetic_corpus(&src, &SynthOptions { classes, per_class, size: 64, seed }).unwrap();
    build_corpus(
        &src,
        &dir.path().join("corpus"),
        &BuildOptions { levels: 3, canonical_size: 32, train_fraction: 0.8, seed },
    )
    .unwrap()
}

#[test]
fn build_corpus_counts_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src");
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    for class in ["alpha", "beta"] {
        fs::create_dir_all(src.join(class)).unwrap();
        for i in 0..5 {
            write_noise_pgm(&src.join(class).join(format!("img{i}.pgm")), &mut rng, 40);
        }
    }
    let opts = BuildOptions { levels: 3, canonical_size: 32, train_fraction: 0.8, seed: 3 };
    let corpus = build_corpus(&src, &dir.path().join("out_a"), &opts).unwrap();
    assert_eq!(corpus.classes, vec!["alpha", "beta"]);
    assert_eq!(corpus.entries.len(), 10);
    for i in 0..corpus.entries.len() {
        assert!(corpus.stream_path(i).exists());
    }
    let again = build_corpus(&src, &dir.path().join("out_b"), &opts).unwrap();
    assert_eq!(corpus.manifest_bytes(), again.manifest_bytes());
}

#[test]
fn ten_class_corpus_splits_eight_two_per_class() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src");
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    for c in 0..10 {
        let class_dir = src.join(format!("class{c:02}"));
        fs::create_dir_all(&class_dir).unwrap();
        for i in 0..10 {
            write_noise_pgm(&class_dir.join(format!("doc{i}.pgm")), &mut rng, 32);
        }
    }
    let corpus = build_corpus(
        &src,
        &dir.path().join("out"),
        &BuildOptions { levels: 2, canonical_size: 32, train_fraction: 0.8, seed: 5 },
    )
    .unwrap();
    assert_eq!(corpus.class_count(), 10);
    for c in 0..10 {
        let train = corpus
            .entries
            .iter()
            .filter(|e| e.class_index == c && e.split == Split::Train)
            .count();
        assert_eq!(train, 8, "class {c}");
    }
}

#[test]
fn build_corpus_error_paths() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src");
    fs::create_dir_all(src.join("full")).unwrap();
    fs::create_dir_all(src.join("empty")).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    write_noise_pgm(&src.join("full/ok.pgm"), &mut rng, 16);
    let opts = BuildOptions { levels: 2, canonical_size: 16, train_fraction: 0.8, seed: 0 };
    match build_corpus(&src, &dir.path().join("o1"), &opts) {
        Err(ArchiveError::EmptyClass(name)) => assert_eq!(name, "empty"),
        other => panic!("expected EmptyClass, got {other:?}"),
    }

    write_noise_pgm(&src.join("empty/ok.pgm"), &mut rng, 16);
    fs::write(src.join("full/broken.pgm"), b"P5 not really").unwrap();
    match build_corpus(&src, &dir.path().join("o2"), &opts) {
        Err(ArchiveError::UnreadableImage { path, .. }) => {
            assert!(path.ends_with("broken.pgm"), "{path:?}")
        }
        other => panic!("expected UnreadableImage, got {other:?}"),
    }
    fs::remove_file(src.join("full/broken.pgm")).unwrap();

    // same stem in two formats collides on the output name
    let img = Image::constant(16, 16, 9).unwrap();
    img.write_pgm(&src.join("full/dup.pgm")).unwrap();
    let mut png_bytes = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut png_bytes, 16, 16);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        enc.write_header().unwrap().write_image_data(img.samples()).unwrap();
    }
    fs::write(src.join("full/dup.png"), png_bytes).unwrap();
    match build_corpus(&src, &dir.path().join("o3"), &opts) {
        Err(ArchiveError::DuplicateStem { class, stem }) => {
            assert_eq!((class.as_str(), stem.as_str()), ("full", "dup"));
        }
        other => panic!("expected DuplicateStem, got {other:?}"),
    }
}

#[test]
fn load_batch_dims_follow_the_resolution() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src");
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    for class in ["a", "b"] {
        fs::create_dir_all(src.join(class)).unwrap();
        write_noise_pgm(&src.join(class).join("x.pgm"), &mut rng, 300);
    }
    let corpus = build_corpus(
        &src,
        &dir.path().join("out"),
        &BuildOptions { levels: 3, canonical_size: 256, train_fraction: 0.5, seed: 0 },
    )
    .unwrap();
    let (tensor, labels) = load_batch(&corpus, &[0], 1).unwrap();
    assert_eq!(tensor.shape(), &[1, 32, 32, 1]);
    assert_eq!(labels.shape(), &[1, 2]);
    let (tensor, _) = load_batch(&corpus, &[0, 1], 3).unwrap();
    assert_eq!(tensor.shape(), &[2, 128, 128, 1]);
}

#[test]
fn zero_image_loads_as_zero_tensor() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src");
    for class in ["a", "b"] {
        fs::create_dir_all(src.join(class)).unwrap();
        Image::constant(32, 32, 0).unwrap().write_pgm(&src.join(class).join("z.pgm")).unwrap();
    }
    let corpus = build_corpus(
        &src,
        &dir.path().join("out"),
        &BuildOptions { levels: 3, canonical_size: 32, train_fraction: 0.5, seed: 0 },
    )
    .unwrap();
    let (tensor, _) = load_batch(&corpus, &[0], 2).unwrap();
    assert!(tensor.data().iter().all(|&v| v == 0.0));
}

#[test]
fn loaded_values_denormalize_to_exact_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = tiny_corpus(&dir, 2, 10, 6);
    for r in 1..=3u8 {
        let (tensor, _) = load_batch(&corpus, &[0], r).unwrap();
        let bytes = fs::read(corpus.stream_path(0)).unwrap();
        let decoded = codec::decode_partial(&bytes, r).unwrap();
        let scale = archive::normalization_scale(corpus.levels - r + 1);
        for (&v, &raw) in tensor.data().iter().zip(decoded.grid.data()) {
            assert_eq!((v * scale).round() as i32, raw);
        }
    }
}

#[test]
fn training_is_deterministic_given_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = tiny_corpus(&dir, 2, 10, 7);
    let config = TrainConfig { resolution: 1, epochs: 3, seed: 11, ..Default::default() };
    let a = train(&corpus, &config).unwrap();
    let b = train(&corpus, &config).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.best_epoch, b.best_epoch);
    for (pa, pb) in a.model.params.iter().zip(&b.model.params) {
        assert_eq!(pa.data(), pb.data());
    }
}

#[test]
fn first_epoch_loss_is_near_the_uniform_predictor() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = tiny_corpus(&dir, 4, 10, 8);
    let config = TrainConfig { resolution: 1, epochs: 1, seed: 1, ..Default::default() };
    let outcome = train(&corpus, &config).unwrap();
    // Eq-style loss of the uniform predictor over C classes:
    // -(1/C) [ln(1/C) + (C-1) ln(1 - 1/C)]
    let c = 4.0f64;
    let uniform = -((1.0 / c).ln() + (c - 1.0) * (1.0 - 1.0 / c).ln()) / c;
    let got = outcome.records[0].train_loss;
    assert!((got - uniform).abs() / uniform < 0.10, "got {got}, uniform {uniform}");
}

#[test]
fn training_loss_drops_for_most_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = tiny_corpus(&dir, 2, 10, 9);
    let mut improved = 0;
    for seed in 0..5 {
        let config = TrainConfig { resolution: 1, epochs: 50, seed, ..Default::default() };
        let outcome = train(&corpus, &config).unwrap();
        if outcome.records[49].train_loss < outcome.records[0].train_loss {
            improved += 1;
        }
    }
    assert!(improved >= 4, "loss dropped for only {improved}/5 seeds");
}

#[test]
fn memorized_model_evaluates_to_a_diagonal_confusion_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = tiny_corpus(&dir, 2, 10, 10);
    let config = TrainConfig { resolution: 1, epochs: 120, seed: 2, ..Default::default() };
    let outcome = train(&corpus, &config).unwrap();
    let report = evaluate(&outcome.model, &corpus, Split::Train, DecodeMode::Resolution(1)).unwrap();
    let cm = &report.confusion;
    let total = cm.total();
    let diagonal: u64 = (0..cm.n_classes()).map(|i| cm.count(i, i)).sum();
    assert_eq!(total, 16);
    assert_eq!(diagonal, total, "confusion not diagonal");
    assert!((report.total_seconds() - (report.decode_seconds + report.classify_seconds)).abs() == 0.0);

    let again = evaluate(&outcome.model, &corpus, Split::Train, DecodeMode::Resolution(1)).unwrap();
    assert_eq!(again.confusion, report.confusion);
}

#[test]
fn shapes_flow_from_loader_through_model_at_every_resolution() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = tiny_corpus(&dir, 2, 10, 12);
    for r in 1..=3u8 {
        let (tensor, _) = load_batch(&corpus, &[0, 1, 2], r).unwrap();
        let (h, w) = (tensor.dim(1), tensor.dim(2));
        let model = Model::init(build_model(2, (h, w)).unwrap(), 0);
        let probs = model.forward_eval(&tensor).unwrap();
        assert_eq!(probs.shape(), &[3, 2]);
    }
}

#[test]
fn geometry_mismatch_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = tiny_corpus(&dir, 2, 10, 13);
    let model = Model::init(build_model(2, (99, 99)).unwrap(), 0);
    let err = evaluate(&model, &corpus, Split::Val, DecodeMode::Resolution(1)).unwrap_err();
    assert!(err.to_string().contains("geometry"), "{err}");
}

#[test]
fn bench_rows_keep_their_bookkeeping() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = tiny_corpus(&dir, 2, 10, 14);
    let mut models = BTreeMap::new();
    for r in 1..=3u8 {
        let (w, h) = wavecomp::wavelet::ll_dims(32, 32, 3, r);
        models.insert(r, Model::init(build_model(2, (h, w)).unwrap(), 0));
    }
    let report = run_bench(&corpus, &models, None, 5, 3).unwrap();
    assert_eq!(report.rows.len(), 4);
    assert!(report.rows[0].resolution.is_none());
    for row in &report.rows {
        assert_eq!(row.n_images, 5);
        assert_eq!(row.total_seconds, row.decode_seconds + row.classify_seconds);
    }
    // prefix reads shrink with the resolution
    let bytes: Vec<u64> = report.rows.iter().skip(1).map(|r| r.bytes_read).collect();
    assert!(bytes[0] > bytes[1] && bytes[1] > bytes[2], "{bytes:?}");
    assert!(report.rows[0].bytes_read > bytes[0]);

    let mut csv = Vec::new();
    write_report_csv(&report, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.starts_with("resolution,n_images,dt_s,clt_s,ct_s,speedup,bytes_read"));
}
