//! End-to-end runs of the wavecomp binary: the full pipeline smoke test,
//! codec round trips through the file interface, and exit-code behavior.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn wavecomp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wavecomp"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed (status {:?}):\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn compress_decompress_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("page.pgm");
    let mut pixels = Vec::new();
    for y in 0..77u32 {
        for x in 0..53u32 {
            pixels.push(((x * 7 + y * 13) % 256) as u8);
        }
    }
    wavecomp::image::Image::new(53, 77, pixels).unwrap().write_pgm(&src).unwrap();

    assert_ok(&wavecomp(dir.path(), &["compress", "page.pgm", "page.wcc"]), "compress");
    assert_ok(&wavecomp(dir.path(), &["decompress", "page.wcc", "back.pgm"]), "decompress");
    assert_eq!(fs::read(&src).unwrap(), fs::read(dir.path().join("back.pgm")).unwrap());
}

#[test]
fn partial_decompress_writes_viewable_and_lossless_outputs() {
    let dir = tempfile::tempdir().unwrap();
    wavecomp::image::Image::constant(256, 256, 140)
        .unwrap()
        .write_pgm(&dir.path().join("page.pgm"))
        .unwrap();
    assert_ok(&wavecomp(dir.path(), &["compress", "page.pgm", "page.wcc"]), "compress");
    assert_ok(
        &wavecomp(dir.path(), &["decompress", "page.wcc", "ll.pgm", "--resolution", "1"]),
        "partial decompress",
    );
    let ll = wavecomp::image::Image::read_pgm(&dir.path().join("ll.pgm")).unwrap();
    assert_eq!((ll.width(), ll.height()), (32, 32));
    let coeffs = fs::read(dir.path().join("ll.coeffs")).unwrap();
    assert_eq!(coeffs.len(), 8 + 32 * 32 * 4);
    assert_eq!(u32::from_le_bytes(coeffs[0..4].try_into().unwrap()), 32);
}

#[test]
fn inspect_packet_lengths_sum_to_file_size() {
    let dir = tempfile::tempdir().unwrap();
    wavecomp::image::Image::constant(64, 64, 9)
        .unwrap()
        .write_pgm(&dir.path().join("img.pgm"))
        .unwrap();
    assert_ok(&wavecomp(dir.path(), &["compress", "img.pgm", "img.wcc"]), "compress");
    let out = wavecomp(dir.path(), &["inspect", "img.wcc"]);
    assert_ok(&out, "inspect");
    let text = String::from_utf8(out.stdout).unwrap();
    let field = |key: &str| -> u64 {
        text.lines()
            .find(|l| l.starts_with(key))
            .unwrap_or_else(|| panic!("missing {key} in {text}"))
            .split('\t')
            .nth(1)
            .unwrap()
            .parse()
            .unwrap()
    };
    let packets: u64 = (1..=4).map(|i| field(&format!("packet_{i}"))).sum();
    assert_eq!(field("header_bytes") + packets, field("total_bytes"));
    assert_eq!(field("total_bytes"), fs::metadata(dir.path().join("img.wcc")).unwrap().len());
}

#[test]
fn corrupted_stream_exits_with_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("junk.wcc"), b"not a stream").unwrap();
    let out = wavecomp(dir.path(), &["inspect", "junk.wcc"]);
    assert_eq!(out.status.code(), Some(1));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("magic"), "{msg}");
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = wavecomp(dir.path(), &["inspect", "--bogus", "x.wcc"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn full_pipeline_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let run = |args: &[&str], what: &str| assert_ok(&wavecomp(dir.path(), args), what);

    run(&["synth", "--out", "pages", "--per-class", "10", "--size", "64", "--seed", "3"], "synth");
    run(
        &["build-corpus", "--src", "pages", "--out", "corpus", "--levels", "3", "--size", "64", "--seed", "3"],
        "build-corpus",
    );
    assert!(dir.path().join("corpus/manifest.tsv").exists());

    for r in ["1", "2", "3"] {
        run(
            &[
                "train", "--corpus", "corpus", "--resolution", r, "--epochs", "3", "--seed", "1",
                "--out", &format!("model_r{r}.wcnn"), "--csv", &format!("epochs_r{r}.csv"),
            ],
            "train",
        );
        assert!(dir.path().join(format!("model_r{r}.wcnn")).exists());
    }

    let eval_out = wavecomp(
        dir.path(),
        &["eval", "--ckpt", "model_r1.wcnn", "--corpus", "corpus", "--split", "val"],
    );
    assert_ok(&eval_out, "eval");
    let table = String::from_utf8(eval_out.stdout).unwrap();
    // header plus one row per class
    assert_eq!(table.lines().count(), 5, "{table}");
    assert!(dir.path().join("confusion.csv").exists());

    run(
        &["bench", "--corpus", "corpus", "--ckpt-dir", ".", "--n", "8", "--reps", "2", "--out", "bench_report.csv"],
        "bench",
    );
    let bench_csv = fs::read_to_string(dir.path().join("bench_report.csv")).unwrap();
    assert_eq!(bench_csv.lines().count(), 5, "{bench_csv}");

    run(
        &[
            "report", "--in", "epochs_r1.csv", "epochs_r2.csv", "epochs_r3.csv", "bench_report.csv",
            "--out", "plots",
        ],
        "report",
    );
    let acc = fs::read_to_string(dir.path().join("plots/accuracy_vs_resolution.dat")).unwrap();
    assert_eq!(acc.lines().count(), 4, "{acc}");
    let speedup = fs::read_to_string(dir.path().join("plots/speedup_vs_resolution.dat")).unwrap();
    assert_eq!(speedup.lines().count(), 4, "{speedup}");
}

#[test]
fn train_rejects_resolution_beyond_corpus_depth() {
    let dir = tempfile::tempdir().unwrap();
    let run = |args: &[&str], what: &str| assert_ok(&wavecomp(dir.path(), args), what);
    run(&["synth", "--out", "pages", "--per-class", "10", "--size", "64", "--classes", "2"], "synth");
    run(
        &["build-corpus", "--src", "pages", "--out", "corpus", "--levels", "3", "--size", "64"],
        "build-corpus",
    );
    let out = wavecomp(dir.path(), &["train", "--corpus", "corpus", "--resolution", "4", "--epochs", "1"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("resolution"), "{msg}");
}

#[test]
fn eval_rejects_bad_split_name() {
    let dir = tempfile::tempdir().unwrap();
    let out = wavecomp(dir.path(), &["eval", "--ckpt", "x.wcnn", "--corpus", "c", "--split", "test"]);
    assert_eq!(out.status.code(), Some(2));
}
