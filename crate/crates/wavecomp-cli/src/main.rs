//! Command-line front end for the wavecomp toolkit.
//!
//! One subcommand per pipeline stage. Logs go to stderr; machine-readable
//! output goes to files or stdout. Exit codes: 0 success, 1 runtime/data
//! error, 2 usage or validation error.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wavecomp::archive::{self, BuildOptions, LabeledCorpus, Split};
use wavecomp::bench::synth::{make_synthetic_corpus, SynthOptions};
use wavecomp::bench::{run_bench, write_report_csv, write_speedup_data};
use wavecomp::classifier::{evaluate, train, DecodeMode, Model, TrainConfig};
use wavecomp::codec;
use wavecomp::image::Image;
use wavecomp::metrics::{accuracy_mc, precision_recall_f1, write_metrics_csv};
use wavecomp::wavelet;

#[derive(Parser)]
#[command(name = "wavecomp", version, about = "Wavelet document codec and compressed-domain classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compress a PGM/PNG grayscale image into a .wcc codestream
    Compress(CompressArgs),
    /// Decode a .wcc codestream back to a PGM image (fully or partially)
    Decompress(DecompressArgs),
    /// Print the header summary of a .wcc codestream
    Inspect { input: PathBuf },
    /// Generate the synthetic 4-class document corpus
    Synth(SynthArgs),
    /// Encode a directory tree of images into a labeled compressed corpus
    BuildCorpus(BuildCorpusArgs),
    /// Train a classifier at one resolution
    Train(TrainArgs),
    /// Evaluate a checkpoint on a corpus split
    Eval(EvalArgs),
    /// Measure decode/classify times per resolution
    Bench(BenchArgs),
    /// Render plot data files from training and bench CSVs
    Report(ReportArgs),
}

#[derive(Args)]
struct CompressArgs {
    input: PathBuf,
    output: PathBuf,
    /// Decomposition depth
    #[arg(long, default_value_t = 3)]
    levels: u8,
}

#[derive(Args)]
struct DecompressArgs {
    input: PathBuf,
    output: PathBuf,
    /// Stop at this resolution: writes the LL grid rescaled to 8 bits plus a
    /// lossless .coeffs dump next to it
    #[arg(long)]
    resolution: Option<u8>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 50)]
    per_class: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 256)]
    size: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BuildCorpusArgs {
    /// Directory with one subdirectory per class
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    levels: u8,
    /// Canonical square size images are resized to before encoding
    #[arg(long, default_value_t = 256)]
    size: u32,
    #[arg(long, default_value_t = 0.8)]
    fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Path to manifest.tsv
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    resolution: Option<u8>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Re-split the corpus with this train fraction before training
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long)]
    fc_units: Option<usize>,
    /// key = value file applied before the flags above
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint path (default model_r<R>.wcnn)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-epoch CSV path (default epochs_r<R>.csv)
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "val")]
    split: String,
    /// Resolution to decode at; inferred from the checkpoint geometry when
    /// omitted ("full" decodes completely)
    #[arg(long)]
    resolution: Option<String>,
    /// Confusion matrix CSV output
    #[arg(long, default_value = "confusion.csv")]
    confusion: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Directory holding model_r<R>.wcnn checkpoints (model_full.wcnn optional)
    #[arg(long)]
    ckpt_dir: PathBuf,
    /// Number of images to measure
    #[arg(long, default_value_t = 25)]
    n: usize,
    /// Repetitions; the median is reported
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, default_value = "bench_report.csv")]
    out: PathBuf,
    /// Optional gnuplot-style speedup table
    #[arg(long)]
    speedup_data: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Epoch CSVs (named *r<K>*.csv) and/or bench_report.csv
    #[arg(long = "in", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn usage(msg: impl Into<String>) -> CliError {
        CliError::Usage(msg.into())
    }
}

impl<E: std::error::Error> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult = Result<(), CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(threads) = std::env::var("WAVECOMP_THREADS") {
        match threads.parse::<usize>() {
            Ok(n) if n >= 1 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: WAVECOMP_THREADS must be a positive integer, got {threads:?}");
                return ExitCode::from(2);
            }
        }
    }
    let result = match cli.command {
        Command::Compress(args) => cmd_compress(args),
        Command::Decompress(args) => cmd_decompress(args),
        Command::Inspect { input } => cmd_inspect(&input),
        Command::Synth(args) => cmd_synth(args),
        Command::BuildCorpus(args) => cmd_build_corpus(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn cmd_compress(args: CompressArgs) -> CliResult {
    if args.levels < 1 || args.levels > wavelet::MAX_LEVELS {
        return Err(CliError::usage(format!("--levels must be in 1..={}", wavelet::MAX_LEVELS)));
    }
    let image = Image::load(&args.input)?;
    let mut sink = std::io::BufWriter::new(fs::File::create(&args.output)?);
    codec::encode_to(&image, args.levels, &mut sink)?;
    use std::io::Write as _;
    sink.flush().map_err(|e| CliError::Runtime(e.to_string()))?;
    eprintln!(
        "{} ({}x{}) -> {} ({} bytes)",
        args.input.display(),
        image.width(),
        image.height(),
        args.output.display(),
        fs::metadata(&args.output).map(|m| m.len()).unwrap_or(0)
    );
    Ok(())
}

fn cmd_decompress(args: DecompressArgs) -> CliResult {
    let stream = fs::read(&args.input)?;
    match args.resolution {
        None => {
            let image = codec::decode_full(&stream)?;
            image.write_pgm(&args.output)?;
            eprintln!(
                "{} -> {} ({}x{})",
                args.input.display(),
                args.output.display(),
                image.width(),
                image.height()
            );
        }
        Some(r) => {
            let info = codec::inspect(&stream)?;
            if r < 1 || r > info.levels {
                return Err(CliError::usage(format!(
                    "--resolution {r} out of range 1..={} for this stream",
                    info.levels
                )));
            }
            let decoded = codec::decode_partial(&stream, r)?;
            let grid = &decoded.grid;
            // viewable rescale: min..max mapped onto 0..255
            let (lo, hi) = grid
                .data()
                .iter()
                .fold((i32::MAX, i32::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            let span = (hi - lo).max(1) as f64;
            let samples: Vec<u8> = grid
                .data()
                .iter()
                .map(|&v| (((v - lo) as f64 / span) * 255.0).round() as u8)
                .collect();
            Image::new(grid.width() as u32, grid.height() as u32, samples)
                .map_err(|e| CliError::Runtime(e.to_string()))?
                .write_pgm(&args.output)?;
            // lossless dump: width u32 | height u32 | i32 coefficients, all LE
            let mut dump = Vec::with_capacity(8 + grid.data().len() * 4);
            dump.extend_from_slice(&(grid.width() as u32).to_le_bytes());
            dump.extend_from_slice(&(grid.height() as u32).to_le_bytes());
            for &v in grid.data() {
                dump.extend_from_slice(&v.to_le_bytes());
            }
            let coeff_path = args.output.with_extension("coeffs");
            fs::write(&coeff_path, dump)?;
            eprintln!(
                "{} -> {} + {} (resolution {r}, {} of {} bytes read)",
                args.input.display(),
                args.output.display(),
                coeff_path.display(),
                decoded.bytes_read,
                stream.len()
            );
        }
    }
    Ok(())
}

fn cmd_inspect(input: &Path) -> CliResult {
    let stream = fs::read(input)?;
    let info = codec::inspect(&stream)?;
    println!("width\t{}", info.width);
    println!("height\t{}", info.height);
    println!("levels\t{}", info.levels);
    println!("codeblock\t{}", info.codeblock_size);
    println!("header_bytes\t{}", info.header_len);
    for (i, len) in info.packet_lengths.iter().enumerate() {
        println!("packet_{}\t{}", i + 1, len);
    }
    println!("total_bytes\t{}", info.total_len());
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> CliResult {
    let opts = SynthOptions {
        classes: args.classes,
        per_class: args.per_class,
        size: args.size,
        seed: args.seed,
    };
    let written =
        make_synthetic_corpus(&args.out, &opts).map_err(|e| CliError::usage(e.to_string()))?;
    for (class, paths) in &written {
        eprintln!("{class}: {} pages", paths.len());
    }
    Ok(())
}

fn cmd_build_corpus(args: BuildCorpusArgs) -> CliResult {
    if !(args.fraction > 0.0 && args.fraction < 1.0) {
        return Err(CliError::usage(format!("--fraction must be in (0, 1), got {}", args.fraction)));
    }
    if args.levels < 1 || args.levels > wavelet::MAX_LEVELS {
        return Err(CliError::usage(format!("--levels must be in 1..={}", wavelet::MAX_LEVELS)));
    }
    let opts = BuildOptions {
        levels: args.levels,
        canonical_size: args.size,
        train_fraction: args.fraction,
        seed: args.seed,
    };
    let corpus = archive::build_corpus(&args.src, &args.out, &opts)?;
    eprintln!(
        "{} entries, {} classes -> {}",
        corpus.entries.len(),
        corpus.class_count(),
        args.out.join(archive::MANIFEST_NAME).display()
    );
    Ok(())
}

fn load_corpus(path: &Path) -> Result<LabeledCorpus, CliError> {
    let manifest =
        if path.is_dir() { path.join(archive::MANIFEST_NAME) } else { path.to_path_buf() };
    Ok(LabeledCorpus::load_manifest(&manifest)?)
}

fn cmd_train(args: TrainArgs) -> CliResult {
    let corpus = load_corpus(&args.corpus)?;
    let mut config = TrainConfig::default();
    if let Some(path) = &args.config {
        config.apply_file(path).map_err(|e| CliError::usage(e.to_string()))?;
    }
    if let Some(v) = args.resolution {
        config.resolution = v;
    }
    if let Some(v) = args.epochs {
        config.epochs = v;
    }
    if let Some(v) = args.batch {
        config.batch_size = v;
    }
    if let Some(v) = args.lr {
        config.learning_rate = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.fraction {
        config.train_fraction = Some(v);
    }
    if let Some(v) = args.fc_units {
        config.fc_units = v;
    }
    config.validate(corpus.levels).map_err(|e| CliError::usage(e.to_string()))?;
    if let Some(f) = config.train_fraction {
        if !(f > 0.0 && f < 1.0) {
            return Err(CliError::usage(format!("--fraction must be in (0, 1), got {f}")));
        }
    }

    let r = config.resolution;
    eprintln!(
        "training at resolution {r}: {} entries, {} classes, {} epochs, batch {}, lr {}",
        corpus.entries.len(),
        corpus.class_count(),
        config.epochs,
        config.batch_size,
        config.learning_rate
    );
    let outcome = train(&corpus, &config)?;
    for rec in &outcome.records {
        eprintln!(
            "epoch {:>4}: train acc {:.4} loss {:.4} | val acc {:.4} loss {:.4}",
            rec.epoch, rec.train_accuracy, rec.train_loss, rec.val_accuracy, rec.val_loss
        );
    }
    let ckpt = args.out.unwrap_or_else(|| PathBuf::from(format!("model_r{r}.wcnn")));
    outcome.model.save(&ckpt)?;
    let csv_path = args.csv.unwrap_or_else(|| PathBuf::from(format!("epochs_r{r}.csv")));
    let mut csv = Vec::new();
    wavecomp::classifier::write_epoch_csv(&outcome.records, &mut csv)?;
    fs::write(&csv_path, csv)?;
    eprintln!(
        "best epoch {} -> {} ; per-epoch log -> {}",
        outcome.best_epoch,
        ckpt.display(),
        csv_path.display()
    );
    Ok(())
}

fn parse_split(s: &str) -> Result<Split, CliError> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        other => Err(CliError::usage(format!("--split must be train or val, got {other:?}"))),
    }
}

/// Match the checkpoint's input geometry against the corpus to find the
/// decode mode it was trained for.
fn infer_mode(model: &Model, corpus: &LabeledCorpus) -> Option<DecodeMode> {
    let (cw, ch) = (corpus.canonical_width as usize, corpus.canonical_height as usize);
    let dims = (model.spec.input_height, model.spec.input_width);
    for r in 1..=corpus.levels {
        let (w, h) = wavelet::ll_dims(cw, ch, corpus.levels, r);
        if dims == (h, w) {
            return Some(DecodeMode::Resolution(r));
        }
    }
    if dims == (ch, cw) {
        return Some(DecodeMode::Full);
    }
    None
}

fn cmd_eval(args: EvalArgs) -> CliResult {
    let split = parse_split(&args.split)?;
    let corpus = load_corpus(&args.corpus)?;
    let model = Model::load(&args.ckpt)?;
    let mode = match args.resolution.as_deref() {
        Some("full") => DecodeMode::Full,
        Some(text) => {
            let r: u8 = text.parse().map_err(|_| {
                CliError::usage(format!("--resolution must be a number or 'full', got {text:?}"))
            })?;
            if r < 1 || r > corpus.levels {
                return Err(CliError::usage(format!(
                    "--resolution {r} out of range 1..={}",
                    corpus.levels
                )));
            }
            DecodeMode::Resolution(r)
        }
        None => infer_mode(&model, &corpus).ok_or_else(|| {
            CliError::usage("checkpoint geometry matches no resolution of this corpus".to_string())
        })?,
    };
    let report = evaluate(&model, &corpus, split, mode)?;
    let rows = precision_recall_f1(&report.confusion)?;
    let mut table = Vec::new();
    write_metrics_csv(&rows, &mut table)?;
    print!("{}", String::from_utf8_lossy(&table));
    let mut cm_csv = Vec::new();
    report.confusion.write_csv(&mut cm_csv)?;
    fs::write(&args.confusion, cm_csv)?;
    eprintln!(
        "split {}: {} samples, accuracy {:.4}, decode {:.4}s + classify {:.4}s = {:.4}s, {} bytes read",
        args.split,
        report.confusion.total(),
        accuracy_mc(&report.confusion)?,
        report.decode_seconds,
        report.classify_seconds,
        report.total_seconds(),
        report.bytes_read
    );
    eprintln!("confusion matrix -> {}", args.confusion.display());
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> CliResult {
    let corpus = load_corpus(&args.corpus)?;
    let mut models = BTreeMap::new();
    for r in 1..=corpus.levels {
        let path = args.ckpt_dir.join(format!("model_r{r}.wcnn"));
        if !path.exists() {
            return Err(CliError::usage(format!("missing checkpoint {}", path.display())));
        }
        models.insert(r, Model::load(&path)?);
    }
    let full_path = args.ckpt_dir.join("model_full.wcnn");
    let full_model = if full_path.exists() { Some(Model::load(&full_path)?) } else { None };
    if args.n == 0 || args.reps == 0 {
        return Err(CliError::usage("--n and --reps must be at least 1"));
    }
    let report = run_bench(&corpus, &models, full_model.as_ref(), args.n, args.reps)?;
    eprintln!("environment: {}", report.environment);
    for row in &report.rows {
        eprintln!(
            "resolution {:>4}: DT {:.4}s CLT {:.4}s CT {:.4}s{} ({} bytes)",
            row.label(),
            row.decode_seconds,
            row.classify_seconds,
            row.total_seconds,
            row.speedup_vs_full.map(|s| format!(" speedup {s:.2}")).unwrap_or_default(),
            row.bytes_read
        );
    }
    for (level, buf) in report.memory.per_level.iter().enumerate() {
        eprintln!("memory level {level}: {buf:.3} buffer units");
    }
    eprintln!("memory total {:.3} (closed form {:.3})", report.memory.total, report.memory.closed_form);
    let mut csv = Vec::new();
    write_report_csv(&report, &mut csv)?;
    fs::write(&args.out, csv)?;
    eprintln!("report -> {}", args.out.display());
    if let Some(path) = &args.speedup_data {
        let mut data = Vec::new();
        write_speedup_data(&report, &mut data)?;
        fs::write(path, data)?;
        eprintln!("speedup data -> {}", path.display());
    }
    Ok(())
}

/// Pull a trailing resolution tag like `r3` out of a file stem.
fn resolution_from_name(path: &Path) -> Option<u8> {
    let stem = path.file_stem()?.to_str()?;
    let pos = stem.rfind('r')?;
    stem[pos + 1..].parse().ok()
}

fn cmd_report(args: ReportArgs) -> CliResult {
    fs::create_dir_all(&args.out)?;
    let mut accuracy_rows: Vec<(u8, f64, f64)> = Vec::new(); // (r, best val acc, final val acc)
    let mut speedup_rows: Vec<(String, f64, f64)> = Vec::new(); // (label, ct, speedup)
    for input in &args.inputs {
        let text = fs::read_to_string(input)?;
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        if header.starts_with("epoch,") {
            let r = resolution_from_name(input).ok_or_else(|| {
                CliError::usage(format!(
                    "cannot infer resolution from {}; name epoch CSVs like epochs_r1.csv",
                    input.display()
                ))
            })?;
            let mut best = 0.0f64;
            let mut last = 0.0f64;
            let mut curve = String::from("# epoch val_acc val_loss\n");
            for line in lines {
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 5 {
                    continue;
                }
                let epoch: usize = f[0]
                    .parse()
                    .map_err(|_| CliError::usage(format!("bad epoch row in {}", input.display())))?;
                let val_acc: f64 = f[3]
                    .parse()
                    .map_err(|_| CliError::usage(format!("bad val_acc in {}", input.display())))?;
                let val_loss: f64 = f[4]
                    .parse()
                    .map_err(|_| CliError::usage(format!("bad val_loss in {}", input.display())))?;
                best = best.max(val_acc);
                last = val_acc;
                curve.push_str(&format!("{epoch} {val_acc:.6} {val_loss:.6}\n"));
            }
            fs::write(args.out.join(format!("accuracy_vs_epoch_r{r}.dat")), curve)?;
            accuracy_rows.push((r, best, last));
        } else if header.starts_with("resolution,") {
            for line in lines {
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 7 {
                    continue;
                }
                let ct: f64 = f[4].parse().unwrap_or(f64::NAN);
                let speedup: f64 = f[5].parse().unwrap_or(f64::NAN);
                speedup_rows.push((f[0].to_string(), ct, speedup));
            }
        } else {
            return Err(CliError::usage(format!("unrecognized CSV header in {}", input.display())));
        }
    }
    if !accuracy_rows.is_empty() {
        accuracy_rows.sort_by_key(|&(r, _, _)| r);
        let mut out = String::from("# resolution best_val_acc final_val_acc\n");
        for (r, best, last) in &accuracy_rows {
            out.push_str(&format!("{r} {best:.6} {last:.6}\n"));
        }
        fs::write(args.out.join("accuracy_vs_resolution.dat"), out)?;
    }
    if !speedup_rows.is_empty() {
        let mut out = String::from("# resolution ct_seconds speedup\n");
        for (label, ct, speedup) in &speedup_rows {
            if label == "full" {
                continue;
            }
            out.push_str(&format!("{label} {ct:.6} {speedup:.4}\n"));
        }
        fs::write(args.out.join("speedup_vs_resolution.dat"), out)?;
    }
    eprintln!("plot data -> {}", args.out.display());
    Ok(())
}
