//! Timing harness and the analytic decomposition-buffer model.
//!
//! Decode time (DT) is wall time strictly inside decode calls on pre-loaded
//! streams; classification time (CLT) is wall time strictly inside forward
//! passes; CT = DT + CLT is summed from the stored parts, never re-measured.
//! Rows report the median over repetitions.

pub mod synth;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::time::Instant;

use thiserror::Error;

use crate::archive::{self, LabeledCorpus};
use crate::classifier::{build_model, ClassifierError, Model};
use crate::codec;
use crate::nn::Tensor;
use crate::wavelet;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("computation times must be positive, got {0}")]
    NonPositiveTime(f64),
    #[error("decomposition level count {0} out of range 1..=32")]
    BadLevel(u32),
    #[error("memory model needs positive width and unit factor")]
    BadMemoryInputs,
    #[error("no checkpoint supplied for resolution {0}")]
    MissingCheckpoint(u8),
    #[error("corpus has no entries")]
    EmptyCorpus,
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Codec(#[from] codec::CodecError),
    #[error(transparent)]
    Archive(#[from] archive::ArchiveError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Ratio of full-decompression computation time to partial-decompression
/// computation time.
pub fn speedup(ct_full_seconds: f64, ct_partial_seconds: f64) -> Result<f64, BenchError> {
    for v in [ct_full_seconds, ct_partial_seconds] {
        if v.is_nan() || v <= 0.0 {
            return Err(BenchError::NonPositiveTime(v));
        }
    }
    Ok(ct_full_seconds / ct_partial_seconds)
}

/// Line-buffer estimate for an `levels`-deep dyadic decomposition of rows of
/// width `width`, with `unit_factor` scaling one level's unit cost.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryModel {
    pub levels: u32,
    /// One term per decomposition level `l = 0..levels`:
    /// 3 * (2^(levels - l) - 1) * unit_factor * 2^(-l-1) * width.
    pub per_level: Vec<f64>,
    /// Sum of the per-level terms.
    pub total: f64,
    /// (2 * 2^levels + 2^(-levels) - 3) * width * unit_factor.
    pub closed_form: f64,
}

pub fn memory_model(levels: u32, width: f64, unit_factor: f64) -> Result<MemoryModel, BenchError> {
    if levels == 0 || levels > 32 {
        return Err(BenchError::BadLevel(levels));
    }
    if !(width > 0.0 && unit_factor > 0.0) {
        return Err(BenchError::BadMemoryInputs);
    }
    let per_level: Vec<f64> = (0..levels)
        .map(|l| {
            3.0 * ((2f64).powi((levels - l) as i32) - 1.0)
                * unit_factor
                * (2f64).powi(-(l as i32) - 1)
                * width
        })
        .collect();
    let total = per_level.iter().sum();
    let closed_form =
        (2.0 * (2f64).powi(levels as i32) + (2f64).powi(-(levels as i32)) - 3.0) * width * unit_factor;
    Ok(MemoryModel { levels, per_level, total, closed_form })
}

/// One timing row: a partial-decode resolution or the full decompression.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    /// `None` marks the full-decompression baseline.
    pub resolution: Option<u8>,
    pub n_images: usize,
    pub decode_seconds: f64,
    pub classify_seconds: f64,
    pub total_seconds: f64,
    pub speedup_vs_full: Option<f64>,
    pub bytes_read: u64,
}

impl BenchRow {
    pub fn label(&self) -> String {
        match self.resolution {
            Some(r) => r.to_string(),
            None => "full".into(),
        }
    }
}

#[derive(Debug)]
pub struct BenchReport {
    /// Full row first, then resolutions finest to coarsest.
    pub rows: Vec<BenchRow>,
    pub memory: MemoryModel,
    pub environment: String,
}

pub fn write_report_csv(report: &BenchReport, mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "resolution,n_images,dt_s,clt_s,ct_s,speedup,bytes_read")?;
    for row in &report.rows {
        writeln!(
            w,
            "{},{},{:.6},{:.6},{:.6},{},{}",
            row.label(),
            row.n_images,
            row.decode_seconds,
            row.classify_seconds,
            row.total_seconds,
            row.speedup_vs_full.map(|s| format!("{s:.4}")).unwrap_or_default(),
            row.bytes_read
        )?;
    }
    Ok(())
}

/// Gnuplot-friendly whitespace table of resolution vs speedup.
pub fn write_speedup_data(report: &BenchReport, mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "# resolution speedup ct_seconds")?;
    for row in report.rows.iter().filter(|r| r.resolution.is_some()) {
        writeln!(
            w,
            "{} {:.4} {:.6}",
            row.resolution.unwrap(),
            row.speedup_vs_full.unwrap_or(f64::NAN),
            row.total_seconds
        )?;
    }
    Ok(())
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

fn normalize_grid(grid: &wavelet::CoeffGrid, depth: u8) -> Tensor {
    let scale = archive::normalization_scale(depth);
    let data = grid.data().iter().map(|&v| v as f64 / scale).collect();
    Tensor::from_vec(&[1, grid.height(), grid.width(), 1], data).expect("grid-sized")
}

/// Measure DT/CLT/CT per resolution and for full decompression over the
/// first `n_images` corpus entries, with `repetitions` repeats and medians
/// reported. `full_model` classifies the fully decoded image; when absent a
/// deterministically initialized model of the same architecture stands in
/// (the baseline row only contributes timing).
pub fn run_bench(
    corpus: &LabeledCorpus,
    models: &BTreeMap<u8, Model>,
    full_model: Option<&Model>,
    n_images: usize,
    repetitions: usize,
) -> Result<BenchReport, BenchError> {
    for r in 1..=corpus.levels {
        if !models.contains_key(&r) {
            return Err(BenchError::MissingCheckpoint(r));
        }
    }
    let n = n_images.min(corpus.entries.len());
    if n == 0 {
        return Err(BenchError::EmptyCorpus);
    }
    let repetitions = repetitions.max(1);
    let streams: Vec<Vec<u8>> = (0..n).map(|i| fs::read(corpus.stream_path(i))).collect::<Result<_, _>>()?;

    let (full_w, full_h) = (corpus.canonical_width as usize, corpus.canonical_height as usize);
    let fallback_full;
    let full_model = match full_model {
        Some(m) => m,
        None => {
            fallback_full = Model::init(build_model(corpus.class_count(), (full_h, full_w))?, 0);
            &fallback_full
        }
    };

    // full-decompression baseline
    let mut full_dt = Vec::with_capacity(repetitions);
    let mut full_clt = Vec::with_capacity(repetitions);
    let mut full_bytes = 0u64;
    for _ in 0..repetitions {
        let mut dt = 0.0;
        let mut clt = 0.0;
        full_bytes = 0;
        for stream in &streams {
            let t0 = Instant::now();
            let img = codec::decode_full(stream)?;
            dt += t0.elapsed().as_secs_f64();
            full_bytes += stream.len() as u64;
            let scale = archive::normalization_scale(0);
            let data = img.samples().iter().map(|&v| v as f64 / scale).collect();
            let tensor = Tensor::from_vec(&[1, full_h, full_w, 1], data).expect("image-sized");
            let t0 = Instant::now();
            full_model.forward_eval(&tensor)?;
            clt += t0.elapsed().as_secs_f64();
        }
        full_dt.push(dt);
        full_clt.push(clt);
    }
    let full_row_dt = median(full_dt);
    let full_row_clt = median(full_clt);
    let full_ct = full_row_dt + full_row_clt;

    let mut rows = vec![BenchRow {
        resolution: None,
        n_images: n,
        decode_seconds: full_row_dt,
        classify_seconds: full_row_clt,
        total_seconds: full_ct,
        speedup_vs_full: None,
        bytes_read: full_bytes,
    }];

    for r in (1..=corpus.levels).rev() {
        let model = &models[&r];
        let depth = corpus.levels - r + 1;
        let mut dts = Vec::with_capacity(repetitions);
        let mut clts = Vec::with_capacity(repetitions);
        let mut bytes = 0u64;
        for _ in 0..repetitions {
            let mut dt = 0.0;
            let mut clt = 0.0;
            bytes = 0;
            for stream in &streams {
                let t0 = Instant::now();
                let decoded = codec::decode_partial(stream, r)?;
                dt += t0.elapsed().as_secs_f64();
                bytes += decoded.bytes_read as u64;
                let tensor = normalize_grid(&decoded.grid, depth);
                let t0 = Instant::now();
                model.forward_eval(&tensor)?;
                clt += t0.elapsed().as_secs_f64();
            }
            dts.push(dt);
            clts.push(clt);
        }
        let dt = median(dts);
        let clt = median(clts);
        let ct = dt + clt;
        rows.push(BenchRow {
            resolution: Some(r),
            n_images: n,
            decode_seconds: dt,
            classify_seconds: clt,
            total_seconds: ct,
            speedup_vs_full: Some(speedup(full_ct, ct)?),
            bytes_read: bytes,
        });
    }

    let memory = memory_model(corpus.levels as u32, corpus.canonical_width as f64, 1.0)?;
    let environment = format!(
        "{}/{}, {} worker threads, median of {repetitions} repetitions",
        std::env::consts::OS,
        std::env::consts::ARCH,
        rayon::current_num_threads(),
    );
    Ok(BenchReport { rows, memory, environment })
}
