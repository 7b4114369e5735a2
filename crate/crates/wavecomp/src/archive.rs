//! Labeled compressed corpora: encode a directory tree of images (one
//! subdirectory per class) into `.wcc` files, track entries and a
//! deterministic stratified train/val split in a line-oriented manifest,
//! and load batches of partially decoded coefficients as tensors.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::codec::{self, CodecError};
use crate::image::Image;
use crate::nn::Tensor;
use crate::wavelet;

pub const MANIFEST_NAME: &str = "manifest.tsv";

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("class directory {0} holds no decodable images")]
    EmptyClass(String),
    #[error("cannot read image {path}: {reason}")]
    UnreadableImage { path: PathBuf, reason: String },
    #[error("duplicate stem {stem} in class {class}")]
    DuplicateStem { class: String, stem: String },
    #[error("train fraction must be in (0, 1), got {0}")]
    FractionOutOfRange(f64),
    #[error("need at least 2 class directories under {0}")]
    NotEnoughClasses(PathBuf),
    #[error("malformed manifest {path}: {reason}")]
    BadManifest { path: PathBuf, reason: String },
    #[error("entry index {0} out of range")]
    BadIndex(usize),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusEntry {
    pub rel_path: PathBuf,
    pub class_index: usize,
    pub split: Split,
}

/// A compressed dataset rooted at a directory: class names, per-entry
/// codestream paths and split tags, plus the build parameters that make the
/// corpus reproducible.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCorpus {
    pub root: PathBuf,
    pub classes: Vec<String>,
    pub entries: Vec<CorpusEntry>,
    pub levels: u8,
    pub canonical_width: u32,
    pub canonical_height: u32,
    pub seed: u64,
    pub train_fraction: f64,
}

impl LabeledCorpus {
    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn indices_of(&self, split: Split) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn stream_path(&self, index: usize) -> PathBuf {
        self.root.join(&self.entries[index].rel_path)
    }

    /// Serialized manifest: header lines (`#key<TAB>value...`, classes in
    /// index order), then one `path<TAB>class_index<TAB>split` line per entry.
    pub fn manifest_bytes(&self) -> Vec<u8> {
        let mut out = String::new();
        out.push_str("#wavecomp-manifest\tv1\n");
        out.push_str(&format!("#levels\t{}\n", self.levels));
        out.push_str(&format!("#size\t{}\t{}\n", self.canonical_width, self.canonical_height));
        out.push_str(&format!("#seed\t{}\n", self.seed));
        out.push_str(&format!("#fraction\t{}\n", self.train_fraction));
        for class in &self.classes {
            out.push_str(&format!("#class\t{class}\n"));
        }
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                e.rel_path.display(),
                e.class_index,
                e.split.as_str()
            ));
        }
        out.into_bytes()
    }

    pub fn save_manifest(&self) -> Result<PathBuf, ArchiveError> {
        let path = self.root.join(MANIFEST_NAME);
        fs::write(&path, self.manifest_bytes())?;
        Ok(path)
    }

    pub fn load_manifest(path: &Path) -> Result<Self, ArchiveError> {
        let bad = |reason: &str| ArchiveError::BadManifest { path: path.to_path_buf(), reason: reason.into() };
        let text = fs::read_to_string(path)?;
        let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let mut classes = Vec::new();
        let mut entries = Vec::new();
        let mut levels = None;
        let mut size = None;
        let mut seed = 0u64;
        let mut fraction = 0.8f64;
        for line in text.lines() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if let Some(key) = fields[0].strip_prefix('#') {
                match (key, fields.len()) {
                    ("wavecomp-manifest", 2) => {}
                    ("levels", 2) => levels = fields[1].parse().ok(),
                    ("size", 3) => {
                        size = fields[1].parse().ok().zip(fields[2].parse().ok());
                    }
                    ("seed", 2) => seed = fields[1].parse().map_err(|_| bad("bad seed"))?,
                    ("fraction", 2) => fraction = fields[1].parse().map_err(|_| bad("bad fraction"))?,
                    ("class", 2) => classes.push(fields[1].to_string()),
                    _ => return Err(bad(&format!("unrecognized header line {line:?}"))),
                }
            } else {
                if fields.len() != 3 {
                    return Err(bad(&format!("entry needs 3 fields, got {line:?}")));
                }
                let class_index: usize = fields[1].parse().map_err(|_| bad("bad class index"))?;
                let split = match fields[2] {
                    "train" => Split::Train,
                    "val" => Split::Val,
                    other => return Err(bad(&format!("bad split tag {other:?}"))),
                };
                entries.push(CorpusEntry { rel_path: PathBuf::from(fields[0]), class_index, split });
            }
        }
        let levels = levels.ok_or_else(|| bad("missing #levels"))?;
        let (canonical_width, canonical_height) = size.ok_or_else(|| bad("missing #size"))?;
        if classes.len() < 2 {
            return Err(bad("fewer than 2 classes"));
        }
        if entries.iter().any(|e| e.class_index >= classes.len()) {
            return Err(bad("class index out of range"));
        }
        Ok(LabeledCorpus {
            root,
            classes,
            entries,
            levels,
            canonical_width,
            canonical_height,
            seed,
            train_fraction: fraction,
        })
    }
}

#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub levels: u8,
    pub canonical_size: u32,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions { levels: 3, canonical_size: 256, train_fraction: 0.8, seed: 0 }
    }
}

fn list_sorted(dir: &Path, dirs: bool) -> Result<Vec<PathBuf>, ArchiveError> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() == dirs)
        .collect();
    out.sort();
    Ok(out)
}

/// Encode every image under `src_dir/<class>/` into `out_dir/<class>/*.wcc`,
/// resized to the canonical geometry, and write the manifest with a
/// stratified split. Class order is the lexicographic subdirectory order.
pub fn build_corpus(src_dir: &Path, out_dir: &Path, opts: &BuildOptions) -> Result<LabeledCorpus, ArchiveError> {
    let class_dirs = list_sorted(src_dir, true)?;
    if class_dirs.len() < 2 {
        return Err(ArchiveError::NotEnoughClasses(src_dir.to_path_buf()));
    }
    fs::create_dir_all(out_dir)?;

    let mut classes = Vec::new();
    let mut jobs: Vec<(PathBuf, PathBuf, usize)> = Vec::new(); // (src, rel out, class)
    for (class_index, dir) in class_dirs.iter().enumerate() {
        let class = dir.file_name().unwrap().to_string_lossy().to_string();
        let mut stems = BTreeSet::new();
        let mut count = 0;
        for file in list_sorted(dir, false)? {
            let ext = file.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
            if ext != "pgm" && ext != "png" {
                continue;
            }
            let stem = file.file_stem().unwrap().to_string_lossy().to_string();
            if !stems.insert(stem.clone()) {
                return Err(ArchiveError::DuplicateStem { class, stem });
            }
            jobs.push((file.clone(), PathBuf::from(&class).join(format!("{stem}.wcc")), class_index));
            count += 1;
        }
        if count == 0 {
            return Err(ArchiveError::EmptyClass(class));
        }
        fs::create_dir_all(out_dir.join(&class))?;
        classes.push(class);
    }

    let size = opts.canonical_size;
    jobs.par_iter().try_for_each(|(src, rel, _)| -> Result<(), ArchiveError> {
        let img = Image::load(src).map_err(|e| ArchiveError::UnreadableImage {
            path: src.clone(),
            reason: e.to_string(),
        })?;
        let resized = img.resize_bilinear(size, size).map_err(|e| ArchiveError::UnreadableImage {
            path: src.clone(),
            reason: e.to_string(),
        })?;
        let stream = codec::encode(&resized, opts.levels)?;
        fs::write(out_dir.join(rel), stream)?;
        Ok(())
    })?;

    let entries = jobs
        .into_iter()
        .map(|(_, rel_path, class_index)| CorpusEntry { rel_path, class_index, split: Split::Train })
        .collect();
    let corpus = LabeledCorpus {
        root: out_dir.to_path_buf(),
        classes,
        entries,
        levels: opts.levels,
        canonical_width: size,
        canonical_height: size,
        seed: opts.seed,
        train_fraction: opts.train_fraction,
    };
    let corpus = split_corpus(&corpus, opts.train_fraction, opts.seed)?;
    corpus.save_manifest()?;
    Ok(corpus)
}

/// Re-tag every entry with a fresh stratified train/val split: per class,
/// shuffle with the seeded RNG and send the first `round(fraction * n)`
/// entries to train.
pub fn split_corpus(corpus: &LabeledCorpus, train_fraction: f64, seed: u64) -> Result<LabeledCorpus, ArchiveError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(ArchiveError::FractionOutOfRange(train_fraction));
    }
    let mut out = corpus.clone();
    out.seed = seed;
    out.train_fraction = train_fraction;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    for class_index in 0..corpus.class_count() {
        let mut members: Vec<usize> = corpus
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.class_index == class_index)
            .map(|(i, _)| i)
            .collect();
        members.shuffle(&mut rng);
        let n_train = (train_fraction * members.len() as f64).round() as usize;
        for (rank, idx) in members.into_iter().enumerate() {
            out.entries[idx].split = if rank < n_train { Split::Train } else { Split::Val };
        }
    }
    Ok(out)
}

/// Divisor mapping LL coefficients at `depth` into small floating values.
pub fn normalization_scale(depth: u8) -> f64 {
    255.0 * (1u32 << depth) as f64
}

/// Decode the listed entries at resolution `r` and stack them into a
/// `(batch, H_r, W_r, 1)` tensor of normalized coefficients plus one-hot
/// labels `(batch, classes)`.
pub fn load_batch(
    corpus: &LabeledCorpus,
    indices: &[usize],
    resolution: u8,
) -> Result<(Tensor, Tensor), ArchiveError> {
    let (w, h) = wavelet::ll_dims(
        corpus.canonical_width as usize,
        corpus.canonical_height as usize,
        corpus.levels,
        resolution,
    );
    let depth = corpus.levels - resolution + 1;
    let scale = normalization_scale(depth);
    let batch = indices.len();
    let mut data = Vec::with_capacity(batch * h * w);
    let mut labels = Tensor::zeros(&[batch, corpus.class_count()]);
    for (row, &index) in indices.iter().enumerate() {
        let entry = corpus.entries.get(index).ok_or(ArchiveError::BadIndex(index))?;
        let bytes = fs::read(corpus.stream_path(index)).map_err(|e| ArchiveError::UnreadableImage {
            path: corpus.stream_path(index),
            reason: e.to_string(),
        })?;
        let decoded = codec::decode_partial(&bytes, resolution)?;
        assert_eq!(
            (decoded.grid.width(), decoded.grid.height()),
            (w, h),
            "corpus geometry must be uniform"
        );
        data.extend(decoded.grid.data().iter().map(|&v| v as f64 / scale));
        labels.data_mut()[row * corpus.class_count() + entry.class_index] = 1.0;
    }
    let tensor = Tensor::from_vec(&[batch, h, w, 1], data).expect("dims computed from corpus");
    Ok((tensor, labels))
}
