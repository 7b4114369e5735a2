//! Model assembly, training, evaluation, and checkpoints.
//!
//! The architecture is five conv+ReLU+pool+dropout stages with 16, 32, 64,
//! 128, and 256 output channels and dropout rates stepping 0.10 to 0.30,
//! followed by a 512-unit fully connected layer and a softmax head. One
//! model is trained per resolution; nothing is shared across resolutions.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::archive::{self, ArchiveError, LabeledCorpus, Split};
use crate::codec;
use crate::metrics::ConfusionMatrix;
use crate::nn::{
    adam_step, conv2d_backward, conv2d_backward_params, conv2d_forward, cross_entropy,
    cross_entropy_softmax_grad, dense_backward, dense_forward, dropout_backward, dropout_forward,
    maxpool2x2_backward, maxpool2x2_forward, relu_backward, relu_forward, softmax, AdamParams,
    DropoutMask, NnError, OptimState, PoolCache, Tensor,
};
use crate::wavelet;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"WCNN";
pub const CHECKPOINT_VERSION: u16 = 1;
pub const DEFAULT_FC_UNITS: usize = 512;

const CONV_CHANNELS: [usize; 5] = [16, 32, 64, 128, 256];
const DROPOUT_RATES: [f64; 5] = [0.10, 0.15, 0.20, 0.25, 0.30];

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("input {width}x{height} too small for the pooling chain")]
    InputTooSmall { width: usize, height: usize },
    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("checkpoint geometry {ckpt} does not match corpus geometry {corpus}")]
    GeometryMismatch { ckpt: String, corpus: String },
    #[error("malformed checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("training config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error(transparent)]
    Wavelet(#[from] wavelet::WaveletError),
    #[error(transparent)]
    Codec(#[from] codec::CodecError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Conv { in_ch: usize, out_ch: usize, kernel: usize },
    Relu,
    MaxPool,
    Dropout { rate: f64 },
    Flatten,
    Dense { inputs: usize, outputs: usize },
    Softmax,
}

/// Ordered layer descriptors plus the input geometry they expect.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub input_height: usize,
    pub input_width: usize,
    pub input_channels: usize,
    pub num_classes: usize,
    pub layers: Vec<LayerKind>,
}

impl LayerSpec {
    /// Total learnable parameter count implied by the descriptors.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match *l {
                LayerKind::Conv { in_ch, out_ch, kernel } => kernel * kernel * in_ch * out_ch + out_ch,
                LayerKind::Dense { inputs, outputs } => inputs * outputs + outputs,
                _ => 0,
            })
            .sum()
    }
}

/// The standard five-stage architecture for `input` = (height, width) LL
/// grids with a configurable fully connected width.
pub fn build_model_with_units(
    num_classes: usize,
    input: (usize, usize),
    fc_units: usize,
) -> Result<LayerSpec, ClassifierError> {
    if num_classes < 2 {
        return Err(ClassifierError::TooFewClasses(num_classes));
    }
    let (height, width) = input;
    if height == 0 || width == 0 {
        return Err(ClassifierError::InputTooSmall { width, height });
    }
    let (mut h, mut w) = (height, width);
    let mut in_ch = 1;
    let mut layers = Vec::new();
    for (&out_ch, &rate) in CONV_CHANNELS.iter().zip(&DROPOUT_RATES) {
        layers.push(LayerKind::Conv { in_ch, out_ch, kernel: 3 });
        layers.push(LayerKind::Relu);
        layers.push(LayerKind::MaxPool);
        layers.push(LayerKind::Dropout { rate });
        h = h.div_ceil(2);
        w = w.div_ceil(2);
        if h == 0 || w == 0 {
            return Err(ClassifierError::InputTooSmall { width, height });
        }
        in_ch = out_ch;
    }
    layers.push(LayerKind::Flatten);
    layers.push(LayerKind::Dense { inputs: h * w * in_ch, outputs: fc_units });
    layers.push(LayerKind::Relu);
    layers.push(LayerKind::Dense { inputs: fc_units, outputs: num_classes });
    layers.push(LayerKind::Softmax);
    Ok(LayerSpec {
        input_height: height,
        input_width: width,
        input_channels: 1,
        num_classes,
        layers,
    })
}

pub fn build_model(num_classes: usize, input: (usize, usize)) -> Result<LayerSpec, ClassifierError> {
    build_model_with_units(num_classes, input, DEFAULT_FC_UNITS)
}

enum LayerCache {
    Conv { input: Tensor },
    Relu { input: Tensor },
    Pool(PoolCache),
    Dropout(DropoutMask),
    /// Eval-mode dropout: nothing to record.
    Identity,
    Flatten { shape: Vec<usize> },
    Dense { input: Tensor },
    Softmax,
}

/// A layer spec bound to its parameter tensors (declaration order:
/// kernels/bias per conv, then weights/bias per dense layer).
#[derive(Debug, Clone)]
pub struct Model {
    pub spec: LayerSpec,
    pub params: Vec<Tensor>,
}

fn uniform_tensor(rng: &mut ChaCha20Rng, shape: &[usize], limit: f64) -> Tensor {
    let data = (0..shape.iter().product::<usize>())
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    Tensor::from_vec(shape, data).expect("sized from shape")
}

impl Model {
    /// He-uniform init for conv stages (ReLU follows), Xavier-uniform for the
    /// dense layers, zero biases.
    pub fn init(spec: LayerSpec, seed: u64) -> Model {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        for layer in &spec.layers {
            match *layer {
                LayerKind::Conv { in_ch, out_ch, kernel } => {
                    let fan_in = (kernel * kernel * in_ch) as f64;
                    let limit = (6.0 / fan_in).sqrt();
                    params.push(uniform_tensor(&mut rng, &[kernel, kernel, in_ch, out_ch], limit));
                    params.push(Tensor::zeros(&[out_ch]));
                }
                LayerKind::Dense { inputs, outputs } => {
                    let limit = (6.0 / (inputs + outputs) as f64).sqrt();
                    params.push(uniform_tensor(&mut rng, &[inputs, outputs], limit));
                    params.push(Tensor::zeros(&[outputs]));
                }
                _ => {}
            }
        }
        Model { spec, params }
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    fn forward(
        &self,
        input: &Tensor,
        mut dropout_rng: Option<&mut ChaCha20Rng>,
    ) -> Result<(Tensor, Vec<LayerCache>), ClassifierError> {
        let mut caches = Vec::with_capacity(self.spec.layers.len());
        let mut current = input.clone();
        let mut param_idx = 0;
        for layer in &self.spec.layers {
            match layer {
                LayerKind::Conv { .. } => {
                    let kernels = &self.params[param_idx];
                    let bias = &self.params[param_idx + 1];
                    param_idx += 2;
                    let out = conv2d_forward(&current, kernels, bias)?;
                    caches.push(LayerCache::Conv { input: std::mem::replace(&mut current, out) });
                }
                LayerKind::Relu => {
                    let out = relu_forward(&current);
                    caches.push(LayerCache::Relu { input: std::mem::replace(&mut current, out) });
                }
                LayerKind::MaxPool => {
                    let (out, cache) = maxpool2x2_forward(&current)?;
                    current = out;
                    caches.push(LayerCache::Pool(cache));
                }
                LayerKind::Dropout { rate } => {
                    match dropout_rng.as_deref_mut() {
                        Some(rng) => {
                            let (out, mask) = dropout_forward(&current, *rate, true, rng);
                            current = out;
                            caches.push(LayerCache::Dropout(mask));
                        }
                        None => caches.push(LayerCache::Identity),
                    }
                }
                LayerKind::Flatten => {
                    let shape = current.shape().to_vec();
                    let batch = shape[0];
                    let features: usize = shape[1..].iter().product();
                    current = current.reshape(&[batch, features])?;
                    caches.push(LayerCache::Flatten { shape });
                }
                LayerKind::Dense { .. } => {
                    let weights = &self.params[param_idx];
                    let bias = &self.params[param_idx + 1];
                    param_idx += 2;
                    let out = dense_forward(&current, weights, bias)?;
                    caches.push(LayerCache::Dense { input: std::mem::replace(&mut current, out) });
                }
                LayerKind::Softmax => {
                    current = softmax(&current)?;
                    caches.push(LayerCache::Softmax);
                }
            }
        }
        Ok((current, caches))
    }

    /// Deterministic eval-mode forward pass; dropout is the identity.
    pub fn forward_eval(&self, input: &Tensor) -> Result<Tensor, ClassifierError> {
        Ok(self.forward(input, None)?.0)
    }

    /// Gradients for every parameter, given the caches of a training-mode
    /// forward pass whose output was `probs`.
    fn backward(
        &self,
        caches: &[LayerCache],
        probs: &Tensor,
        targets: &Tensor,
    ) -> Result<Vec<Tensor>, ClassifierError> {
        let mut grads: Vec<Tensor> = self.params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        let mut grad = Tensor::zeros(&[0]);
        let mut have_grad = false;
        let mut param_idx = self.params.len();
        for (layer, cache) in self.spec.layers.iter().zip(caches).rev() {
            match (layer, cache) {
                (LayerKind::Softmax, LayerCache::Softmax) => {
                    grad = cross_entropy_softmax_grad(targets, probs)?;
                    have_grad = true;
                }
                (LayerKind::Dense { .. }, LayerCache::Dense { input }) => {
                    debug_assert!(have_grad);
                    param_idx -= 2;
                    let weights = &self.params[param_idx];
                    let (gi, gw, gb) = dense_backward(input, weights, &grad)?;
                    grads[param_idx] = gw;
                    grads[param_idx + 1] = gb;
                    grad = gi;
                }
                (LayerKind::Flatten, LayerCache::Flatten { shape }) => {
                    grad = grad.reshape(shape)?;
                }
                (LayerKind::Dropout { .. }, LayerCache::Dropout(mask)) => {
                    grad = dropout_backward(mask, &grad)?;
                }
                (LayerKind::Dropout { .. }, LayerCache::Identity) => {}
                (LayerKind::MaxPool, LayerCache::Pool(cache)) => {
                    grad = maxpool2x2_backward(cache, &grad)?;
                }
                (LayerKind::Relu, LayerCache::Relu { input }) => {
                    grad = relu_backward(input, &grad)?;
                }
                (LayerKind::Conv { .. }, LayerCache::Conv { input }) => {
                    param_idx -= 2;
                    let kernels = &self.params[param_idx];
                    if param_idx == 0 {
                        // nothing below the first layer consumes its input gradient
                        let (gk, gb) = conv2d_backward_params(input, kernels, &grad)?;
                        grads[param_idx] = gk;
                        grads[param_idx + 1] = gb;
                    } else {
                        let (gi, gk, gb) = conv2d_backward(input, kernels, &grad)?;
                        grads[param_idx] = gk;
                        grads[param_idx + 1] = gb;
                        grad = gi;
                    }
                }
                _ => return Err(ClassifierError::BadCheckpoint("layer/cache mismatch".into())),
            }
        }
        Ok(grads)
    }

    pub fn save(&self, path: &Path) -> Result<(), ClassifierError> {
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for v in [
            self.spec.input_height as u32,
            self.spec.input_width as u32,
            self.spec.input_channels as u32,
            self.spec.num_classes as u32,
            self.spec.layers.len() as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for layer in &self.spec.layers {
            match *layer {
                LayerKind::Conv { in_ch, out_ch, kernel } => {
                    out.push(0);
                    for v in [in_ch as u32, out_ch as u32, kernel as u32] {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
                LayerKind::Relu => out.push(1),
                LayerKind::MaxPool => out.push(2),
                LayerKind::Dropout { rate } => {
                    out.push(3);
                    out.extend_from_slice(&rate.to_le_bytes());
                }
                LayerKind::Flatten => out.push(4),
                LayerKind::Dense { inputs, outputs } => {
                    out.push(5);
                    for v in [inputs as u32, outputs as u32] {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
                LayerKind::Softmax => out.push(6),
            }
        }
        for p in &self.params {
            for v in p.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Model, ClassifierError> {
        let bytes = fs::read(path)?;
        let bad = |what: &str| ClassifierError::BadCheckpoint(what.into());
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8], ClassifierError> {
            let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated"))?;
            pos += n;
            Ok(s)
        };
        if take(4)? != CHECKPOINT_MAGIC {
            return Err(bad("magic"));
        }
        let version = u16::from_le_bytes(take(2)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(bad("version"));
        }
        let u32_at = |bytes: &[u8]| u32::from_le_bytes(bytes.try_into().unwrap()) as usize;
        let input_height = u32_at(take(4)?);
        let input_width = u32_at(take(4)?);
        let input_channels = u32_at(take(4)?);
        let num_classes = u32_at(take(4)?);
        let n_layers = u32_at(take(4)?);
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let tag = take(1)?[0];
            layers.push(match tag {
                0 => {
                    let in_ch = u32_at(take(4)?);
                    let out_ch = u32_at(take(4)?);
                    let kernel = u32_at(take(4)?);
                    LayerKind::Conv { in_ch, out_ch, kernel }
                }
                1 => LayerKind::Relu,
                2 => LayerKind::MaxPool,
                3 => LayerKind::Dropout { rate: f64::from_le_bytes(take(8)?.try_into().unwrap()) },
                4 => LayerKind::Flatten,
                5 => {
                    let inputs = u32_at(take(4)?);
                    let outputs = u32_at(take(4)?);
                    LayerKind::Dense { inputs, outputs }
                }
                6 => LayerKind::Softmax,
                other => return Err(bad(&format!("unknown layer tag {other}"))),
            });
        }
        let spec = LayerSpec { input_height, input_width, input_channels, num_classes, layers };
        let mut params = Vec::new();
        for layer in &spec.layers {
            let shapes: Vec<Vec<usize>> = match *layer {
                LayerKind::Conv { in_ch, out_ch, kernel } => {
                    vec![vec![kernel, kernel, in_ch, out_ch], vec![out_ch]]
                }
                LayerKind::Dense { inputs, outputs } => vec![vec![inputs, outputs], vec![outputs]],
                _ => vec![],
            };
            for shape in shapes {
                let count: usize = shape.iter().product();
                let raw = take(count * 8)?;
                let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
                params.push(Tensor::from_vec(&shape, data).expect("counted"));
            }
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Model { spec, params })
    }
}

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub resolution: u8,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Re-split the corpus with this fraction before training; `None` keeps
    /// the manifest's split.
    pub train_fraction: Option<f64>,
    pub fc_units: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            resolution: 3,
            epochs: 100,
            batch_size: 32,
            learning_rate: 0.001,
            seed: 0,
            train_fraction: None,
            fc_units: DEFAULT_FC_UNITS,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, levels: u8) -> Result<(), ClassifierError> {
        let fail = |msg: String| Err(ClassifierError::BadConfig(msg));
        if self.resolution < 1 || self.resolution > levels {
            return fail(format!("resolution {} out of range 1..={levels}", self.resolution));
        }
        if self.epochs == 0 {
            return fail("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch size must be >= 1".into());
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return fail(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.fc_units == 0 {
            return fail("fc units must be >= 1".into());
        }
        Ok(())
    }

    /// Apply `key = value` lines from a config file on top of this config.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), ClassifierError> {
        let text = fs::read_to_string(path)?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |what: &str| {
                ClassifierError::BadConfig(format!("{}:{}: {what}", path.display(), lineno + 1))
            };
            let (key, value) = line.split_once('=').ok_or_else(|| bad("expected key = value"))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "resolution" => self.resolution = value.parse().map_err(|_| bad("bad resolution"))?,
                "epochs" => self.epochs = value.parse().map_err(|_| bad("bad epochs"))?,
                "batch_size" => self.batch_size = value.parse().map_err(|_| bad("bad batch_size"))?,
                "learning_rate" => {
                    self.learning_rate = value.parse().map_err(|_| bad("bad learning_rate"))?
                }
                "seed" => self.seed = value.parse().map_err(|_| bad("bad seed"))?,
                "train_fraction" => {
                    self.train_fraction = Some(value.parse().map_err(|_| bad("bad train_fraction"))?)
                }
                "fc_units" => self.fc_units = value.parse().map_err(|_| bad("bad fc_units"))?,
                other => return Err(bad(&format!("unknown key {other:?}"))),
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_accuracy: f64,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_loss: f64,
}

pub fn write_epoch_csv(records: &[EpochRecord], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "epoch,train_acc,train_loss,val_acc,val_loss")?;
    for r in records {
        writeln!(
            w,
            "{},{:.6},{:.6},{:.6},{:.6}",
            r.epoch, r.train_accuracy, r.train_loss, r.val_accuracy, r.val_loss
        )?;
    }
    Ok(())
}

pub struct TrainOutcome {
    pub model: Model,
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
}

fn argmax(row: &[f64]) -> usize {
    row.iter().enumerate().fold(0, |best, (i, &v)| if v > row[best] { i } else { best })
}

fn stack_cached(cache: &[(Tensor, usize)], indices: &[usize], n_classes: usize) -> (Tensor, Tensor) {
    let sample_shape = cache[indices[0]].0.shape();
    let per = sample_shape[1..].iter().product::<usize>();
    let mut shape = sample_shape.to_vec();
    shape[0] = indices.len();
    let mut data = Vec::with_capacity(indices.len() * per);
    let mut labels = Tensor::zeros(&[indices.len(), n_classes]);
    for (row, &i) in indices.iter().enumerate() {
        data.extend_from_slice(cache[i].0.data());
        labels.data_mut()[row * n_classes + cache[i].1] = 1.0;
    }
    (Tensor::from_vec(&shape, data).expect("uniform cache"), labels)
}

fn correct_count(probs: &Tensor, labels: &Tensor) -> usize {
    let n = probs.dim(1);
    probs
        .data()
        .chunks_exact(n)
        .zip(labels.data().chunks_exact(n))
        .filter(|(p, l)| argmax(p) == argmax(l))
        .count()
}

/// Train one model at the configured resolution. Deterministic given the
/// seed; keeps the checkpoint with the best validation accuracy (ties broken
/// by lower validation loss).
pub fn train(corpus: &LabeledCorpus, config: &TrainConfig) -> Result<TrainOutcome, ClassifierError> {
    config.validate(corpus.levels)?;
    let corpus = match config.train_fraction {
        Some(fraction) => archive::split_corpus(corpus, fraction, config.seed)?,
        None => corpus.clone(),
    };
    let (w, h) = wavelet::ll_dims(
        corpus.canonical_width as usize,
        corpus.canonical_height as usize,
        corpus.levels,
        config.resolution,
    );
    let spec = build_model_with_units(corpus.class_count(), (h, w), config.fc_units)?;
    let mut model = Model::init(spec, config.seed);

    // decode each entry once; batches reassemble from this cache
    let mut cache: Vec<(Tensor, usize)> = Vec::with_capacity(corpus.entries.len());
    for i in 0..corpus.entries.len() {
        let (tensor, _) = archive::load_batch(&corpus, &[i], config.resolution)?;
        cache.push((tensor, corpus.entries[i].class_index));
    }
    let train_idx = corpus.indices_of(Split::Train);
    let val_idx = corpus.indices_of(Split::Val);
    assert!(!train_idx.is_empty(), "corpus has no training entries");

    let hp = AdamParams::with_learning_rate(config.learning_rate);
    let mut optim = OptimState::new(&model.params);
    let mut dropout_rng = ChaCha20Rng::seed_from_u64(config.seed ^ 0x5EED_D20B_0000_0001);
    let n_classes = corpus.class_count();

    let mut records = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, f64, usize, Vec<Tensor>)> = None; // (acc, loss, epoch, params)
    for epoch in 1..=config.epochs {
        let mut order = train_idx.clone();
        let mut shuffle_rng =
            ChaCha20Rng::seed_from_u64(config.seed ^ 0xBA7C_4000u64.wrapping_add(epoch as u64));
        order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(config.batch_size) {
            let (inputs, labels) = stack_cached(&cache, batch, n_classes);
            let (probs, caches) = model.forward(&inputs, Some(&mut dropout_rng))?;
            let loss = cross_entropy(&labels, &probs)?;
            if !loss.is_finite() {
                return Err(ClassifierError::NonFiniteLoss { epoch });
            }
            loss_sum += loss * batch.len() as f64;
            correct += correct_count(&probs, &labels);
            let grads = model.backward(&caches, &probs, &labels)?;
            adam_step(&mut model.params, &grads, &mut optim, &hp)?;
        }
        let train_loss = loss_sum / train_idx.len() as f64;
        let train_accuracy = correct as f64 / train_idx.len() as f64;

        let (val_accuracy, val_loss) = if val_idx.is_empty() {
            (train_accuracy, train_loss)
        } else {
            let mut loss_sum = 0.0;
            let mut correct = 0usize;
            for batch in val_idx.chunks(config.batch_size) {
                let (inputs, labels) = stack_cached(&cache, batch, n_classes);
                let probs = model.forward_eval(&inputs)?;
                loss_sum += cross_entropy(&labels, &probs)? * batch.len() as f64;
                correct += correct_count(&probs, &labels);
            }
            (correct as f64 / val_idx.len() as f64, loss_sum / val_idx.len() as f64)
        };
        if !val_loss.is_finite() {
            return Err(ClassifierError::NonFiniteLoss { epoch });
        }

        let improved = match &best {
            None => true,
            Some((acc, loss, _, _)) => {
                val_accuracy > *acc || (val_accuracy == *acc && val_loss < *loss)
            }
        };
        if improved {
            best = Some((val_accuracy, val_loss, epoch, model.params.clone()));
        }
        records.push(EpochRecord { epoch, train_accuracy, train_loss, val_accuracy, val_loss });
    }

    let (_, _, best_epoch, best_params) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        model: Model { spec: model.spec, params: best_params },
        records,
        best_epoch,
    })
}

/// What the evaluation decodes before classifying.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    /// Partial decode of the LL grid at this resolution.
    Resolution(u8),
    /// Full decompression back to pixels.
    Full,
}

#[derive(Debug)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    /// Wall time spent strictly inside decode calls.
    pub decode_seconds: f64,
    /// Wall time spent strictly inside forward passes.
    pub classify_seconds: f64,
    pub bytes_read: u64,
}

impl EvalReport {
    /// Decode plus classification time; the report stores the parts and sums
    /// them rather than re-measuring.
    pub fn total_seconds(&self) -> f64 {
        self.decode_seconds + self.classify_seconds
    }
}

fn expected_input_dims(corpus: &LabeledCorpus, mode: DecodeMode) -> (usize, usize) {
    match mode {
        DecodeMode::Resolution(r) => wavelet::ll_dims(
            corpus.canonical_width as usize,
            corpus.canonical_height as usize,
            corpus.levels,
            r,
        ),
        DecodeMode::Full => (corpus.canonical_width as usize, corpus.canonical_height as usize),
    }
}

/// Classify a corpus split image by image, timing decode and forward work
/// separately. Streams are pre-loaded so I/O stays out of the decode time.
pub fn evaluate(
    model: &Model,
    corpus: &LabeledCorpus,
    split: Split,
    mode: DecodeMode,
) -> Result<EvalReport, ClassifierError> {
    let (w, h) = expected_input_dims(corpus, mode);
    if (model.spec.input_height, model.spec.input_width) != (h, w)
        || model.spec.num_classes != corpus.class_count()
    {
        return Err(ClassifierError::GeometryMismatch {
            ckpt: format!(
                "{}x{} / {} classes",
                model.spec.input_height, model.spec.input_width, model.spec.num_classes
            ),
            corpus: format!("{h}x{w} / {} classes", corpus.class_count()),
        });
    }
    if let DecodeMode::Resolution(r) = mode {
        if r < 1 || r > corpus.levels {
            return Err(codec::CodecError::BadResolution { resolution: r, levels: corpus.levels }.into());
        }
    }

    let indices = corpus.indices_of(split);
    let streams: Vec<Vec<u8>> = indices
        .iter()
        .map(|&i| fs::read(corpus.stream_path(i)))
        .collect::<Result<_, _>>()?;

    let mut confusion = ConfusionMatrix::new(corpus.classes.clone());
    let mut decode_seconds = 0.0;
    let mut classify_seconds = 0.0;
    let mut bytes_read = 0u64;
    for (&index, stream) in indices.iter().zip(&streams) {
        let (tensor, read) = match mode {
            DecodeMode::Resolution(r) => {
                let t0 = Instant::now();
                let decoded = codec::decode_partial(stream, r)?;
                decode_seconds += t0.elapsed().as_secs_f64();
                let depth = corpus.levels - r + 1;
                let scale = archive::normalization_scale(depth);
                let data = decoded.grid.data().iter().map(|&v| v as f64 / scale).collect();
                (
                    Tensor::from_vec(&[1, h, w, 1], data).expect("validated geometry"),
                    decoded.bytes_read as u64,
                )
            }
            DecodeMode::Full => {
                let t0 = Instant::now();
                let img = codec::decode_full(stream)?;
                decode_seconds += t0.elapsed().as_secs_f64();
                let scale = archive::normalization_scale(0);
                let data = img.samples().iter().map(|&v| v as f64 / scale).collect();
                (
                    Tensor::from_vec(&[1, h, w, 1], data).expect("validated geometry"),
                    stream.len() as u64,
                )
            }
        };
        bytes_read += read;
        let t0 = Instant::now();
        let probs = model.forward_eval(&tensor)?;
        classify_seconds += t0.elapsed().as_secs_f64();
        confusion.record(corpus.entries[index].class_index, argmax(probs.data()));
    }
    Ok(EvalReport { confusion, decode_seconds, classify_seconds, bytes_read })
}
