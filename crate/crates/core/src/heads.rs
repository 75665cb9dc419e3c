//! Feed-forward classifier heads, least-margin confidence, and the
//! Adam + early-stopping trainer shared by every trainable model.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::ConfusionMatrix;
use crate::label::{Class, NUM_CLASSES};
use crate::nn::{self, Adam, AdamConfig, Dense, Parameters};

/// Probability vector over the three classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    pub p: [f64; NUM_CLASSES],
}

impl ClassDistribution {
    pub fn new(p: [f64; NUM_CLASSES]) -> Self {
        Self { p }
    }

    pub fn from_logits(logits: &[f64]) -> Self {
        let p = nn::softmax(logits);
        Self { p: [p[0], p[1], p[2]] }
    }

    pub fn uniform() -> Self {
        Self { p: [1.0 / 3.0; NUM_CLASSES] }
    }

    /// Argmax class; ties resolve to the lower class index.
    pub fn predicted(&self) -> Class {
        let mut best = 0;
        for i in 1..NUM_CLASSES {
            if self.p[i] > self.p[best] {
                best = i;
            }
        }
        Class::ALL[best]
    }

    pub fn least_margin(&self) -> f64 {
        least_margin(&self.p)
    }
}

/// Difference between the two largest probabilities.
pub fn least_margin(p: &[f64]) -> f64 {
    let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &v in p {
        if v > first {
            second = first;
            first = v;
        } else if v > second {
            second = v;
        }
    }
    if second == f64::NEG_INFINITY {
        return first.clamp(0.0, 1.0);
    }
    (first - second).clamp(0.0, 1.0)
}

/// Dense layers with rectifier activations and dropout between them, ending
/// in a 3-way softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForwardHead {
    pub layers: Vec<Dense>,
    pub dropout: f64,
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct HeadCache {
    /// Input to each layer (post-activation, post-dropout of the previous one).
    inputs: Vec<Vec<f64>>,
    /// Dropout multipliers applied after each hidden activation.
    masks: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
    pub dist: ClassDistribution,
}

pub const DEFAULT_DROPOUT: f64 = 0.1;
pub const DEFAULT_HIDDEN_3: [usize; 2] = [256, 128];
pub const DEFAULT_HIDDEN_5: [usize; 4] = [512, 256, 128, 64];

impl FeedForwardHead {
    /// Randomly initialised head `input -> hidden... -> 3`.
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: &[usize], dropout: f64, rng: &mut R) -> Self {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(NUM_CLASSES);
        let layers = dims.windows(2).map(|w| Dense::init(w[0], w[1], rng)).collect();
        Self { layers, dropout }
    }

    pub fn zeros(input: usize, hidden: &[usize]) -> Self {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(NUM_CLASSES);
        let layers = dims.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        Self { layers, dropout: 0.0 }
    }

    pub fn from_layers(layers: Vec<Dense>, dropout: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::ModelFormat("head has no layers".into()));
        }
        nn::check_chain(&layers)?;
        let out = layers.last().map(|l| l.outputs).unwrap_or(0);
        if out != NUM_CLASSES {
            return Err(Error::DimensionMismatch { expected: NUM_CLASSES, actual: out });
        }
        Ok(Self { layers, dropout })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(Dense::zeros_like).collect(),
            dropout: self.dropout,
        }
    }

    /// Inference (`rng == None`) or training forward pass with dropout.
    pub fn forward_cached(&self, x: &[f64], mut rng: Option<&mut ChaCha8Rng>) -> HeadCache {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut masks = Vec::with_capacity(self.layers.len().saturating_sub(1));
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.forward(&h);
            inputs.push(h);
            if i < last {
                nn::relu_in_place(&mut z);
                let mask: Vec<f64> = match rng.as_deref_mut() {
                    Some(r) if self.dropout > 0.0 => {
                        let keep = 1.0 - self.dropout;
                        (0..z.len())
                            .map(|_| if r.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                            .collect()
                    }
                    _ => Vec::new(),
                };
                if !mask.is_empty() {
                    z.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                }
                masks.push(mask);
            }
            h = z;
        }
        let dist = ClassDistribution::from_logits(&h);
        HeadCache { inputs, masks, logits: h, dist }
    }

    pub fn forward(&self, x: &[f64]) -> ClassDistribution {
        self.forward_cached(x, None).dist
    }

    /// Backpropagates `dlogits`, accumulating into `grad`; returns `dL/dx`.
    pub fn backward(&self, cache: &HeadCache, dlogits: &[f64], grad: &mut FeedForwardHead) -> Vec<f64> {
        let mut dy = dlogits.to_vec();
        for i in (0..self.layers.len()).rev() {
            let dx = self.layers[i].backward(&cache.inputs[i], &dy, &mut grad.layers[i]);
            if i == 0 {
                return dx;
            }
            // through dropout and the rectifier of layer i-1
            let act = &cache.inputs[i];
            let mask = &cache.masks[i - 1];
            dy = dx
                .iter()
                .enumerate()
                .map(|(j, &g)| {
                    if act[j] > 0.0 {
                        if mask.is_empty() { g } else { g * mask[j] }
                    } else {
                        0.0
                    }
                })
                .collect();
        }
        unreachable!("head has at least one layer")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let refs: Vec<&Dense> = self.layers.iter().collect();
        nn::save_layers(path, &refs)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_layers(nn::load_layers(path)?, 0.0)
    }
}

impl Parameters for FeedForwardHead {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layers.tensors()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.tensors_mut()
    }
}

/// Softmax cross-entropy gradient with respect to the logits: `p - onehot`.
pub fn cross_entropy_grad(dist: &ClassDistribution, label: usize) -> [f64; NUM_CLASSES] {
    let mut g = dist.p;
    g[label] -= 1.0;
    g
}

pub fn cross_entropy(dist: &ClassDistribution, label: usize) -> f64 {
    -(dist.p[label].max(1e-300)).ln()
}

/// A model trainable by [`fit`].
pub trait Trainable: Parameters + Clone {
    type Input;

    fn zeros_like(&self) -> Self;

    /// Forward + backward for one sample; accumulates into `grad`, returns the loss.
    fn accumulate(&self, x: &Self::Input, label: usize, rng: &mut ChaCha8Rng, grad: &mut Self) -> f64;

    fn predict(&self, x: &Self::Input) -> ClassDistribution;
}

impl Trainable for FeedForwardHead {
    type Input = Vec<f64>;

    fn zeros_like(&self) -> Self {
        FeedForwardHead::zeros_like(self)
    }

    fn accumulate(&self, x: &Vec<f64>, label: usize, rng: &mut ChaCha8Rng, grad: &mut Self) -> f64 {
        let cache = self.forward_cached(x, Some(rng));
        let dlogits = cross_entropy_grad(&cache.dist, label);
        self.backward(&cache, &dlogits, grad);
        cross_entropy(&cache.dist, label)
    }

    fn predict(&self, x: &Vec<f64>) -> ClassDistribution {
        self.forward(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 64,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            patience: 10,
            max_epochs: 200,
            val_fraction: 0.15,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::InvalidParameter(
                "learning rate, batch size and patience must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::InvalidParameter("val_fraction must be in [0,1)".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub train_size: usize,
    pub val_size: usize,
}

/// Stratified split: roughly `fraction` of each class goes to validation,
/// never emptying a class's training share.
pub fn stratified_split(labels: &[usize], fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for c in 0..NUM_CLASSES {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(rng);
        let n_val = if idx.len() >= 2 {
            ((idx.len() as f64 * fraction).round() as usize).min(idx.len() - 1)
        } else {
            0
        };
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Hook run at the start of every epoch with the current model, allowed to
/// rewrite inputs that depend on it (e.g. adapted previous embeddings).
pub type Refresh<'a, M> = dyn FnMut(&M, &mut [(<M as Trainable>::Input, usize)]) + 'a;

/// Mini-batch Adam on softmax cross-entropy with early stopping on validation
/// macro-F1 (validation loss breaks ties). Returns the best epoch's weights.
pub fn fit<M: Trainable>(
    model: M,
    mut data: Vec<(M::Input, usize)>,
    cfg: &TrainConfig,
    mut refresh: Option<&mut Refresh<'_, M>>,
) -> Result<(M, TrainHistory)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if let Some(bad) = data.iter().find(|(_, y)| *y >= NUM_CLASSES) {
        return Err(Error::LabelOutOfRange(bad.1));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let labels: Vec<usize> = data.iter().map(|(_, y)| *y).collect();
    let (train_idx, mut val_idx) = stratified_split(&labels, cfg.val_fraction, &mut rng);
    if val_idx.is_empty() {
        val_idx = train_idx.clone();
    }

    let mut model = model;
    let mut opt = Adam::new(cfg.adam());
    let mut best = model.clone();
    let mut best_key = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut epochs = Vec::new();
    let mut order = train_idx.clone();

    for epoch in 0..cfg.max_epochs {
        if let Some(r) = refresh.as_deref_mut() {
            r(&model, &mut data);
        }
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = model.zeros_like();
            for &i in batch {
                let (x, y) = &data[i];
                loss_sum += model.accumulate(x, *y, &mut rng, &mut grad);
            }
            grad.scale(1.0 / batch.len() as f64);
            opt.step(&mut model, &grad);
        }
        let (val_loss, val_f1) = evaluate(&model, &data, &val_idx);
        epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            val_loss,
            val_macro_f1: val_f1,
        });
        let key = (val_f1, -val_loss);
        if key > best_key {
            best_key = key;
            best = model.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    Ok((
        best,
        TrainHistory {
            epochs,
            best_epoch,
            train_size: train_idx.len(),
            val_size: val_idx.len(),
        },
    ))
}

fn evaluate<M: Trainable>(model: &M, data: &[(M::Input, usize)], idx: &[usize]) -> (f64, f64) {
    let mut cm = ConfusionMatrix::default();
    let mut loss = 0.0;
    for &i in idx {
        let (x, y) = &data[i];
        let d = model.predict(x);
        loss += cross_entropy(&d, *y);
        cm.add(Class::ALL[*y], d.predicted());
    }
    (loss / idx.len().max(1) as f64, cm.metrics().macro_f1)
}

pub const DEFAULT_TEXT_DIM: usize = 128;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic text embedding: hashed character 2- and 3-gram counts over the
/// lowercased, space-padded text, L2-normalised. Empty text maps to zeros.
pub fn reference_linguistic_encode(text: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    let normalized = text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    if normalized.is_empty() || dim == 0 {
        return v;
    }
    let chars: Vec<char> = format!(" {normalized} ").chars().collect();
    let mut buf = String::new();
    for n in 2..=3 {
        for w in chars.windows(n) {
            buf.clear();
            buf.extend(w);
            v[(fnv1a(buf.as_bytes()) % dim as u64) as usize] += 1.0;
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}
