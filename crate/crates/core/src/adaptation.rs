//! Utterance embeddings, mean pooling, and locality-aware embedding
//! adaptation: an EMA blend of the current embedding with the previous one
//! when the previous utterance ended at most `window_s` seconds earlier.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads::{self, ClassDistribution, FeedForwardHead, HeadCache, Trainable};
use crate::nn::{self, Dense, Parameters};

pub const DEFAULT_WINDOW_S: f64 = 4.0;
pub const DEFAULT_STATIC_ALPHA: f64 = 0.5;
pub const DEFAULT_GATE_HIDDEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingSource {
    Acoustic,
    Linguistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub values: Vec<f64>,
    pub source: EmbeddingSource,
    pub t_start: f64,
    pub t_end: f64,
}

impl Embedding {
    pub fn new(values: Vec<f64>, source: EmbeddingSource, t_start: f64, t_end: f64) -> Self {
        Self { values, source, t_start, t_end }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Per-dimension arithmetic mean of frame vectors.
pub fn mean_pool(frames: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = frames.first().ok_or(Error::Empty("frame vectors"))?;
    let d = first.len();
    let mut acc = vec![0.0; d];
    for f in frames {
        if f.len() != d {
            return Err(Error::DimensionMismatch { expected: d, actual: f.len() });
        }
        acc.iter_mut().zip(f).for_each(|(a, v)| *a += v);
    }
    let n = frames.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// Two-layer network producing the EMA weight:
/// `alpha = sigmoid(w2 . relu(W1 [e_curr; e_prev] + b1) + b2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaGateNet {
    pub hidden: Dense,
    pub output: Dense,
}

/// Intermediates of one gate evaluation.
#[derive(Debug, Clone)]
pub struct GateCache {
    input: Vec<f64>,
    hidden: Vec<f64>,
    pub alpha: f64,
}

impl AlphaGateNet {
    pub fn zeros(dim: usize, hidden: usize) -> Self {
        Self {
            hidden: Dense::zeros(2 * dim, hidden),
            output: Dense::zeros(hidden, 1),
        }
    }

    pub fn new<R: Rng + ?Sized>(dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            hidden: Dense::init(2 * dim, hidden, rng),
            output: Dense::init_linear(hidden, 1, rng),
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.hidden.inputs / 2
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            hidden: self.hidden.zeros_like(),
            output: self.output.zeros_like(),
        }
    }

    pub fn forward_cached(&self, curr: &[f64], prev: &[f64]) -> GateCache {
        let input = [curr, prev].concat();
        let mut hidden = self.hidden.forward(&input);
        nn::relu_in_place(&mut hidden);
        let z = self.output.forward(&hidden)[0];
        GateCache { input, hidden, alpha: nn::sigmoid(z) }
    }

    pub fn alpha(&self, curr: &[f64], prev: &[f64]) -> f64 {
        self.forward_cached(curr, prev).alpha
    }

    /// Backpropagates `d_alpha`, accumulating into `grad`; returns the gradient
    /// with respect to the concatenated input `[e_curr; e_prev]`.
    pub fn backward(&self, cache: &GateCache, d_alpha: f64, grad: &mut AlphaGateNet) -> Vec<f64> {
        let dz = d_alpha * cache.alpha * (1.0 - cache.alpha);
        let dh = self.output.backward(&cache.hidden, &[dz], &mut grad.output);
        let dh: Vec<f64> = dh
            .iter()
            .zip(&cache.hidden)
            .map(|(g, h)| if *h > 0.0 { *g } else { 0.0 })
            .collect();
        self.hidden.backward(&cache.input, &dh, &mut grad.hidden)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        nn::save_layers(path, &[&self.hidden, &self.output])
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut layers = nn::load_layers(path)?;
        if layers.len() != 2 {
            return Err(Error::ModelFormat(format!("gate needs 2 layers, found {}", layers.len())));
        }
        nn::check_chain(&layers)?;
        let output = layers.pop().unwrap_or_else(|| Dense::zeros(0, 0));
        let hidden = layers.pop().unwrap_or_else(|| Dense::zeros(0, 0));
        if output.outputs != 1 || hidden.inputs % 2 != 0 {
            return Err(Error::ModelFormat("gate layer shapes".into()));
        }
        Ok(Self { hidden, output })
    }
}

impl Parameters for AlphaGateNet {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.hidden.tensors();
        t.extend(self.output.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.hidden.tensors_mut();
        t.extend(self.output.tensors_mut());
        t
    }
}

fn in_window(gap_s: f64, window_s: f64) -> bool {
    gap_s <= window_s + 1e-9
}

fn blend(curr: &[f64], prev: &[f64], alpha: f64) -> Vec<f64> {
    curr.iter().zip(prev).map(|(c, p)| alpha * c + (1.0 - alpha) * p).collect()
}

fn check_dims(curr: &[f64], prev: &[f64]) -> Result<()> {
    if curr.len() != prev.len() {
        return Err(Error::DimensionMismatch { expected: curr.len(), actual: prev.len() });
    }
    Ok(())
}

/// Adaptive blend. Returns the adapted embedding and the weight used
/// (1.0 when no adaptation happened).
pub fn adapt(curr: &Embedding, prev: Option<&Embedding>, gap_s: f64, gate: &AlphaGateNet, window_s: f64) -> Result<(Embedding, f64)> {
    let Some(prev) = prev.filter(|_| in_window(gap_s, window_s)) else {
        return Ok((curr.clone(), 1.0));
    };
    check_dims(&curr.values, &prev.values)?;
    if gate.embedding_dim() != curr.dim() {
        return Err(Error::DimensionMismatch { expected: gate.embedding_dim(), actual: curr.dim() });
    }
    let alpha = gate.alpha(&curr.values, &prev.values);
    let values = blend(&curr.values, &prev.values, alpha);
    Ok((Embedding { values, ..curr.clone() }, alpha))
}

/// Same branch rule with a fixed weight.
pub fn adapt_static(curr: &Embedding, prev: Option<&Embedding>, gap_s: f64, alpha: f64, window_s: f64) -> Result<Embedding> {
    let Some(prev) = prev.filter(|_| in_window(gap_s, window_s)) else {
        return Ok(curr.clone());
    };
    check_dims(&curr.values, &prev.values)?;
    let values = blend(&curr.values, &prev.values, alpha);
    Ok(Embedding { values, ..curr.clone() })
}

/// How the acoustic stage blends consecutive embeddings.
#[derive(Debug, Clone, PartialEq)]
pub enum Laea {
    Adaptive(AlphaGateNet),
    Static(f64),
    Off,
}

/// Which previous embedding is remembered for the next utterance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrevSource {
    #[default]
    Adapted,
    Raw,
}

impl Laea {
    pub fn apply(&self, curr: &Embedding, prev: Option<&Embedding>, gap_s: f64, window_s: f64) -> Result<(Embedding, f64)> {
        match self {
            Laea::Adaptive(gate) => adapt(curr, prev, gap_s, gate, window_s),
            Laea::Static(a) => {
                let fired = prev.is_some() && in_window(gap_s, window_s);
                Ok((adapt_static(curr, prev, gap_s, *a, window_s)?, if fired { *a } else { 1.0 }))
            }
            Laea::Off => Ok((curr.clone(), 1.0)),
        }
    }
}

/// Per-stream adaptation state: the remembered embedding and when its utterance ended.
#[derive(Debug, Clone, Default)]
pub struct AdaptationState {
    prev: Option<Embedding>,
}

impl AdaptationState {
    pub fn step(&mut self, laea: &Laea, curr: &Embedding, window_s: f64, source: PrevSource) -> Result<(Embedding, f64)> {
        let gap = self.prev.as_ref().map_or(f64::INFINITY, |p| curr.t_start - p.t_end);
        let (adapted, alpha) = laea.apply(curr, self.prev.as_ref(), gap, window_s)?;
        self.prev = Some(match source {
            PrevSource::Adapted => adapted.clone(),
            PrevSource::Raw => curr.clone(),
        });
        Ok((adapted, alpha))
    }

    pub fn reset(&mut self) {
        self.prev = None;
    }
}

/// One acoustic training example: the current embedding, the previous one when
/// it is within the window, and the index of the previous sample for refreshes.
#[derive(Debug, Clone)]
pub struct LaeaSample {
    pub curr: Vec<f64>,
    pub prev: Option<Vec<f64>>,
    pub prev_index: Option<usize>,
}

/// Gate and acoustic head trained jointly through the blend.
#[derive(Debug, Clone, PartialEq)]
pub struct AcousticModel {
    pub gate: AlphaGateNet,
    pub head: FeedForwardHead,
}

impl AcousticModel {
    pub fn adapted(&self, s: &LaeaSample) -> (Vec<f64>, Option<GateCache>) {
        match &s.prev {
            Some(prev) => {
                let cache = self.gate.forward_cached(&s.curr, prev);
                (blend(&s.curr, prev, cache.alpha), Some(cache))
            }
            None => (s.curr.clone(), None),
        }
    }

    /// Recomputes each sample's `prev` as the adapted embedding of its
    /// predecessor under the current gate. Samples must be in stream order.
    pub fn refresh_chain(&self, data: &mut [(LaeaSample, usize)]) {
        let mut adapted: Vec<Vec<f64>> = Vec::with_capacity(data.len());
        for i in 0..data.len() {
            if let Some(j) = data[i].0.prev_index {
                data[i].0.prev = Some(adapted[j].clone());
            }
            adapted.push(self.adapted(&data[i].0).0);
        }
    }
}

impl Parameters for AcousticModel {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.gate.tensors();
        t.extend(self.head.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.gate.tensors_mut();
        t.extend(self.head.tensors_mut());
        t
    }
}

impl Trainable for AcousticModel {
    type Input = LaeaSample;

    fn zeros_like(&self) -> Self {
        Self {
            gate: self.gate.zeros_like(),
            head: self.head.zeros_like(),
        }
    }

    fn accumulate(&self, x: &LaeaSample, label: usize, rng: &mut ChaCha8Rng, grad: &mut Self) -> f64 {
        let (adapted, gate_cache) = self.adapted(x);
        let cache: HeadCache = self.head.forward_cached(&adapted, Some(rng));
        let dlogits = heads::cross_entropy_grad(&cache.dist, label);
        let d_adapted = self.head.backward(&cache, &dlogits, &mut grad.head);
        if let (Some(gc), Some(prev)) = (gate_cache, &x.prev) {
            let d_alpha: f64 = d_adapted
                .iter()
                .zip(x.curr.iter().zip(prev))
                .map(|(g, (c, p))| g * (c - p))
                .sum();
            self.gate.backward(&gc, d_alpha, &mut grad.gate);
        }
        heads::cross_entropy(&cache.dist, label)
    }

    fn predict(&self, x: &LaeaSample) -> ClassDistribution {
        self.head.forward(&self.adapted(x).0)
    }
}
