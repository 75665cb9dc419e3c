//! Dense layers, the Adam optimizer and the flat binary model file format.
//!
//! Everything computes in `f64`; model files store weights as `f32`.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"MMHD";
pub const MODEL_VERSION: u32 = 1;

/// Fully connected layer, `y = W x + b` with `W` stored row-major (`outputs x inputs`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// He-uniform initialisation, zero bias.
    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = (6.0 / inputs.max(1) as f64).sqrt();
        Self {
            inputs,
            outputs,
            weights: (0..inputs * outputs).map(|_| rng.gen_range(-bound..bound)).collect(),
            bias: vec![0.0; outputs],
        }
    }

    /// Glorot-uniform initialisation, for layers not followed by a rectifier.
    pub fn init_linear<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (inputs + outputs).max(1) as f64).sqrt();
        Self {
            inputs,
            outputs,
            weights: (0..inputs * outputs).map(|_| rng.gen_range(-bound..bound)).collect(),
            bias: vec![0.0; outputs],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.inputs, self.outputs)
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inputs);
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Dense) -> Vec<f64> {
        let mut dx = vec![0.0; self.inputs];
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[o] += g;
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let grow = &mut grad.weights[o * self.inputs..(o + 1) * self.inputs];
            for i in 0..self.inputs {
                grow[i] += g * x[i];
                dx[i] += g * row[i];
            }
        }
        dx
    }
}

/// Anything whose trainable state is a fixed list of `f64` tensors.
pub trait Parameters {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Scales every parameter; used to average accumulated gradients.
    fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Flat copy of all parameters in tensor order.
    fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    fn set_flat(&mut self, flat: &[f64]) {
        let mut off = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[off..off + t.len()]);
            off += t.len();
        }
    }
}

impl Parameters for Dense {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.weights, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.weights, &mut self.bias]
    }
}

impl Parameters for Vec<Dense> {
    fn tensors(&self) -> Vec<&[f64]> {
        self.iter().flat_map(|l| l.tensors()).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.iter_mut().flat_map(|l| l.tensors_mut()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step<P: Parameters + ?Sized, G: Parameters + ?Sized>(&mut self, params: &mut P, grads: &G) {
        let g: Vec<f64> = grads.flatten();
        if self.m.len() != g.len() {
            self.m = vec![0.0; g.len()];
            self.v = vec![0.0; g.len()];
        }
        self.step += 1;
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.step);
        let c2 = 1.0 - beta2.powi(self.step);
        let mut idx = 0;
        for t in params.tensors_mut() {
            for p in t.iter_mut() {
                let gi = g[idx];
                self.m[idx] = beta1 * self.m[idx] + (1.0 - beta1) * gi;
                self.v[idx] = beta2 * self.v[idx] + (1.0 - beta2) * gi * gi;
                let m_hat = self.m[idx] / c1;
                let v_hat = self.v[idx] / c2;
                *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
                idx += 1;
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn relu_in_place(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

/// Softmax with max subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Writes layers in the `MMHD` format: magic, version, layer count, per-layer
/// `(inputs, outputs)`, then per layer the row-major weights followed by the bias,
/// all little-endian with weights as `f32`.
pub fn write_layers<W: Write>(mut w: W, layers: &[&Dense]) -> Result<()> {
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&MODEL_VERSION.to_le_bytes())?;
    w.write_all(&(layers.len() as u32).to_le_bytes())?;
    for l in layers {
        w.write_all(&(l.inputs as u32).to_le_bytes())?;
        w.write_all(&(l.outputs as u32).to_le_bytes())?;
    }
    for l in layers {
        for &v in l.weights.iter().chain(&l.bias) {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_layers<R: Read>(mut r: R) -> Result<Vec<Dense>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(Error::ModelFormat(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != MODEL_VERSION {
        return Err(Error::ModelFormat(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)? as usize;
    if count > 1024 {
        return Err(Error::ModelFormat(format!("implausible layer count {count}")));
    }
    let mut dims = Vec::with_capacity(count);
    for _ in 0..count {
        dims.push((read_u32(&mut r)? as usize, read_u32(&mut r)? as usize));
    }
    let mut layers = Vec::with_capacity(count);
    for (inputs, outputs) in dims {
        let mut l = Dense::zeros(inputs, outputs);
        for v in l.weights.iter_mut().chain(l.bias.iter_mut()) {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *v = f32::from_le_bytes(b) as f64;
        }
        layers.push(l);
    }
    Ok(layers)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn save_layers(path: impl AsRef<Path>, layers: &[&Dense]) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_layers(&mut w, layers)?;
    w.flush()?;
    Ok(())
}

pub fn load_layers(path: impl AsRef<Path>) -> Result<Vec<Dense>> {
    let f = std::fs::File::open(path.as_ref()).map_err(|source| Error::Unreadable {
        path: path.as_ref().to_path_buf(),
        source,
    })?;
    read_layers(std::io::BufReader::new(f))
}

/// Checks that consecutive layers chain (`outputs` of one equal `inputs` of the next).
pub fn check_chain(layers: &[Dense]) -> Result<()> {
    for pair in layers.windows(2) {
        if pair[0].outputs != pair[1].inputs {
            return Err(Error::DimensionMismatch {
                expected: pair[0].outputs,
                actual: pair[1].inputs,
            });
        }
    }
    Ok(())
}
