//! Gated fusion of acoustic and linguistic embeddings.
//!
//! Both modalities are projected to a common width `d`, an elementwise gate
//! `g = sigmoid(W_g [a; l] + b_g)` weighs them as `z = g*a + (1-g)*l`, and a
//! five-layer head classifies `z`.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads::{self, ClassDistribution, FeedForwardHead, Trainable};
use crate::nn::{self, Dense, Parameters};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    #[default]
    Adaptive,
    /// Fixed `g = 0.5`, the equal-weight baseline.
    Static,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionGate {
    pub proj_acoustic: Dense,
    pub proj_linguistic: Dense,
    pub gate: Dense,
    pub head: FeedForwardHead,
    pub mode: FusionMode,
}

#[derive(Debug, Clone)]
pub struct FusionCache {
    x_a: Vec<f64>,
    x_l: Vec<f64>,
    pub a: Vec<f64>,
    pub l: Vec<f64>,
    concat: Vec<f64>,
    pub g: Vec<f64>,
    pub z: Vec<f64>,
}

impl FusionGate {
    pub fn new<R: Rng + ?Sized>(d_a: usize, d_l: usize, hidden: &[usize], dropout: f64, rng: &mut R) -> Self {
        let d = d_a.min(d_l);
        Self {
            proj_acoustic: Dense::init_linear(d_a, d, rng),
            proj_linguistic: Dense::init_linear(d_l, d, rng),
            gate: Dense::init_linear(2 * d, d, rng),
            head: FeedForwardHead::new(d, hidden, dropout, rng),
            mode: FusionMode::Adaptive,
        }
    }

    pub fn common_dim(&self) -> usize {
        self.gate.outputs
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            proj_acoustic: self.proj_acoustic.zeros_like(),
            proj_linguistic: self.proj_linguistic.zeros_like(),
            gate: self.gate.zeros_like(),
            head: self.head.zeros_like(),
            mode: self.mode,
        }
    }

    pub fn fuse_cached(&self, x_a: &[f64], x_l: &[f64]) -> Result<FusionCache> {
        if x_a.len() != self.proj_acoustic.inputs {
            return Err(Error::DimensionMismatch { expected: self.proj_acoustic.inputs, actual: x_a.len() });
        }
        if x_l.len() != self.proj_linguistic.inputs {
            return Err(Error::DimensionMismatch { expected: self.proj_linguistic.inputs, actual: x_l.len() });
        }
        let a = self.proj_acoustic.forward(x_a);
        let l = self.proj_linguistic.forward(x_l);
        let concat = [a.as_slice(), l.as_slice()].concat();
        let g: Vec<f64> = match self.mode {
            FusionMode::Adaptive => self.gate.forward(&concat).into_iter().map(nn::sigmoid).collect(),
            FusionMode::Static => vec![0.5; a.len()],
        };
        let z = g
            .iter()
            .zip(a.iter().zip(&l))
            .map(|(gi, (ai, li))| gi * ai + (1.0 - gi) * li)
            .collect();
        Ok(FusionCache {
            x_a: x_a.to_vec(),
            x_l: x_l.to_vec(),
            a,
            l,
            concat,
            g,
            z,
        })
    }

    /// Fused vector and gate values.
    pub fn fuse(&self, x_a: &[f64], x_l: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let c = self.fuse_cached(x_a, x_l)?;
        Ok((c.z, c.g))
    }

    pub fn classify_fused(&self, z: &[f64]) -> ClassDistribution {
        self.head.forward(z)
    }

    pub fn classify(&self, x_a: &[f64], x_l: &[f64]) -> Result<ClassDistribution> {
        let (z, _) = self.fuse(x_a, x_l)?;
        Ok(self.classify_fused(&z))
    }

    /// Backpropagates `dz` through fusion, gate and projections into `grad`.
    /// Returns gradients with respect to the raw acoustic and linguistic inputs.
    pub fn backward_fusion(&self, c: &FusionCache, dz: &[f64], grad: &mut FusionGate) -> (Vec<f64>, Vec<f64>) {
        let d = c.a.len();
        let mut da: Vec<f64> = (0..d).map(|i| dz[i] * c.g[i]).collect();
        let mut dl: Vec<f64> = (0..d).map(|i| dz[i] * (1.0 - c.g[i])).collect();
        if self.mode == FusionMode::Adaptive {
            // dz/dg = a - l, then through the sigmoid
            let dpre: Vec<f64> = (0..d)
                .map(|i| dz[i] * (c.a[i] - c.l[i]) * c.g[i] * (1.0 - c.g[i]))
                .collect();
            let dconcat = self.gate.backward(&c.concat, &dpre, &mut grad.gate);
            for i in 0..d {
                da[i] += dconcat[i];
                dl[i] += dconcat[d + i];
            }
        }
        let dx_a = self.proj_acoustic.backward(&c.x_a, &da, &mut grad.proj_acoustic);
        let dx_l = self.proj_linguistic.backward(&c.x_l, &dl, &mut grad.proj_linguistic);
        (dx_a, dx_l)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut layers = vec![&self.proj_acoustic, &self.proj_linguistic, &self.gate];
        layers.extend(self.head.layers.iter());
        nn::save_layers(path, &layers)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut layers = nn::load_layers(path)?;
        if layers.len() < 4 {
            return Err(Error::ModelFormat(format!("fusion needs >= 4 layers, found {}", layers.len())));
        }
        let head_layers = layers.split_off(3);
        let gate = layers.pop().unwrap_or_else(|| Dense::zeros(0, 0));
        let proj_linguistic = layers.pop().unwrap_or_else(|| Dense::zeros(0, 0));
        let proj_acoustic = layers.pop().unwrap_or_else(|| Dense::zeros(0, 0));
        let d = gate.outputs;
        if proj_acoustic.outputs != d || proj_linguistic.outputs != d || gate.inputs != 2 * d {
            return Err(Error::ModelFormat("fusion projection/gate shapes disagree".into()));
        }
        let head = FeedForwardHead::from_layers(head_layers, 0.0)?;
        if head.input_dim() != d {
            return Err(Error::DimensionMismatch { expected: d, actual: head.input_dim() });
        }
        Ok(Self {
            proj_acoustic,
            proj_linguistic,
            gate,
            head,
            mode: FusionMode::Adaptive,
        })
    }
}

impl Parameters for FusionGate {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.proj_acoustic.tensors();
        t.extend(self.proj_linguistic.tensors());
        t.extend(self.gate.tensors());
        t.extend(self.head.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.proj_acoustic.tensors_mut();
        t.extend(self.proj_linguistic.tensors_mut());
        t.extend(self.gate.tensors_mut());
        t.extend(self.head.tensors_mut());
        t
    }
}

/// `(acoustic embedding, linguistic embedding)`.
pub type FusionInput = (Vec<f64>, Vec<f64>);

impl Trainable for FusionGate {
    type Input = FusionInput;

    fn zeros_like(&self) -> Self {
        FusionGate::zeros_like(self)
    }

    fn accumulate(&self, x: &FusionInput, label: usize, rng: &mut ChaCha8Rng, grad: &mut Self) -> f64 {
        let Ok(fc) = self.fuse_cached(&x.0, &x.1) else {
            return 0.0;
        };
        let hc = self.head.forward_cached(&fc.z, Some(rng));
        let dlogits = heads::cross_entropy_grad(&hc.dist, label);
        let dz = self.head.backward(&hc, &dlogits, &mut grad.head);
        self.backward_fusion(&fc, &dz, grad);
        heads::cross_entropy(&hc.dist, label)
    }

    fn predict(&self, x: &FusionInput) -> ClassDistribution {
        self.classify(&x.0, &x.1).unwrap_or_else(|_| ClassDistribution::uniform())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn gate_with(bias: f64) -> FusionGate {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut f = FusionGate::new(4, 6, &[8, 8, 8, 8], 0.0, &mut rng);
        f.gate.weights.iter_mut().for_each(|w| *w = 0.0);
        f.gate.bias.iter_mut().for_each(|b| *b = bias);
        f
    }

    #[test]
    fn zero_gate_averages() {
        let f = gate_with(0.0);
        let xa = [0.1, -0.4, 2.0, 0.7];
        let xl = [1.0, 0.0, -1.0, 0.5, 0.2, 0.3];
        let c = f.fuse_cached(&xa, &xl).unwrap();
        for i in 0..c.z.len() {
            assert_eq!(c.g[i], 0.5);
            assert!((c.z[i] - 0.5 * (c.a[i] + c.l[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn saturated_gate_passes_acoustic() {
        let f = gate_with(100.0);
        let xa = [0.1, -0.4, 2.0, 0.7];
        let xl = [1.0, 0.0, -1.0, 0.5, 0.2, 0.3];
        let c = f.fuse_cached(&xa, &xl).unwrap();
        for i in 0..c.z.len() {
            assert!((c.z[i] - c.a[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn dimension_checks() {
        let f = gate_with(0.0);
        assert!(f.fuse(&[0.0; 3], &[0.0; 6]).is_err());
        assert!(f.fuse(&[0.0; 4], &[0.0; 5]).is_err());
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("fusion.mmhd");
        let f = gate_with(0.3);
        f.save(&p).unwrap();
        let g = FusionGate::load(&p).unwrap();
        assert_eq!(g.common_dim(), 4);
        assert_eq!(g.head.depth(), 5);
        let xa = [0.1, -0.4, 2.0, 0.7];
        let xl = [1.0, 0.0, -1.0, 0.5, 0.2, 0.3];
        let a = f.classify(&xa, &xl).unwrap();
        let b = g.classify(&xa, &xl).unwrap();
        for k in 0..3 {
            assert!((a.p[k] - b.p[k]).abs() < 1e-5);
        }
    }

    fn oracle(f: &FusionGate, xa: &[f64], xl: &[f64]) -> Vec<f64> {
        let lin = |d: &Dense, x: &[f64]| -> Vec<f64> {
            (0..d.outputs)
                .map(|o| d.bias[o] + (0..d.inputs).map(|i| d.weights[o * d.inputs + i] * x[i]).sum::<f64>())
                .collect()
        };
        let a = lin(&f.proj_acoustic, xa);
        let l = lin(&f.proj_linguistic, xl);
        let mut cat = a.clone();
        cat.extend(&l);
        let pre = lin(&f.gate, &cat);
        (0..a.len())
            .map(|i| {
                let g = 1.0 / (1.0 + (-pre[i]).exp());
                g * a[i] + (1.0 - g) * l[i]
            })
            .collect()
    }

    #[test]
    fn random_weights_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = FusionGate::new(7, 5, &[6, 6, 6, 6], 0.0, &mut rng);
        for _ in 0..20 {
            let xa: Vec<f64> = (0..7).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let xl: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let (z, _) = f.fuse(&xa, &xl).unwrap();
            for (a, b) in z.iter().zip(oracle(&f, &xa, &xl)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn static_mode_ignores_gate() {
        let mut f = gate_with(100.0);
        f.mode = FusionMode::Static;
        let c = f.fuse_cached(&[1.0; 4], &[0.5; 6]).unwrap();
        assert!(c.g.iter().all(|&g| g == 0.5));
    }

    #[test]
    fn gradient_check_end_to_end() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let f = FusionGate::new(5, 4, &[6, 5, 4, 3], 0.0, &mut rng);
        let x: FusionInput = (
            (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        );
        let label = 1;
        let mut grad = f.zeros_like();
        f.accumulate(&x, label, &mut rng, &mut grad);
        let analytic = grad.flatten();
        let base = f.flatten();
        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += eps;
            let mut fp = f.clone();
            fp.set_flat(&p);
            let lp = heads::cross_entropy(&fp.predict(&x), label);
            p[i] -= 2.0 * eps;
            fp.set_flat(&p);
            let lm = heads::cross_entropy(&fp.predict(&x), label);
            let numeric = (lp - lm) / (2.0 * eps);
            let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((analytic[i] - numeric).abs() / denom);
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    proptest::proptest! {
        #[test]
        fn fused_is_elementwise_convex(
            seed in 0u64..1000,
            xa in proptest::collection::vec(-5.0f64..5.0, 4),
            xl in proptest::collection::vec(-5.0f64..5.0, 6),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = FusionGate::new(4, 6, &[4, 4, 4, 4], 0.0, &mut rng);
            let c = f.fuse_cached(&xa, &xl).unwrap();
            for i in 0..c.z.len() {
                let lo = c.a[i].min(c.l[i]) - 1e-12;
                let hi = c.a[i].max(c.l[i]) + 1e-12;
                proptest::prop_assert!(c.z[i] >= lo && c.z[i] <= hi);
                proptest::prop_assert!(c.g[i] > 0.0 && c.g[i] < 1.0);
                let rebuilt = c.g[i] * c.a[i] + (1.0 - c.g[i]) * c.l[i];
                proptest::prop_assert!((rebuilt - c.z[i]).abs() < 1e-12);
            }
        }
    }
}
