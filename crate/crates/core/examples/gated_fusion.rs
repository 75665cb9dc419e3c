//! Gated fusion of an acoustic and a text embedding, compared with the
//! fixed equal-weight blend.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use selftalk::fusion::{FusionGate, FusionMode};
use selftalk::heads::reference_linguistic_encode;

fn main() -> selftalk::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let acoustic: Vec<f64> = (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let text = reference_linguistic_encode("why again stupid", 128);

    let mut gate = FusionGate::new(acoustic.len(), text.len(), &[64, 32, 16, 8], 0.0, &mut rng);
    let (z, g) = gate.fuse(&acoustic, &text)?;
    let mean_g = g.iter().sum::<f64>() / g.len() as f64;
    println!("common width {}, mean acoustic weight {mean_g:.3}", gate.common_dim());
    println!("first fused values {:?}", &z[..4]);
    println!("adaptive: {:?}", gate.classify(&acoustic, &text)?.p);

    gate.mode = FusionMode::Static;
    println!("static:   {:?}", gate.classify(&acoustic, &text)?.p);
    Ok(())
}
