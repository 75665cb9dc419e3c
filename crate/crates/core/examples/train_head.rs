//! Train a three-layer classification head with Adam and early stopping on
//! pooled synthetic embeddings.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use selftalk::adaptation::mean_pool;
use selftalk::heads::{self, FeedForwardHead, TrainConfig};
use selftalk::synth::{self, GeneratorConfig};

fn main() -> selftalk::Result<()> {
    let corpus = synth::generate(&GeneratorConfig::default())?;
    let data = corpus
        .manifest
        .records
        .iter()
        .map(|r| Ok((mean_pool(&corpus.acoustic_frames(r))?, r.label.index())))
        .collect::<selftalk::Result<Vec<_>>>()?;
    let dim = data[0].0.len();

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let head = FeedForwardHead::new(dim, &[64, 32], 0.1, &mut rng);
    let cfg = TrainConfig { learning_rate: 1e-3, batch_size: 32, max_epochs: 40, patience: 6, ..TrainConfig::default() };
    let (head, history) = heads::fit(head, data.clone(), &cfg, None)?;

    for e in history.epochs.iter().step_by(5) {
        println!("epoch {:>3}  train {:.4}  val {:.4}  val macro-F1 {:.3}", e.epoch, e.train_loss, e.val_loss, e.val_macro_f1);
    }
    println!("best epoch {} ({} train / {} val)", history.best_epoch, history.train_size, history.val_size);

    let correct = data.iter().filter(|(x, y)| head.forward(x).predicted().index() == *y).count();
    println!("accuracy on all data {:.3}", correct as f64 / data.len() as f64);
    Ok(())
}
