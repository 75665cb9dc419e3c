//! Blend each acoustic embedding with its predecessor when the two are
//! close in time, and measure how much tighter each class becomes.

use selftalk::adaptation::{Laea, PrevSource, DEFAULT_WINDOW_S};
use selftalk::cascade::SyntheticEncoder;
use selftalk::eval;
use selftalk::harness;
use selftalk::synth::{self, GeneratorConfig};

fn main() -> selftalk::Result<()> {
    // every utterance repeats its predecessor's class
    let cfg = GeneratorConfig { p_same: 1.0, n_sessions: 4, participants: 4, ..GeneratorConfig::default() };
    let corpus = synth::generate(&cfg)?;
    let encoder = SyntheticEncoder::new(&corpus);

    for (name, laea) in [("off", Laea::Off), ("static 0.5", Laea::Static(0.5)), ("static 0.3", Laea::Static(0.3))] {
        let pairs = harness::adaptation_pairs(&corpus.manifest.records, &encoder, &laea, DEFAULT_WINDOW_S, PrevSource::Adapted)?;
        println!("laea {name}");
        print!("{}", eval::distance_report_csv(&eval::embedding_distance_report(&pairs)));
    }
    Ok(())
}
