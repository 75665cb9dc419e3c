//! Generate a labelled synthetic corpus and check that its statistics land
//! near the configured targets. Pass a directory to save it.
//!
//! ```bash
//! cargo run --example synth_corpus -- /tmp/corpus
//! ```

use selftalk::synth::{self, GeneratorConfig};
use selftalk::Class;

fn main() -> selftalk::Result<()> {
    let cfg = GeneratorConfig { n_sessions: 100, ..GeneratorConfig::default() };
    let corpus = synth::generate(&cfg)?;
    let stats = synth::calibration_stats(&corpus.manifest, cfg.continuity_window_s)?;

    println!("{} utterances from {} participants", stats.utterances, corpus.manifest.participants().len());
    println!("{:>20} {:>8} {:>8} {:>10}", "class", "prior", "target", "mean dur");
    for c in Class::ALL {
        let i = c.index();
        println!("{:>20} {:8.3} {:8.3} {:9.2}s", c.display_name(), stats.priors[i], cfg.priors[i], stats.duration_means_s[i]);
    }
    println!("short gaps {:.3}, same class after a short gap {:.3} (target {})", stats.short_gap_fraction, stats.same_class_rate_short_gap, cfg.p_same);

    if let Some(dir) = std::env::args().nth(1) {
        corpus.save(&dir)?;
        println!("saved to {dir}");
    }
    Ok(())
}
