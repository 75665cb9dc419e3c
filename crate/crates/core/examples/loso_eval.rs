//! Leave-one-participant-out evaluation of the full cascade, followed by an
//! offline sweep of the two exit thresholds over the recorded traces.

use selftalk::cascade::{self, SyntheticEncoder};
use selftalk::context::StubAsr;
use selftalk::harness::{self, HarnessConfig};
use selftalk::synth::{self, GeneratorConfig};

fn main() -> selftalk::Result<()> {
    let corpus = synth::generate(&GeneratorConfig { n_sessions: 8, participants: 4, ..GeneratorConfig::default() })?;
    let encoder = SyntheticEncoder::new(&corpus);
    let asr = StubAsr::from_manifest(&corpus.manifest);
    let cfg = HarnessConfig { workers: 4, ..HarnessConfig::desk() };

    let report = harness::loso(&corpus.manifest, &encoder, &asr, &cfg)?;
    for f in &report.folds {
        println!("{:>6}: {:4} utterances, macro-F1 {:.3}, {:7.1} ms", f.participant, f.utterances, f.metrics.macro_f1, f.mean_latency_ms);
    }
    let r = report.ratios;
    println!("pooled macro-F1 {:.3}, exits {:.2}/{:.2}/{:.2}", report.pooled.macro_f1, r.acoustic, r.linguistic, r.fusion);

    let grid: Vec<f64> = (0..=5).map(|i| 0.5 + 0.1 * i as f64).collect();
    let frontier = cascade::sweep_thresholds(&report.traces, &cfg.policy, &grid, &grid, &cfg.profile)?;
    println!("\npareto points:");
    for p in frontier.iter().filter(|p| p.pareto) {
        println!("  acoustic {:.1} linguistic {:.1}: F1 {:.3} at {:7.1} ms", p.acoustic_margin_min, p.linguistic_margin_min, p.macro_f1, p.mean_latency_ms);
    }
    Ok(())
}
