//! Early-exit routing: hand-made stage outputs first, then a cascade
//! trained on four synthetic sessions and run over a fifth.

use selftalk::cascade::{self, GatingPolicy, SyntheticEncoder};
use selftalk::context::StubAsr;
use selftalk::harness::{self, HarnessConfig};
use selftalk::heads::ClassDistribution;
use selftalk::synth::{self, GeneratorConfig};

fn main() -> selftalk::Result<()> {
    // positives never exit at the acoustic stage under the default policy
    let policy = GatingPolicy::default();
    let unsure = ClassDistribution::new([0.34, 0.33, 0.33]);
    let cases = [
        ("confident negative", ClassDistribution::new([0.97, 0.02, 0.01]), unsure),
        ("confident positive", ClassDistribution::new([0.01, 0.98, 0.01]), unsure),
        ("text settles it", unsure, ClassDistribution::new([0.9, 0.05, 0.05])),
        ("nobody sure", unsure, unsure),
    ];
    for (name, a, l) in cases {
        let (stage, label) = policy.route(&a, &l, &ClassDistribution::new([0.2, 0.2, 0.6]));
        println!("{name:>20}: margin {:.2} -> {stage:?} says {label}", a.least_margin());
    }

    let corpus = synth::generate(&GeneratorConfig { n_sessions: 5, participants: 5, ..GeneratorConfig::well_separated() })?;
    let encoder = SyntheticEncoder::new(&corpus);
    let asr = StubAsr::from_manifest(&corpus.manifest);
    let cfg = HarnessConfig::desk();

    let sessions = corpus.manifest.sessions();
    let features = harness::precompute(&sessions, &encoder, &asr, &cfg)?;
    let (held_out, train) = sessions.split_last().expect("five sessions");
    let train: Vec<&[harness::UtteranceFeatures]> = train.iter().map(|s| features[&s.session_id].as_slice()).collect();
    let (models, report) = harness::train_models(&train, &cfg, 0)?;
    println!(
        "best epochs: acoustic {}, linguistic {}, fusion {}",
        report.acoustic.best_epoch, report.linguistic.best_epoch, report.fusion.best_epoch
    );

    let traces = cfg.cascade(&models, &encoder, &asr).run_records(&held_out.records, None)?;
    for t in traces.iter().take(8) {
        println!("#{:<3} {:?} {:>10} truth {:>10} {:6.1} ms", t.seq_no, t.exit_stage, t.label.as_str(), t.truth.map_or("-", |c| c.as_str()), t.latency_ms);
    }
    let r = cascade::ratios_from_traces(&traces)?;
    let f1 = cascade::confusion(&traces).metrics().macro_f1;
    println!("exits {:.2}/{:.2}/{:.2}, macro-F1 {f1:.3}", r.acoustic, r.linguistic, r.fusion);
    Ok(())
}
