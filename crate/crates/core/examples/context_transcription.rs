//! Which earlier utterances each context strategy prepends to a target, and
//! the word error rate each strategy gets from a noisy recogniser.

use selftalk::context::{self, NoiseModel, NoisyAsr, PlanConfig, Strategy, StubAsr};
use selftalk::synth::{self, GeneratorConfig};

fn main() -> selftalk::Result<()> {
    let corpus = synth::generate(&GeneratorConfig::default())?;
    let session = &corpus.manifest.sessions()[0];
    let segs = session.segments();
    let i = 12;
    let target = &segs[i];
    println!("target #{} at {:.1}s ({:.2}s long)", target.seq_no, target.t_start, target.duration());

    for s in Strategy::ALL {
        let plan = context::plan_window(&segs[..=i], target, s, PlanConfig::default())?;
        let ids: Vec<u32> = plan.context().iter().map(|c| c.seq_no).collect();
        let layout = context::layout(&plan);
        println!("{s:>16}: context {ids:?}, {:.2}s voiced, clip {:.2}s", plan.voiced_duration(), layout.total_s);
    }

    let asr = NoisyAsr::new(StubAsr::from_manifest(&corpus.manifest), NoiseModel::default(), 0);
    println!();
    for score in context::evaluate_strategies(&corpus.manifest, &asr, &Strategy::ALL, PlanConfig::default())? {
        println!("{:>16}: WER {:.4}  CER {:.4}  mean context {:.2}s", score.strategy, score.wer, score.cer, score.mean_context_s);
    }
    Ok(())
}
