//! Expected per-utterance latency with and without early exit.

use selftalk::cost::{self, ExitRatios, ExitStage, LatencyProfile};

fn main() -> selftalk::Result<()> {
    let profile = LatencyProfile::default();
    for stage in ExitStage::ALL {
        println!("exit at {stage:?}: {:.1} ms", profile.through(stage));
    }

    let r = cost::report(&profile, &ExitRatios::default());
    println!("full {:.1} ms, early exit {:.1} ms, {:.1}% saved", r.full_ms, r.early_exit_ms, 100.0 * r.reduction);

    println!("\nacoustic share  saving");
    for a in [0.0, 0.2, 0.4, 0.6, 0.8] {
        let ratios = ExitRatios::new(a, 0.07, 0.93 - a)?;
        println!("{a:>14.1}  {:5.1}%", 100.0 * cost::reduction(&profile, &ratios));
    }
    Ok(())
}
