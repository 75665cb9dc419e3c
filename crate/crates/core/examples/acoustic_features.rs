//! Pitch and intensity statistics, tertile descriptors and the prompt
//! feature line for a few synthetic voices.

use selftalk::audio::AudioClip;
use selftalk::features::{self, ContourConfig, F0Config};
use selftalk::prompt;

/// Linear pitch glide with a slow loudness swell.
fn glide(f0: f64, f1: f64, secs: f64, amp: f64) -> AudioClip {
    let sr = 16_000.0;
    let n = (secs * sr) as usize;
    let mut phase = 0.0f64;
    let samples = (0..n)
        .map(|i| {
            let u = i as f64 / n as f64;
            phase += std::f64::consts::TAU * (f0 + (f1 - f0) * u) / sr;
            (amp * (0.6 + 0.4 * u) * phase.sin()) as f32
        })
        .collect();
    AudioClip::new(samples, 16_000).expect("finite samples")
}

fn main() -> selftalk::Result<()> {
    let voices = [
        ("falling", glide(260.0, 150.0, 1.2, 0.3)),
        ("rising", glide(140.0, 240.0, 0.8, 0.5)),
        ("flat", glide(200.0, 200.0, 1.5, 0.2)),
        ("low", glide(110.0, 120.0, 0.6, 0.1)),
        ("shout", glide(300.0, 330.0, 0.5, 0.8)),
        ("steady", glide(180.0, 181.0, 2.0, 0.4)),
    ];
    let f0 = F0Config::default();
    let feats = voices
        .iter()
        .map(|(_, c)| features::extract_features(c, &f0))
        .collect::<selftalk::Result<Vec<_>>>()?;
    let bounds = features::fit_tertiles(&feats)?;
    for ((name, _), f) in voices.iter().zip(&feats) {
        let d = features::describe(f, &bounds, &ContourConfig::default());
        println!("{name:>8}: mean {:6.1} Hz, range {:5.1} Hz, RMS {:.3}", f.pitch_mean, f.pitch_range, f.intensity_mean);
        println!("          {}", prompt::feature_line(&d, f.duration_s));
    }
    Ok(())
}
