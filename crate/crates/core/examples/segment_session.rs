//! Segment a synthetic session recording into utterances, in one pass and
//! incrementally in 100 ms chunks.
//!
//! ```bash
//! cargo run --example segment_session
//! ```

use selftalk::segmenter::{self, SegmenterConfig, StreamingSegmenter};
use selftalk::synth::{self, GeneratorConfig};

fn main() -> selftalk::Result<()> {
    let cfg = GeneratorConfig { n_sessions: 1, participants: 1, utterances_per_session: 8, min_gap_s: 1.0, ..Default::default() };
    let corpus = synth::generate(&cfg)?;
    let records = &corpus.manifest.records;
    let clip = synth::synthesize_waveform(records, 16_000, 1)?;
    println!("{:.1}s of audio, {} utterances in the manifest", clip.duration_s(), records.len());

    let seg_cfg = SegmenterConfig::default();
    let batch = segmenter::segment_session(&clip, "S1", &seg_cfg)?;
    for (s, r) in batch.iter().zip(records) {
        println!("#{:<2} {:7.3} - {:7.3}   truth {:7.3} - {:7.3}", s.seq_no, s.t_start, s.t_end, r.t_start, r.t_end);
    }

    let mut stream = StreamingSegmenter::new("S1", clip.sample_rate(), seg_cfg);
    let mut streamed = Vec::new();
    for chunk in clip.samples().chunks(1600) {
        for s in stream.push(chunk) {
            println!("emitted #{} at {:.2}s", s.seq_no, s.t_end);
            streamed.push(s);
        }
    }
    streamed.extend(stream.finish());
    assert_eq!(streamed.len(), batch.len());
    Ok(())
}
