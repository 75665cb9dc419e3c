//! Keep the last 30 seconds of speech and watch the oldest segments leave.

use selftalk::cache::UtteranceCache;
use selftalk::segmenter::UtteranceSegment;

fn main() -> selftalk::Result<()> {
    let mut cache = UtteranceCache::default();
    let durations = [4.0, 9.5, 2.0, 7.0, 6.5, 3.0, 8.0, 35.0, 1.2];
    let mut t = 0.0;
    for (seq, d) in durations.into_iter().enumerate() {
        let out = cache.push(UtteranceSegment::new("S1", seq as u32, t, t + d))?;
        t += d + 1.5;
        let evicted: Vec<u32> = out.evicted.iter().map(|s| s.seq_no).collect();
        let kept: Vec<u32> = cache.iter().map(|s| s.seq_no).collect();
        println!(
            "push #{seq} ({d:>4.1}s) -> kept {kept:?} total {:>5.1}s evicted {evicted:?}{}",
            cache.total_duration(),
            if out.oversize { " [oversize]" } else { "" }
        );
    }
    Ok(())
}
