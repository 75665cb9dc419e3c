//! Vocal event detection and utterance-level segmentation.
//!
//! Frames whose RMS reaches the dB threshold form vocal events. Events shorter
//! than `min_dur_s` are discarded as noise, then the survivors are merged
//! left to right while the silence between them is shorter than `merge_gap_s`.

use serde::{Deserialize, Serialize};

use crate::audio::{self, AudioClip, Frame};
use crate::error::Result;

// Comparisons against the duration/gap rules tolerate float noise so that
// e.g. an event of exactly 0.300 s is kept.
const RULE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub t_start: f64,
    pub t_end: f64,
}

impl Span {
    pub fn new(t_start: f64, t_end: f64) -> Self {
        Self { t_start, t_end }
    }

    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }
}

/// A timestamped span of voiced audio; the unit every later stage classifies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceSegment {
    pub session_id: String,
    pub seq_no: u32,
    pub t_start: f64,
    pub t_end: f64,
    /// Sample range into the session clip, when audio is available.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_ref: Option<(usize, usize)>,
}

impl UtteranceSegment {
    pub fn new(session_id: impl Into<String>, seq_no: u32, t_start: f64, t_end: f64) -> Self {
        Self {
            session_id: session_id.into(),
            seq_no,
            t_start,
            t_end,
            audio_ref: None,
        }
    }

    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn span(&self) -> Span {
        Span::new(self.t_start, self.t_end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmenterConfig {
    pub threshold_db: f64,
    pub min_dur_s: f64,
    pub merge_gap_s: f64,
    pub window_s: f64,
    pub hop_s: f64,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            threshold_db: -20.0,
            min_dur_s: 0.3,
            merge_gap_s: 0.8,
            window_s: audio::DEFAULT_WINDOW_S,
            hop_s: audio::DEFAULT_HOP_S,
        }
    }
}

/// Maximal runs of frames at or above `threshold_db`, each spanning from the
/// first frame's start to the last frame's start plus `window_s`.
pub fn detect_vocal_events(frames: &[Frame], window_s: f64, threshold_db: f64) -> Vec<Span> {
    let mut events = Vec::new();
    let mut run: Option<(f64, f64)> = None;
    for f in frames {
        if f.rms_db >= threshold_db {
            run = Some(match run {
                Some((start, _)) => (start, f.start_s),
                None => (f.start_s, f.start_s),
            });
        } else if let Some((start, last)) = run.take() {
            events.push(Span::new(start, last + window_s));
        }
    }
    if let Some((start, last)) = run {
        events.push(Span::new(start, last + window_s));
    }
    events
}

fn long_enough(e: &Span, min_dur_s: f64) -> bool {
    e.duration() >= min_dur_s - RULE_EPS
}

fn joins(prev_end: f64, next_start: f64, merge_gap_s: f64) -> bool {
    next_start - prev_end < merge_gap_s - RULE_EPS
}

/// Discard-then-merge grouping of time-ordered, non-overlapping events.
pub fn segment_utterances(events: &[Span], min_dur_s: f64, merge_gap_s: f64) -> Vec<Span> {
    let mut out: Vec<Span> = Vec::new();
    for e in events.iter().filter(|e| long_enough(e, min_dur_s)) {
        match out.last_mut() {
            Some(last) if joins(last.t_end, e.t_start, merge_gap_s) => last.t_end = e.t_end,
            _ => out.push(*e),
        }
    }
    out
}

/// Attaches session identity and sequence numbers (in time order) to spans.
pub fn to_segments(spans: &[Span], session_id: &str, clip: Option<&AudioClip>) -> Vec<UtteranceSegment> {
    spans
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut seg = UtteranceSegment::new(session_id, i as u32, s.t_start, s.t_end);
            seg.audio_ref = clip.map(|c| {
                let r = c.index_range(s.t_start, s.t_end);
                (r.start, r.end)
            });
            seg
        })
        .collect()
}

/// Full preprocessing pass over one session recording.
pub fn segment_session(clip: &AudioClip, session_id: &str, cfg: &SegmenterConfig) -> Result<Vec<UtteranceSegment>> {
    let frames = audio::frame_rms(clip, cfg.window_s, cfg.hop_s)?;
    let events = detect_vocal_events(&frames, cfg.window_s, cfg.threshold_db);
    let spans = segment_utterances(&events, cfg.min_dur_s, cfg.merge_gap_s);
    Ok(to_segments(&spans, session_id, Some(clip)))
}

/// Incremental segmenter fed with fixed-size chunks (100 ms by default).
///
/// Emits a segment as soon as no later event could merge into it, and produces
/// exactly the segments [`segment_session`] would for the concatenated input.
#[derive(Debug, Clone)]
pub struct StreamingSegmenter {
    cfg: SegmenterConfig,
    session_id: String,
    sample_rate: u32,
    window_n: usize,
    // samples[0] corresponds to absolute sample `offset`
    samples: Vec<f32>,
    offset: usize,
    total: usize,
    next_frame: usize,
    run: Option<(f64, f64)>,
    group: Option<Span>,
    next_seq: u32,
}

impl StreamingSegmenter {
    pub const DEFAULT_CHUNK_S: f64 = 0.1;

    pub fn new(session_id: impl Into<String>, sample_rate: u32, cfg: SegmenterConfig) -> Self {
        let window_n = ((cfg.window_s * sample_rate as f64) + 1e-9).floor().max(1.0) as usize;
        Self {
            cfg,
            session_id: session_id.into(),
            sample_rate,
            window_n,
            samples: Vec::new(),
            offset: 0,
            total: 0,
            next_frame: 0,
            run: None,
            group: None,
            next_seq: 0,
        }
    }

    fn frames_available(&self) -> usize {
        let dur = self.total as f64 / self.sample_rate as f64;
        if dur + 1e-9 < self.cfg.window_s {
            return 0;
        }
        ((dur - self.cfg.window_s) / self.cfg.hop_s + 1e-9).floor() as usize + 1
    }

    fn frame_start_sample(&self, k: usize) -> usize {
        ((k as f64 * self.cfg.hop_s * self.sample_rate as f64) + 1e-9).floor() as usize
    }

    /// Feeds the next chunk and returns any segments finalized by it.
    pub fn push(&mut self, chunk: &[f32]) -> Vec<UtteranceSegment> {
        self.samples.extend_from_slice(chunk);
        self.total += chunk.len();
        let mut out = Vec::new();
        let available = self.frames_available();
        while self.next_frame < available {
            let k = self.next_frame;
            let s = self.frame_start_sample(k) - self.offset;
            let level = audio::rms_to_db(audio::rms(&self.samples[s..s + self.window_n]));
            let start_s = k as f64 * self.cfg.hop_s;
            self.on_frame(start_s, level, &mut out);
            self.next_frame += 1;
        }
        // drop samples no future frame needs
        let keep_from = self.frame_start_sample(self.next_frame).min(self.total);
        if keep_from > self.offset {
            self.samples.drain(..keep_from - self.offset);
            self.offset = keep_from;
        }
        out
    }

    fn on_frame(&mut self, start_s: f64, level: f64, out: &mut Vec<UtteranceSegment>) {
        if level >= self.cfg.threshold_db {
            self.run = Some(match self.run {
                Some((s, _)) => (s, start_s),
                None => (start_s, start_s),
            });
        } else if let Some((s, last)) = self.run.take() {
            self.on_event(Span::new(s, last + self.cfg.window_s), out);
        }
        // a group is final once no event starting at or after this frame could join it
        if self.run.is_none() {
            if let Some(g) = self.group {
                if !joins(g.t_end, start_s, self.cfg.merge_gap_s) {
                    self.emit(g, out);
                    self.group = None;
                }
            }
        }
    }

    fn on_event(&mut self, e: Span, out: &mut Vec<UtteranceSegment>) {
        if !long_enough(&e, self.cfg.min_dur_s) {
            return;
        }
        match self.group {
            Some(ref mut g) if joins(g.t_end, e.t_start, self.cfg.merge_gap_s) => g.t_end = e.t_end,
            Some(g) => {
                self.emit(g, out);
                self.group = Some(e);
            }
            None => self.group = Some(e),
        }
    }

    fn emit(&mut self, g: Span, out: &mut Vec<UtteranceSegment>) {
        let mut seg = UtteranceSegment::new(self.session_id.clone(), self.next_seq, g.t_start, g.t_end);
        let sr = self.sample_rate as f64;
        seg.audio_ref = Some((
            ((g.t_start * sr) + 1e-9).floor() as usize,
            (((g.t_end * sr) + 1e-9).floor() as usize).min(self.total),
        ));
        self.next_seq += 1;
        out.push(seg);
    }

    /// Flushes the open run and pending group at end of stream.
    pub fn finish(mut self) -> Vec<UtteranceSegment> {
        let mut out = Vec::new();
        if let Some((s, last)) = self.run.take() {
            self.on_event(Span::new(s, last + self.cfg.window_s), &mut out);
        }
        if let Some(g) = self.group.take() {
            self.emit(g, &mut out);
        }
        out
    }
}
