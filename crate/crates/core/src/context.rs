//! Context-window composition for transcription, transcript cropping, and
//! transcription-quality metrics.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::manifest::Manifest;
use crate::segmenter::{Span, UtteranceSegment};
use crate::synth::derive_seed;

pub const DEFAULT_BUDGET_S: f64 = 30.0;
pub const DEFAULT_RECENCY_S: f64 = 180.0;
/// Silence inserted between concatenated segments.
pub const JOINT_S: f64 = 0.05;
const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// The target utterance alone.
    SingleUtterance,
    /// The raw audio preceding and including the target, silence and all.
    PriorSound,
    /// Segments from the session start, ignoring recency.
    NoTemporal,
    /// Recent segments only, without filling the budget.
    NoQuantity,
    /// As many of the most recent segments as fit in the budget.
    Contextual,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::SingleUtterance,
        Strategy::PriorSound,
        Strategy::NoTemporal,
        Strategy::NoQuantity,
        Strategy::Contextual,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::SingleUtterance => "single-utterance",
            Strategy::PriorSound => "prior-sound",
            Strategy::NoTemporal => "no-temporal",
            Strategy::NoQuantity => "no-quantity",
            Strategy::Contextual => "contextual",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown strategy {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanConfig {
    pub budget_s: f64,
    pub recency_window_s: f64,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self { budget_s: DEFAULT_BUDGET_S, recency_window_s: DEFAULT_RECENCY_S }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub strategy: Strategy,
    /// Time-ordered; the target is always last. For `PriorSound` these are
    /// the segments that intersect `raw_span`.
    pub included: Vec<UtteranceSegment>,
    /// Contiguous session audio used instead of concatenation.
    pub raw_span: Option<Span>,
    pub config: PlanConfig,
}

impl WindowPlan {
    pub fn target(&self) -> &UtteranceSegment {
        self.included.last().expect("plans always hold the target")
    }

    pub fn context(&self) -> &[UtteranceSegment] {
        &self.included[..self.included.len() - 1]
    }

    pub fn voiced_duration(&self) -> f64 {
        match self.raw_span {
            Some(span) => self
                .included
                .iter()
                .map(|s| (s.t_end.min(span.t_end) - s.t_start.max(span.t_start)).max(0.0))
                .sum(),
            None => self.included.iter().map(UtteranceSegment::duration).sum(),
        }
    }
}

fn same(a: &UtteranceSegment, b: &UtteranceSegment) -> bool {
    a.session_id == b.session_id && a.seq_no == b.seq_no
}

/// Newest-first contiguous fill: walk back from the target and stop at the
/// first segment that no longer fits.
fn fill_newest_first<'a>(prior: impl DoubleEndedIterator<Item = &'a UtteranceSegment>, mut remaining: f64) -> Vec<UtteranceSegment> {
    let mut picked = Vec::new();
    for s in prior.rev() {
        if s.duration() > remaining + EPS {
            break;
        }
        remaining -= s.duration();
        picked.push(s.clone());
    }
    picked.reverse();
    picked
}

/// Plans the transcription window for `target`. `history` holds the
/// session's segments up to the target in time order; anything after the
/// target is ignored.
pub fn plan_window(history: &[UtteranceSegment], target: &UtteranceSegment, strategy: Strategy, config: PlanConfig) -> Result<WindowPlan> {
    let pos = history
        .iter()
        .position(|s| same(s, target))
        .ok_or_else(|| Error::TargetMissing { session_id: target.session_id.clone(), seq_no: target.seq_no })?;
    let prior = &history[..pos];
    let remaining = config.budget_s - target.duration();
    let mut raw_span = None;
    let mut included = match strategy {
        Strategy::SingleUtterance => Vec::new(),
        Strategy::Contextual => fill_newest_first(prior.iter(), remaining),
        Strategy::NoQuantity => {
            let from = target.t_start - config.recency_window_s;
            fill_newest_first(prior.iter().filter(|s| s.t_start >= from - EPS), remaining)
        }
        Strategy::NoTemporal => {
            let mut left = remaining;
            let mut picked = Vec::new();
            for s in prior {
                if s.duration() > left + EPS {
                    break;
                }
                left -= s.duration();
                picked.push(s.clone());
            }
            picked
        }
        Strategy::PriorSound => {
            let start = (target.t_end - config.budget_s).max(0.0);
            raw_span = Some(Span::new(start, target.t_end));
            prior.iter().filter(|s| s.t_end > start).cloned().collect()
        }
    };
    included.push(target.clone());
    Ok(WindowPlan { strategy, included, raw_span, config })
}

/// Placement of one segment inside the assembled clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutPiece {
    pub session_id: String,
    pub seq_no: u32,
    pub offset_s: f64,
    pub duration_s: f64,
    /// Seconds of the segment cut off at the start of a raw window.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub clipped_s: f64,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipLayout {
    pub pieces: Vec<LayoutPiece>,
    pub total_s: f64,
}

impl ClipLayout {
    pub fn target(&self) -> &LayoutPiece {
        self.pieces.last().expect("layout always holds the target")
    }

    pub fn target_span(&self) -> Span {
        let t = self.target();
        Span::new(t.offset_s, t.offset_s + t.duration_s)
    }
}

/// Where each included segment lands in the assembled clip.
pub fn layout(plan: &WindowPlan) -> ClipLayout {
    if let Some(span) = plan.raw_span {
        let pieces = plan
            .included
            .iter()
            .map(|s| {
                let a = s.t_start.max(span.t_start);
                LayoutPiece {
                    session_id: s.session_id.clone(),
                    seq_no: s.seq_no,
                    offset_s: a - span.t_start,
                    duration_s: s.t_end.min(span.t_end) - a,
                    clipped_s: a - s.t_start,
                }
            })
            .collect();
        return ClipLayout { pieces, total_s: span.duration() };
    }
    let mut t = 0.0;
    let mut pieces = Vec::with_capacity(plan.included.len());
    for (i, s) in plan.included.iter().enumerate() {
        if i > 0 {
            t += JOINT_S;
        }
        pieces.push(LayoutPiece {
            session_id: s.session_id.clone(),
            seq_no: s.seq_no,
            offset_s: t,
            duration_s: s.duration(),
            clipped_s: 0.0,
        });
        t += s.duration();
    }
    ClipLayout { pieces, total_s: t }
}

/// Builds the transcription input from session audio.
pub fn assemble_audio(plan: &WindowPlan, session: &AudioClip) -> Result<(AudioClip, ClipLayout)> {
    let lay = layout(plan);
    if let Some(span) = plan.raw_span {
        return Ok((session.slice(span.t_start, span.t_end), lay));
    }
    let joint = vec![0.0f32; (JOINT_S * session.sample_rate() as f64).round() as usize];
    let mut out = Vec::new();
    for (i, s) in plan.included.iter().enumerate() {
        if i > 0 {
            out.extend_from_slice(&joint);
        }
        out.extend_from_slice(session.slice(s.t_start, s.t_end).samples());
    }
    Ok((AudioClip::new(out, session.sample_rate())?, lay))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Word {
    pub w: String,
    pub t_start: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub text: String,
    pub words: Vec<Word>,
}

impl Transcript {
    pub fn from_words(words: Vec<Word>) -> Self {
        let text = words.iter().map(|w| w.w.as_str()).collect::<Vec<_>>().join(" ");
        Self { text, words }
    }

    /// Errors when word timestamps go backwards or a word ends before it starts.
    pub fn check_order(&self) -> Result<()> {
        let mut last = f64::NEG_INFINITY;
        for w in &self.words {
            if !(w.t_end >= w.t_start) || w.t_start < last - EPS {
                return Err(Error::Protocol(format!("word {:?} out of order", w.w)));
            }
            last = w.t_start;
        }
        Ok(())
    }
}

/// Words whose midpoint falls inside the target's span, joined by spaces.
pub fn crop_target_text(words: &[Word], layout: &ClipLayout) -> String {
    let span = layout.target_span();
    words
        .iter()
        .filter(|w| {
            let mid = 0.5 * (w.t_start + w.t_end);
            mid >= span.t_start - EPS && mid <= span.t_end + EPS
        })
        .map(|w| w.w.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = (diag + usize::from(x != y)).min(row[j] + 1).min(up + 1);
            diag = up;
        }
    }
    row[b.len()]
}

/// Edit distance and reference length, for corpus-level pooling.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EditCount {
    pub edits: usize,
    pub reference: usize,
}

impl EditCount {
    pub fn add(&mut self, o: EditCount) {
        self.edits += o.edits;
        self.reference += o.reference;
    }

    /// Edits per reference token. An empty reference scores 0 against an
    /// empty hypothesis and 1 otherwise.
    pub fn rate(&self) -> f64 {
        if self.reference == 0 {
            return if self.edits == 0 { 0.0 } else { 1.0 };
        }
        self.edits as f64 / self.reference as f64
    }
}

pub fn word_edits(reference: &str, hypothesis: &str) -> EditCount {
    let r: Vec<&str> = reference.split_whitespace().collect();
    let h: Vec<&str> = hypothesis.split_whitespace().collect();
    EditCount { edits: levenshtein(&r, &h), reference: r.len() }
}

pub fn char_edits(reference: &str, hypothesis: &str) -> EditCount {
    let norm = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ").chars().collect::<Vec<char>>();
    let (r, h) = (norm(reference), norm(hypothesis));
    EditCount { edits: levenshtein(&r, &h), reference: r.len() }
}

pub fn wer(reference: &str, hypothesis: &str) -> f64 {
    word_edits(reference, hypothesis).rate()
}

pub fn cer(reference: &str, hypothesis: &str) -> f64 {
    char_edits(reference, hypothesis).rate()
}

/// Anything that turns a planned window into a timed transcript.
pub trait Transcriber: Send + Sync {
    fn transcribe(&self, plan: &WindowPlan, layout: &ClipLayout, audio: Option<&AudioClip>) -> Result<Transcript>;
}

/// Reads utterance text from a manifest and spreads words uniformly over
/// each piece of the layout.
#[derive(Debug, Clone, Default)]
pub struct StubAsr {
    texts: HashMap<(String, u32), String>,
}

impl StubAsr {
    pub fn from_manifest(m: &Manifest) -> Self {
        Self {
            texts: m.records.iter().map(|r| ((r.session_id.clone(), r.seq_no), r.text.clone())).collect(),
        }
    }

    pub fn text(&self, session_id: &str, seq_no: u32) -> Option<&str> {
        self.texts.get(&(session_id.to_string(), seq_no)).map(String::as_str)
    }

    /// Uniform word timings for one piece; words whose slot was cut off by a
    /// raw window boundary are dropped.
    pub fn piece_words(&self, piece: &LayoutPiece) -> Vec<Word> {
        let Some(text) = self.text(&piece.session_id, piece.seq_no) else {
            return Vec::new();
        };
        let words: Vec<&str> = text.split_whitespace().collect();
        let full = piece.duration_s + piece.clipped_s;
        let slot = full / words.len().max(1) as f64;
        let base = piece.offset_s - piece.clipped_s;
        words
            .iter()
            .enumerate()
            .map(|(i, w)| Word {
                w: w.to_string(),
                t_start: base + i as f64 * slot,
                t_end: base + (i + 1) as f64 * slot,
            })
            .filter(|w| w.t_start >= piece.offset_s - EPS)
            .collect()
    }
}

impl Transcriber for StubAsr {
    fn transcribe(&self, _plan: &WindowPlan, layout: &ClipLayout, _audio: Option<&AudioClip>) -> Result<Transcript> {
        Ok(Transcript::from_words(layout.pieces.iter().flat_map(|p| self.piece_words(p)).collect()))
    }
}

/// Error model for [`NoisyAsr`]: the per-word corruption probability falls
/// with useful nearby context and rises with distant context or silence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub p_floor: f64,
    pub p_max: f64,
    /// Context seconds at which the excess error falls by `1/e`.
    pub context_scale_s: f64,
    /// Recency decay of a context segment's usefulness.
    pub recency_decay_s: f64,
    /// Per budget-second of context that is cut off from the target by a
    /// skipped utterance.
    pub distractor_penalty: f64,
    pub silence_penalty: f64,
    /// Share of corruptions that delete the word rather than substitute it.
    pub deletion_share: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            p_floor: 0.05,
            p_max: 0.35,
            context_scale_s: 5.0,
            recency_decay_s: 60.0,
            distractor_penalty: 0.15,
            silence_penalty: 0.15,
            deletion_share: 0.3,
        }
    }
}

impl NoiseModel {
    pub fn corruption_probability(&self, plan: &WindowPlan) -> f64 {
        let target = plan.target();
        let budget = plan.config.budget_s;
        let (mut useful, mut distract) = (0.0, 0.0);
        // walking back from the target, everything past the first gap in
        // seq_no is detached from it
        let mut expected = target.seq_no;
        let mut detached = false;
        for s in plan.context().iter().rev() {
            let d = match plan.raw_span {
                Some(span) => (s.t_end.min(span.t_end) - s.t_start.max(span.t_start)).max(0.0),
                None => s.duration(),
            };
            let age = (target.t_start - s.t_end).max(0.0);
            useful += d * (-age / self.recency_decay_s).exp();
            detached |= s.seq_no.checked_add(1) != Some(expected);
            expected = s.seq_no;
            if detached {
                distract += d / budget;
            }
        }
        let silence = match plan.raw_span {
            Some(span) => ((span.duration() - plan.voiced_duration()) / budget).max(0.0),
            None => 0.0,
        };
        let p = self.p_floor
            + (self.p_max - self.p_floor) * (-useful / self.context_scale_s).exp()
            + self.distractor_penalty * distract
            + self.silence_penalty * silence;
        p.clamp(0.0, 1.0)
    }
}

/// Stub ASR that corrupts the target's words with a context-dependent
/// probability. Each word's random draws depend only on the seed and the
/// word's identity, so strategies are compared on common random numbers.
#[derive(Debug, Clone)]
pub struct NoisyAsr {
    pub inner: StubAsr,
    pub noise: NoiseModel,
    pub seed: u64,
}

impl NoisyAsr {
    pub fn new(inner: StubAsr, noise: NoiseModel, seed: u64) -> Self {
        Self { inner, noise, seed }
    }
}

fn garble(w: &str) -> String {
    let mut s: String = w.chars().rev().collect();
    s.push('h');
    s
}

fn key(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

impl Transcriber for NoisyAsr {
    fn transcribe(&self, plan: &WindowPlan, layout: &ClipLayout, audio: Option<&AudioClip>) -> Result<Transcript> {
        let clean = self.inner.transcribe(plan, layout, audio)?;
        let p = self.noise.corruption_probability(plan);
        let target = layout.target();
        let span = layout.target_span();
        let mut words = Vec::with_capacity(clean.words.len());
        let mut idx = 0u64;
        for w in clean.words {
            let mid = 0.5 * (w.t_start + w.t_end);
            if mid < span.t_start - EPS || mid > span.t_end + EPS {
                words.push(w);
                continue;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[self.seed, key(&target.session_id), target.seq_no as u64, idx]));
            idx += 1;
            let (u, v): (f64, f64) = (rng.gen(), rng.gen());
            if u >= p {
                words.push(w);
            } else if v >= self.noise.deletion_share {
                words.push(Word { w: garble(&w.w), ..w });
            }
        }
        Ok(Transcript::from_words(words))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyScore {
    pub strategy: Strategy,
    pub wer: f64,
    pub cer: f64,
    pub utterances: usize,
    pub mean_context_s: f64,
}

/// Transcribes every manifest utterance under each strategy and scores the
/// cropped target text against the manifest text.
pub fn evaluate_strategies(manifest: &Manifest, asr: &dyn Transcriber, strategies: &[Strategy], config: PlanConfig) -> Result<Vec<StrategyScore>> {
    let sessions = manifest.sessions();
    strategies
        .iter()
        .map(|&strategy| {
            let (mut w, mut c) = (EditCount::default(), EditCount::default());
            let (mut n, mut ctx) = (0usize, 0.0);
            for s in &sessions {
                let segs = s.segments();
                for (r, seg) in s.records.iter().zip(&segs) {
                    let plan = plan_window(&segs, seg, strategy, config)?;
                    let lay = layout(&plan);
                    let t = asr.transcribe(&plan, &lay, None)?;
                    let hyp = crop_target_text(&t.words, &lay);
                    w.add(word_edits(&r.text, &hyp));
                    c.add(char_edits(&r.text, &hyp));
                    n += 1;
                    ctx += lay.total_s - lay.target().duration_s;
                }
            }
            Ok(StrategyScore {
                strategy,
                wer: w.rate(),
                cer: c.rate(),
                utterances: n,
                mean_context_s: if n > 0 { ctx / n as f64 } else { 0.0 },
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, Strategy as _};

    fn seg(seq: u32, a: f64, b: f64) -> UtteranceSegment {
        UtteranceSegment::new("s", seq, a, b)
    }

    fn ids(p: &WindowPlan) -> Vec<u32> {
        p.included.iter().map(|s| s.seq_no).collect()
    }

    #[test]
    fn contextual_examples() {
        let h = vec![seg(0, 0.0, 5.0), seg(1, 6.0, 11.0), seg(2, 12.0, 17.0)];
        assert_eq!(ids(&plan_window(&h, &h[2], Strategy::Contextual, PlanConfig::default()).unwrap()), vec![0, 1, 2]);
        let h = vec![seg(0, 0.0, 20.0), seg(1, 21.0, 29.0), seg(2, 30.0, 35.0)];
        assert_eq!(ids(&plan_window(&h, &h[2], Strategy::Contextual, PlanConfig::default()).unwrap()), vec![1, 2]);
    }

    #[test]
    fn recency_window() {
        let h = vec![seg(0, 0.0, 2.0), seg(1, 400.0, 402.0)];
        assert_eq!(ids(&plan_window(&h, &h[1], Strategy::NoQuantity, PlanConfig::default()).unwrap()), vec![1]);
        assert_eq!(ids(&plan_window(&h, &h[1], Strategy::Contextual, PlanConfig::default()).unwrap()), vec![0, 1]);
    }

    #[test]
    fn no_temporal_fills_from_start() {
        let h: Vec<_> = (0..8).map(|i| seg(i, i as f64 * 10.0, i as f64 * 10.0 + 6.0)).collect();
        let p = plan_window(&h, &h[7], Strategy::NoTemporal, PlanConfig::default()).unwrap();
        assert_eq!(ids(&p), vec![0, 1, 2, 3, 7]);
        let p = plan_window(&h, &h[7], Strategy::SingleUtterance, PlanConfig::default()).unwrap();
        assert_eq!(ids(&p), vec![7]);
    }

    #[test]
    fn prior_sound_is_raw_window() {
        let h = vec![seg(0, 0.0, 5.0), seg(1, 20.0, 24.0), seg(2, 40.0, 42.0)];
        let p = plan_window(&h, &h[2], Strategy::PriorSound, PlanConfig::default()).unwrap();
        assert_eq!(p.raw_span, Some(Span::new(12.0, 42.0)));
        assert_eq!(ids(&p), vec![1, 2]);
        let lay = layout(&p);
        assert_eq!(lay.total_s, 30.0);
        assert_eq!(lay.target_span(), Span::new(28.0, 30.0));
    }

    #[test]
    fn missing_target() {
        let h = vec![seg(0, 0.0, 5.0)];
        assert!(matches!(
            plan_window(&h, &seg(3, 9.0, 10.0), Strategy::Contextual, PlanConfig::default()),
            Err(Error::TargetMissing { .. })
        ));
    }

    #[test]
    fn assembly_lengths() {
        let sr = 1000;
        let clip = AudioClip::new((0..10_000).map(|i| (i % 7) as f32 / 10.0).collect(), sr).unwrap();
        let h = vec![seg(0, 1.0, 2.0), seg(1, 3.0, 4.5)];
        let one = plan_window(&h, &h[0], Strategy::Contextual, PlanConfig::default()).unwrap();
        let (a, _) = assemble_audio(&one, &clip).unwrap();
        assert_eq!(a.samples(), clip.slice(1.0, 2.0).samples());
        let two = plan_window(&h, &h[1], Strategy::Contextual, PlanConfig::default()).unwrap();
        let (b, lay) = assemble_audio(&two, &clip).unwrap();
        assert_eq!(b.len(), 1000 + 50 + 1500);
        assert!((lay.target().offset_s - 1.05).abs() < 1e-12);
    }

    #[test]
    fn cropping_by_midpoint() {
        let lay = ClipLayout {
            pieces: vec![
                LayoutPiece { session_id: "s".into(), seq_no: 0, offset_s: 0.0, duration_s: 1.0, clipped_s: 0.0 },
                LayoutPiece { session_id: "s".into(), seq_no: 1, offset_s: 1.05, duration_s: 1.0, clipped_s: 0.0 },
            ],
            total_s: 2.05,
        };
        let w = |s: &str, a: f64, b: f64| Word { w: s.into(), t_start: a, t_end: b };
        let words = vec![w("early", 0.0, 0.5), w("edge", 0.8, 1.2), w("in", 1.1, 1.4), w("tail", 1.8, 2.2)];
        // midpoints 0.25 and 1.0 fall outside [1.05, 2.05]; 1.25 and 2.0 inside
        assert_eq!(crop_target_text(&words, &lay), "in tail");
        assert_eq!(crop_target_text(&words[..2], &lay), "");
    }

    #[test]
    fn error_rates() {
        assert_eq!(wer("a b c", "a b c"), 0.0);
        assert_eq!(wer("a b c", ""), 1.0);
        assert!((wer("a b c", "a x c") - 1.0 / 3.0).abs() < 1e-12);
        assert!((cer("abcd", "abxd") - 0.25).abs() < 1e-12);
        assert_eq!(wer("", ""), 0.0);
    }

    #[test]
    fn stub_returns_manifest_text() {
        use crate::label::Class;
        use crate::manifest::ManifestRecord;
        let m = Manifest::new(vec![ManifestRecord {
            session_id: "s".into(),
            participant_id: "P1".into(),
            seq_no: 0,
            t_start: 1.0,
            t_end: 2.0,
            label: Class::Others,
            text: "fifteen love".into(),
        }])
        .unwrap();
        let asr = StubAsr::from_manifest(&m);
        let segs = m.sessions()[0].segments();
        let plan = plan_window(&segs, &segs[0], Strategy::SingleUtterance, PlanConfig::default()).unwrap();
        let lay = layout(&plan);
        let t = asr.transcribe(&plan, &lay, None).unwrap();
        t.check_order().unwrap();
        assert_eq!(crop_target_text(&t.words, &lay), "fifteen love");
    }

    #[test]
    fn order_check_rejects_backwards() {
        let t = Transcript::from_words(vec![
            Word { w: "b".into(), t_start: 1.0, t_end: 1.5 },
            Word { w: "a".into(), t_start: 0.0, t_end: 0.5 },
        ]);
        assert!(t.check_order().is_err());
    }

    fn history() -> impl proptest::strategy::Strategy<Value = Vec<UtteranceSegment>> {
        proptest::collection::vec((0.01f64..60.0, 0.3f64..25.0), 1..25).prop_map(|v| {
            let mut t = 0.0;
            v.into_iter()
                .enumerate()
                .map(|(i, (gap, d))| {
                    let s = seg(i as u32, t + gap, t + gap + d);
                    t = s.t_end;
                    s
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn plans_hold_target_and_budget(h in history(), pick in 0usize..25) {
            let target = &h[pick % h.len()];
            for st in Strategy::ALL {
                let p = plan_window(&h, target, st, PlanConfig::default()).unwrap();
                prop_assert!(same(p.target(), target));
                if st != Strategy::PriorSound && target.duration() <= DEFAULT_BUDGET_S {
                    prop_assert!(p.voiced_duration() <= DEFAULT_BUDGET_S + 1e-6);
                }
                prop_assert!(p.included.windows(2).all(|w| w[0].t_end <= w[1].t_start));
            }
        }

        #[test]
        fn contextual_is_contiguous_suffix(h in history(), pick in 0usize..25) {
            let i = pick % h.len();
            let p = plan_window(&h, &h[i], Strategy::Contextual, PlanConfig::default()).unwrap();
            let k = p.included.len();
            prop_assert_eq!(&h[i + 1 - k..=i], &p.included[..]);
        }
    }
}
