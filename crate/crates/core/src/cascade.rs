//! The confidence-gated cascade: acoustic stage, linguistic stage, fusion.
//!
//! The acoustic stage may accept `negative` or `others` when its least margin
//! reaches 0.92. The linguistic stage may accept `negative` at 0.80. Anything
//! left is decided by fusion.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::adaptation::{self, AdaptationState, AlphaGateNet, Embedding, EmbeddingSource, Laea, PrevSource};
use crate::audio::{self, AudioClip};
use crate::backend::Backend;
use crate::context::{self, PlanConfig, Strategy, Transcriber};
use crate::cost::{self, ExitRatios, ExitStage, LatencyProfile};
use crate::error::{Error, Result};
use crate::eval::ConfusionMatrix;
use crate::fusion::FusionGate;
use crate::heads::{self, ClassDistribution, FeedForwardHead};
use crate::label::Class;
use crate::manifest::ManifestRecord;
use crate::segmenter::UtteranceSegment;
use crate::synth::SyntheticCorpus;

/// Slack on margin comparisons so a margin equal to its threshold up to
/// rounding still accepts.
pub const MARGIN_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatingPolicy {
    pub acoustic_accept: Vec<Class>,
    pub acoustic_margin_min: f64,
    pub linguistic_accept: Vec<Class>,
    pub linguistic_margin_min: f64,
}

impl Default for GatingPolicy {
    fn default() -> Self {
        Self {
            acoustic_accept: vec![Class::NegativeSelfTalk, Class::Others],
            acoustic_margin_min: 0.92,
            linguistic_accept: vec![Class::NegativeSelfTalk],
            linguistic_margin_min: 0.80,
        }
    }
}

impl GatingPolicy {
    pub fn with_thresholds(&self, acoustic: f64, linguistic: f64) -> Self {
        Self { acoustic_margin_min: acoustic, linguistic_margin_min: linguistic, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        for m in [self.acoustic_margin_min, self.linguistic_margin_min] {
            if !m.is_finite() || m < 0.0 {
                return Err(Error::InvalidParameter(format!("margin threshold {m} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    pub fn acoustic_accepts(&self, d: &ClassDistribution) -> bool {
        self.acoustic_accept.contains(&d.predicted()) && d.least_margin() >= self.acoustic_margin_min - MARGIN_TOLERANCE
    }

    pub fn linguistic_accepts(&self, d: &ClassDistribution) -> bool {
        self.linguistic_accept.contains(&d.predicted()) && d.least_margin() >= self.linguistic_margin_min - MARGIN_TOLERANCE
    }

    /// Exit stage and label given every stage's distribution.
    pub fn route(&self, a: &ClassDistribution, l: &ClassDistribution, f: &ClassDistribution) -> (ExitStage, Class) {
        if self.acoustic_accepts(a) {
            (ExitStage::Acoustic, a.predicted())
        } else if self.linguistic_accepts(l) {
            (ExitStage::Linguistic, l.predicted())
        } else {
            (ExitStage::Fusion, f.predicted())
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let p: Self = cost::load_toml(path)?;
        p.validate()?;
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        cost::save_toml(path, self)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome {
    /// Whether the online cascade executed this stage.
    pub ran: bool,
    /// Present when the stage ran, or was computed in shadow for re-gating.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    pub accepted: bool,
}

impl StageOutcome {
    fn from(dist: Option<&ClassDistribution>, ran: bool, accepted: bool) -> Self {
        Self { ran, p: dist.map(|d| d.p), margin: dist.map(|d| d.least_margin()), accepted }
    }

    pub fn dist(&self) -> Option<ClassDistribution> {
        self.p.map(ClassDistribution::new)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub session_id: String,
    pub seq_no: u32,
    pub t_start: f64,
    pub t_end: f64,
    pub acoustic: StageOutcome,
    pub linguistic: StageOutcome,
    pub fusion: StageOutcome,
    pub exit_stage: ExitStage,
    pub label: Class,
    pub latency_ms: f64,
    /// Blend weight applied to the current acoustic embedding.
    pub alpha: f64,
    /// The linguistic stage failed and fusion saw a zero vector.
    pub degraded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<Class>,
}

impl StageTrace {
    /// Stages that ran form a prefix ending at the exit stage, and the label
    /// is the exit stage's prediction.
    pub fn is_consistent(&self) -> bool {
        let ran = [self.acoustic.ran, self.linguistic.ran, self.fusion.ran];
        let k = self.exit_stage as usize;
        let prefix = (0..3).all(|i| ran[i] == (i <= k));
        let accepted = [self.acoustic.accepted, self.linguistic.accepted];
        let gates = match self.exit_stage {
            ExitStage::Acoustic => accepted[0],
            ExitStage::Linguistic => !accepted[0] && accepted[1],
            ExitStage::Fusion => !accepted[0] && !accepted[1],
        };
        let stage = [&self.acoustic, &self.linguistic, &self.fusion][k];
        let label = stage.dist().map(|d| d.predicted()) == Some(self.label);
        prefix && gates && label
    }
}

/// Source of frame-level acoustic embeddings for a segment.
pub trait AcousticEncoder: Send + Sync {
    fn frames(&self, seg: &UtteranceSegment, session_audio: Option<&AudioClip>) -> Result<Vec<Vec<f64>>>;
}

/// Pseudo-embeddings from a synthetic corpus, looked up by `(session, seq_no)`.
pub struct SyntheticEncoder<'a> {
    corpus: &'a SyntheticCorpus,
    index: HashMap<(String, u32), usize>,
}

impl<'a> SyntheticEncoder<'a> {
    pub fn new(corpus: &'a SyntheticCorpus) -> Self {
        let index = corpus
            .manifest
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| ((r.session_id.clone(), r.seq_no), i))
            .collect();
        Self { corpus, index }
    }

    pub fn record(&self, session_id: &str, seq_no: u32) -> Option<&ManifestRecord> {
        self.index.get(&(session_id.to_string(), seq_no)).map(|&i| &self.corpus.manifest.records[i])
    }
}

impl AcousticEncoder for SyntheticEncoder<'_> {
    fn frames(&self, seg: &UtteranceSegment, _audio: Option<&AudioClip>) -> Result<Vec<Vec<f64>>> {
        let r = self
            .record(&seg.session_id, seg.seq_no)
            .ok_or_else(|| Error::TargetMissing { session_id: seg.session_id.clone(), seq_no: seg.seq_no })?;
        Ok(self.corpus.acoustic_frames(r))
    }
}

/// Embeds the segment's audio through a backend.
pub struct BackendEncoder<'a> {
    pub backend: &'a dyn Backend,
}

impl AcousticEncoder for BackendEncoder<'_> {
    fn frames(&self, seg: &UtteranceSegment, audio: Option<&AudioClip>) -> Result<Vec<Vec<f64>>> {
        let audio = audio.ok_or(Error::Empty("session audio"))?;
        self.backend.embed(&audio.slice(seg.t_start, seg.t_end))
    }
}

/// Embeds segments through a backend, loading `<dir>/<session_id>.wav` on
/// first use when no session audio is passed in.
pub struct AudioDirEncoder<'a> {
    pub backend: &'a dyn Backend,
    pub dir: PathBuf,
    clips: Mutex<HashMap<String, Arc<AudioClip>>>,
}

impl<'a> AudioDirEncoder<'a> {
    pub fn new(backend: &'a dyn Backend, dir: impl Into<PathBuf>) -> Self {
        Self { backend, dir: dir.into(), clips: Mutex::new(HashMap::new()) }
    }

    pub fn session_audio(&self, session_id: &str) -> Result<Arc<AudioClip>> {
        let mut clips = self.clips.lock().map_err(|_| Error::Transport("audio cache poisoned".into()))?;
        if let Some(c) = clips.get(session_id) {
            return Ok(c.clone());
        }
        let clip = Arc::new(audio::load_wav(self.dir.join(format!("{session_id}.wav")))?);
        clips.insert(session_id.to_string(), clip.clone());
        Ok(clip)
    }
}

impl AcousticEncoder for AudioDirEncoder<'_> {
    fn frames(&self, seg: &UtteranceSegment, audio: Option<&AudioClip>) -> Result<Vec<Vec<f64>>> {
        let clip = match audio {
            Some(a) => a.slice(seg.t_start, seg.t_end),
            None => self.session_audio(&seg.session_id)?.slice(seg.t_start, seg.t_end),
        };
        self.backend.embed(&clip)
    }
}

/// Trained weights for every stage.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeModels {
    pub alpha_gate: Option<AlphaGateNet>,
    pub acoustic_head: FeedForwardHead,
    pub linguistic_head: FeedForwardHead,
    pub fusion: FusionGate,
}

const GATE_FILE: &str = "alpha_gate.mmhd";
const ACOUSTIC_FILE: &str = "acoustic_head.mmhd";
const LINGUISTIC_FILE: &str = "linguistic_head.mmhd";
const FUSION_FILE: &str = "fusion.mmhd";

impl CascadeModels {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        if let Some(g) = &self.alpha_gate {
            g.save(dir.join(GATE_FILE))?;
        }
        self.acoustic_head.save(dir.join(ACOUSTIC_FILE))?;
        self.linguistic_head.save(dir.join(LINGUISTIC_FILE))?;
        self.fusion.save(dir.join(FUSION_FILE))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let gate_path = dir.join(GATE_FILE);
        Ok(Self {
            alpha_gate: if gate_path.exists() { Some(AlphaGateNet::load(gate_path)?) } else { None },
            acoustic_head: FeedForwardHead::load(dir.join(ACOUSTIC_FILE))?,
            linguistic_head: FeedForwardHead::load(dir.join(LINGUISTIC_FILE))?,
            fusion: FusionGate::load(dir.join(FUSION_FILE))?,
        })
    }
}

/// Hashed character n-gram text encoder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextEncoder {
    pub dim: usize,
}

impl Default for TextEncoder {
    fn default() -> Self {
        Self { dim: heads::DEFAULT_TEXT_DIM }
    }
}

impl TextEncoder {
    pub fn encode(&self, text: &str) -> Vec<f64> {
        heads::reference_linguistic_encode(text, self.dim)
    }
}

/// Everything the cascade needs at inference time. Components are shared
/// read-only; per-session state lives in [`SessionState`].
pub struct Cascade<'a> {
    pub policy: GatingPolicy,
    pub encoder: &'a dyn AcousticEncoder,
    pub laea: Laea,
    pub laea_window_s: f64,
    pub prev_source: PrevSource,
    pub acoustic_head: &'a FeedForwardHead,
    pub transcriber: &'a dyn Transcriber,
    pub strategy: Strategy,
    pub plan: PlanConfig,
    pub text: TextEncoder,
    pub linguistic_head: &'a FeedForwardHead,
    pub fusion: &'a FusionGate,
    pub profile: LatencyProfile,
    /// Compute every stage for every utterance so thresholds can be swept
    /// offline. Routing, `ran` flags and latency are unaffected.
    pub shadow_all_stages: bool,
}

impl<'a> Cascade<'a> {
    /// Adaptive LAEA when the models carry a gate, otherwise none.
    pub fn new(
        models: &'a CascadeModels,
        encoder: &'a dyn AcousticEncoder,
        transcriber: &'a dyn Transcriber,
    ) -> Self {
        Self {
            policy: GatingPolicy::default(),
            encoder,
            laea: models.alpha_gate.clone().map_or(Laea::Off, Laea::Adaptive),
            laea_window_s: adaptation::DEFAULT_WINDOW_S,
            prev_source: PrevSource::default(),
            acoustic_head: &models.acoustic_head,
            transcriber,
            strategy: Strategy::Contextual,
            plan: PlanConfig::default(),
            text: TextEncoder { dim: models.linguistic_head.input_dim() },
            linguistic_head: &models.linguistic_head,
            fusion: &models.fusion,
            profile: LatencyProfile::default(),
            shadow_all_stages: false,
        }
    }
}

/// Per-session state threaded through consecutive utterances.
#[derive(Debug, Clone, Default)]
pub struct SessionState {
    pub adaptation: AdaptationState,
    pub history: Vec<UtteranceSegment>,
}

impl Cascade<'_> {
    fn linguistic(&self, seg: &UtteranceSegment, state: &SessionState, audio: Option<&AudioClip>) -> Result<(Vec<f64>, Option<String>, bool)> {
        let plan = context::plan_window(&state.history, seg, self.strategy, self.plan)?;
        let (assembled, layout) = match audio {
            Some(a) => {
                let (clip, lay) = context::assemble_audio(&plan, a)?;
                (Some(clip), lay)
            }
            None => (None, context::layout(&plan)),
        };
        match self.transcriber.transcribe(&plan, &layout, assembled.as_ref()) {
            Ok(t) => {
                let text = context::crop_target_text(&t.words, &layout);
                Ok((self.text.encode(&text), Some(text), false))
            }
            Err(e) if e.is_backend() => {
                log::warn!("{}#{}: linguistic stage degraded: {e}", seg.session_id, seg.seq_no);
                Ok((vec![0.0; self.text.dim], None, true))
            }
            Err(e) => Err(e),
        }
    }

    /// Runs one utterance. The segment must be the newest in the session.
    pub fn run_utterance(&self, seg: &UtteranceSegment, state: &mut SessionState, audio: Option<&AudioClip>) -> Result<StageTrace> {
        if state.history.last().map_or(true, |s| s.seq_no != seg.seq_no || s.session_id != seg.session_id) {
            state.history.push(seg.clone());
        }
        let pooled = adaptation::mean_pool(&self.encoder.frames(seg, audio)?)?;
        let emb = Embedding::new(pooled, EmbeddingSource::Acoustic, seg.t_start, seg.t_end);
        let (adapted, alpha) = state.adaptation.step(&self.laea, &emb, self.laea_window_s, self.prev_source)?;
        let d_a = self.acoustic_head.forward(&adapted.values);
        let acc_a = self.policy.acoustic_accepts(&d_a);

        let need_l = !acc_a || self.shadow_all_stages;
        let (x_l, transcript, degraded) = if need_l { self.linguistic(seg, state, audio)? } else { (Vec::new(), None, false) };
        let d_l = need_l.then(|| self.linguistic_head.forward(&x_l));
        let acc_l = d_l.as_ref().is_some_and(|d| self.policy.linguistic_accepts(d));

        let need_f = (!acc_a && !acc_l) || self.shadow_all_stages;
        let d_f = if need_f { Some(self.fusion.classify(&adapted.values, &x_l)?) } else { None };

        let (exit_stage, label) = if acc_a {
            (ExitStage::Acoustic, d_a.predicted())
        } else if acc_l {
            (ExitStage::Linguistic, d_l.as_ref().map(|d| d.predicted()).unwrap_or(Class::Others))
        } else {
            (ExitStage::Fusion, d_f.as_ref().map(|d| d.predicted()).unwrap_or(Class::Others))
        };
        let ran_l = exit_stage >= ExitStage::Linguistic;
        let ran_f = exit_stage == ExitStage::Fusion;
        Ok(StageTrace {
            session_id: seg.session_id.clone(),
            seq_no: seg.seq_no,
            t_start: seg.t_start,
            t_end: seg.t_end,
            acoustic: StageOutcome::from(Some(&d_a), true, acc_a),
            linguistic: StageOutcome::from(d_l.as_ref(), ran_l, acc_l),
            fusion: StageOutcome::from(d_f.as_ref(), ran_f, ran_f),
            exit_stage,
            label,
            latency_ms: self.profile.through(exit_stage),
            alpha,
            degraded,
            transcript,
            truth: None,
        })
    }

    /// Runs a session's segments in order with fresh state.
    pub fn run_session(&self, segments: &[UtteranceSegment], audio: Option<&AudioClip>) -> Result<Vec<StageTrace>> {
        let mut sorted = segments.to_vec();
        sorted.sort_by_key(|s| s.seq_no);
        let mut state = SessionState::default();
        sorted.iter().map(|s| self.run_utterance(s, &mut state, audio)).collect()
    }

    /// Like [`Cascade::run_session`], attaching manifest labels as truth.
    pub fn run_records(&self, records: &[ManifestRecord], audio: Option<&AudioClip>) -> Result<Vec<StageTrace>> {
        let segs: Vec<UtteranceSegment> = records.iter().map(ManifestRecord::segment).collect();
        let mut traces = self.run_session(&segs, audio)?;
        let truth: HashMap<u32, Class> = records.iter().map(|r| (r.seq_no, r.label)).collect();
        for t in &mut traces {
            t.truth = truth.get(&t.seq_no).copied();
        }
        Ok(traces)
    }
}

/// Re-applies a policy to stored traces. Every trace needs all three
/// stage distributions, which a shadowed run provides.
pub fn regate(traces: &[StageTrace], policy: &GatingPolicy) -> Result<Vec<(ExitStage, Class)>> {
    traces
        .iter()
        .map(|t| {
            let (Some(a), Some(l), Some(f)) = (t.acoustic.dist(), t.linguistic.dist(), t.fusion.dist()) else {
                return Err(Error::InvalidParameter(format!(
                    "trace {}#{} lacks stage distributions; run with shadow_all_stages",
                    t.session_id, t.seq_no
                )));
            };
            Ok(policy.route(&a, &l, &f))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrontierPoint {
    pub acoustic_margin_min: f64,
    pub linguistic_margin_min: f64,
    pub macro_f1: f64,
    pub mean_latency_ms: f64,
    pub ratios: ExitRatios,
    /// No other grid point has both higher macro-F1 and lower latency.
    pub pareto: bool,
}

/// Evaluates every threshold pair on stored traces without re-running models.
pub fn sweep_thresholds(
    traces: &[StageTrace],
    base: &GatingPolicy,
    acoustic_grid: &[f64],
    linguistic_grid: &[f64],
    profile: &LatencyProfile,
) -> Result<Vec<FrontierPoint>> {
    if traces.iter().any(|t| t.truth.is_none()) {
        return Err(Error::InvalidParameter("threshold sweeps need ground-truth labels".into()));
    }
    let mut points = Vec::with_capacity(acoustic_grid.len() * linguistic_grid.len());
    for &ta in acoustic_grid {
        for &tl in linguistic_grid {
            let routed = regate(traces, &base.with_thresholds(ta, tl))?;
            let mut cm = ConfusionMatrix::default();
            for (t, (_, label)) in traces.iter().zip(&routed) {
                cm.add(t.truth.expect("checked above"), *label);
            }
            let ratios = cost::ratios_from_exits(routed.iter().map(|r| r.0))?;
            let latency = routed.iter().map(|r| profile.through(r.0)).sum::<f64>() / routed.len() as f64;
            points.push(FrontierPoint {
                acoustic_margin_min: ta,
                linguistic_margin_min: tl,
                macro_f1: cm.metrics().macro_f1,
                mean_latency_ms: latency,
                ratios,
                pareto: false,
            });
        }
    }
    let snapshot: Vec<(f64, f64)> = points.iter().map(|p| (p.macro_f1, p.mean_latency_ms)).collect();
    for p in &mut points {
        p.pareto = !snapshot.iter().any(|&(f, l)| {
            (f >= p.macro_f1 && l < p.mean_latency_ms) || (f > p.macro_f1 && l <= p.mean_latency_ms)
        });
    }
    Ok(points)
}

/// Exit fractions of a set of traces.
pub fn ratios_from_traces(traces: &[StageTrace]) -> Result<ExitRatios> {
    cost::ratios_from_exits(traces.iter().map(|t| t.exit_stage))
}

/// Pooled confusion over traces that carry truth.
pub fn confusion(traces: &[StageTrace]) -> ConfusionMatrix {
    let mut cm = ConfusionMatrix::default();
    for t in traces {
        if let Some(truth) = t.truth {
            cm.add(truth, t.label);
        }
    }
    cm
}
