//! Training and leave-one-participant-out evaluation of the whole cascade.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptation::{self, AcousticModel, AlphaGateNet, Laea, LaeaSample, PrevSource};
use crate::cascade::{self, AcousticEncoder, Cascade, CascadeModels, GatingPolicy, StageTrace, TextEncoder};
use crate::context::{self, PlanConfig, Strategy, Transcriber};
use crate::cost::{ExitRatios, LatencyProfile};
use crate::error::{Error, Result};
use crate::eval::{self, ConfusionMatrix, Metrics};
use crate::fusion::{FusionGate, FusionMode};
use crate::heads::{self, FeedForwardHead, TrainConfig, TrainHistory};
use crate::label::Class;
use crate::manifest::{Manifest, ManifestRecord, Session};
use crate::synth::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum LaeaMode {
    Adaptive,
    Static { alpha: f64 },
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarnessConfig {
    pub acoustic_hidden: Vec<usize>,
    pub linguistic_hidden: Vec<usize>,
    pub fusion_hidden: Vec<usize>,
    pub fusion_mode: FusionMode,
    pub gate_hidden: usize,
    pub dropout: f64,
    pub train: TrainConfig,
    pub laea: LaeaMode,
    pub laea_window_s: f64,
    pub prev_source: PrevSource,
    pub strategy: Strategy,
    pub plan: PlanConfig,
    pub text_dim: usize,
    pub policy: GatingPolicy,
    pub profile: LatencyProfile,
    pub shadow_all_stages: bool,
    pub seed: u64,
    /// Folds trained in parallel. 1 keeps everything on the calling thread.
    pub workers: usize,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            acoustic_hidden: heads::DEFAULT_HIDDEN_3.to_vec(),
            linguistic_hidden: heads::DEFAULT_HIDDEN_3.to_vec(),
            fusion_hidden: heads::DEFAULT_HIDDEN_5.to_vec(),
            fusion_mode: FusionMode::Adaptive,
            gate_hidden: adaptation::DEFAULT_GATE_HIDDEN,
            dropout: 0.1,
            train: TrainConfig::default(),
            laea: LaeaMode::Adaptive,
            laea_window_s: adaptation::DEFAULT_WINDOW_S,
            prev_source: PrevSource::Adapted,
            strategy: Strategy::Contextual,
            plan: PlanConfig::default(),
            text_dim: heads::DEFAULT_TEXT_DIM,
            policy: GatingPolicy::default(),
            profile: LatencyProfile::default(),
            shadow_all_stages: true,
            seed: 0,
            workers: 1,
        }
    }
}

impl HarnessConfig {
    /// Small layers and a faster optimizer for CPU-sized synthetic corpora.
    pub fn desk() -> Self {
        Self {
            acoustic_hidden: vec![64, 32],
            linguistic_hidden: vec![64, 32],
            fusion_hidden: vec![128, 64, 32, 16],
            gate_hidden: 32,
            dropout: 0.0,
            train: TrainConfig {
                learning_rate: 1e-3,
                batch_size: 32,
                patience: 8,
                max_epochs: 60,
                ..TrainConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.policy.validate()?;
        self.profile.validate()?;
        if self.workers == 0 || self.text_dim == 0 || self.gate_hidden == 0 {
            return Err(Error::InvalidParameter("workers, text_dim and gate_hidden must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidParameter("dropout must be in [0,1)".into()));
        }
        if let LaeaMode::Static { alpha } = self.laea {
            if !(0.0..=1.0).contains(&alpha) {
                return Err(Error::InvalidParameter(format!("static alpha {alpha} outside [0,1]")));
            }
        }
        Ok(())
    }

    fn laea_for(&self, models: &CascadeModels) -> Laea {
        match (self.laea, &models.alpha_gate) {
            (LaeaMode::Adaptive, Some(g)) => Laea::Adaptive(g.clone()),
            (LaeaMode::Static { alpha }, _) => Laea::Static(alpha),
            _ => Laea::Off,
        }
    }

    /// Builds a cascade over trained models with this configuration's knobs.
    pub fn cascade<'a>(
        &self,
        models: &'a CascadeModels,
        encoder: &'a dyn AcousticEncoder,
        transcriber: &'a dyn Transcriber,
    ) -> Cascade<'a> {
        let mut c = Cascade::new(models, encoder, transcriber);
        c.policy = self.policy.clone();
        c.laea = self.laea_for(models);
        c.laea_window_s = self.laea_window_s;
        c.prev_source = self.prev_source;
        c.strategy = self.strategy;
        c.plan = self.plan;
        c.profile = self.profile;
        c.shadow_all_stages = self.shadow_all_stages;
        c
    }
}

/// Model inputs for one utterance, computed once per corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceFeatures {
    pub acoustic: Vec<f64>,
    pub linguistic: Vec<f64>,
    pub label: Class,
    pub t_start: f64,
    pub t_end: f64,
}

/// Pooled acoustic embeddings and encoded context-aware transcripts for every
/// utterance, in session order.
pub fn precompute(
    sessions: &[Session],
    encoder: &dyn AcousticEncoder,
    transcriber: &dyn Transcriber,
    cfg: &HarnessConfig,
) -> Result<HashMap<String, Vec<UtteranceFeatures>>> {
    let text = TextEncoder { dim: cfg.text_dim };
    let mut out = HashMap::new();
    for s in sessions {
        let segs = s.segments();
        let mut feats = Vec::with_capacity(segs.len());
        for (i, (seg, r)) in segs.iter().zip(&s.records).enumerate() {
            let pooled = adaptation::mean_pool(&encoder.frames(seg, None)?)?;
            let plan = context::plan_window(&segs[..=i], seg, cfg.strategy, cfg.plan)?;
            let layout = context::layout(&plan);
            let t = transcriber.transcribe(&plan, &layout, None)?;
            let cropped = context::crop_target_text(&t.words, &layout);
            feats.push(UtteranceFeatures {
                acoustic: pooled,
                linguistic: text.encode(&cropped),
                label: r.label,
                t_start: r.t_start,
                t_end: r.t_end,
            });
        }
        out.insert(s.session_id.clone(), feats);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingReport {
    pub acoustic: TrainHistory,
    pub linguistic: TrainHistory,
    pub fusion: TrainHistory,
}

/// One acoustic sample per utterance, linked to its predecessor when the gap
/// is within the window.
fn laea_samples(sessions: &[&[UtteranceFeatures]], window_s: f64) -> Vec<(LaeaSample, usize)> {
    let mut data = Vec::new();
    for feats in sessions {
        for (i, f) in feats.iter().enumerate() {
            let linked = i > 0 && f.t_start - feats[i - 1].t_end <= window_s + 1e-9;
            data.push((
                LaeaSample {
                    curr: f.acoustic.clone(),
                    prev: linked.then(|| feats[i - 1].acoustic.clone()),
                    prev_index: linked.then(|| data.len() - 1),
                },
                f.label.index(),
            ));
        }
    }
    data
}

fn static_chain(sessions: &[&[UtteranceFeatures]], alpha: f64, window_s: f64, source: PrevSource) -> Result<Vec<Vec<f64>>> {
    let laea = Laea::Static(alpha);
    let mut out = Vec::new();
    for feats in sessions {
        let mut state = adaptation::AdaptationState::default();
        for f in *feats {
            let e = adaptation::Embedding::new(f.acoustic.clone(), adaptation::EmbeddingSource::Acoustic, f.t_start, f.t_end);
            out.push(state.step(&laea, &e, window_s, source)?.0.values);
        }
    }
    Ok(out)
}

/// Trains all stages on the given sessions.
pub fn train_models(sessions: &[&[UtteranceFeatures]], cfg: &HarnessConfig, seed: u64) -> Result<(CascadeModels, TrainingReport)> {
    cfg.validate()?;
    let first = sessions.iter().find_map(|s| s.first()).ok_or(Error::Empty("training sessions"))?;
    let d_a = first.acoustic.len();
    let d_l = first.linguistic.len();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, 0xAC]));
    let train_cfg = |salt: u64| TrainConfig { seed: derive_seed(&[seed, salt]), ..cfg.train };

    let (alpha_gate, acoustic_head, adapted, h_a) = match cfg.laea {
        LaeaMode::Adaptive => {
            let mut data = laea_samples(sessions, cfg.laea_window_s);
            let model = AcousticModel {
                gate: AlphaGateNet::new(d_a, cfg.gate_hidden, &mut rng),
                head: FeedForwardHead::new(d_a, &cfg.acoustic_hidden, cfg.dropout, &mut rng),
            };
            let chain = cfg.prev_source == PrevSource::Adapted;
            let mut refresh = |m: &AcousticModel, d: &mut [(LaeaSample, usize)]| m.refresh_chain(d);
            let (m, h) = heads::fit(model, data.clone(), &train_cfg(1), chain.then_some(&mut refresh as &mut heads::Refresh<'_, AcousticModel>))?;
            if chain {
                m.refresh_chain(&mut data);
            }
            let adapted: Vec<Vec<f64>> = data.iter().map(|(s, _)| m.adapted(s).0).collect();
            (Some(m.gate), m.head, adapted, h)
        }
        LaeaMode::Static { alpha } => {
            let adapted = static_chain(sessions, alpha, cfg.laea_window_s, cfg.prev_source)?;
            let labels = sessions.iter().flat_map(|s| s.iter().map(|f| f.label.index()));
            let data: Vec<(Vec<f64>, usize)> = adapted.iter().cloned().zip(labels).collect();
            let head = FeedForwardHead::new(d_a, &cfg.acoustic_hidden, cfg.dropout, &mut rng);
            let (head, h) = heads::fit(head, data, &train_cfg(1), None)?;
            (None, head, adapted, h)
        }
        LaeaMode::Off => {
            let data: Vec<(Vec<f64>, usize)> =
                sessions.iter().flat_map(|s| s.iter().map(|f| (f.acoustic.clone(), f.label.index()))).collect();
            let adapted = data.iter().map(|d| d.0.clone()).collect();
            let head = FeedForwardHead::new(d_a, &cfg.acoustic_hidden, cfg.dropout, &mut rng);
            let (head, h) = heads::fit(head, data, &train_cfg(1), None)?;
            (None, head, adapted, h)
        }
    };

    let ling: Vec<(Vec<f64>, usize)> =
        sessions.iter().flat_map(|s| s.iter().map(|f| (f.linguistic.clone(), f.label.index()))).collect();
    let head = FeedForwardHead::new(d_l, &cfg.linguistic_hidden, cfg.dropout, &mut rng);
    let (linguistic_head, h_l) = heads::fit(head, ling.clone(), &train_cfg(2), None)?;

    let fused: Vec<((Vec<f64>, Vec<f64>), usize)> =
        adapted.into_iter().zip(ling).map(|(a, (l, y))| ((a, l), y)).collect();
    let mut gate = FusionGate::new(d_a, d_l, &cfg.fusion_hidden, cfg.dropout, &mut rng);
    gate.mode = cfg.fusion_mode;
    let (fusion, h_f) = heads::fit(gate, fused, &train_cfg(3), None)?;

    Ok((
        CascadeModels { alpha_gate, acoustic_head, linguistic_head, fusion },
        TrainingReport { acoustic: h_a, linguistic: h_l, fusion: h_f },
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct FoldResult {
    pub participant: String,
    pub utterances: usize,
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
    pub ratios: ExitRatios,
    pub mean_latency_ms: f64,
    pub best_epochs: [usize; 3],
}

#[derive(Debug, Clone, Serialize)]
pub struct LosoReport {
    pub folds: Vec<FoldResult>,
    pub pooled_confusion: ConfusionMatrix,
    pub pooled: Metrics,
    /// Unweighted mean of per-fold macro-F1.
    pub fold_mean_macro_f1: f64,
    pub ratios: ExitRatios,
    pub mean_latency_ms: f64,
    #[serde(skip)]
    pub traces: Vec<StageTrace>,
}

fn run_fold(
    index: usize,
    held_out: &str,
    sessions: &[Session],
    features: &HashMap<String, Vec<UtteranceFeatures>>,
    encoder: &dyn AcousticEncoder,
    transcriber: &dyn Transcriber,
    cfg: &HarnessConfig,
) -> Result<(FoldResult, Vec<StageTrace>)> {
    let train: Vec<&[UtteranceFeatures]> = sessions
        .iter()
        .filter(|s| s.participant_id != held_out)
        .map(|s| features[&s.session_id].as_slice())
        .collect();
    let (models, report) = train_models(&train, cfg, derive_seed(&[cfg.seed, index as u64]))?;
    let cascade = cfg.cascade(&models, encoder, transcriber);
    let mut traces = Vec::new();
    for s in sessions.iter().filter(|s| s.participant_id == held_out) {
        traces.extend(cascade.run_records(&s.records, None)?);
    }
    let confusion = cascade::confusion(&traces);
    let result = FoldResult {
        participant: held_out.to_string(),
        utterances: traces.len(),
        metrics: confusion.metrics(),
        confusion,
        ratios: cascade::ratios_from_traces(&traces)?,
        mean_latency_ms: mean_latency(&traces),
        best_epochs: [report.acoustic.best_epoch, report.linguistic.best_epoch, report.fusion.best_epoch],
    };
    log::info!("fold {index} ({held_out}): macro-F1 {:.4} over {} utterances", result.metrics.macro_f1, result.utterances);
    Ok((result, traces))
}

fn mean_latency(traces: &[StageTrace]) -> f64 {
    traces.iter().map(|t| t.latency_ms).sum::<f64>() / traces.len().max(1) as f64
}

/// Leave-one-participant-out: one fold per participant, trained on the rest
/// and evaluated through the full cascade on the held-out sessions.
pub fn loso(
    manifest: &Manifest,
    encoder: &(dyn AcousticEncoder + Sync),
    transcriber: &(dyn Transcriber + Sync),
    cfg: &HarnessConfig,
) -> Result<LosoReport> {
    cfg.validate()?;
    let sessions = manifest.sessions();
    let participants = manifest.participants();
    let plan = eval::loso_folds(participants.iter().map(String::as_str));
    if plan.len() < 2 {
        return Err(Error::InvalidParameter("LOSO needs at least two participants".into()));
    }
    let features = precompute(&sessions, encoder, transcriber, cfg)?;
    let job = |(i, fold): (usize, &eval::Fold)| run_fold(i, &fold.held_out, &sessions, &features, encoder, transcriber, cfg);
    let results: Vec<(FoldResult, Vec<StageTrace>)> = if cfg.workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        pool.install(|| plan.folds.par_iter().enumerate().map(job).collect::<Result<_>>())?
    } else {
        plan.folds.iter().enumerate().map(job).collect::<Result<_>>()?
    };

    let mut pooled_confusion = ConfusionMatrix::default();
    let mut folds = Vec::with_capacity(results.len());
    let mut traces = Vec::new();
    for (f, t) in results {
        pooled_confusion.merge(&f.confusion);
        folds.push(f);
        traces.extend(t);
    }
    let fold_mean_macro_f1 = folds.iter().map(|f| f.metrics.macro_f1).sum::<f64>() / folds.len() as f64;
    Ok(LosoReport {
        pooled: pooled_confusion.metrics(),
        pooled_confusion,
        fold_mean_macro_f1,
        ratios: cascade::ratios_from_traces(&traces)?,
        mean_latency_ms: mean_latency(&traces),
        folds,
        traces,
    })
}

/// `(class, raw, adapted)` triples for every utterance under a trained gate,
/// suitable for [`eval::embedding_distance_report`].
pub fn adaptation_pairs(
    records: &[ManifestRecord],
    encoder: &dyn AcousticEncoder,
    laea: &Laea,
    window_s: f64,
    source: PrevSource,
) -> Result<Vec<(Class, Vec<f64>, Vec<f64>)>> {
    let manifest = Manifest::new(records.to_vec())?;
    let mut out = Vec::with_capacity(records.len());
    for s in manifest.sessions() {
        let mut state = adaptation::AdaptationState::default();
        for r in &s.records {
            let raw = adaptation::mean_pool(&encoder.frames(&r.segment(), None)?)?;
            let e = adaptation::Embedding::new(raw.clone(), adaptation::EmbeddingSource::Acoustic, r.t_start, r.t_end);
            let (adapted, _) = state.step(laea, &e, window_s, source)?;
            out.push((r.label, raw, adapted.values));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade::SyntheticEncoder;
    use crate::context::StubAsr;
    use crate::synth::{self, GeneratorConfig};

    fn small() -> GeneratorConfig {
        GeneratorConfig { participants: 4, n_sessions: 4, utterances_per_session: 30, ..GeneratorConfig::well_separated() }
    }

    fn quick() -> HarnessConfig {
        let mut c = HarnessConfig::desk();
        c.train.max_epochs = 15;
        c
    }

    #[test]
    fn loso_on_separable_data() {
        let corpus = synth::generate(&small()).unwrap();
        let enc = SyntheticEncoder::new(&corpus);
        let asr = StubAsr::from_manifest(&corpus.manifest);
        let report = loso(&corpus.manifest, &enc, &asr, &quick()).unwrap();
        assert_eq!(report.folds.len(), 4);
        assert_eq!(report.traces.len(), corpus.manifest.records.len());
        assert!(report.pooled.macro_f1 > 0.8, "{}", report.pooled.macro_f1);
        let r = report.ratios;
        assert!((r.acoustic + r.linguistic + r.fusion - 1.0).abs() < 1e-12);
        assert!(report.traces.iter().all(StageTrace::is_consistent));
    }

    #[test]
    fn workers_do_not_change_results() {
        let corpus = synth::generate(&GeneratorConfig { participants: 3, n_sessions: 3, utterances_per_session: 12, ..small() }).unwrap();
        let enc = SyntheticEncoder::new(&corpus);
        let asr = StubAsr::from_manifest(&corpus.manifest);
        let mut cfg = quick();
        cfg.train.max_epochs = 3;
        let a = loso(&corpus.manifest, &enc, &asr, &cfg).unwrap();
        cfg.workers = 3;
        let b = loso(&corpus.manifest, &enc, &asr, &cfg).unwrap();
        assert_eq!(a.traces, b.traces);
    }

    #[test]
    fn every_laea_mode_trains() {
        let corpus = synth::generate(&GeneratorConfig { participants: 2, n_sessions: 2, utterances_per_session: 10, ..small() }).unwrap();
        let enc = SyntheticEncoder::new(&corpus);
        let asr = StubAsr::from_manifest(&corpus.manifest);
        for mode in [LaeaMode::Adaptive, LaeaMode::Static { alpha: 0.5 }, LaeaMode::Off] {
            let mut cfg = quick();
            cfg.train.max_epochs = 2;
            cfg.laea = mode;
            let sessions = corpus.manifest.sessions();
            let feats = precompute(&sessions, &enc, &asr, &cfg).unwrap();
            let slices: Vec<&[UtteranceFeatures]> = sessions.iter().map(|s| feats[&s.session_id].as_slice()).collect();
            let (models, _) = train_models(&slices, &cfg, 1).unwrap();
            assert_eq!(models.alpha_gate.is_some(), mode == LaeaMode::Adaptive);
        }
    }

    #[test]
    fn laea_samples_link_within_window() {
        let f = |a: f64, b: f64| UtteranceFeatures { acoustic: vec![a], linguistic: vec![], label: Class::Others, t_start: a, t_end: b };
        let s = vec![f(0.0, 1.0), f(5.5, 6.0), f(10.0, 11.0)];
        let data = laea_samples(&[&s], 4.0);
        assert_eq!(data[0].0.prev_index, None);
        assert_eq!(data[1].0.prev_index, None);
        assert_eq!(data[2].0.prev_index, Some(1));
        assert_eq!(data[2].0.prev, Some(vec![5.5]));
    }
}
