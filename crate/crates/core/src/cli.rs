//! Command-line front end. Exit codes: 0 success, 1 usage, 2 data, 3 backend.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio;
use crate::backend::{self, Backend, BackendTranscriber, BackendUri, StubBackend};
use crate::cache::UtteranceCache;
use crate::cascade::{self, AcousticEncoder, AudioDirEncoder, CascadeModels, GatingPolicy, StageTrace, SyntheticEncoder};
use crate::context::{self, NoiseModel, NoisyAsr, PlanConfig, Strategy, StubAsr, Transcriber};
use crate::cost::{self, ExitRatios, LatencyProfile};
use crate::error::{Error, Result};
use crate::eval;
use crate::features::{self, AcousticFeatureVector, ContourConfig, F0Config, FeatureDescriptors, TertileBounds};
use crate::fusion::FusionMode;
use crate::harness::{self, HarnessConfig, LaeaMode};
use crate::label::Class;
use crate::manifest::{Manifest, ManifestRecord};
use crate::prompt::{self, PromptContext, Shot, Template, UtteranceBlock};
use crate::segmenter::{self, SegmenterConfig};
use crate::synth::{self, derive_seed, GeneratorConfig, SyntheticCorpus};

#[derive(Debug, Parser)]
#[command(name = "selftalk", version, about = "Self-talk detection cascade tools")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Detect utterances in a WAV file.
    Segment(SegmentArgs),
    /// Replay a manifest through the utterance cache and print evictions.
    CacheSim(CacheSimArgs),
    /// Extract pitch/intensity features and prompt descriptors per utterance.
    Featurize(FeaturizeArgs),
    /// Train cascade models.
    Train(TrainArgs),
    /// Run trained models over a manifest and emit stage traces.
    Pipeline(PipelineArgs),
    /// Leave-one-participant-out evaluation.
    Eval(EvalArgs),
    /// Expected latency with and without early exit.
    Latency(LatencyArgs),
    /// Compare context-window strategies by WER/CER.
    TranscribeEval(TranscribeEvalArgs),
    /// Render LLM prompts, one file per utterance.
    Promptgen(PromptgenArgs),
    /// Generate a calibrated synthetic corpus.
    GenSynth(GenSynthArgs),
    /// Serve the deterministic stub backend over TCP or stdio.
    StubBackend(StubBackendArgs),
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    pub wav: PathBuf,
    #[arg(long)]
    pub session_id: Option<String>,
    #[arg(long, default_value_t = -20.0, allow_negative_numbers = true)]
    pub threshold_db: f64,
    #[arg(long, default_value_t = 300.0)]
    pub min_dur_ms: f64,
    #[arg(long, default_value_t = 800.0)]
    pub merge_gap_ms: f64,
    #[arg(long, default_value_t = 25.0)]
    pub window_ms: f64,
    #[arg(long, default_value_t = 10.0)]
    pub hop_ms: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CacheSimArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = crate::cache::DEFAULT_T_MAX_S)]
    pub t_max_s: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory holding `<session_id>.wav` files.
    #[arg(long)]
    pub audio_dir: PathBuf,
    /// Tertile bounds to apply; fitted on this manifest when absent.
    #[arg(long)]
    pub bounds: Option<PathBuf>,
    #[arg(long)]
    pub save_bounds: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Where utterances and their embeddings come from.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Synthetic corpus directory written by `gen-synth`.
    #[arg(long, conflicts_with = "manifest")]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Directory holding `<session_id>.wav` files; required with `--manifest`.
    #[arg(long)]
    pub audio_dir: Option<PathBuf>,
    /// `stub`, `tcp://host:port` or `exec://command args`.
    #[arg(long, default_value = "stub")]
    pub backend: String,
    #[arg(long, default_value_t = 30.0)]
    pub timeout_s: f64,
    #[arg(long, default_value_t = backend::DEFAULT_STUB_DIM)]
    pub embed_dim: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Harness configuration (TOML); flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long, value_enum)]
    pub fusion: Option<FusionArg>,
    /// `adaptive`, `off`, or a fixed weight such as `0.5`.
    #[arg(long)]
    pub laea: Option<String>,
    #[arg(long)]
    pub strategy: Option<Strategy>,
    #[arg(long)]
    pub policy_file: Option<PathBuf>,
    #[arg(long)]
    pub profile_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FusionArg {
    Adaptive,
    Static,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HeadArg {
    Acoustic,
    Linguistic,
    Fusion,
    Gate,
    All,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value = "all")]
    pub head: HeadArg,
    /// Model directory; files for other heads are left untouched.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub models: PathBuf,
    /// Transcribe through the backend instead of manifest text.
    #[arg(long)]
    pub backend_asr: bool,
    /// Compute every stage so traces can be re-gated offline.
    #[arg(long)]
    pub shadow: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Also sweep both margin thresholds over this many evenly spaced values.
    #[arg(long)]
    pub sweep: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LatencyArgs {
    #[arg(long)]
    pub profile_file: Option<PathBuf>,
    #[arg(long, conflicts_with = "traces")]
    pub ratios_file: Option<PathBuf>,
    /// Stage traces from `pipeline`; exit ratios are counted from them.
    #[arg(long)]
    pub traces: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct TranscribeEvalArgs {
    #[arg(long, conflicts_with = "manifest")]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Score the noiseless stub transcripts.
    #[arg(long)]
    pub clean: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 30.0)]
    pub budget_s: f64,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct PromptgenArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output of `featurize`.
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, default_value = "text-zero")]
    pub template: Template,
    /// Shots per class for few-shot templates.
    #[arg(long, default_value_t = 3)]
    pub shots: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    /// Generator configuration (JSON); flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_sessions: Option<usize>,
    #[arg(long)]
    pub participants: Option<usize>,
    #[arg(long)]
    pub utterances_per_session: Option<usize>,
    /// Large class separation and no shared vocabulary.
    #[arg(long)]
    pub well_separated: bool,
    /// Also write `<session_id>.wav` tone-burst sessions.
    #[arg(long)]
    pub waveforms: bool,
    #[arg(long, default_value_t = audio::DEFAULT_SAMPLE_RATE)]
    pub sample_rate: u32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StubBackendArgs {
    /// Listen address such as `127.0.0.1:9155`; stdio when absent.
    #[arg(long)]
    pub tcp: Option<String>,
    /// Manifest supplying stub transcripts.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value_t = backend::DEFAULT_STUB_DIM)]
    pub dim: usize,
}

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;

pub fn exit_code(e: &Error) -> i32 {
    if e.is_backend() {
        EXIT_BACKEND
    } else {
        EXIT_DATA
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Segment(a) => segment(a),
        Command::CacheSim(a) => cache_sim(a),
        Command::Featurize(a) => featurize(a),
        Command::Train(a) => train(a),
        Command::Pipeline(a) => pipeline(a),
        Command::Eval(a) => evaluate(a),
        Command::Latency(a) => latency(a),
        Command::TranscribeEval(a) => transcribe_eval(a),
        Command::Promptgen(a) => promptgen(a),
        Command::GenSynth(a) => gen_synth(a),
        Command::StubBackend(a) => stub_backend(a),
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(fs::File::create(p)?)),
        None => Box::new(io::BufWriter::new(io::stdout().lock())),
    })
}

fn write_jsonl<T: Serialize>(w: &mut dyn Write, items: impl IntoIterator<Item = T>) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut *w, &item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = fs::File::open(path).map_err(|e| Error::Unreadable { path: path.to_path_buf(), source: e })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Manifest(format!("{}:{}: {e}", path.display(), i + 1)))?);
    }
    Ok(out)
}

fn segment(a: SegmentArgs) -> Result<()> {
    let clip = audio::load_wav(&a.wav)?;
    let session = a
        .session_id
        .unwrap_or_else(|| a.wav.file_stem().map_or("session".into(), |s| s.to_string_lossy().into_owned()));
    let cfg = SegmenterConfig {
        threshold_db: a.threshold_db,
        min_dur_s: a.min_dur_ms / 1000.0,
        merge_gap_s: a.merge_gap_ms / 1000.0,
        window_s: a.window_ms / 1000.0,
        hop_s: a.hop_ms / 1000.0,
    };
    let segs = segmenter::segment_session(&clip, &session, &cfg)?;
    #[derive(Serialize)]
    struct Row<'a> {
        session_id: &'a str,
        seq_no: u32,
        t_start: f64,
        t_end: f64,
    }
    let rows = segs.iter().map(|s| Row { session_id: &s.session_id, seq_no: s.seq_no, t_start: s.t_start, t_end: s.t_end });
    write_jsonl(&mut *output(a.out.as_deref())?, rows)
}

fn cache_sim(a: CacheSimArgs) -> Result<()> {
    if !(a.t_max_s > 0.0) {
        return Err(Error::InvalidParameter("--t-max-s must be positive".into()));
    }
    let manifest = Manifest::load(&a.manifest)?;
    #[derive(Serialize)]
    struct Row {
        session_id: String,
        seq_no: u32,
        evicted: Vec<u32>,
        cached: Vec<u32>,
        total_s: f64,
        oversize: bool,
    }
    let mut rows = Vec::new();
    for s in manifest.sessions() {
        let mut cache = UtteranceCache::new(a.t_max_s);
        for seg in s.segments() {
            let seq_no = seg.seq_no;
            let out = cache.push(seg)?;
            rows.push(Row {
                session_id: s.session_id.clone(),
                seq_no,
                evicted: out.evicted.iter().map(|e| e.seq_no).collect(),
                cached: cache.iter().map(|e| e.seq_no).collect(),
                total_s: cache.total_duration(),
                oversize: out.oversize,
            });
        }
    }
    write_jsonl(&mut *output(a.out.as_deref())?, rows)
}

/// One line of `featurize` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub session_id: String,
    pub seq_no: u32,
    pub features: AcousticFeatureVector,
    pub descriptors: FeatureDescriptors,
}

fn featurize(a: FeaturizeArgs) -> Result<()> {
    let manifest = Manifest::load(&a.manifest)?;
    let f0 = F0Config::default();
    let sessions = manifest.sessions();
    let mut raw = Vec::new();
    for s in &sessions {
        let clip = audio::load_wav(a.audio_dir.join(format!("{}.wav", s.session_id)))?;
        for r in &s.records {
            raw.push((r, features::extract_features(&clip.slice(r.t_start, r.t_end), &f0)?));
        }
    }
    let bounds = match &a.bounds {
        Some(p) => TertileBounds::load(p)?,
        None => features::fit_tertiles(&raw.iter().map(|(_, f)| f.clone()).collect::<Vec<_>>())?,
    };
    if let Some(p) = &a.save_bounds {
        bounds.save(p)?;
    }
    let contour = ContourConfig::default();
    let rows = raw.into_iter().map(|(r, mut f)| {
        let descriptors = features::describe(&f, &bounds, &contour);
        f.f0_track.clear();
        FeatureRecord { session_id: r.session_id.clone(), seq_no: r.seq_no, features: f, descriptors }
    });
    write_jsonl(&mut *output(Some(&a.out))?, rows)
}

/// Loaded data source plus its backend.
pub struct DataSource {
    pub manifest: Manifest,
    pub corpus: Option<SyntheticCorpus>,
    pub audio_dir: Option<PathBuf>,
    pub backend: Box<dyn Backend>,
}

impl DataArgs {
    pub fn load(&self) -> Result<DataSource> {
        let (manifest, corpus) = match (&self.corpus, &self.manifest) {
            (Some(dir), _) => {
                let c = SyntheticCorpus::load(dir)?;
                (c.manifest.clone(), Some(c))
            }
            (None, Some(m)) => (Manifest::load(m)?, None),
            (None, None) => return Err(Error::InvalidParameter("one of --corpus or --manifest is required".into())),
        };
        if corpus.is_none() && self.audio_dir.is_none() {
            return Err(Error::InvalidParameter("--manifest needs --audio-dir".into()));
        }
        if !(self.timeout_s > 0.0) {
            return Err(Error::InvalidParameter("--timeout-s must be positive".into()));
        }
        let uri: BackendUri = self.backend.parse()?;
        let stub = StubBackend::new(self.embed_dim, StubAsr::from_manifest(&manifest));
        let backend = backend::connect(&uri, stub, Duration::from_secs_f64(self.timeout_s), Some(self.embed_dim));
        let audio_dir = self.audio_dir.clone().or_else(|| self.corpus.clone());
        Ok(DataSource { manifest, corpus, audio_dir, backend })
    }
}

impl DataSource {
    /// Synthetic embeddings for a synthetic corpus unless audio was given,
    /// otherwise backend embeddings of the session WAVs.
    pub fn encoder(&self, prefer_audio: bool) -> Box<dyn AcousticEncoder + '_> {
        match (&self.corpus, prefer_audio) {
            (Some(c), false) => Box::new(SyntheticEncoder::new(c)),
            _ => Box::new(AudioDirEncoder::new(
                self.backend.as_ref(),
                self.audio_dir.clone().unwrap_or_default(),
            )),
        }
    }
}

impl ModelArgs {
    pub fn config(&self) -> Result<HarnessConfig> {
        let mut c = match &self.config {
            Some(p) => cost::load_toml::<HarnessConfig>(p)?,
            None => HarnessConfig::desk(),
        };
        if let Some(s) = self.seed {
            c.seed = s;
            c.train.seed = s;
        }
        if let Some(w) = self.workers {
            c.workers = w;
        }
        if let Some(lr) = self.lr {
            c.train.learning_rate = lr;
        }
        if let Some(p) = self.patience {
            c.train.patience = p;
        }
        if let Some(m) = self.max_epochs {
            c.train.max_epochs = m;
        }
        if let Some(f) = self.fusion {
            c.fusion_mode = match f {
                FusionArg::Adaptive => FusionMode::Adaptive,
                FusionArg::Static => FusionMode::Static,
            };
        }
        if let Some(l) = &self.laea {
            c.laea = match l.as_str() {
                "adaptive" => LaeaMode::Adaptive,
                "off" => LaeaMode::Off,
                other => LaeaMode::Static {
                    alpha: other
                        .parse()
                        .map_err(|_| Error::InvalidParameter(format!("--laea expects adaptive, off or a weight, got '{other}'")))?,
                },
            };
        }
        if let Some(s) = self.strategy {
            c.strategy = s;
        }
        if let Some(p) = &self.policy_file {
            c.policy = GatingPolicy::load(p)?;
        }
        if let Some(p) = &self.profile_file {
            c.profile = LatencyProfile::load(p)?;
        }
        c.validate()?;
        Ok(c)
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = a.model.config()?;
    let data = a.data.load()?;
    let encoder = data.encoder(a.data.corpus.is_none());
    let asr = StubAsr::from_manifest(&data.manifest);
    let sessions = data.manifest.sessions();
    let feats = harness::precompute(&sessions, encoder.as_ref(), &asr, &cfg)?;
    let slices: Vec<_> = sessions.iter().map(|s| feats[&s.session_id].as_slice()).collect();
    let (models, report) = harness::train_models(&slices, &cfg, cfg.seed)?;
    fs::create_dir_all(&a.out)?;
    let save_gate = || -> Result<()> {
        match &models.alpha_gate {
            Some(g) => g.save(a.out.join("alpha_gate.mmhd")),
            None => Ok(()),
        }
    };
    match a.head {
        HeadArg::All => models.save(&a.out)?,
        HeadArg::Gate => save_gate()?,
        HeadArg::Acoustic => {
            save_gate()?;
            models.acoustic_head.save(a.out.join("acoustic_head.mmhd"))?;
        }
        HeadArg::Linguistic => models.linguistic_head.save(a.out.join("linguistic_head.mmhd"))?,
        HeadArg::Fusion => models.fusion.save(a.out.join("fusion.mmhd"))?,
    }
    fs::write(a.out.join("training.json"), serde_json::to_string_pretty(&report)?)?;
    fs::write(a.out.join("harness.toml"), toml::to_string(&cfg).map_err(|e| Error::InvalidParameter(e.to_string()))?)?;
    println!(
        "trained on {} utterances; best epochs acoustic={} linguistic={} fusion={}",
        slices.iter().map(|s| s.len()).sum::<usize>(),
        report.acoustic.best_epoch,
        report.linguistic.best_epoch,
        report.fusion.best_epoch
    );
    Ok(())
}

fn pipeline(a: PipelineArgs) -> Result<()> {
    let mut cfg = a.model.config()?;
    cfg.shadow_all_stages = a.shadow;
    let data = a.data.load()?;
    let mut models = CascadeModels::load(&a.models)?;
    models.fusion.mode = cfg.fusion_mode;
    let use_audio = data.corpus.is_none() || a.backend_asr;
    let encoder = data.encoder(data.corpus.is_none());
    let stub_asr = StubAsr::from_manifest(&data.manifest);
    let backend_asr = BackendTranscriber { backend: data.backend.as_ref() };
    let transcriber: &dyn Transcriber = if a.backend_asr { &backend_asr } else { &stub_asr };
    let c = cfg.cascade(&models, encoder.as_ref(), transcriber);
    let mut w = output(a.out.as_deref())?;
    for s in data.manifest.sessions() {
        let clip = match (&data.audio_dir, use_audio) {
            (Some(dir), true) => Some(audio::load_wav(dir.join(format!("{}.wav", s.session_id)))?),
            _ => None,
        };
        let traces = c.run_records(&s.records, clip.as_ref())?;
        write_jsonl(&mut *w, &traces)?;
    }
    Ok(())
}

fn fmt_ratios(r: &ExitRatios) -> String {
    format!("{:.6},{:.6},{:.6}", r.acoustic, r.linguistic, r.fusion)
}

fn evaluate(a: EvalArgs) -> Result<()> {
    let cfg = a.model.config()?;
    let data = a.data.load()?;
    let encoder = data.encoder(a.data.corpus.is_none());
    let asr = StubAsr::from_manifest(&data.manifest);
    let report = harness::loso(&data.manifest, encoder.as_ref(), &asr, &cfg)?;
    fs::create_dir_all(&a.out)?;

    let mut folds = String::from("participant,utterances,macro_f1,accuracy,acoustic_ratio,linguistic_ratio,fusion_ratio,mean_latency_ms\n");
    for f in &report.folds {
        let _ = writeln!(
            folds,
            "{},{},{:.6},{:.6},{},{:.3}",
            f.participant,
            f.utterances,
            f.metrics.macro_f1,
            f.metrics.accuracy,
            fmt_ratios(&f.ratios),
            f.mean_latency_ms
        );
    }
    fs::write(a.out.join("folds.csv"), folds)?;

    let mut per_class = String::from("class,precision,recall,f1,support\n");
    for (c, m) in Class::ALL.iter().zip(&report.pooled.per_class) {
        let _ = writeln!(per_class, "{},{:.6},{:.6},{:.6},{}", c, m.precision, m.recall, m.f1, m.support);
    }
    fs::write(a.out.join("per_class.csv"), per_class)?;

    let participant_of: HashMap<&str, &str> =
        data.manifest.records.iter().map(|r| (r.session_id.as_str(), r.participant_id.as_str())).collect();
    let groups = eval::group_confusion(
        report
            .traces
            .iter()
            .filter_map(|t| Some((participant_of[t.session_id.as_str()].to_string(), t.truth?, t.label))),
    );
    let mut per_participant = String::from("participant,negative_f1,positive_f1,others_f1,macro_f1\n");
    for (p, cm) in &groups {
        let m = cm.metrics();
        let _ = writeln!(
            per_participant,
            "{},{:.6},{:.6},{:.6},{:.6}",
            p, m.per_class[0].f1, m.per_class[1].f1, m.per_class[2].f1, m.macro_f1
        );
    }
    fs::write(a.out.join("per_participant.csv"), per_participant)?;

    write_jsonl(&mut *output(Some(&a.out.join("traces.jsonl")))?, &report.traces)?;

    if let Some(n) = a.sweep {
        if n < 2 {
            return Err(Error::InvalidParameter("--sweep needs at least two grid points".into()));
        }
        let grid: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let points = cascade::sweep_thresholds(&report.traces, &cfg.policy, &grid, &grid, &cfg.profile)?;
        let mut csv = String::from("acoustic_margin_min,linguistic_margin_min,macro_f1,mean_latency_ms,acoustic_ratio,linguistic_ratio,fusion_ratio,pareto\n");
        for p in &points {
            let _ = writeln!(
                csv,
                "{:.4},{:.4},{:.6},{:.3},{},{}",
                p.acoustic_margin_min,
                p.linguistic_margin_min,
                p.macro_f1,
                p.mean_latency_ms,
                fmt_ratios(&p.ratios),
                p.pareto
            );
        }
        fs::write(a.out.join("frontier.csv"), csv)?;
    }

    #[derive(Serialize)]
    struct Summary<'a> {
        participants: usize,
        utterances: usize,
        pooled: &'a eval::Metrics,
        pooled_confusion: &'a eval::ConfusionMatrix,
        fold_mean_macro_f1: f64,
        ratios: &'a ExitRatios,
        mean_latency_ms: f64,
        latency: cost::LatencyReport,
    }
    let summary = Summary {
        participants: report.folds.len(),
        utterances: report.traces.len(),
        pooled: &report.pooled,
        pooled_confusion: &report.pooled_confusion,
        fold_mean_macro_f1: report.fold_mean_macro_f1,
        ratios: &report.ratios,
        mean_latency_ms: report.mean_latency_ms,
        latency: cost::report(&cfg.profile, &report.ratios),
    };
    fs::write(a.out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    println!(
        "pooled macro-F1 {:.4} (fold mean {:.4}) over {} utterances; exits {}",
        report.pooled.macro_f1,
        report.fold_mean_macro_f1,
        report.traces.len(),
        fmt_ratios(&report.ratios)
    );
    Ok(())
}

fn latency(a: LatencyArgs) -> Result<()> {
    let profile = match &a.profile_file {
        Some(p) => LatencyProfile::load(p)?,
        None => LatencyProfile::default(),
    };
    let ratios = match (&a.ratios_file, &a.traces) {
        (Some(p), _) => ExitRatios::load(p)?,
        (None, Some(t)) => cascade::ratios_from_traces(&read_jsonl::<StageTrace>(t)?)?,
        (None, None) => ExitRatios::default(),
    };
    let r = cost::report(&profile, &ratios);
    if a.json {
        println!("{}", serde_json::to_string(&r)?);
    } else {
        println!("full: {:.1} ms", r.full_ms);
        println!("early-exit: {:.1} ms", r.early_exit_ms);
        println!("reduction: {:.1}%", r.reduction * 100.0);
    }
    Ok(())
}

fn load_manifest(corpus: &Option<PathBuf>, manifest: &Option<PathBuf>) -> Result<Manifest> {
    match (corpus, manifest) {
        (Some(dir), _) => Manifest::load(dir.join(synth::MANIFEST_FILE)),
        (None, Some(m)) => Manifest::load(m),
        (None, None) => Err(Error::InvalidParameter("one of --corpus or --manifest is required".into())),
    }
}

fn transcribe_eval(a: TranscribeEvalArgs) -> Result<()> {
    let manifest = load_manifest(&a.corpus, &a.manifest)?;
    let stub = StubAsr::from_manifest(&manifest);
    let plan = PlanConfig { budget_s: a.budget_s, ..PlanConfig::default() };
    let scores = if a.clean {
        context::evaluate_strategies(&manifest, &stub, &Strategy::ALL, plan)?
    } else {
        let noisy = NoisyAsr::new(stub, NoiseModel::default(), a.seed);
        context::evaluate_strategies(&manifest, &noisy, &Strategy::ALL, plan)?
    };
    if a.json {
        write_jsonl(&mut *output(None)?, &scores)?;
    } else {
        println!("{:<14} {:>8} {:>8} {:>10} {:>14}", "strategy", "wer", "cer", "utterances", "mean_context_s");
        for s in &scores {
            println!("{:<14} {:>8.4} {:>8.4} {:>10} {:>14.3}", s.strategy, s.wer, s.cer, s.utterances, s.mean_context_s);
        }
    }
    Ok(())
}

fn promptgen(a: PromptgenArgs) -> Result<()> {
    let manifest = Manifest::load(&a.manifest)?;
    let feats: HashMap<(String, u32), FeatureRecord> = read_jsonl::<FeatureRecord>(&a.features)?
        .into_iter()
        .map(|f| ((f.session_id.clone(), f.seq_no), f))
        .collect();
    let sessions = manifest.sessions();
    let block = |records: &[ManifestRecord], i: usize| UtteranceBlock {
        history: records[..i].iter().map(|r| r.text.clone()).collect(),
        text: records[i].text.clone(),
        descriptors: feats.get(&(records[i].session_id.clone(), records[i].seq_no)).map(|f| f.descriptors),
        duration_s: records[i].duration(),
    };
    let participants = manifest.participants();
    let mut shots_for: HashMap<&str, Vec<Shot>> = HashMap::new();
    if a.template.is_few_shot() {
        for (pi, p) in participants.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[a.seed, pi as u64]));
            let mut shots = Vec::new();
            for class in Class::ALL {
                let mut pool: Vec<(usize, usize)> = sessions
                    .iter()
                    .enumerate()
                    .filter(|(_, s)| &s.participant_id != p)
                    .flat_map(|(si, s)| s.records.iter().enumerate().filter(|(_, r)| r.label == class).map(move |(ri, _)| (si, ri)))
                    .collect();
                pool.shuffle(&mut rng);
                for &(si, ri) in pool.iter().take(a.shots) {
                    shots.push(Shot { block: block(&sessions[si].records, ri), label: class });
                }
            }
            shots_for.insert(p.as_str(), shots);
        }
    }
    fs::create_dir_all(&a.out)?;
    let mut n = 0;
    for s in &sessions {
        for i in 0..s.records.len() {
            let ctx = PromptContext {
                template: a.template,
                current: block(&s.records, i),
                shots: shots_for.get(s.participant_id.as_str()).cloned().unwrap_or_default(),
            };
            let text = prompt::render(&ctx)?;
            fs::write(a.out.join(format!("{}_{:04}.txt", s.session_id, s.records[i].seq_no)), text)?;
            n += 1;
        }
    }
    println!("wrote {n} prompts to {}", a.out.display());
    Ok(())
}

fn gen_synth(a: GenSynthArgs) -> Result<()> {
    let mut cfg = match (&a.config, a.well_separated) {
        (Some(p), _) => GeneratorConfig::load(p)?,
        (None, true) => GeneratorConfig::well_separated(),
        (None, false) => GeneratorConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.n_sessions {
        cfg.n_sessions = n;
    }
    if let Some(p) = a.participants {
        cfg.participants = p;
    }
    if let Some(u) = a.utterances_per_session {
        cfg.utterances_per_session = u;
    }
    let corpus = synth::generate(&cfg)?;
    corpus.save(&a.out)?;
    if a.waveforms {
        for s in corpus.manifest.sessions() {
            let seed = derive_seed(&[cfg.seed, 0x5741_5645, s.session_id.bytes().fold(0u64, |h, b| h.wrapping_mul(31).wrapping_add(b as u64))]);
            let clip = synth::synthesize_waveform(&s.records, a.sample_rate, seed)?;
            audio::write_wav_pcm16(a.out.join(format!("{}.wav", s.session_id)), &clip)?;
        }
    }
    println!(
        "wrote {} utterances in {} sessions to {}",
        corpus.manifest.records.len(),
        cfg.n_sessions,
        a.out.display()
    );
    Ok(())
}

fn stub_backend(a: StubBackendArgs) -> Result<()> {
    let asr = match &a.manifest {
        Some(m) => StubAsr::from_manifest(&Manifest::load(m)?),
        None => StubAsr::default(),
    };
    let stub = StubBackend::new(a.dim, asr);
    match &a.tcp {
        Some(addr) => {
            let listener = std::net::TcpListener::bind(addr)?;
            eprintln!("stub backend listening on {}", listener.local_addr()?);
            stub.serve_tcp(listener)
        }
        None => stub.serve(io::stdin().lock(), io::stdout().lock()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(main_with_args(["selftalk", "latency", "--bogus"]), EXIT_USAGE);
        assert_eq!(main_with_args(["selftalk"]), EXIT_USAGE);
        assert_eq!(main_with_args(["selftalk", "--help"]), 0);
    }

    #[test]
    fn missing_manifest_exits_two() {
        assert_eq!(main_with_args(["selftalk", "cache-sim", "--manifest", "/nonexistent/m.jsonl"]), EXIT_DATA);
    }

    #[test]
    fn backend_errors_exit_three() {
        assert_eq!(exit_code(&Error::Transport("x".into())), EXIT_BACKEND);
        assert_eq!(exit_code(&Error::Empty("x")), EXIT_DATA);
    }

    #[test]
    fn model_flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.toml");
        let mut base = HarnessConfig::desk();
        base.train.patience = 3;
        fs::write(&p, toml::to_string(&base).unwrap()).unwrap();
        let args = ModelArgs {
            config: Some(p),
            seed: Some(9),
            workers: None,
            lr: Some(0.01),
            patience: None,
            max_epochs: None,
            fusion: Some(FusionArg::Static),
            laea: Some("0.25".into()),
            strategy: None,
            policy_file: None,
            profile_file: None,
        };
        let c = args.config().unwrap();
        assert_eq!(c.train.patience, 3);
        assert_eq!(c.train.learning_rate, 0.01);
        assert_eq!(c.seed, 9);
        assert_eq!(c.fusion_mode, FusionMode::Static);
        assert_eq!(c.laea, LaeaMode::Static { alpha: 0.25 });
    }
}
