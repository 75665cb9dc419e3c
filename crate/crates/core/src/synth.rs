//! Calibrated synthetic sessions: labels, timings, pseudo-embeddings,
//! pseudo-text and optional tone-burst waveforms.
//!
//! Everything derives from one seed. Per-utterance draws use seeds mixed from
//! `(seed, session, seq_no)` so any record can be regenerated in isolation.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Normal, WeightedIndex};
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::label::{Class, NUM_CLASSES};
use crate::manifest::{Manifest, ManifestRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub participants: usize,
    pub n_sessions: usize,
    pub utterances_per_session: usize,
    /// Negative, positive, others.
    pub priors: [f64; NUM_CLASSES],
    pub duration_mean_s: [f64; NUM_CLASSES],
    pub duration_sd_s: [f64; NUM_CLASSES],
    pub min_duration_s: f64,
    pub max_duration_s: f64,
    /// Target probability that an utterance within `continuity_window_s` of
    /// its predecessor shares its class.
    pub p_same: f64,
    pub continuity_window_s: f64,
    pub gap_short_mean_s: f64,
    pub gap_long_mean_s: f64,
    pub gap_short_weight: f64,
    pub min_gap_s: f64,
    pub embedding_dim: usize,
    /// Approximate distance between class means.
    pub separation: f64,
    pub noise_sd: f64,
    pub participant_sd: f64,
    pub frames_per_utterance: usize,
    pub frame_jitter_sd: f64,
    /// Probability that a word comes from the pool shared by all classes.
    pub text_overlap: f64,
    pub words_per_second: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            participants: 25,
            n_sessions: 25,
            utterances_per_session: 40,
            priors: [0.26, 0.16, 0.58],
            duration_mean_s: [2.0, 1.6, 1.4],
            duration_sd_s: [1.8, 1.7, 1.5],
            min_duration_s: 0.3,
            max_duration_s: 20.0,
            p_same: 0.79,
            continuity_window_s: 4.0,
            gap_short_mean_s: 2.0,
            gap_long_mean_s: 20.0,
            gap_short_weight: 0.6,
            min_gap_s: 0.0,
            embedding_dim: 32,
            separation: 3.0,
            noise_sd: 1.0,
            participant_sd: 0.3,
            frames_per_utterance: 4,
            frame_jitter_sd: 0.5,
            text_overlap: 0.35,
            words_per_second: 1.5,
        }
    }
}

impl GeneratorConfig {
    /// A corpus on which every stage can separate the classes almost perfectly.
    pub fn well_separated() -> Self {
        Self {
            separation: 12.0,
            text_overlap: 0.0,
            participant_sd: 0.1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.priors.iter().any(|p| !(*p >= 0.0)) || (self.priors.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("priors must be nonnegative and sum to 1");
        }
        if !(0.0..=1.0).contains(&self.p_same) || !(0.0..=1.0).contains(&self.text_overlap) {
            return bad("p_same and text_overlap must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gap_short_weight) {
            return bad("gap_short_weight must lie in [0, 1]");
        }
        if self.participants == 0 || self.embedding_dim == 0 || self.frames_per_utterance == 0 {
            return bad("participants, embedding_dim and frames_per_utterance must be positive");
        }
        if !(self.min_duration_s > 0.0 && self.min_duration_s <= self.max_duration_s) {
            return bad("need 0 < min_duration_s <= max_duration_s");
        }
        if self.duration_mean_s.iter().chain(&self.duration_sd_s).any(|v| !(*v > 0.0)) {
            return bad("duration moments must be positive");
        }
        if !(self.gap_short_mean_s > 0.0 && self.gap_long_mean_s > 0.0 && self.min_gap_s >= 0.0) {
            return bad("gap means must be positive");
        }
        if !(self.noise_sd >= 0.0 && self.participant_sd >= 0.0 && self.frame_jitter_sd >= 0.0 && self.separation >= 0.0) {
            return bad("noise parameters must be nonnegative");
        }
        Ok(())
    }

    /// Keep-previous probability that, mixed with a fresh prior draw, yields
    /// an overall same-class rate of `p_same` without disturbing the priors.
    pub fn keep_probability(&self) -> f64 {
        let collide: f64 = self.priors.iter().map(|p| p * p).sum();
        if collide >= 1.0 {
            return 1.0;
        }
        ((self.p_same - collide) / (1.0 - collide)).clamp(0.0, 1.0)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Unreadable { path: path.to_path_buf(), source: e })?;
        let c: Self = serde_json::from_str(&text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// Moment-matched log-normal `(mu, sigma)` for a given mean and SD.
pub fn lognormal_params(mean: f64, sd: f64) -> (f64, f64) {
    let s2 = (1.0 + (sd * sd) / (mean * mean)).ln();
    (mean.ln() - s2 / 2.0, s2.sqrt())
}

/// SplitMix64 finalizer folded over `parts`.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        let mut z = h ^ p.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

fn str_key(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

const TAG_LABELS: u64 = 1;
const TAG_MEANS: u64 = 2;
const TAG_PARTICIPANT: u64 = 3;
const TAG_UTTERANCE: u64 = 4;
const TAG_TEXT: u64 = 5;
const TAG_WAVE: u64 = 6;

pub const NEGATIVE_WORDS: &[&str] = &[
    "why", "stupid", "again", "terrible", "awful", "useless", "idiot", "worst", "miss", "cannot", "hopeless",
    "ugh", "damn", "pathetic", "wrong", "slow", "late", "bad", "never", "hate", "mess", "ridiculous",
    "embarrassing", "careless", "weak",
];
pub const POSITIVE_WORDS: &[&str] = &[
    "come", "yes", "nice", "good", "great", "focus", "confident", "relax", "breathe", "believe", "strong",
    "perfect", "beautiful", "steady", "calm", "fight", "courage", "better", "easy", "smooth", "brave",
    "proud", "patience", "trust", "well",
];
pub const OTHER_WORDS: &[&str] = &[
    "fifteen", "thirty", "forty", "love", "deuce", "advantage", "out", "fault", "net", "serve", "score",
    "ball", "sorry", "thanks", "ready", "side", "water", "racket", "game", "set", "point", "change", "wind",
    "left", "right",
];
pub const SHARED_WORDS: &[&str] = &[
    "ah", "oh", "okay", "the", "this", "it", "hmm", "so", "just", "one", "that", "now", "huh", "eh", "um",
];

fn class_pool(c: Class) -> &'static [&'static str] {
    match c {
        Class::NegativeSelfTalk => NEGATIVE_WORDS,
        Class::PositiveSelfTalk => POSITIVE_WORDS,
        Class::Others => OTHER_WORDS,
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, dim: usize, sd: f64) -> Vec<f64> {
    if sd == 0.0 {
        return vec![0.0; dim];
    }
    let n = Normal::new(0.0, sd).expect("finite sd");
    (0..dim).map(|_| n.sample(rng)).collect()
}

/// A generated manifest plus the latent structure behind its pseudo-embeddings.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub config: GeneratorConfig,
    pub manifest: Manifest,
    pub class_means: [Vec<f64>; NUM_CLASSES],
}

impl SyntheticCorpus {
    /// Rebuilds the latent structure for a config without regenerating records.
    pub fn latent(config: &GeneratorConfig) -> [Vec<f64>; NUM_CLASSES] {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[config.seed, TAG_MEANS]));
        let scale = config.separation / std::f64::consts::SQRT_2;
        std::array::from_fn(|_| {
            let v = normal_vec(&mut rng, config.embedding_dim, 1.0);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|x| x * scale / norm).collect()
        })
    }

    pub fn participant_offset(&self, participant_id: &str) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[self.config.seed, TAG_PARTICIPANT, str_key(participant_id)]));
        normal_vec(&mut rng, self.config.embedding_dim, self.config.participant_sd)
    }

    /// Frame-level pseudo-embeddings whose mean is the utterance embedding plus jitter.
    pub fn acoustic_frames(&self, r: &ManifestRecord) -> Vec<Vec<f64>> {
        let c = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[c.seed, TAG_UTTERANCE, str_key(&r.session_id), r.seq_no as u64]));
        let offset = self.participant_offset(&r.participant_id);
        let noise = normal_vec(&mut rng, c.embedding_dim, c.noise_sd);
        let base: Vec<f64> = self.class_means[r.label.index()]
            .iter()
            .zip(&offset)
            .zip(&noise)
            .map(|((m, o), n)| m + o + n)
            .collect();
        (0..c.frames_per_utterance)
            .map(|_| {
                let j = normal_vec(&mut rng, c.embedding_dim, c.frame_jitter_sd);
                base.iter().zip(j).map(|(b, j)| b + j).collect()
            })
            .collect()
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.manifest.save(dir.join(MANIFEST_FILE))?;
        self.config.save(dir.join(CONFIG_FILE))
    }

    /// Loads a corpus directory written by [`SyntheticCorpus::save`].
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let config = GeneratorConfig::load(dir.join(CONFIG_FILE))?;
        let manifest = Manifest::load(dir.join(MANIFEST_FILE))?;
        let class_means = Self::latent(&config);
        Ok(Self { config, manifest, class_means })
    }
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const CONFIG_FILE: &str = "synth_config.json";

fn sample_text(c: &GeneratorConfig, label: Class, duration: f64, rng: &mut ChaCha8Rng) -> String {
    let n = ((duration * c.words_per_second).round() as usize).clamp(1, 12);
    let pool = class_pool(label);
    (0..n)
        .map(|_| {
            if rng.gen_bool(c.text_overlap) {
                SHARED_WORDS[rng.gen_range(0..SHARED_WORDS.len())]
            } else {
                pool[rng.gen_range(0..pool.len())]
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn generate(config: &GeneratorConfig) -> Result<SyntheticCorpus> {
    config.validate()?;
    let c = config;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[c.seed, TAG_LABELS]));
    let prior = WeightedIndex::new(c.priors).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let durations: Vec<LogNormal<f64>> = (0..NUM_CLASSES)
        .map(|k| {
            let (mu, sigma) = lognormal_params(c.duration_mean_s[k], c.duration_sd_s[k]);
            LogNormal::new(mu, sigma).map_err(|e| Error::InvalidParameter(e.to_string()))
        })
        .collect::<Result<_>>()?;
    let short = Exp::new(1.0 / c.gap_short_mean_s).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let long = Exp::new(1.0 / c.gap_long_mean_s).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let p_keep = c.keep_probability();

    let width = c.n_sessions.max(1).to_string().len();
    let mut records = Vec::with_capacity(c.n_sessions * c.utterances_per_session);
    for s in 0..c.n_sessions {
        let session_id = format!("S{:0width$}", s + 1);
        let participant_id = format!("P{}", s % c.participants + 1);
        let mut t = 1.0;
        let mut prev: Option<Class> = None;
        for seq in 0..c.utterances_per_session {
            let gap = if seq == 0 {
                0.0
            } else {
                let g = if rng.gen_bool(c.gap_short_weight) { short.sample(&mut rng) } else { long.sample(&mut rng) };
                g.max(c.min_gap_s).max(1e-3)
            };
            let label = match prev {
                Some(p) if gap <= c.continuity_window_s && rng.gen_bool(p_keep) => p,
                _ => Class::from_index(prior.sample(&mut rng))?,
            };
            let d = durations[label.index()].sample(&mut rng).clamp(c.min_duration_s, c.max_duration_s);
            let t_start = round_us(t + gap);
            let t_end = round_us(t_start + d);
            let mut trng = ChaCha8Rng::seed_from_u64(derive_seed(&[c.seed, TAG_TEXT, s as u64, seq as u64]));
            records.push(ManifestRecord {
                session_id: session_id.clone(),
                participant_id: participant_id.clone(),
                seq_no: seq as u32,
                t_start,
                t_end,
                label,
                text: sample_text(c, label, t_end - t_start, &mut trng),
            });
            t = t_end;
            prev = Some(label);
        }
    }
    Ok(SyntheticCorpus {
        config: c.clone(),
        manifest: Manifest::new(records)?,
        class_means: SyntheticCorpus::latent(c),
    })
}

/// Microsecond grid keeps manifest text short and round-trips exactly.
fn round_us(t: f64) -> f64 {
    (t * 1e6).round() / 1e6
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationStats {
    pub utterances: usize,
    pub priors: [f64; NUM_CLASSES],
    pub duration_means_s: [f64; NUM_CLASSES],
    /// Fraction of consecutive pairs whose gap is within the continuity window.
    pub short_gap_fraction: f64,
    pub same_class_rate_short_gap: f64,
}

pub fn calibration_stats(manifest: &Manifest, continuity_window_s: f64) -> Result<CalibrationStats> {
    let n = manifest.records.len();
    if n == 0 {
        return Err(Error::Empty("manifest"));
    }
    let mut count = [0usize; NUM_CLASSES];
    let mut dur = [0.0; NUM_CLASSES];
    for r in &manifest.records {
        count[r.label.index()] += 1;
        dur[r.label.index()] += r.duration();
    }
    let (mut pairs, mut short, mut same) = (0usize, 0usize, 0usize);
    for s in manifest.sessions() {
        for w in s.records.windows(2) {
            pairs += 1;
            if w[1].t_start - w[0].t_end <= continuity_window_s + 1e-9 {
                short += 1;
                same += usize::from(w[0].label == w[1].label);
            }
        }
    }
    Ok(CalibrationStats {
        utterances: n,
        priors: std::array::from_fn(|k| count[k] as f64 / n as f64),
        duration_means_s: std::array::from_fn(|k| if count[k] > 0 { dur[k] / count[k] as f64 } else { 0.0 }),
        short_gap_fraction: if pairs > 0 { short as f64 / pairs as f64 } else { 0.0 },
        same_class_rate_short_gap: if short > 0 { same as f64 / short as f64 } else { 0.0 },
    })
}

/// Burst level (RMS, dBFS) and noise floor used by [`synthesize_waveform`].
pub const BURST_DBFS: f64 = -10.0;
pub const FLOOR_DBFS: f64 = -60.0;
const TAIL_S: f64 = 0.5;

fn burst_pitch(label: Class) -> (f64, f64) {
    // start and end frequency of a linear glide
    match label {
        Class::NegativeSelfTalk => (190.0, 150.0),
        Class::PositiveSelfTalk => (200.0, 260.0),
        Class::Others => (210.0, 210.0),
    }
}

/// Tone bursts at the records' times over a low noise floor. An empty
/// session yields one second of digital silence.
pub fn synthesize_waveform(records: &[ManifestRecord], sample_rate: u32, seed: u64) -> Result<AudioClip> {
    if records.is_empty() {
        return AudioClip::silence(1.0, sample_rate);
    }
    let mut sorted: Vec<&ManifestRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.t_start.total_cmp(&b.t_start));
    for w in sorted.windows(2) {
        if w[1].t_start < w[0].t_end {
            return Err(Error::Manifest(format!("utterances {} and {} overlap", w[0].seq_no, w[1].seq_no)));
        }
    }
    let sr = sample_rate as f64;
    let end = sorted.last().map_or(0.0, |r| r.t_end) + TAIL_S;
    let n = (end * sr).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, TAG_WAVE]));
    let floor = Normal::new(0.0, 10f64.powf(FLOOR_DBFS / 20.0)).expect("finite");
    let mut s: Vec<f64> = (0..n).map(|_| floor.sample(&mut rng)).collect();
    let amp = 10f64.powf(BURST_DBFS / 20.0) * std::f64::consts::SQRT_2;
    for r in sorted {
        let a = (r.t_start * sr).round() as usize;
        let b = ((r.t_end * sr).round() as usize).min(n);
        let (f0, f1) = burst_pitch(r.label);
        let len = (b - a).max(1) as f64;
        let mut phase = 0.0f64;
        for (i, v) in s[a..b].iter_mut().enumerate() {
            let f = f0 + (f1 - f0) * i as f64 / len;
            *v = amp * phase.sin();
            phase += 2.0 * std::f64::consts::PI * f / sr;
        }
    }
    AudioClip::new(s.into_iter().map(|v| v.clamp(-1.0, 1.0) as f32).collect(), sample_rate)
}
