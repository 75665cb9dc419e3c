//! Interpretable acoustic features: pitch and intensity statistics, duration,
//! pitch contour, and their categorical descriptors.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::{self, AudioClip, DEFAULT_HOP_S, DEFAULT_WINDOW_S};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F0Config {
    pub frame_s: f64,
    pub hop_s: f64,
    pub f_min: f64,
    pub f_max: f64,
    /// Frames whose best normalized autocorrelation falls below this are unvoiced.
    pub voicing_threshold: f64,
}

impl Default for F0Config {
    fn default() -> Self {
        Self {
            frame_s: 0.04,
            hop_s: 0.01,
            f_min: 50.0,
            f_max: 500.0,
            voicing_threshold: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F0Point {
    pub t: f64,
    pub hz: f64,
}

/// Normalized-autocorrelation F0 for one frame, or `None` when unvoiced.
fn frame_f0(x: &[f64], sr: f64, cfg: &F0Config) -> Option<f64> {
    let n = x.len();
    let lag_min = (sr / cfg.f_max).ceil() as usize;
    let lag_max = (sr / cfg.f_min).floor() as usize;
    if lag_min < 2 || lag_max + 1 >= n {
        return None;
    }
    let corr = |lag: usize| -> f64 {
        let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
        for i in 0..n - lag {
            xy += x[i] * x[i + lag];
            xx += x[i] * x[i];
            yy += x[i + lag] * x[i + lag];
        }
        let d = (xx * yy).sqrt();
        if d <= 0.0 { 0.0 } else { xy / d }
    };
    let r: Vec<f64> = (lag_min - 1..=lag_max + 1).map(corr).collect();
    let at = |lag: usize| r[lag + 1 - lag_min];
    let best = (lag_min..=lag_max).map(at).fold(f64::NEG_INFINITY, f64::max);
    if !(best >= cfg.voicing_threshold) {
        return None;
    }
    // first local peak close to the global best avoids subharmonic picks
    let lag = (lag_min..=lag_max).find(|&l| {
        let v = at(l);
        v >= 0.9 * best && v >= at(l - 1) && v >= at(l + 1)
    })?;
    let (a, b, c) = (at(lag - 1), at(lag), at(lag + 1));
    let denom = a - 2.0 * b + c;
    let shift = if denom.abs() > 1e-12 { (0.5 * (a - c) / denom).clamp(-0.5, 0.5) } else { 0.0 };
    Some(sr / (lag as f64 + shift))
}

/// Per-frame F0 track over voiced frames. Silence or noise yields an empty track.
pub fn estimate_f0(clip: &AudioClip, cfg: &F0Config) -> Vec<F0Point> {
    let sr = clip.sample_rate() as f64;
    let frame_n = (cfg.frame_s * sr).round() as usize;
    let hop_n = ((cfg.hop_s * sr).round() as usize).max(1);
    let s = clip.samples();
    if frame_n == 0 || s.len() < frame_n {
        return Vec::new();
    }
    let mut track = Vec::new();
    let mut start = 0;
    while start + frame_n <= s.len() {
        let w = &s[start..start + frame_n];
        let mean = w.iter().map(|&v| v as f64).sum::<f64>() / frame_n as f64;
        let x: Vec<f64> = w.iter().map(|&v| v as f64 - mean).collect();
        if let Some(hz) = frame_f0(&x, sr, cfg) {
            track.push(F0Point { t: start as f64 / sr, hz });
        }
        start += hop_n;
    }
    track
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcousticFeatureVector {
    pub pitch_mean: f64,
    pub pitch_variance: f64,
    pub pitch_range: f64,
    pub intensity_mean: f64,
    pub intensity_range: f64,
    pub duration_s: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub f0_track: Vec<F0Point>,
}

impl AcousticFeatureVector {
    pub fn is_voiced(&self) -> bool {
        !self.f0_track.is_empty()
    }
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n)
}

fn spread(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
    max - min
}

/// Pitch statistics over voiced frames, intensity over all RMS frames.
pub fn extract_features(clip: &AudioClip, cfg: &F0Config) -> Result<AcousticFeatureVector> {
    if clip.is_empty() {
        return Err(Error::Empty("audio clip"));
    }
    let f0_track = estimate_f0(clip, cfg);
    let (pitch_mean, pitch_variance, pitch_range) = if f0_track.is_empty() {
        (0.0, 0.0, 0.0)
    } else {
        let hz: Vec<f64> = f0_track.iter().map(|p| p.hz).collect();
        let (m, v) = mean_var(&hz);
        (m, v, spread(&hz))
    };
    let rms = if clip.duration_s() >= DEFAULT_WINDOW_S {
        audio::frame_rms_linear(clip, DEFAULT_WINDOW_S, DEFAULT_HOP_S)?
    } else {
        vec![audio::rms(clip.samples())]
    };
    let (intensity_mean, _) = mean_var(&rms);
    Ok(AcousticFeatureVector {
        pitch_mean,
        pitch_variance,
        pitch_range,
        intensity_mean,
        intensity_range: spread(&rms),
        duration_s: clip.duration_s(),
        f0_track,
    })
}

/// Linear-interpolation quantile over sorted data (`h = (n-1)p`).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tertile {
    pub q33: f64,
    pub q66: f64,
}

impl Tertile {
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("tertile corpus"));
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Ok(Self { q33: quantile(&v, 1.0 / 3.0), q66: quantile(&v, 2.0 / 3.0) })
    }

    /// 0, 1 or 2 for the lower, middle and upper tertile.
    pub fn bucket(&self, x: f64) -> usize {
        if x <= self.q33 {
            0
        } else if x <= self.q66 {
            1
        } else {
            2
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TertileBounds {
    pub pitch_variance: Tertile,
    pub pitch_mean: Tertile,
    pub intensity_mean: Tertile,
    pub pitch_range: Tertile,
    pub intensity_range: Tertile,
}

impl TertileBounds {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::InvalidParameter(format!("tertile bounds: {e}")))
    }
}

/// Pitch tertiles use voiced vectors only; when none are voiced they fall back to all.
pub fn fit_tertiles(corpus: &[AcousticFeatureVector]) -> Result<TertileBounds> {
    if corpus.is_empty() {
        return Err(Error::Empty("feature corpus"));
    }
    let voiced: Vec<&AcousticFeatureVector> = corpus.iter().filter(|f| f.is_voiced()).collect();
    let pitch_src: Vec<&AcousticFeatureVector> = if voiced.is_empty() { corpus.iter().collect() } else { voiced };
    let col = |src: &[&AcousticFeatureVector], f: fn(&AcousticFeatureVector) -> f64| {
        Tertile::fit(&src.iter().map(|v| f(v)).collect::<Vec<_>>())
    };
    let all: Vec<&AcousticFeatureVector> = corpus.iter().collect();
    Ok(TertileBounds {
        pitch_variance: col(&pitch_src, |v| v.pitch_variance)?,
        pitch_mean: col(&pitch_src, |v| v.pitch_mean)?,
        intensity_mean: col(&all, |v| v.intensity_mean)?,
        pitch_range: col(&pitch_src, |v| v.pitch_range)?,
        intensity_range: col(&all, |v| v.intensity_range)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Level {
    Low,
    Midium,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Span {
    Narrow,
    Midium,
    Wide,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Low => "Low",
            Level::Midium => "Midium",
            Level::High => "High",
        }
    }

    fn from_bucket(b: usize) -> Self {
        [Level::Low, Level::Midium, Level::High][b]
    }
}

impl Span {
    pub fn as_str(self) -> &'static str {
        match self {
            Span::Narrow => "Narrow",
            Span::Midium => "Midium",
            Span::Wide => "Wide",
        }
    }

    fn from_bucket(b: usize) -> Self {
        [Span::Narrow, Span::Midium, Span::Wide][b]
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Contour {
    Steady,
    SuddenRise,
    SuddenDrop,
    GradualRise,
    GradualFall,
    Fluctuating,
    Complex,
}

impl Contour {
    pub const ALL: [Contour; 7] = [
        Contour::Steady,
        Contour::SuddenRise,
        Contour::SuddenDrop,
        Contour::GradualRise,
        Contour::GradualFall,
        Contour::Fluctuating,
        Contour::Complex,
    ];

    pub fn phrase(self) -> &'static str {
        match self {
            Contour::Steady => "the pitch remains steady with almost no variation.",
            Contour::SuddenRise => "the pitch suddenly rises at a certain moment.",
            Contour::SuddenDrop => "the pitch suddenly drops at a certain moment.",
            Contour::GradualRise => "the pitch gradually tends to rise.",
            Contour::GradualFall => "the pitch gradually tends to fall.",
            Contour::Fluctuating => "the pitch rises and falls repeatedly.",
            Contour::Complex => "the pitch changes in a complex manner.",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContourConfig {
    pub steady_cv: f64,
    pub sudden_jump: f64,
    pub gradual_r2: f64,
    pub gradual_drift: f64,
    pub fluctuation_changes: usize,
}

impl Default for ContourConfig {
    fn default() -> Self {
        Self {
            steady_cv: 0.02,
            sudden_jump: 0.40,
            gradual_r2: 0.5,
            gradual_drift: 0.15,
            fluctuation_changes: 3,
        }
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    quantile(&s, 0.5)
}

/// Decision list evaluated in order; the first matching rule wins.
pub fn classify_contour(track: &[F0Point], cfg: &ContourConfig) -> Contour {
    if track.is_empty() {
        return Contour::Complex;
    }
    let hz: Vec<f64> = track.iter().map(|p| p.hz).collect();
    let (mean, var) = mean_var(&hz);
    if mean <= 0.0 || var.sqrt() / mean < cfg.steady_cv {
        return Contour::Steady;
    }
    let med = median(&hz);
    let diffs: Vec<f64> = hz.windows(2).map(|w| w[1] - w[0]).collect();
    if diffs.iter().any(|&d| d >= cfg.sudden_jump * med) {
        return Contour::SuddenRise;
    }
    if diffs.iter().any(|&d| d <= -cfg.sudden_jump * med) {
        return Contour::SuddenDrop;
    }
    if let Some((slope, r2)) = linear_fit(track) {
        let span = track[track.len() - 1].t - track[0].t;
        if r2 >= cfg.gradual_r2 && (slope * span).abs() >= cfg.gradual_drift * med {
            return if slope > 0.0 { Contour::GradualRise } else { Contour::GradualFall };
        }
    }
    if smoothed_sign_changes(&hz) >= cfg.fluctuation_changes {
        return Contour::Fluctuating;
    }
    Contour::Complex
}

/// Least-squares slope of Hz over time and its R².
fn linear_fit(track: &[F0Point]) -> Option<(f64, f64)> {
    if track.len() < 3 {
        return None;
    }
    let n = track.len() as f64;
    let mt = track.iter().map(|p| p.t).sum::<f64>() / n;
    let mf = track.iter().map(|p| p.hz).sum::<f64>() / n;
    let (mut stt, mut stf, mut sff) = (0.0, 0.0, 0.0);
    for p in track {
        stt += (p.t - mt) * (p.t - mt);
        stf += (p.t - mt) * (p.hz - mf);
        sff += (p.hz - mf) * (p.hz - mf);
    }
    if stt <= 0.0 || sff <= 0.0 {
        return None;
    }
    Some((stf / stt, stf * stf / (stt * sff)))
}

fn smoothed_sign_changes(hz: &[f64]) -> usize {
    if hz.len() < 5 {
        return 0;
    }
    let smooth: Vec<f64> = hz.windows(3).map(|w| (w[0] + w[1] + w[2]) / 3.0).collect();
    let signs: Vec<f64> = smooth
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|d| d.abs() > 1e-9)
        .map(f64::signum)
        .collect();
    signs.windows(2).filter(|w| w[0] != w[1]).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDescriptors {
    pub pitch_variance: Level,
    pub pitch_mean: Level,
    pub intensity_mean: Level,
    pub pitch_range: Span,
    pub intensity_range: Span,
    pub contour: Contour,
}

impl FeatureDescriptors {
    /// Neutral descriptors for a segment with no usable features.
    pub fn neutral() -> Self {
        Self {
            pitch_variance: Level::Midium,
            pitch_mean: Level::Midium,
            intensity_mean: Level::Midium,
            pitch_range: Span::Midium,
            intensity_range: Span::Midium,
            contour: Contour::Complex,
        }
    }
}

/// Tertile descriptors. Unvoiced segments get `Midium` for the pitch fields.
pub fn describe(f: &AcousticFeatureVector, b: &TertileBounds, cfg: &ContourConfig) -> FeatureDescriptors {
    let voiced = f.is_voiced();
    let level = |t: &Tertile, x: f64| if voiced { Level::from_bucket(t.bucket(x)) } else { Level::Midium };
    FeatureDescriptors {
        pitch_variance: level(&b.pitch_variance, f.pitch_variance),
        pitch_mean: level(&b.pitch_mean, f.pitch_mean),
        intensity_mean: Level::from_bucket(b.intensity_mean.bucket(f.intensity_mean)),
        pitch_range: if voiced { Span::from_bucket(b.pitch_range.bucket(f.pitch_range)) } else { Span::Midium },
        intensity_range: Span::from_bucket(b.intensity_range.bucket(f.intensity_range)),
        contour: classify_contour(&f.f0_track, cfg),
    }
}
