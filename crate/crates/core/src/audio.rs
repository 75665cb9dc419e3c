//! Mono audio clips, WAV loading and fixed-hop RMS framing.

use std::path::Path;

use crate::error::{Error, Result};

/// dB value reported for frames with zero energy.
pub const SILENCE_DB: f64 = -160.0;

pub const DEFAULT_WINDOW_S: f64 = 0.025;
pub const DEFAULT_HOP_S: f64 = 0.010;
pub const DEFAULT_SAMPLE_RATE: u32 = 22_050;

// Slack for comparisons between sample-quantized and second-valued times.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidParameter("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite sample at index {i}")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn silence(duration_s: f64, sample_rate: u32) -> Result<Self> {
        let n = (duration_s * sample_rate as f64).round() as usize;
        Self::new(vec![0.0; n], sample_rate)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Sample-index range covering `[t_start, t_end)`, clamped to the clip.
    pub fn index_range(&self, t_start: f64, t_end: f64) -> std::ops::Range<usize> {
        let sr = self.sample_rate as f64;
        let lo = ((t_start.max(0.0) * sr) + TIME_EPS).floor() as usize;
        let hi = ((t_end.max(0.0) * sr) + TIME_EPS).floor() as usize;
        let hi = hi.min(self.samples.len());
        lo.min(hi)..hi
    }

    /// Copy of the samples in `[t_start, t_end)`.
    pub fn slice(&self, t_start: f64, t_end: f64) -> AudioClip {
        let r = self.index_range(t_start, t_end);
        AudioClip {
            samples: self.samples[r].to_vec(),
            sample_rate: self.sample_rate,
        }
    }

    /// Every sample multiplied by `gain`.
    pub fn scaled(&self, gain: f32) -> AudioClip {
        AudioClip {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub start_s: f64,
    pub rms_db: f64,
}

/// Reads a PCM16 or float32 WAV file. Multichannel input is mixed down by averaging.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Unreadable {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = hound::WavReader::new(std::io::BufReader::new(file)).map_err(|e| match e {
        hound::Error::IoError(source) => Error::Unreadable {
            path: path.to_path_buf(),
            source,
        },
        hound::Error::Unsupported => Error::UnsupportedEncoding("unsupported wav feature".into()),
        other => Error::MalformedWav(other.to_string()),
    })?;
    decode(reader)
}

fn decode<R: std::io::Read>(reader: hound::WavReader<R>) -> Result<AudioClip> {
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::MalformedWav("zero channels".into()));
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(|e| Error::MalformedWav(e.to_string()))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .collect::<Result<_, _>>()
            .map_err(|e| Error::MalformedWav(e.to_string()))?,
        (fmt, bits) => {
            return Err(Error::UnsupportedEncoding(format!("{fmt:?} with {bits} bits per sample")))
        }
    };
    let mono = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f32>() / channels as f32)
        .collect();
    AudioClip::new(mono, spec.sample_rate)
}

/// Writes a clip as mono PCM16.
pub fn write_wav_pcm16(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(wav_io)?;
    for &s in &clip.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(v).map_err(wav_io)?;
    }
    w.finalize().map_err(wav_io)
}

/// Writes a clip as mono float32.
pub fn write_wav_f32(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(wav_io)?;
    for &s in &clip.samples {
        w.write_sample(s).map_err(wav_io)?;
    }
    w.finalize().map_err(wav_io)
}

fn wav_io(e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(e) => Error::Io(e),
        other => Error::MalformedWav(other.to_string()),
    }
}

/// Converts a linear RMS value to dBFS, using [`SILENCE_DB`] for zero.
pub fn rms_to_db(rms: f64) -> f64 {
    if rms > 0.0 {
        (20.0 * rms.log10()).max(SILENCE_DB)
    } else {
        SILENCE_DB
    }
}

pub(crate) fn rms(samples: &[f32]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let sum: f64 = samples.iter().map(|&s| (s as f64) * (s as f64)).sum();
    (sum / samples.len() as f64).sqrt()
}

/// Frame geometry shared by the RMS and pitch analysers.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Framing {
    pub count: usize,
    pub window_n: usize,
    pub hop_s: f64,
    pub sample_rate: f64,
}

impl Framing {
    pub fn new(clip: &AudioClip, window_s: f64, hop_s: f64) -> Result<Self> {
        if clip.is_empty() {
            return Err(Error::Empty("audio clip"));
        }
        if !(hop_s > 0.0 && hop_s <= window_s + TIME_EPS) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < hop ({hop_s}) <= window ({window_s})"
            )));
        }
        let duration = clip.duration_s();
        if window_s > duration + TIME_EPS {
            return Err(Error::InvalidParameter(format!(
                "window {window_s}s longer than clip {duration}s"
            )));
        }
        let sr = clip.sample_rate as f64;
        let count = ((duration - window_s) / hop_s + TIME_EPS).floor() as usize + 1;
        let window_n = ((window_s * sr) + TIME_EPS).floor().max(1.0) as usize;
        Ok(Self { count, window_n, hop_s, sample_rate: sr })
    }

    pub fn start_sample(&self, k: usize) -> usize {
        ((k as f64 * self.hop_s * self.sample_rate) + TIME_EPS).floor() as usize
    }

    pub fn start_s(&self, k: usize) -> f64 {
        k as f64 * self.hop_s
    }

    pub fn window<'a>(&self, samples: &'a [f32], k: usize) -> &'a [f32] {
        let s = self.start_sample(k);
        &samples[s..(s + self.window_n).min(samples.len())]
    }
}

/// Frame-level RMS intensity in dBFS. Frame `k` covers `[k*hop, k*hop + window)`;
/// a trailing partial window is dropped.
pub fn frame_rms(clip: &AudioClip, window_s: f64, hop_s: f64) -> Result<Vec<Frame>> {
    let framing = Framing::new(clip, window_s, hop_s)?;
    Ok((0..framing.count)
        .map(|k| Frame {
            start_s: framing.start_s(k),
            rms_db: rms_to_db(rms(framing.window(&clip.samples, k))),
        })
        .collect())
}

/// Linear (not dB) RMS per frame, same geometry as [`frame_rms`].
pub fn frame_rms_linear(clip: &AudioClip, window_s: f64, hop_s: f64) -> Result<Vec<f64>> {
    let framing = Framing::new(clip, window_s, hop_s)?;
    Ok((0..framing.count)
        .map(|k| rms(framing.window(&clip.samples, k)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, amp: f64, dur: f64, sr: u32) -> AudioClip {
        let n = (dur * sr as f64) as usize;
        let s = (0..n)
            .map(|i| (amp * (2.0 * std::f64::consts::PI * freq * i as f64 / sr as f64).sin()) as f32)
            .collect();
        AudioClip::new(s, sr).unwrap()
    }

    #[test]
    fn constant_tenth_is_minus_twenty_db() {
        let clip = AudioClip::new(vec![0.1; 22050], 22050).unwrap();
        for f in frame_rms(&clip, DEFAULT_WINDOW_S, DEFAULT_HOP_S).unwrap() {
            assert!((f.rms_db + 20.0).abs() < 1e-5, "{}", f.rms_db);
        }
    }

    #[test]
    fn zeros_hit_the_sentinel() {
        let clip = AudioClip::silence(1.0, 22050).unwrap();
        let frames = frame_rms(&clip, DEFAULT_WINDOW_S, DEFAULT_HOP_S).unwrap();
        assert!(frames.iter().all(|f| f.rms_db == SILENCE_DB));
    }

    #[test]
    fn sine_matches_direct_summation() {
        let amp = 0.37;
        let clip = sine(440.0, amp, 0.5, 22050);
        let frames = frame_rms(&clip, 0.05, 0.01).unwrap();
        let expected = 20.0 * (amp / 2f64.sqrt()).log10();
        for (k, f) in frames.iter().enumerate() {
            // brute force over the same window
            let start = (k as f64 * 0.01 * 22050.0 + 1e-9).floor() as usize;
            let n = (0.05 * 22050.0f64 + 1e-9).floor() as usize;
            let mut acc = 0.0f64;
            for i in start..start + n {
                acc += (clip.samples()[i] as f64).powi(2);
            }
            let direct = 20.0 * (acc / n as f64).sqrt().log10();
            assert!((f.rms_db - direct).abs() < 1e-9);
            assert!((f.rms_db - expected).abs() < 0.05);
        }
    }

    #[test]
    fn frame_count_formula() {
        for &(dur, win, hop) in &[(1.0, 0.025, 0.010), (0.5, 0.05, 0.02), (2.37, 0.03, 0.011)] {
            let clip = AudioClip::silence(dur, 22050).unwrap();
            let frames = frame_rms(&clip, win, hop).unwrap();
            let expected = ((clip.duration_s() - win) / hop + 1e-9).floor() as usize + 1;
            assert_eq!(frames.len(), expected);
        }
    }

    #[test]
    fn gain_shifts_db_exactly() {
        let clip = sine(300.0, 0.05, 0.3, 16000);
        let c = 3.0f32;
        let a = frame_rms(&clip, 0.025, 0.01).unwrap();
        let b = frame_rms(&clip.scaled(c), 0.025, 0.01).unwrap();
        for (x, y) in a.iter().zip(&b) {
            // f32 sample scaling introduces ~1e-7 relative error in the power sum.
            assert!((y.rms_db - x.rms_db - 20.0 * (c as f64).log10()).abs() < 1e-5);
        }
    }

    #[test]
    fn rejects_bad_geometry() {
        let clip = AudioClip::silence(0.1, 22050).unwrap();
        assert!(frame_rms(&clip, 0.2, 0.01).is_err());
        assert!(frame_rms(&clip, 0.02, 0.03).is_err());
        assert!(frame_rms(&AudioClip::new(vec![], 100).unwrap(), 0.02, 0.01).is_err());
    }

    #[test]
    fn wav_roundtrip_and_mixdown() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("silence.wav");
        write_wav_pcm16(&p, &AudioClip::silence(1.0, 22050).unwrap()).unwrap();
        let clip = load_wav(&p).unwrap();
        assert_eq!(clip.len(), 22050);
        assert!(clip.samples().iter().all(|&s| s == 0.0));

        // full-scale square wave
        let p = dir.path().join("square.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        for i in 0..80 {
            w.write_sample(if (i / 10) % 2 == 0 { 32767i16 } else { -32767 }).unwrap();
        }
        w.finalize().unwrap();
        let clip = load_wav(&p).unwrap();
        assert!(clip.samples().iter().all(|&s| s.abs() == 32767.0 / 32768.0));

        // stereo (0.5, -0.5) mixes to 0
        let p = dir.path().join("stereo.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        for _ in 0..100 {
            w.write_sample(0.5f32).unwrap();
            w.write_sample(-0.5f32).unwrap();
        }
        w.finalize().unwrap();
        let clip = load_wav(&p).unwrap();
        assert_eq!(clip.len(), 100);
        assert!(clip.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn distinct_errors_for_missing_and_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_wav(dir.path().join("nope.wav")),
            Err(Error::Unreadable { .. })
        ));
        let p = dir.path().join("pcm8.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 8,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        w.write_sample(3i8).unwrap();
        w.finalize().unwrap();
        assert!(matches!(load_wav(&p), Err(Error::UnsupportedEncoding(_))));
    }
}
