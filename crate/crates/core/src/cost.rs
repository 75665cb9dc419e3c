//! Additive latency model for the early-exit cascade.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyProfile {
    pub preprocess_ms: f64,
    pub acoustic_ms: f64,
    pub linguistic_ms: f64,
    pub fusion_ms: f64,
}

impl Default for LatencyProfile {
    /// Measured per-utterance stage costs of the reference deployment.
    fn default() -> Self {
        Self {
            preprocess_ms: 20.9,
            acoustic_ms: 2015.0,
            linguistic_ms: 4298.0,
            fusion_ms: 0.8,
        }
    }
}

impl LatencyProfile {
    pub fn validate(&self) -> Result<()> {
        let v = [self.preprocess_ms, self.acoustic_ms, self.linguistic_ms, self.fusion_ms];
        if v.iter().all(|x| x.is_finite() && *x >= 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("latency profile must be finite and >= 0: {self:?}")))
        }
    }

    /// Cumulative latency for an utterance that exits at `stage`, preprocessing included.
    pub fn through(&self, stage: ExitStage) -> f64 {
        let mut t = self.preprocess_ms + self.acoustic_ms;
        if stage >= ExitStage::Linguistic {
            t += self.linguistic_ms;
        }
        if stage >= ExitStage::Fusion {
            t += self.fusion_ms;
        }
        t
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let p: Self = load_toml(path)?;
        p.validate()?;
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_toml(path, self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExitStage {
    Acoustic,
    Linguistic,
    Fusion,
}

impl ExitStage {
    pub const ALL: [ExitStage; 3] = [ExitStage::Acoustic, ExitStage::Linguistic, ExitStage::Fusion];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExitRatios {
    pub acoustic: f64,
    pub linguistic: f64,
    pub fusion: f64,
}

impl Default for ExitRatios {
    fn default() -> Self {
        Self { acoustic: 0.61, linguistic: 0.07, fusion: 0.32 }
    }
}

impl ExitRatios {
    pub fn new(acoustic: f64, linguistic: f64, fusion: f64) -> Result<Self> {
        let r = Self { acoustic, linguistic, fusion };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let v = [self.acoustic, self.linguistic, self.fusion];
        if v.iter().any(|x| !x.is_finite() || *x < 0.0) || (v.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("exit ratios must be >= 0 and sum to 1: {self:?}")));
        }
        Ok(())
    }

    pub fn get(&self, stage: ExitStage) -> f64 {
        match stage {
            ExitStage::Acoustic => self.acoustic,
            ExitStage::Linguistic => self.linguistic,
            ExitStage::Fusion => self.fusion,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let r: Self = load_toml(path)?;
        r.validate()?;
        Ok(r)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_toml(path, self)
    }
}

/// Mean per-utterance latency. Without early exit every stage runs.
pub fn expected_latency(profile: &LatencyProfile, ratios: &ExitRatios, early_exit: bool) -> f64 {
    if !early_exit {
        return profile.through(ExitStage::Fusion);
    }
    profile.preprocess_ms
        + ExitStage::ALL
            .iter()
            .map(|&s| ratios.get(s) * (profile.through(s) - profile.preprocess_ms))
            .sum::<f64>()
}

/// Fractional latency saved by early exit, `1 - early / full`.
pub fn reduction(profile: &LatencyProfile, ratios: &ExitRatios) -> f64 {
    let full = expected_latency(profile, ratios, false);
    if full <= 0.0 {
        return 0.0;
    }
    1.0 - expected_latency(profile, ratios, true) / full
}

/// Empirical exit fractions. An empty input is an error.
pub fn ratios_from_exits(exits: impl IntoIterator<Item = ExitStage>) -> Result<ExitRatios> {
    let mut c = [0usize; 3];
    for e in exits {
        c[e as usize] += 1;
    }
    let n: usize = c.iter().sum();
    if n == 0 {
        return Err(Error::Empty("exit traces"));
    }
    let n = n as f64;
    Ok(ExitRatios {
        acoustic: c[0] as f64 / n,
        linguistic: c[1] as f64 / n,
        fusion: 1.0 - c[0] as f64 / n - c[1] as f64 / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencyReport {
    pub full_ms: f64,
    pub early_exit_ms: f64,
    pub reduction: f64,
}

pub fn report(profile: &LatencyProfile, ratios: &ExitRatios) -> LatencyReport {
    LatencyReport {
        full_ms: expected_latency(profile, ratios, false),
        early_exit_ms: expected_latency(profile, ratios, true),
        reduction: reduction(profile, ratios),
    }
}

pub(crate) fn load_toml<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Unreadable { path: path.to_path_buf(), source: e })?;
    toml::from_str(&text).map_err(|e| Error::InvalidParameter(format!("{}: {e}", path.display())))
}

pub(crate) fn save_toml<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let text = toml::to_string(value).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}
