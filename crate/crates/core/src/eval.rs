//! Classification metrics, leave-one-subject-out fold planning, margin
//! histograms, external label mapping and embedding distance reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::{Class, NUM_CLASSES};

/// Rows are ground truth, columns are predictions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub per_class: [ClassMetrics; NUM_CLASSES],
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; NUM_CLASSES]; NUM_CLASSES]) -> Self {
        Self { counts }
    }

    pub fn add(&mut self, truth: Class, predicted: Class) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for r in 0..NUM_CLASSES {
            for c in 0..NUM_CLASSES {
                self.counts[r][c] += other.counts[r][c];
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Per-class and macro-averaged scores; undefined ratios count as 0.
    pub fn metrics(&self) -> Metrics {
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let per_class: [ClassMetrics; NUM_CLASSES] = std::array::from_fn(|k| {
            let tp = self.counts[k][k];
            let predicted: u64 = (0..NUM_CLASSES).map(|r| self.counts[r][k]).sum();
            let support: u64 = self.counts[k].iter().sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics { precision, recall, f1, support }
        });
        let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / NUM_CLASSES as f64;
        let diag: u64 = (0..NUM_CLASSES).map(|k| self.counts[k][k]).sum();
        Metrics {
            macro_precision: mean(|m| m.precision),
            macro_recall: mean(|m| m.recall),
            macro_f1: mean(|m| m.f1),
            accuracy: ratio(diag, self.total()),
            per_class,
        }
    }
}

/// One held-out participant and the participants trained on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Fold {
    pub held_out: String,
    pub train: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
}

impl FoldPlan {
    pub fn len(&self) -> usize {
        self.folds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.folds.is_empty()
    }
}

/// One fold per distinct participant, in sorted participant order
/// (`P2` sorts before `P10`).
pub fn loso_folds<'a>(participants: impl IntoIterator<Item = &'a str>) -> FoldPlan {
    let mut ids: Vec<String> = participants.into_iter().map(str::to_string).collect();
    ids.sort_by(|a, b| participant_key(a).cmp(&participant_key(b)));
    ids.dedup();
    let folds = ids
        .iter()
        .map(|held| Fold {
            held_out: held.clone(),
            train: ids.iter().filter(|p| *p != held).cloned().collect(),
        })
        .collect();
    FoldPlan { folds }
}

fn participant_key(id: &str) -> (String, u64, String) {
    let prefix: String = id.chars().take_while(|c| !c.is_ascii_digit()).collect();
    let digits: String = id[prefix.len()..].chars().take_while(|c| c.is_ascii_digit()).collect();
    let rest = id[prefix.len() + digits.len()..].to_string();
    (prefix, digits.parse().unwrap_or(0), rest)
}

/// Equal-width bins over `[0, 1]`; the last bin includes 1.0.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginHistogram {
    pub edges: Vec<f64>,
    /// Counts per class (indexed like [`Class::ALL`]), one entry per bin.
    pub counts: [Vec<u64>; NUM_CLASSES],
}

pub fn margin_histogram(samples: impl IntoIterator<Item = (Class, f64)>, bins: usize) -> Result<MarginHistogram> {
    if bins == 0 {
        return Err(Error::InvalidParameter("histogram needs at least one bin".into()));
    }
    let edges: Vec<f64> = (0..=bins).map(|i| i as f64 / bins as f64).collect();
    let mut counts: [Vec<u64>; NUM_CLASSES] = std::array::from_fn(|_| vec![0; bins]);
    for (class, m) in samples {
        if !(0.0..=1.0).contains(&m) {
            return Err(Error::InvalidParameter(format!("margin {m} outside [0,1]")));
        }
        let b = ((m * bins as f64).floor() as usize).min(bins - 1);
        counts[class.index()][b] += 1;
    }
    Ok(MarginHistogram { edges, counts })
}

impl MarginHistogram {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,bin_lo,bin_hi,count\n");
        for class in Class::ALL {
            for (b, n) in self.counts[class.index()].iter().enumerate() {
                let _ = writeln!(s, "{},{:.4},{:.4},{}", class, self.edges[b], self.edges[b + 1], n);
            }
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExternalSource {
    /// Speech emotion recognition labels.
    Emotion,
    /// Text sentiment labels.
    Sentiment,
}

/// Maps a baseline model's label onto the three-class scheme.
pub fn map_external_labels(source: ExternalSource, label: &str) -> Result<Class> {
    let l = label.trim().to_lowercase();
    let mapped = match source {
        ExternalSource::Emotion => match l.as_str() {
            "angry" | "disgusted" | "fearful" | "sad" => Some(Class::NegativeSelfTalk),
            "happy" | "surprised" => Some(Class::PositiveSelfTalk),
            "neutral" | "other" | "unknown" => Some(Class::Others),
            _ => None,
        },
        ExternalSource::Sentiment => match l.as_str() {
            "negative" => Some(Class::NegativeSelfTalk),
            "positive" => Some(Class::PositiveSelfTalk),
            "neutral" => Some(Class::Others),
            _ => None,
        },
    };
    mapped.ok_or_else(|| Error::UnknownLabel {
        source_kind: match source {
            ExternalSource::Emotion => "emotion",
            ExternalSource::Sentiment => "sentiment",
        },
        label: label.to_string(),
    })
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean Euclidean distance over all unordered pairs; 0 for fewer than two vectors.
pub fn mean_pairwise_distance(vectors: &[&[f64]]) -> f64 {
    let n = vectors.len();
    if n < 2 {
        return 0.0;
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += euclidean(vectors[i], vectors[j]);
        }
    }
    sum / (n * (n - 1) / 2) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DistanceRow {
    pub class: Class,
    pub count: usize,
    pub before: f64,
    pub after: f64,
}

/// Mean intra-class pairwise distance before and after adaptation.
/// Each sample is `(class, raw embedding, adapted embedding)`.
pub fn embedding_distance_report(samples: &[(Class, Vec<f64>, Vec<f64>)]) -> Vec<DistanceRow> {
    Class::ALL
        .iter()
        .map(|&class| {
            let members: Vec<&(Class, Vec<f64>, Vec<f64>)> = samples.iter().filter(|s| s.0 == class).collect();
            let before: Vec<&[f64]> = members.iter().map(|s| s.1.as_slice()).collect();
            let after: Vec<&[f64]> = members.iter().map(|s| s.2.as_slice()).collect();
            DistanceRow {
                class,
                count: members.len(),
                before: mean_pairwise_distance(&before),
                after: mean_pairwise_distance(&after),
            }
        })
        .collect()
}

pub fn distance_report_csv(rows: &[DistanceRow]) -> String {
    let mut s = String::from("class,count,mean_distance_before,mean_distance_after,reduction\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{:.6},{:.6},{:.6}",
            r.class,
            r.count,
            r.before,
            r.after,
            r.before - r.after
        );
    }
    s
}

/// Confusion matrices grouped by an arbitrary key (participant, fold, stage).
pub fn group_confusion<K: Ord + Clone>(items: impl IntoIterator<Item = (K, Class, Class)>) -> BTreeMap<K, ConfusionMatrix> {
    let mut out: BTreeMap<K, ConfusionMatrix> = BTreeMap::new();
    for (k, truth, pred) in items {
        out.entry(k).or_default().add(truth, pred);
    }
    out
}
