//! Zero-shot and few-shot LLM prompts built from utterance history and
//! acoustic feature descriptors.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureDescriptors;
use crate::label::Class;

/// History items kept in a prompt, newest last.
pub const MAX_HISTORY: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Template {
    TextZero,
    TextFew,
    MultiZero,
    MultiFew,
}

impl Template {
    pub const ALL: [Template; 4] = [Template::TextZero, Template::TextFew, Template::MultiZero, Template::MultiFew];

    pub fn as_str(self) -> &'static str {
        match self {
            Template::TextZero => "text-zero",
            Template::TextFew => "text-few",
            Template::MultiZero => "multi-zero",
            Template::MultiFew => "multi-few",
        }
    }

    pub fn is_few_shot(self) -> bool {
        matches!(self, Template::TextFew | Template::MultiFew)
    }

    pub fn is_multimodal(self) -> bool {
        matches!(self, Template::MultiZero | Template::MultiFew)
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for Template {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Template::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown template '{s}'")))
    }
}

/// One utterance as it appears in a prompt: its history, text and features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceBlock {
    /// Prior utterance texts, oldest first. Only the last ten are rendered.
    pub history: Vec<String>,
    pub text: String,
    pub descriptors: Option<FeatureDescriptors>,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shot {
    pub block: UtteranceBlock,
    pub label: Class,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptContext {
    pub template: Template,
    pub current: UtteranceBlock,
    #[serde(default)]
    pub shots: Vec<Shot>,
}

const INTRO: &str = "\
Classify the following tennis utterance, considering its **text**, **audio features**, and the **context provided by the previous 10 utterances**. The input utterance text and historical utterances may be in Korean. Choose one of these three categories:
- **Negative Self-Talk**: Blaming oneself, expressing negative thoughts or negative exclamations.
- **Positive Self-Talk**: Encouraging oneself or expressing positive thoughts.
- **Others**: General conversation, non-meaningful sounds like breathing, racket noise, or background noise, counting scores (e.g., \"Fifteen-love!\", \"Deuce!\"), or in/out calls (e.g., \"Out!\", \"Fault!\").
";

const FEATURE_HELP: &str = "\
**Audio Feature Descriptions:**
- **Pitch Variance**: How much the pitch (voice fundamental frequency) changes. A higher variance can indicate strong emotion or excitement.
- **Pitch Mean**: The average pitch of the voice.
- **Duration**: The length of the utterance in seconds.
- **Intensity Mean**: The average loudness of the voice.
- **Pitch Range**: The span between the highest and lowest pitch in the utterance
- **Intensity Range**: The span between the loudest and quietest parts of the utterance
";

const EXAMPLES_HEADER: &str = "Here are a few examples:\n";

const CLOSING: &str = "\
Do **not** explain your reasoning. Do **not** return any additional text, description, or commentary. Respond with **only** one of the classification labels.
";

/// `"a", "b", "c"` over the newest ten items.
pub fn format_history(history: &[String]) -> String {
    let start = history.len().saturating_sub(MAX_HISTORY);
    history[start..].iter().map(|h| format!("\"{h}\"")).collect::<Vec<_>>().join(", ")
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(first) => first.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

pub fn feature_line(d: &FeatureDescriptors, duration_s: f64) -> String {
    format!(
        "Features: Pitch Variance={}, Pitch Mean={}, Duration={:.6} (sec), Intensity Mean={}, Pitch Range={}, Intensity Range={}, Pitch Contour={}",
        d.pitch_variance,
        d.pitch_mean,
        duration_s,
        d.intensity_mean,
        d.pitch_range,
        d.intensity_range,
        capitalize(d.contour.phrase()),
    )
}

/// The history/utterance/features block; `label` fills the classification
/// line, left empty for the query.
pub fn render_block(b: &UtteranceBlock, label: Option<Class>) -> Result<String> {
    let d = b.descriptors.as_ref().ok_or(Error::MissingDescriptor("descriptors"))?;
    if !b.duration_s.is_finite() || b.duration_s < 0.0 {
        return Err(Error::InvalidParameter(format!("duration {} must be finite and >= 0", b.duration_s)));
    }
    let mut s = String::new();
    s.push_str("**Previous Utterances History (from oldest to newest, up to 10 utterances, comma-separated):**\n");
    s.push_str(&format_history(&b.history));
    s.push('\n');
    s.push_str("**Current Utterance to Classify:**\n");
    let _ = writeln!(s, "Utterance: {}", b.text);
    s.push_str(&feature_line(d, b.duration_s));
    s.push('\n');
    match label {
        Some(c) => {
            let _ = writeln!(s, "Classification: {}", c.display_name());
        }
        None => s.push_str("Classification:\n"),
    }
    Ok(s)
}

/// Renders a full prompt. Pure and locale-independent.
pub fn render(ctx: &PromptContext) -> Result<String> {
    let t = ctx.template;
    if t.is_few_shot() && ctx.shots.is_empty() {
        return Err(Error::InvalidParameter(format!("template {t} needs at least one shot")));
    }
    if !t.is_few_shot() && !ctx.shots.is_empty() {
        return Err(Error::InvalidParameter(format!("template {t} takes no shots")));
    }
    let mut out = String::from(INTRO);
    out.push('\n');
    if !t.is_multimodal() {
        out.push_str(FEATURE_HELP);
        out.push('\n');
    }
    if t.is_few_shot() {
        out.push_str(EXAMPLES_HEADER);
        let shots = ctx
            .shots
            .iter()
            .map(|s| render_block(&s.block, Some(s.label)))
            .collect::<Result<Vec<_>>>()?;
        out.push_str(&shots.join("\n"));
        out.push('\n');
    }
    out.push_str(CLOSING);
    if t == Template::MultiFew {
        // same paragraph as the closing line in the original layout
        out.pop();
        out.push(' ');
        out.push_str(EXAMPLES_HEADER);
    }
    out.push('\n');
    out.push_str(&render_block(&ctx.current, None)?);
    Ok(out)
}
