use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 3;

/// The three utterance classes, in the fixed order used by every probability vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Class {
    #[serde(rename = "negative")]
    NegativeSelfTalk,
    #[serde(rename = "positive")]
    PositiveSelfTalk,
    Others,
}

impl Class {
    pub const ALL: [Class; NUM_CLASSES] =
        [Class::NegativeSelfTalk, Class::PositiveSelfTalk, Class::Others];

    pub fn index(self) -> usize {
        match self {
            Class::NegativeSelfTalk => 0,
            Class::PositiveSelfTalk => 1,
            Class::Others => 2,
        }
    }

    pub fn from_index(i: usize) -> Result<Class> {
        Class::ALL.get(i).copied().ok_or(Error::LabelOutOfRange(i))
    }

    /// Manifest spelling.
    pub fn as_str(self) -> &'static str {
        match self {
            Class::NegativeSelfTalk => "negative",
            Class::PositiveSelfTalk => "positive",
            Class::Others => "others",
        }
    }

    /// Display name used in prompts and LLM answers.
    pub fn display_name(self) -> &'static str {
        match self {
            Class::NegativeSelfTalk => "Negative Self-Talk",
            Class::PositiveSelfTalk => "Positive Self-Talk",
            Class::Others => "Others",
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for Class {
    type Err = Error;

    fn from_str(s: &str) -> Result<Class> {
        match s {
            "negative" => Ok(Class::NegativeSelfTalk),
            "positive" => Ok(Class::PositiveSelfTalk),
            "others" => Ok(Class::Others),
            other => Err(Error::UnknownLabel {
                source_kind: "manifest",
                label: other.to_string(),
            }),
        }
    }
}
