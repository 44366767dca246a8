//! Fine and coarse emotion labels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// One of the seven fine-grained emotions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EmotionLabel {
    Neutral,
    Joyful,
    Peaceful,
    Powerful,
    Scared,
    Mad,
    Sad,
}

/// Three-way polarity derived from an [`EmotionLabel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoarseLabel {
    Neutral,
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown emotion label `{0}`")]
pub struct ParseLabelError(pub String);

impl EmotionLabel {
    pub const COUNT: usize = 7;

    /// All labels in canonical index order.
    pub const ALL: [EmotionLabel; 7] = [
        EmotionLabel::Neutral,
        EmotionLabel::Joyful,
        EmotionLabel::Peaceful,
        EmotionLabel::Powerful,
        EmotionLabel::Scared,
        EmotionLabel::Mad,
        EmotionLabel::Sad,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            EmotionLabel::Neutral => "neutral",
            EmotionLabel::Joyful => "joyful",
            EmotionLabel::Peaceful => "peaceful",
            EmotionLabel::Powerful => "powerful",
            EmotionLabel::Scared => "scared",
            EmotionLabel::Mad => "mad",
            EmotionLabel::Sad => "sad",
        }
    }

    /// Maps a fine label onto its coarse polarity.
    pub fn to_coarse(self) -> CoarseLabel {
        match self {
            EmotionLabel::Neutral => CoarseLabel::Neutral,
            EmotionLabel::Joyful | EmotionLabel::Peaceful | EmotionLabel::Powerful => {
                CoarseLabel::Positive
            }
            EmotionLabel::Scared | EmotionLabel::Mad | EmotionLabel::Sad => CoarseLabel::Negative,
        }
    }
}

/// Free-function form of [`EmotionLabel::to_coarse`].
pub fn to_coarse(label: EmotionLabel) -> CoarseLabel {
    label.to_coarse()
}

impl CoarseLabel {
    pub const COUNT: usize = 3;
    pub const ALL: [CoarseLabel; 3] = [
        CoarseLabel::Neutral,
        CoarseLabel::Positive,
        CoarseLabel::Negative,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            CoarseLabel::Neutral => "neutral",
            CoarseLabel::Positive => "positive",
            CoarseLabel::Negative => "negative",
        }
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for CoarseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EmotionLabel {
    type Err = ParseLabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim();
        EmotionLabel::ALL
            .iter()
            .copied()
            .find(|l| l.name().eq_ignore_ascii_case(trimmed))
            .ok_or_else(|| ParseLabelError(s.to_string()))
    }
}

impl Serialize for EmotionLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for EmotionLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
