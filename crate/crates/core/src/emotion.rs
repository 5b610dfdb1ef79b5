//! The eight-category emotion taxonomy (four positive, four negative).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmotionLabel {
    Amusement,
    Awe,
    Contentment,
    Excitement,
    Anger,
    Disgust,
    Fear,
    Sadness,
}

impl EmotionLabel {
    /// All categories in classifier output order.
    pub const ALL: [EmotionLabel; 8] = [
        EmotionLabel::Amusement,
        EmotionLabel::Awe,
        EmotionLabel::Contentment,
        EmotionLabel::Excitement,
        EmotionLabel::Anger,
        EmotionLabel::Disgust,
        EmotionLabel::Fear,
        EmotionLabel::Sadness,
    ];

    pub const COUNT: usize = 8;

    pub fn polarity(self) -> Polarity {
        match self {
            EmotionLabel::Amusement
            | EmotionLabel::Awe
            | EmotionLabel::Contentment
            | EmotionLabel::Excitement => Polarity::Positive,
            EmotionLabel::Anger | EmotionLabel::Disgust | EmotionLabel::Fear | EmotionLabel::Sadness => {
                Polarity::Negative
            }
        }
    }

    /// Position in the classifier probability vector.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// The bare emotion word used as the editing prompt.
    pub fn word(self) -> &'static str {
        match self {
            EmotionLabel::Amusement => "amusement",
            EmotionLabel::Awe => "awe",
            EmotionLabel::Contentment => "contentment",
            EmotionLabel::Excitement => "excitement",
            EmotionLabel::Anger => "anger",
            EmotionLabel::Disgust => "disgust",
            EmotionLabel::Fear => "fear",
            EmotionLabel::Sadness => "sadness",
        }
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.word())
    }
}

impl FromStr for EmotionLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let needle = s.trim().to_ascii_lowercase();
        Self::ALL
            .iter()
            .copied()
            .find(|e| e.word() == needle)
            .ok_or_else(|| invalid(format!("unknown emotion `{s}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eight_categories_split_by_polarity() {
        assert_eq!(EmotionLabel::ALL.len(), 8);
        let positive: Vec<_> = EmotionLabel::ALL
            .iter()
            .filter(|e| e.polarity() == Polarity::Positive)
            .map(|e| e.word())
            .collect();
        assert_eq!(positive, ["amusement", "awe", "contentment", "excitement"]);
        for (i, e) in EmotionLabel::ALL.iter().enumerate() {
            assert_eq!(e.index(), i);
            assert_eq!(EmotionLabel::from_index(i), Some(*e));
        }
    }

    #[test]
    fn parse_round_trip_and_reject_unknown() {
        for e in EmotionLabel::ALL {
            assert_eq!(e.word().parse::<EmotionLabel>().unwrap(), e);
        }
        assert_eq!(" Sadness ".parse::<EmotionLabel>().unwrap(), EmotionLabel::Sadness);
        assert!("joy".parse::<EmotionLabel>().is_err());
    }
}
