//! The closed label sets: 32 speaker emotions (with a fixed polarity
//! partition) and 9 response intents.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(usize)]
pub enum EmotionLabel {
    Surprised,
    Proud,
    Impressed,
    Nostalgic,
    Trusting,
    Faithful,
    Prepared,
    Excited,
    Confident,
    Joyful,
    Grateful,
    Content,
    Caring,
    Angry,
    Disappointed,
    Hopeful,
    Sentimental,
    Anticipating,
    Lonely,
    Afraid,
    Anxious,
    Guilty,
    Embarrassed,
    Sad,
    Apprehensive,
    Terrified,
    Jealous,
    Devastated,
    Annoyed,
    Furious,
    Ashamed,
    Disgusted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Pos,
    Neg,
    Neu,
}

use EmotionLabel::*;

impl EmotionLabel {
    pub const ALL: [EmotionLabel; 32] = [
        Surprised,
        Proud,
        Impressed,
        Nostalgic,
        Trusting,
        Faithful,
        Prepared,
        Excited,
        Confident,
        Joyful,
        Grateful,
        Content,
        Caring,
        Angry,
        Disappointed,
        Hopeful,
        Sentimental,
        Anticipating,
        Lonely,
        Afraid,
        Anxious,
        Guilty,
        Embarrassed,
        Sad,
        Apprehensive,
        Terrified,
        Jealous,
        Devastated,
        Annoyed,
        Furious,
        Ashamed,
        Disgusted,
    ];

    pub const COUNT: usize = 32;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<EmotionLabel> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Surprised => "surprised",
            Proud => "proud",
            Impressed => "impressed",
            Nostalgic => "nostalgic",
            Trusting => "trusting",
            Faithful => "faithful",
            Prepared => "prepared",
            Excited => "excited",
            Confident => "confident",
            Joyful => "joyful",
            Grateful => "grateful",
            Content => "content",
            Caring => "caring",
            Angry => "angry",
            Disappointed => "disappointed",
            Hopeful => "hopeful",
            Sentimental => "sentimental",
            Anticipating => "anticipating",
            Lonely => "lonely",
            Afraid => "afraid",
            Anxious => "anxious",
            Guilty => "guilty",
            Embarrassed => "embarrassed",
            Sad => "sad",
            Apprehensive => "apprehensive",
            Terrified => "terrified",
            Jealous => "jealous",
            Devastated => "devastated",
            Annoyed => "annoyed",
            Furious => "furious",
            Ashamed => "ashamed",
            Disgusted => "disgusted",
        }
    }

    pub fn from_name(name: &str) -> Option<EmotionLabel> {
        Self::ALL.iter().copied().find(|e| e.name() == name)
    }

    /// Fixed polarity partition: 15 positive emotions, 17 negative, none
    /// neutral at the label level (neutrality only arises from batch votes).
    pub fn polarity(self) -> Polarity {
        match self {
            Surprised | Proud | Impressed | Nostalgic | Trusting | Faithful | Prepared
            | Excited | Confident | Joyful | Grateful | Content | Caring | Hopeful
            | Anticipating => Polarity::Pos,
            _ => Polarity::Neg,
        }
    }

    /// Positive labels in canonical order.
    pub fn positive() -> impl Iterator<Item = EmotionLabel> {
        Self::ALL
            .iter()
            .copied()
            .filter(|e| e.polarity() == Polarity::Pos)
    }

    /// Negative labels in canonical order.
    pub fn negative() -> impl Iterator<Item = EmotionLabel> {
        Self::ALL
            .iter()
            .copied()
            .filter(|e| e.polarity() == Polarity::Neg)
    }
}

impl std::fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(usize)]
pub enum IntentLabel {
    Questioning,
    Acknowledging,
    Consoling,
    Agreeing,
    Encouraging,
    Sympathizing,
    Suggesting,
    Wishing,
    Neutral,
}

impl IntentLabel {
    pub const ALL: [IntentLabel; 9] = [
        IntentLabel::Questioning,
        IntentLabel::Acknowledging,
        IntentLabel::Consoling,
        IntentLabel::Agreeing,
        IntentLabel::Encouraging,
        IntentLabel::Sympathizing,
        IntentLabel::Suggesting,
        IntentLabel::Wishing,
        IntentLabel::Neutral,
    ];

    pub const COUNT: usize = 9;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<IntentLabel> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            IntentLabel::Questioning => "questioning",
            IntentLabel::Acknowledging => "acknowledging",
            IntentLabel::Consoling => "consoling",
            IntentLabel::Agreeing => "agreeing",
            IntentLabel::Encouraging => "encouraging",
            IntentLabel::Sympathizing => "sympathizing",
            IntentLabel::Suggesting => "suggesting",
            IntentLabel::Wishing => "wishing",
            IntentLabel::Neutral => "neutral",
        }
    }

    pub fn from_name(name: &str) -> Option<IntentLabel> {
        Self::ALL.iter().copied().find(|i| i.name() == name)
    }
}

impl std::fmt::Display for IntentLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
