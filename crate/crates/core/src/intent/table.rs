//! The emotion-group → reference-intent lookup table.
//!
//! Each of the 32 speaker emotions maps to a fixed triple of response
//! intents, ordered from most to least preferred. The mapping is grouped:
//! emotions in the same group share one triple. Emotions missing from the
//! bundled table fall back to a per-polarity default triple, so the lookup is
//! total over the label set.

use std::collections::HashMap;

use serde::Deserialize;

use crate::corpus::{EmotionLabel, IntentLabel, Polarity};
use crate::error::{Error, Result};

/// Bundled table contents, compiled into the binary.
pub const BUNDLED_TABLE: &str = include_str!("../../resources/intent_table.json");

const TABLE_VERSION: u32 = 1;

#[derive(Deserialize)]
struct RawTable {
    version: u32,
    rows: Vec<RawRow>,
    fallback: RawFallback,
}

#[derive(Deserialize)]
struct RawRow {
    emotions: Vec<String>,
    intents: Vec<String>,
}

#[derive(Deserialize)]
struct RawFallback {
    pos: Vec<String>,
    neg: Vec<String>,
}

/// Lookup from a speaker emotion to its three candidate response intents.
pub struct IntentTable {
    by_emotion: HashMap<EmotionLabel, [IntentLabel; 3]>,
    fallback_pos: [IntentLabel; 3],
    fallback_neg: [IntentLabel; 3],
}

impl IntentTable {
    /// Parses and validates a JSON table.
    pub fn from_json(json: &str) -> Result<IntentTable> {
        let raw: RawTable = serde_json::from_str(json)?;
        if raw.version != TABLE_VERSION {
            return Err(Error::invalid(format!(
                "intent table version {} unsupported (expected {TABLE_VERSION})",
                raw.version
            )));
        }
        let mut by_emotion = HashMap::new();
        for (i, row) in raw.rows.iter().enumerate() {
            let triple = parse_triple(&row.intents)
                .map_err(|e| Error::invalid(format!("intent table row {}: {e}", i + 1)))?;
            for name in &row.emotions {
                let emo = EmotionLabel::from_name(name).ok_or_else(|| {
                    Error::invalid(format!("intent table row {}: unknown emotion {name:?}", i + 1))
                })?;
                if by_emotion.insert(emo, triple).is_some() {
                    return Err(Error::invalid(format!(
                        "intent table row {}: emotion {name:?} appears twice",
                        i + 1
                    )));
                }
            }
        }
        Ok(IntentTable {
            by_emotion,
            fallback_pos: parse_triple(&raw.fallback.pos)
                .map_err(|e| Error::invalid(format!("intent table fallback pos: {e}")))?,
            fallback_neg: parse_triple(&raw.fallback.neg)
                .map_err(|e| Error::invalid(format!("intent table fallback neg: {e}")))?,
        })
    }

    /// The table compiled into the binary.
    pub fn bundled() -> IntentTable {
        IntentTable::from_json(BUNDLED_TABLE).expect("bundled intent table is valid")
    }

    /// The three candidate intents for `emotion`, preferred first. Total:
    /// emotions outside the table get the default triple for their polarity.
    pub fn refer(&self, emotion: EmotionLabel) -> [IntentLabel; 3] {
        if let Some(&triple) = self.by_emotion.get(&emotion) {
            return triple;
        }
        match emotion.polarity() {
            Polarity::Pos => self.fallback_pos,
            _ => self.fallback_neg,
        }
    }
}

fn parse_triple(names: &[String]) -> std::result::Result<[IntentLabel; 3], String> {
    if names.len() != 3 {
        return Err(format!("expected 3 intents, got {}", names.len()));
    }
    let mut out = [IntentLabel::Neutral; 3];
    for (slot, name) in out.iter_mut().zip(names) {
        *slot = IntentLabel::from_name(name).ok_or_else(|| format!("unknown intent {name:?}"))?;
    }
    Ok(out)
}
