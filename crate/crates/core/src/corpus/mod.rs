//! Data model: dialogues of tagged turns, JSONL persistence, and the
//! synthetic generator used for desk-scale end-to-end runs.

mod labels;
mod synth;
mod vocab;

pub use labels::{EmotionLabel, IntentLabel, Polarity};
pub use synth::{generate_synthetic, SynthSpec};
pub use vocab::{tokenize, Vocab, CTX, EOS, PAD, SOS, UNK};

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    Bot,
}

/// Per-token emotion-reason tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tag {
    Em,
    Noem,
}

impl Tag {
    pub fn index(self) -> usize {
        match self {
            Tag::Em => 0,
            Tag::Noem => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
    /// Token ids under the corpus vocabulary.
    pub tokens: Vec<usize>,
    /// One tag per token; always all-noem on bot turns.
    pub reason_tags: Vec<Tag>,
    pub emotion: Option<EmotionLabel>,
    pub intent: Option<IntentLabel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dialogue {
    pub id: String,
    pub turns: Vec<Turn>,
    /// Index of the training-target bot turn.
    pub target: usize,
}

impl Dialogue {
    /// Turns before the target: the conversational context.
    pub fn context(&self) -> &[Turn] {
        &self.turns[..self.target]
    }

    pub fn target_turn(&self) -> &Turn {
        &self.turns[self.target]
    }

    /// The dialogue-level speaker emotion: the last labeled user turn wins.
    pub fn emotion(&self) -> Option<EmotionLabel> {
        self.context()
            .iter()
            .rev()
            .find_map(|t| if t.speaker == Speaker::User { t.emotion } else { None })
    }

    /// Context flattened to token ids, tags, and a per-token user-turn flag,
    /// truncated to at most `max_tokens` by dropping oldest turns first (and
    /// the front of a turn if a single turn still overflows).
    pub fn flat_context(&self, max_tokens: usize) -> FlatContext {
        let mut turns: Vec<&Turn> = self.context().iter().collect();
        let mut total: usize = turns.iter().map(|t| t.tokens.len()).sum();
        while turns.len() > 1 && total > max_tokens {
            total -= turns[0].tokens.len();
            turns.remove(0);
        }
        let mut tokens = Vec::with_capacity(total.min(max_tokens));
        let mut tags = Vec::with_capacity(total.min(max_tokens));
        let mut is_user = Vec::with_capacity(total.min(max_tokens));
        for t in &turns {
            tokens.extend_from_slice(&t.tokens);
            tags.extend_from_slice(&t.reason_tags);
            is_user.extend(std::iter::repeat(t.speaker == Speaker::User).take(t.tokens.len()));
        }
        if tokens.len() > max_tokens {
            let cut = tokens.len() - max_tokens;
            tokens.drain(..cut);
            tags.drain(..cut);
            is_user.drain(..cut);
        }
        FlatContext { tokens, tags, is_user }
    }
}

/// A dialogue context flattened to aligned per-token sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatContext {
    pub tokens: Vec<usize>,
    pub tags: Vec<Tag>,
    pub is_user: Vec<bool>,
}

/// Wire format for one turn (tokens are derived from `text` on load).
#[derive(Serialize, Deserialize)]
struct TurnRecord {
    speaker: Speaker,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reason_tags: Option<Vec<Tag>>,
    emotion: Option<EmotionLabel>,
    intent: Option<IntentLabel>,
}

#[derive(Serialize, Deserialize)]
struct DialogueRecord {
    id: String,
    turns: Vec<TurnRecord>,
    target: usize,
}

/// Vocabulary handling when reading a corpus: extend a fresh vocabulary, or
/// map unseen tokens to UNK under an existing one.
pub enum VocabMode<'a> {
    Build,
    Reuse(&'a Vocab),
}

/// Reads JSONL dialogue records. Every malformed line is reported with its
/// 1-based line number.
pub fn read_corpus<R: BufRead>(reader: R, mode: VocabMode) -> Result<(Vec<Dialogue>, Vocab)> {
    let mut vocab = match &mode {
        VocabMode::Build => Vocab::new(),
        VocabMode::Reuse(v) => (*v).clone(),
    };
    let building = matches!(mode, VocabMode::Build);
    let mut dialogues = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let rec: DialogueRecord = serde_json::from_str(&line).map_err(|e| Error::Corpus {
            line: lineno,
            msg: e.to_string(),
        })?;
        let d = validate_record(rec, lineno, &mut vocab, building)?;
        dialogues.push(d);
    }
    Ok((dialogues, vocab))
}

fn validate_record(
    rec: DialogueRecord,
    line: usize,
    vocab: &mut Vocab,
    building: bool,
) -> Result<Dialogue> {
    let fail = |msg: String| Error::Corpus { line, msg };
    if rec.target >= rec.turns.len() {
        return Err(fail(format!(
            "target index {} out of range ({} turns)",
            rec.target,
            rec.turns.len()
        )));
    }
    let mut turns = Vec::with_capacity(rec.turns.len());
    for (ti, t) in rec.turns.into_iter().enumerate() {
        if ti > 0 {
            let prev = &turns[ti - 1] as &Turn;
            if prev.speaker == t.speaker {
                return Err(fail(format!("turns {} and {ti} have the same speaker", ti - 1)));
            }
        }
        let words = tokenize(&t.text);
        let tokens: Vec<usize> = words
            .iter()
            .map(|w| {
                if building {
                    vocab.add_or_get(w)
                } else {
                    vocab.lookup(w)
                }
            })
            .collect();
        let reason_tags = match t.reason_tags {
            Some(tags) => {
                if tags.len() != tokens.len() {
                    return Err(fail(format!(
                        "turn {ti}: {} reason_tags for {} tokens",
                        tags.len(),
                        tokens.len()
                    )));
                }
                if t.speaker == Speaker::Bot && tags.iter().any(|&x| x == Tag::Em) {
                    return Err(fail(format!("turn {ti}: bot turns must be all-noem")));
                }
                tags
            }
            None => vec![Tag::Noem; tokens.len()],
        };
        turns.push(Turn {
            speaker: t.speaker,
            text: t.text,
            tokens,
            reason_tags,
            emotion: t.emotion,
            intent: t.intent,
        });
    }
    if turns[rec.target].speaker != Speaker::Bot {
        return Err(fail(format!("target turn {} is not a bot turn", rec.target)));
    }
    if !turns[..rec.target].iter().any(|t| t.speaker == Speaker::User) {
        return Err(fail("no user turn before the target".into()));
    }
    Ok(Dialogue {
        id: rec.id,
        turns,
        target: rec.target,
    })
}

pub fn load_corpus(path: &Path, mode: VocabMode) -> Result<(Vec<Dialogue>, Vocab)> {
    let file = std::fs::File::open(path)?;
    read_corpus(std::io::BufReader::new(file), mode)
}

pub fn write_corpus<W: Write>(mut w: W, dialogues: &[Dialogue]) -> Result<()> {
    for d in dialogues {
        let rec = DialogueRecord {
            id: d.id.clone(),
            turns: d
                .turns
                .iter()
                .map(|t| TurnRecord {
                    speaker: t.speaker,
                    text: t.text.clone(),
                    reason_tags: Some(t.reason_tags.clone()),
                    emotion: t.emotion,
                    intent: t.intent,
                })
                .collect(),
            target: d.target,
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_corpus(path: &Path, dialogues: &[Dialogue]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_corpus(std::io::BufWriter::new(file), dialogues)
}
