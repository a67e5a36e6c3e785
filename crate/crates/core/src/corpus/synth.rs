//! Synthetic dialogue generator. Every task signal is planted by
//! construction — the speaker emotion appears verbatim as a tagged keyword,
//! the response intent is determined by a request word in the user turn, and
//! the target reply follows a per-intent template — so a correct model can
//! learn all of them, and a keyword lookup bounds attainable accuracy at 100%.

use rand::Rng;

use super::labels::{EmotionLabel, IntentLabel};
use super::vocab::{tokenize, Vocab};
use super::{Dialogue, Speaker, Tag, Turn};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_dialogues: usize,
    pub n_emotions: usize,
    pub n_intents: usize,
}

/// What the user asks for, keyed by intent. This is the context signal the
/// intent classifier can learn from.
const REQUEST_WORDS: [&str; 9] = [
    "answers",       // questioning
    "recognition",   // acknowledging
    "comfort",       // consoling
    "agreement",     // agreeing
    "encouragement", // encouraging
    "sympathy",      // sympathizing
    "suggestions",   // suggesting
    "wishes",        // wishing
    "time",          // neutral
];

/// Target replies, keyed by intent. `{emo}` splices in the emotion word so
/// several templates reward copying from the context.
const REPLY_TEMPLATES: [&str; 9] = [
    "what happened to make you feel {emo} ?",
    "feeling {emo} makes a lot of sense .",
    "i am here for you , it will be okay .",
    "you are right , i would feel the same .",
    "you can get through this , keep going !",
    "i am so sorry you are feeling {emo} .",
    "maybe you could talk to someone about it .",
    "i hope things get better for you soon .",
    "tell me more about what happened next .",
];

const FILLERS: [&str; 4] = ["today", "lately", "honestly", "again"];

/// Emotions used for an `n_emotions`-label corpus: positive and negative
/// labels interleaved, so both polarity experts see data even at small n.
pub(crate) fn emotion_palette(n: usize) -> Vec<EmotionLabel> {
    let pos: Vec<_> = EmotionLabel::positive().collect();
    let neg: Vec<_> = EmotionLabel::negative().collect();
    let mut out = Vec::with_capacity(n);
    let mut i = 0;
    while out.len() < n {
        if i < pos.len() {
            out.push(pos[i]);
        }
        if out.len() < n && i < neg.len() {
            out.push(neg[i]);
        }
        i += 1;
    }
    out
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<(Vec<Dialogue>, Vocab)> {
    if spec.n_dialogues == 0 {
        return Err(Error::invalid("n_dialogues must be positive"));
    }
    if spec.n_emotions == 0 || spec.n_emotions > EmotionLabel::COUNT {
        return Err(Error::invalid(format!(
            "n_emotions must be in 1..={}, got {}",
            EmotionLabel::COUNT,
            spec.n_emotions
        )));
    }
    if spec.n_intents == 0 || spec.n_intents > IntentLabel::COUNT {
        return Err(Error::invalid(format!(
            "n_intents must be in 1..={}, got {}",
            IntentLabel::COUNT,
            spec.n_intents
        )));
    }
    let emotions = emotion_palette(spec.n_emotions);
    let intents = &IntentLabel::ALL[..spec.n_intents];
    let mut vocab = Vocab::new();
    let mut r = rng::stream_rng(spec.seed, Stream::Synth);
    let mut dialogues = Vec::with_capacity(spec.n_dialogues);
    for d in 0..spec.n_dialogues {
        let emo = emotions[d % emotions.len()];
        // Block-rotated assignment: uniform within ±1 and decorrelated from
        // the emotion cycle even when the two counts share a divisor.
        let intent = intents[(d % intents.len() + d / intents.len()) % intents.len()];
        let filler = FILLERS[r.random_range(0..FILLERS.len())];
        let variant = r.random_range(0..2u8);
        let user_text = match variant {
            0 => format!(
                "i feel {} {} . i need {} now .",
                emo.name(),
                filler,
                REQUEST_WORDS[intent.index()]
            ),
            _ => format!(
                "{} i am feeling {} . give me {} please .",
                filler,
                emo.name(),
                REQUEST_WORDS[intent.index()]
            ),
        };
        let reply_text = REPLY_TEMPLATES[intent.index()].replace("{emo}", emo.name());

        let mut turns = Vec::new();
        if d % 3 == 2 {
            turns.push(make_turn(
                &mut vocab,
                Speaker::User,
                &format!("hello , i wanted to share something {filler} ."),
                None,
                None,
                None,
            ));
            turns.push(make_turn(
                &mut vocab,
                Speaker::Bot,
                "of course , i am listening .",
                None,
                None,
                None,
            ));
        }
        turns.push(make_turn(
            &mut vocab,
            Speaker::User,
            &user_text,
            Some(emo.name()),
            Some(emo),
            None,
        ));
        turns.push(make_turn(
            &mut vocab,
            Speaker::Bot,
            &reply_text,
            None,
            None,
            Some(intent),
        ));
        let target = turns.len() - 1;
        dialogues.push(Dialogue {
            id: format!("synth-{d}"),
            turns,
            target,
        });
    }
    Ok((dialogues, vocab))
}

fn make_turn(
    vocab: &mut Vocab,
    speaker: Speaker,
    text: &str,
    em_word: Option<&str>,
    emotion: Option<EmotionLabel>,
    intent: Option<IntentLabel>,
) -> Turn {
    let words = tokenize(text);
    let tokens: Vec<usize> = words.iter().map(|w| vocab.add_or_get(w)).collect();
    let reason_tags: Vec<Tag> = words
        .iter()
        .map(|w| match em_word {
            Some(e) if w == e => Tag::Em,
            _ => Tag::Noem,
        })
        .collect();
    Turn {
        speaker,
        text: text.to_string(),
        tokens,
        reason_tags,
        emotion,
        intent,
    }
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use super::*;
    use crate::corpus::Polarity;

    fn spec() -> SynthSpec {
        SynthSpec {
            seed: 1,
            n_dialogues: 100,
            n_emotions: 4,
            n_intents: 4,
        }
    }

    /// Classify a dialogue by scanning user tokens for planted keywords.
    fn keyword_oracle(
        d: &Dialogue,
        vocab: &Vocab,
        emotions: &[EmotionLabel],
        intents: &[IntentLabel],
    ) -> (Option<EmotionLabel>, Option<IntentLabel>) {
        let mut emo = None;
        let mut intent = None;
        for turn in d.context() {
            if turn.speaker != Speaker::User {
                continue;
            }
            for &tok in &turn.tokens {
                let w = vocab.token(tok);
                if let Some(e) = emotions.iter().find(|e| e.name() == w) {
                    emo = Some(*e);
                }
                if let Some(i) = intents.iter().find(|i| REQUEST_WORDS[i.index()] == w) {
                    intent = Some(*i);
                }
            }
        }
        (emo, intent)
    }

    #[test]
    fn generation_is_deterministic() {
        let (a, va) = generate_synthetic(&spec()).unwrap();
        let (b, vb) = generate_synthetic(&spec()).unwrap();
        assert_eq!(a, b);
        assert_eq!(va, vb);
    }

    #[test]
    fn bot_turns_are_all_noem() {
        let (ds, _) = generate_synthetic(&spec()).unwrap();
        for d in &ds {
            for t in &d.turns {
                if t.speaker == Speaker::Bot {
                    assert!(t.reason_tags.iter().all(|&x| x == Tag::Noem));
                }
            }
        }
    }

    #[test]
    fn em_tags_mark_exactly_the_emotion_keywords() {
        let (ds, vocab) = generate_synthetic(&spec()).unwrap();
        let names: Vec<&str> = emotion_palette(4).iter().map(|e| e.name()).collect();
        for d in &ds {
            for t in &d.turns {
                for (tok, tag) in t.tokens.iter().zip(&t.reason_tags) {
                    let is_kw =
                        t.speaker == Speaker::User && names.contains(&vocab.token(*tok));
                    assert_eq!(*tag == Tag::Em, is_kw, "dialogue {}", d.id);
                }
            }
        }
    }

    #[test]
    fn label_distribution_is_uniform_within_one() {
        let s = SynthSpec { n_dialogues: 103, ..spec() };
        let (ds, _) = generate_synthetic(&s).unwrap();
        let mut emo_counts: HashMap<EmotionLabel, usize> = HashMap::new();
        let mut int_counts: HashMap<IntentLabel, usize> = HashMap::new();
        for d in &ds {
            *emo_counts.entry(d.emotion().unwrap()).or_default() += 1;
            *int_counts.entry(d.target_turn().intent.unwrap()).or_default() += 1;
        }
        assert_eq!(emo_counts.len(), 4);
        assert_eq!(int_counts.len(), 4);
        let spread = |counts: Vec<usize>| {
            let lo = *counts.iter().min().unwrap();
            let hi = *counts.iter().max().unwrap();
            assert!(hi - lo <= 1, "spread {lo}..{hi}");
        };
        spread(emo_counts.into_values().collect());
        spread(int_counts.into_values().collect());
    }

    #[test]
    fn keyword_oracle_is_perfect() {
        let (ds, vocab) = generate_synthetic(&spec()).unwrap();
        let emotions = emotion_palette(4);
        let intents = &IntentLabel::ALL[..4];
        for d in &ds {
            let (e, i) = keyword_oracle(d, &vocab, &emotions, intents);
            assert_eq!(e, d.emotion(), "dialogue {}", d.id);
            assert_eq!(i, d.target_turn().intent, "dialogue {}", d.id);
        }
    }

    #[test]
    fn palette_interleaves_polarities() {
        let p = emotion_palette(4);
        let pols: Vec<Polarity> = p.iter().map(|e| e.polarity()).collect();
        assert_eq!(
            pols,
            vec![Polarity::Pos, Polarity::Neg, Polarity::Pos, Polarity::Neg]
        );
    }

    #[test]
    fn emotion_and_intent_are_decorrelated() {
        // With equal label counts, a naive modulo pairing would lock each
        // emotion to one intent; the rotated assignment must not.
        let (ds, _) = generate_synthetic(&spec()).unwrap();
        let mut pairs: HashMap<(usize, usize), usize> = HashMap::new();
        for d in &ds {
            let e = d.emotion().unwrap().index();
            let i = d.target_turn().intent.unwrap().index();
            *pairs.entry((e, i)).or_default() += 1;
        }
        assert!(pairs.len() == 16, "only {} of 16 pairs seen", pairs.len());
    }

    #[test]
    fn rejects_degenerate_requests() {
        assert!(generate_synthetic(&SynthSpec { n_dialogues: 0, ..spec() }).is_err());
        assert!(generate_synthetic(&SynthSpec { n_emotions: 0, ..spec() }).is_err());
        assert!(generate_synthetic(&SynthSpec { n_emotions: 33, ..spec() }).is_err());
        assert!(generate_synthetic(&SynthSpec { n_intents: 10, ..spec() }).is_err());
    }

    #[test]
    fn four_turn_dialogues_appear_and_validate() {
        let (ds, _) = generate_synthetic(&spec()).unwrap();
        let four: Vec<_> = ds.iter().filter(|d| d.turns.len() == 4).collect();
        assert!(!four.is_empty());
        for d in four {
            assert_eq!(d.target, 3);
            assert_eq!(d.turns[0].speaker, Speaker::User);
            assert_eq!(d.turns[1].speaker, Speaker::Bot);
        }
    }

    #[test]
    fn generated_corpus_roundtrips_through_jsonl() {
        let (ds, vocab) = generate_synthetic(&spec()).unwrap();
        let mut buf = Vec::new();
        crate::corpus::write_corpus(&mut buf, &ds).unwrap();
        let (back, vocab2) =
            crate::corpus::read_corpus(buf.as_slice(), crate::corpus::VocabMode::Build).unwrap();
        assert_eq!(ds, back);
        // Same construction order gives the same vocabulary.
        assert_eq!(vocab, vocab2);
    }
}
