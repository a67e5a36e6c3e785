//! Automatic evaluation: corpus BLEU, distinct-n, perplexity, and label
//! accuracy, plus the JSON report that bundles them.

use std::collections::{HashMap, HashSet};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::PROB_FLOOR;

/// Evaluation summary. Perplexity and the accuracies need a model; when
/// scoring a bare hypothesis file they stay `None` and serialize as null.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(rename = "B-1")]
    pub b1: f64,
    #[serde(rename = "B-2")]
    pub b2: f64,
    #[serde(rename = "B-3")]
    pub b3: f64,
    #[serde(rename = "B-4")]
    pub b4: f64,
    #[serde(rename = "D-1")]
    pub d1: f64,
    #[serde(rename = "D-2")]
    pub d2: f64,
    #[serde(rename = "PPL")]
    pub ppl: Option<f64>,
    #[serde(rename = "Acc_emo")]
    pub acc_emo: Option<f64>,
    #[serde(rename = "Acc_Intent")]
    pub acc_intent: Option<f64>,
    pub n_samples: usize,
}

impl EvalReport {
    pub fn validate(&self) -> Result<()> {
        let pct = |name: &str, v: f64| {
            if (0.0..=100.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} = {v} outside [0, 100]")))
            }
        };
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} = {v} outside [0, 1]")))
            }
        };
        pct("B-1", self.b1)?;
        pct("B-2", self.b2)?;
        pct("B-3", self.b3)?;
        pct("B-4", self.b4)?;
        unit("D-1", self.d1)?;
        unit("D-2", self.d2)?;
        if let Some(p) = self.ppl {
            if !(p >= 1.0) {
                return Err(Error::invalid(format!("PPL = {p} below 1")));
            }
        }
        if let Some(a) = self.acc_emo {
            pct("Acc_emo", a)?;
        }
        if let Some(a) = self.acc_intent {
            pct("Acc_Intent", a)?;
        }
        Ok(())
    }
}

/// Corpus-level BLEU-n as a percent: brevity penalty times the geometric
/// mean of clipped n-gram precisions for orders `1..=n`. When an order ≥ 2
/// has zero matches, one is added to its numerator and denominator; a zero
/// unigram precision yields 0 outright.
pub fn bleu_n<T: Eq + Hash>(hyps: &[Vec<T>], refs: &[Vec<T>], n: usize) -> Result<f64> {
    if hyps.is_empty() {
        return Err(Error::invalid("BLEU over an empty corpus"));
    }
    if hyps.len() != refs.len() {
        return Err(Error::invalid(format!(
            "{} hypotheses vs {} references",
            hyps.len(),
            refs.len()
        )));
    }
    if n == 0 || n > 4 {
        return Err(Error::invalid(format!("BLEU order {n} outside 1..=4")));
    }
    let mut log_p_sum = 0.0;
    for k in 1..=n {
        let mut num = 0usize;
        let mut den = 0usize;
        for (h, r) in hyps.iter().zip(refs) {
            let ref_counts = ngram_counts(r, k);
            for (gram, count) in ngram_counts(h, k) {
                num += count.min(ref_counts.get(&gram).copied().unwrap_or(0));
                den += count;
            }
        }
        let (num, den) = if num == 0 && k >= 2 {
            (num + 1, den + 1)
        } else {
            (num, den)
        };
        if num == 0 {
            return Ok(0.0);
        }
        log_p_sum += (num as f64 / den as f64).ln();
    }
    let hyp_len: usize = hyps.iter().map(Vec::len).sum();
    let ref_len: usize = refs.iter().map(Vec::len).sum();
    let bp = if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len.max(1) as f64).exp()
    } else {
        1.0
    };
    Ok(100.0 * bp * (log_p_sum / n as f64).exp())
}

fn ngram_counts<T: Eq + Hash>(seq: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    for gram in seq.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Fraction of n-grams in the whole hypothesis set that are unique.
pub fn distinct_n<T: Eq + Hash>(hyps: &[Vec<T>], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("distinct-0 is undefined"));
    }
    let mut seen: HashSet<&[T]> = HashSet::new();
    let mut total = 0usize;
    for h in hyps {
        for gram in h.windows(n) {
            seen.insert(gram);
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::invalid(format!(
            "no hypothesis has {n} or more tokens"
        )));
    }
    Ok(seen.len() as f64 / total as f64)
}

/// `exp(mean −ln p)` over the gold-token probabilities, with probabilities
/// floored at `PROB_FLOOR` (matching the training loss). Returns the
/// perplexity and how many tokens hit the floor.
pub fn perplexity(gold_probs: &[f64]) -> Result<(f64, usize)> {
    if gold_probs.is_empty() {
        return Err(Error::invalid("perplexity over zero tokens"));
    }
    let mut floored = 0usize;
    let mut nll = 0.0;
    for &p in gold_probs {
        if !p.is_finite() || p < 0.0 {
            return Err(Error::invalid(format!("probability {p} is not in [0, 1]")));
        }
        if p < PROB_FLOOR {
            floored += 1;
        }
        nll -= p.max(PROB_FLOOR).ln();
    }
    Ok(((nll / gold_probs.len() as f64).exp(), floored))
}

/// Exact-match percent.
pub fn accuracy<T: PartialEq>(predictions: &[T], golds: &[T]) -> Result<f64> {
    if predictions.len() != golds.len() {
        return Err(Error::invalid(format!(
            "{} predictions vs {} golds",
            predictions.len(),
            golds.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::invalid("accuracy over zero samples"));
    }
    let hits = predictions.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(100.0 * hits as f64 / predictions.len() as f64)
}
