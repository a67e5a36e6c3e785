//! Emotion classification with paired polarity experts: a valence lexicon
//! votes on the batch polarity, the vote routes each contagion state through
//! the matching expert head (or a soft vote of both), and training combines
//! a contrastive NT-Xent term with cross-entropy.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use crate::corpus::{EmotionLabel, Polarity};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Init, ParamId, ParamStore, TensorId};

/// NT-Xent temperature.
pub const TAU: f64 = 0.5;

const BUNDLED_LEXICON: &str = include_str!("../resources/lexicon.tsv");
const NEGATIONS: [&str; 6] = ["not", "no", "never", "none", "cannot", "hardly"];

/// Word-valence table with a negation rule: a negation word flips the sign of
/// the next scored word. Token sums above `t_pos` read as positive, below
/// `t_neg` as negative, neutral otherwise.
pub struct SentimentLexicon {
    scores: HashMap<String, f64>,
    negations: HashSet<&'static str>,
    pub t_pos: f64,
    pub t_neg: f64,
}

impl SentimentLexicon {
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut scores = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let lineno = i + 1;
            let (word, valence) = line.split_once('\t').ok_or_else(|| {
                Error::invalid(format!("lexicon line {lineno}: expected word<TAB>valence"))
            })?;
            let v: f64 = valence.trim().parse().map_err(|_| {
                Error::invalid(format!("lexicon line {lineno}: bad valence {valence:?}"))
            })?;
            if !(-1.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!(
                    "lexicon line {lineno}: valence {v} outside [-1, 1]"
                )));
            }
            if scores.insert(word.trim().to_string(), v).is_some() {
                return Err(Error::invalid(format!(
                    "lexicon line {lineno}: duplicate word {word:?}"
                )));
            }
        }
        Ok(SentimentLexicon {
            scores,
            negations: NEGATIONS.iter().copied().collect(),
            t_pos: 0.05,
            t_neg: -0.05,
        })
    }

    /// The compiled-in lexicon; its validity is covered by tests.
    pub fn bundled() -> Self {
        Self::from_tsv(BUNDLED_LEXICON).expect("bundled lexicon is well-formed")
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_tsv(&std::fs::read_to_string(path)?)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn sentiment<S: AsRef<str>>(&self, tokens: &[S]) -> Polarity {
        let mut total = 0.0;
        let mut negate = false;
        for t in tokens {
            let t = t.as_ref();
            if self.negations.contains(t) {
                negate = true;
                continue;
            }
            if let Some(&v) = self.scores.get(t) {
                total += if negate { -v } else { v };
                negate = false;
            }
        }
        if total > self.t_pos {
            Polarity::Pos
        } else if total < self.t_neg {
            Polarity::Neg
        } else {
            Polarity::Neu
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolarityCounts {
    pub n_pos: usize,
    pub n_neg: usize,
    pub n_neu: usize,
    pub v: Polarity,
}

/// Majority polarity of a batch; any tie for the top count resolves to
/// neutral (which routes through the soft vote of both experts).
pub fn polarity_vote(sentiments: &[Polarity]) -> Result<PolarityCounts> {
    if sentiments.is_empty() {
        return Err(Error::invalid("polarity vote over an empty batch"));
    }
    let mut n = [0usize; 3];
    for s in sentiments {
        let i = match s {
            Polarity::Pos => 0,
            Polarity::Neg => 1,
            Polarity::Neu => 2,
        };
        n[i] += 1;
    }
    let top = *n.iter().max().unwrap();
    let winners = n.iter().filter(|&&c| c == top).count();
    let v = if winners > 1 {
        Polarity::Neu
    } else if n[0] == top {
        Polarity::Pos
    } else if n[1] == top {
        Polarity::Neg
    } else {
        Polarity::Neu
    };
    Ok(PolarityCounts { n_pos: n[0], n_neg: n[1], n_neu: n[2], v })
}

/// The two expert heads and the shared emotion projection.
pub struct EmotionClassifier {
    pub w_pos: ParamId,
    pub w_neg: ParamId,
    pub e_emo: ParamId,
}

impl EmotionClassifier {
    pub fn new(store: &mut ParamStore, d_model: usize) -> Self {
        let n = EmotionLabel::COUNT;
        EmotionClassifier {
            w_pos: store.add("emo.w_pos", &[n, d_model], Init::Uniform { fan_in: d_model }),
            w_neg: store.add("emo.w_neg", &[n, d_model], Init::Uniform { fan_in: d_model }),
            e_emo: store.add("emo.proj", &[d_model, d_model], Init::Uniform { fan_in: d_model }),
        }
    }

    /// Logits `[1 × 32]` for one contagion state under the routing rule:
    /// positive → positive expert, negative → negative expert, neutral → the
    /// element-wise mean of both experts' logits.
    pub fn logits(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        q: TensorId,
        v: Polarity,
    ) -> TensorId {
        let e = g.param(store, self.e_emo);
        let et = g.transpose(e);
        let q_row = g.reshape(q, &[1, g.data(q).len()]);
        let qe = g.matmul(q_row, et);
        let head = |g: &mut Graph, w: ParamId| {
            let w = g.param(store, w);
            let wt = g.transpose(w);
            g.matmul(qe, wt)
        };
        match v {
            Polarity::Pos => head(g, self.w_pos),
            Polarity::Neg => head(g, self.w_neg),
            Polarity::Neu => {
                let a = head(g, self.w_pos);
                let b = head(g, self.w_neg);
                let s = g.add(a, b);
                g.scale(s, 0.5)
            }
        }
    }

    /// Probability distribution over the 32 emotions.
    pub fn classify(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        q: TensorId,
        v: Polarity,
    ) -> Result<TensorId> {
        let l = self.logits(g, store, q, v);
        g.softmax(l)
    }

    /// `−ln p[gold]` with the probability floored, as one graph node.
    pub fn cross_entropy(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        q: TensorId,
        v: Polarity,
        gold: EmotionLabel,
    ) -> Result<TensorId> {
        let p = self.classify(g, store, q, v)?;
        let pg = g.gather(p, gold.index());
        let lp = g.ln_clamped(pg);
        Ok(g.scale(lp, -1.0))
    }

    /// Batch loss: NT-Xent over the states plus the mean cross-entropy, all
    /// under the single batch-level polarity `v`.
    pub fn loss(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        qs: &[TensorId],
        labels: &[EmotionLabel],
        v: Polarity,
    ) -> Result<TensorId> {
        if qs.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} states vs {} labels",
                qs.len(),
                labels.len()
            )));
        }
        // A singleton batch has no contrastive pairs, so its pull term is
        // exactly zero rather than an error.
        let ntx = if qs.len() == 1 {
            g.leaf(vec![0.0], &[1])
        } else {
            let q_rows = g.stack_rows(qs);
            nt_xent(g, q_rows, labels, TAU)?
        };
        let mut ce_nodes = Vec::with_capacity(qs.len());
        for (&q, &label) in qs.iter().zip(labels) {
            ce_nodes.push(self.cross_entropy(g, store, q, v, label)?);
        }
        let ce_cat = g.concat(&ce_nodes);
        let ce_mean = g.mean(ce_cat);
        Ok(g.add(ntx, ce_mean))
    }

    /// Inference: lexicon polarity of the user tokens, routed classification,
    /// argmax label.
    pub fn predict(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        q: TensorId,
        sentiment: Polarity,
    ) -> Result<(EmotionLabel, TensorId)> {
        let v = polarity_vote(&[sentiment])?.v;
        let p = self.classify(g, store, q, v)?;
        let probs = g.data(p);
        let mut best = 0;
        for i in 1..probs.len() {
            if probs[i] > probs[best] {
                best = i;
            }
        }
        Ok((EmotionLabel::from_index(best).unwrap(), p))
    }
}

/// NT-Xent over state rows: every same-label pair (i, j) is a positive, every
/// other row a negative; similarities are cosine over temperature. A batch
/// with no positive pair yields exactly zero.
pub fn nt_xent(
    g: &mut Graph,
    q_rows: TensorId,
    labels: &[EmotionLabel],
    tau: f64,
) -> Result<TensorId> {
    let b = g.shape(q_rows)[0];
    let d = g.shape(q_rows)[1];
    if b < 2 {
        return Err(Error::invalid("NT-Xent needs a batch of at least 2"));
    }
    if labels.len() != b {
        return Err(Error::invalid(format!("{} labels for batch {b}", labels.len())));
    }
    // Row-normalize: q / ‖q‖.
    let sq = g.mul(q_rows, q_rows);
    let ones_col = g.leaf(vec![1.0; d], &[d, 1]);
    let norms_sq = g.matmul(sq, ones_col);
    let norms = g.sqrt(norms_sq);
    let ones_row = g.leaf(vec![1.0; d], &[1, d]);
    let norms_full = g.matmul(norms, ones_row);
    let qn = g.div(q_rows, norms_full);

    let qt = g.transpose(qn);
    let cos = g.matmul(qn, qt);
    let sims = g.scale(cos, 1.0 / tau);
    // Self-similarity must never be a candidate.
    let mut diag = vec![0.0; b * b];
    for i in 0..b {
        diag[i * b + i] = -1e9;
    }
    let mask = g.leaf(diag, &[b, b]);
    let masked = g.add(sims, mask);
    let logp = g.log_softmax(masked)?;

    let mut pos_pairs = vec![0.0; b * b];
    for i in 0..b {
        for j in 0..b {
            if i != j && labels[i] == labels[j] {
                pos_pairs[i * b + j] = 1.0;
            }
        }
    }
    let pos = g.leaf(pos_pairs, &[b, b]);
    let picked = g.mul(logp, pos);
    let total = g.sum(picked);
    Ok(g.scale(total, -1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Stream};
    use crate::tensor::{Precision, DEFAULT_H, DEFAULT_TOL};

    #[test]
    fn bundled_lexicon_loads_and_covers_every_emotion() {
        let lex = SentimentLexicon::bundled();
        assert!(lex.len() >= 100, "only {} entries", lex.len());
        for e in EmotionLabel::ALL {
            let got = lex.sentiment(&[e.name()]);
            assert_eq!(got, e.polarity(), "{}", e.name());
        }
    }

    #[test]
    fn lexicon_sentiment_rules() {
        let lex = SentimentLexicon::bundled();
        assert_eq!(lex.sentiment(&["great"]), Polarity::Pos);
        assert_eq!(lex.sentiment(&["not", "great"]), Polarity::Neg);
        let empty: [&str; 0] = [];
        assert_eq!(lex.sentiment(&empty), Polarity::Neu);
        // Negation skips unscored words and flips the next scored one.
        assert_eq!(lex.sentiment(&["not", "today", "great"]), Polarity::Neg);
        // Exactly cancelling valences land in the neutral band.
        assert_eq!(lex.sentiment(&["great", "terrible"]), Polarity::Neu);
    }

    #[test]
    fn lexicon_parser_rejects_malformed_input() {
        assert!(SentimentLexicon::from_tsv("word-without-tab").is_err());
        assert!(SentimentLexicon::from_tsv("w\tnot-a-number").is_err());
        assert!(SentimentLexicon::from_tsv("w\t1.5").is_err());
        assert!(SentimentLexicon::from_tsv("w\t0.5\nw\t0.4").is_err());
        let ok = SentimentLexicon::from_tsv("w\t0.5\n\nx\t-0.25\n").unwrap();
        assert_eq!(ok.len(), 2);
    }

    #[test]
    fn vote_counts_and_tie_rule() {
        use Polarity::*;
        let c = polarity_vote(&[Pos, Pos, Neg]).unwrap();
        assert_eq!((c.n_pos, c.n_neg, c.n_neu, c.v), (2, 1, 0, Pos));
        assert_eq!(polarity_vote(&[Pos, Neg]).unwrap().v, Neu);
        assert_eq!(polarity_vote(&[Neg, Neg, Neu]).unwrap().v, Neg);
        assert_eq!(polarity_vote(&[Neu]).unwrap().v, Neu);
        assert!(polarity_vote(&[]).is_err());
    }

    #[test]
    fn vote_matches_tally_oracle_on_random_batches() {
        let mut r = rng::stream_rng(31, Stream::GradCheck);
        for _ in 0..50 {
            let batch: Vec<Polarity> = (0..32)
                .map(|_| match rng::uniform(&mut r, 0.0, 3.0) as usize {
                    0 => Polarity::Pos,
                    1 => Polarity::Neg,
                    _ => Polarity::Neu,
                })
                .collect();
            let c = polarity_vote(&batch).unwrap();
            let pos = batch.iter().filter(|&&p| p == Polarity::Pos).count();
            let neg = batch.iter().filter(|&&p| p == Polarity::Neg).count();
            let neu = batch.iter().filter(|&&p| p == Polarity::Neu).count();
            assert_eq!((c.n_pos, c.n_neg, c.n_neu), (pos, neg, neu));
            assert_eq!(c.n_pos + c.n_neg + c.n_neu, 32);
        }
    }

    fn random_q(g: &mut Graph, seed: u64, d: usize) -> TensorId {
        let mut r = rng::stream_rng(seed, Stream::GradCheck);
        let data: Vec<f64> = (0..d).map(|_| rng::uniform(&mut r, -1.0, 1.0)).collect();
        g.leaf(data, &[d])
    }

    #[test]
    fn classify_is_a_distribution_on_every_branch() {
        let mut store = ParamStore::new(32, Precision::F64);
        let clf = EmotionClassifier::new(&mut store, 6);
        let mut g = Graph::new();
        let q = random_q(&mut g, 1, 6);
        for v in [Polarity::Pos, Polarity::Neg, Polarity::Neu] {
            let p = clf.classify(&mut g, &store, q, v).unwrap();
            assert_eq!(g.data(p).len(), 32);
            let s: f64 = g.data(p).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!(g.data(p).iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn positive_routing_ignores_the_negative_head() {
        let mut store = ParamStore::new(33, Precision::F64);
        let clf = EmotionClassifier::new(&mut store, 6);
        let mut g = Graph::new();
        let q = random_q(&mut g, 2, 6);
        let p0 = clf.classify(&mut g, &store, q, Polarity::Pos).unwrap();
        let before = g.data(p0).to_vec();
        for v in &mut store.get_mut(clf.w_neg).data {
            *v += 3.7;
        }
        let mut g = Graph::new();
        let q = random_q(&mut g, 2, 6);
        let p1 = clf.classify(&mut g, &store, q, Polarity::Pos).unwrap();
        let after = g.data(p1).to_vec();
        assert_eq!(before, after);

        // And symmetrically, the negative route ignores w_pos.
        let n0 = clf.classify(&mut g, &store, q, Polarity::Neg).unwrap();
        let nb = g.data(n0).to_vec();
        for v in &mut store.get_mut(clf.w_pos).data {
            *v -= 1.3;
        }
        let mut g = Graph::new();
        let q = random_q(&mut g, 2, 6);
        let n1 = clf.classify(&mut g, &store, q, Polarity::Neg).unwrap();
        let na = g.data(n1).to_vec();
        assert_eq!(nb, na);
    }

    #[test]
    fn neutral_vote_with_equal_heads_matches_either_expert() {
        let mut store = ParamStore::new(34, Precision::F64);
        let clf = EmotionClassifier::new(&mut store, 6);
        let pos_data = store.get(clf.w_pos).data.clone();
        store.get_mut(clf.w_neg).data.copy_from_slice(&pos_data);
        let mut g = Graph::new();
        let q = random_q(&mut g, 3, 6);
        let pn = clf.classify(&mut g, &store, q, Polarity::Neu).unwrap();
        let pp = clf.classify(&mut g, &store, q, Polarity::Pos).unwrap();
        for (a, b) in g.data(pn).iter().zip(g.data(pp)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn classify_matches_scalar_oracle() {
        let mut store = ParamStore::new(35, Precision::F64);
        let d = 5;
        let clf = EmotionClassifier::new(&mut store, d);
        let mut g = Graph::new();
        let q = random_q(&mut g, 4, d);
        let p = clf.classify(&mut g, &store, q, Polarity::Pos).unwrap();

        let e = store.get(clf.e_emo).data.clone();
        let w = store.get(clf.w_pos).data.clone();
        let qd = g.data(q).to_vec();
        let mut eq = vec![0.0; d];
        for i in 0..d {
            for j in 0..d {
                eq[i] += e[i * d + j] * qd[j];
            }
        }
        let mut logits = vec![0.0; 32];
        for k in 0..32 {
            for i in 0..d {
                logits[k] += w[k * d + i] * eq[i];
            }
        }
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        for k in 0..32 {
            assert!((g.data(p)[k] - exps[k] / z).abs() < 1e-10, "{k}");
        }
    }

    #[test]
    fn nt_xent_trivial_batches() {
        let mut g = Graph::new();
        // Different labels: no positive pairs → exactly 0.
        let q = g.leaf(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]);
        let l = nt_xent(&mut g, q, &[EmotionLabel::Sad, EmotionLabel::Joyful], TAU).unwrap();
        assert_eq!(g.value(l), 0.0);

        // Identical vectors, same label, batch of 2: the sole candidate is
        // the positive → −log 1 = 0.
        let q = g.leaf(vec![0.6, 0.8, 0.6, 0.8], &[2, 2]);
        let l = nt_xent(&mut g, q, &[EmotionLabel::Sad, EmotionLabel::Sad], TAU).unwrap();
        assert!(g.value(l).abs() < 1e-12);

        let q = g.leaf(vec![1.0, 0.0], &[1, 2]);
        assert!(nt_xent(&mut g, q, &[EmotionLabel::Sad], TAU).is_err());
    }

    #[test]
    fn nt_xent_matches_direct_formula() {
        let mut g = Graph::new();
        let data = vec![0.9, 0.1, -0.3, 0.7, 0.2, -0.5, 0.4, 0.4, 0.1];
        let labels = [EmotionLabel::Sad, EmotionLabel::Sad, EmotionLabel::Joyful];
        let q = g.leaf(data.clone(), &[3, 3]);
        let l = nt_xent(&mut g, q, &labels, TAU).unwrap();

        let row = |i: usize| &data[i * 3..(i + 1) * 3];
        let cos = |a: &[f64], b: &[f64]| {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            dot / (na * nb)
        };
        let mut want = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                if i != j && labels[i] == labels[j] {
                    let sij = cos(row(i), row(j)) / TAU;
                    let z: f64 = (0..3)
                        .filter(|&k| k != i)
                        .map(|k| (cos(row(i), row(k)) / TAU).exp())
                        .sum();
                    want -= sij - z.ln();
                }
            }
        }
        assert!((g.value(l) - want).abs() < 1e-10, "{} vs {want}", g.value(l));
    }

    #[test]
    fn nt_xent_is_nonnegative_on_random_batches() {
        for seed in 0..20u64 {
            let mut r = rng::stream_rng(seed, Stream::GradCheck);
            let b = 2 + (seed % 4) as usize;
            let data: Vec<f64> = (0..b * 4).map(|_| rng::uniform(&mut r, -2.0, 2.0)).collect();
            let labels: Vec<EmotionLabel> = (0..b)
                .map(|i| EmotionLabel::from_index(i % 3).unwrap())
                .collect();
            let mut g = Graph::new();
            let q = g.leaf(data, &[b, 4]);
            let l = nt_xent(&mut g, q, &labels, TAU).unwrap();
            assert!(g.value(l) >= -1e-12, "seed {seed}: {}", g.value(l));
        }
    }

    #[test]
    fn uniform_probabilities_cost_ln_32() {
        let mut store = ParamStore::new(36, Precision::F64);
        let clf = EmotionClassifier::new(&mut store, 6);
        store.get_mut(clf.w_pos).data.fill(0.0);
        let mut g = Graph::new();
        let q = random_q(&mut g, 5, 6);
        let ce = clf
            .cross_entropy(&mut g, &store, q, Polarity::Pos, EmotionLabel::Angry)
            .unwrap();
        assert!((g.value(ce) - 32f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn batch_loss_is_the_sum_of_its_parts() {
        let mut store = ParamStore::new(37, Precision::F64);
        let clf = EmotionClassifier::new(&mut store, 5);
        let mut g = Graph::new();
        let qs = [random_q(&mut g, 6, 5), random_q(&mut g, 7, 5), random_q(&mut g, 8, 5)];
        let labels = [EmotionLabel::Sad, EmotionLabel::Sad, EmotionLabel::Angry];
        let total = clf.loss(&mut g, &store, &qs, &labels, Polarity::Neg).unwrap();

        let rows = g.stack_rows(&qs);
        let ntx = nt_xent(&mut g, rows, &labels, TAU).unwrap();
        let mut ce_sum = 0.0;
        for (q, label) in qs.iter().zip(labels) {
            let ce = clf.cross_entropy(&mut g, &store, *q, Polarity::Neg, label).unwrap();
            ce_sum += g.value(ce);
        }
        let want = g.value(ntx) + ce_sum / 3.0;
        assert!((g.value(total) - want).abs() < 1e-10);
        assert!(clf.loss(&mut g, &store, &qs, &labels[..2], Polarity::Neg).is_err());
    }

    #[test]
    fn singleton_batch_loss_is_plain_cross_entropy() {
        let mut store = ParamStore::new(37, Precision::F64);
        let clf = EmotionClassifier::new(&mut store, 5);
        let mut g = Graph::new();
        let q = random_q(&mut g, 9, 5);
        let total = clf
            .loss(&mut g, &store, &[q], &[EmotionLabel::Lonely], Polarity::Neg)
            .unwrap();
        let ce = clf
            .cross_entropy(&mut g, &store, q, Polarity::Neg, EmotionLabel::Lonely)
            .unwrap();
        assert_eq!(g.value(total), g.value(ce));
    }

    #[test]
    fn emotion_loss_passes_finite_difference() {
        let mut store = ParamStore::new(38, Precision::F64);
        let clf = EmotionClassifier::new(&mut store, 5);
        let q0 = store.add("test.q0", &[5], Init::Normal { std: 1.0 });
        let q1 = store.add("test.q1", &[5], Init::Normal { std: 1.0 });
        let q2 = store.add("test.q2", &[5], Init::Normal { std: 1.0 });
        let labels = [EmotionLabel::Sad, EmotionLabel::Sad, EmotionLabel::Joyful];
        let report = crate::tensor::check_gradients(
            "emotion_loss",
            &mut store,
            |s| {
                let mut g = Graph::new();
                let qs = [g.param(s, q0), g.param(s, q1), g.param(s, q2)];
                let l = clf.loss(&mut g, s, &qs, &labels, Polarity::Neu)?;
                Ok((g, l))
            },
            DEFAULT_H,
            DEFAULT_TOL,
            5,
            39,
        )
        .unwrap();
        assert!(report.passed, "{report}");
    }

    #[test]
    fn predict_returns_the_argmax_label() {
        let mut store = ParamStore::new(39, Precision::F64);
        let clf = EmotionClassifier::new(&mut store, 4);
        // Rig the positive head so label 9 (joyful) wins for a fixed q.
        store.get_mut(clf.w_pos).data.fill(0.0);
        for j in 0..4 {
            store.get_mut(clf.w_pos).data[EmotionLabel::Joyful.index() * 4 + j] = 1.0;
        }
        let e_data: Vec<f64> = (0..16).map(|i| if i % 5 == 0 { 1.0 } else { 0.0 }).collect();
        store.get_mut(clf.e_emo).data.copy_from_slice(&e_data);
        let mut g = Graph::new();
        let q = g.leaf(vec![1.0, 1.0, 1.0, 1.0], &[4]);
        let (label, p) = clf.predict(&mut g, &store, q, Polarity::Pos).unwrap();
        assert_eq!(label, EmotionLabel::Joyful);
        let s: f64 = g.data(p).iter().sum();
        assert!((s - 1.0).abs() < 1e-9);
    }
}
