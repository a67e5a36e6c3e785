//! Emotion-reason tagging: a token encoder, a pairwise attention composition
//! that lets each token pool evidence from the whole context, and a
//! linear-chain CRF over {em, noem} with virtual start/stop states.

use crate::corpus::{FlatContext, Tag, PAD};
use crate::error::{Error, Result};
use crate::nn::{key_mask, Encoder};
use crate::tensor::{Graph, Init, ParamId, ParamStore, TensorId};

/// CRF state indices. `em`/`noem` mirror `Tag::index()`; start/stop exist
/// only inside the transition matrix.
const S_EM: usize = 0;
const S_NOEM: usize = 1;
const S_START: usize = 2;
const S_STOP: usize = 3;
/// Real tags plus the two virtual boundary states.
pub const CRF_STATES: usize = 4;

pub struct Era {
    e_w: ParamId,
    e_p: ParamId,
    encoder: Encoder,
    /// Bilinear pairwise score: score(h_a, h_b) = h_aᵀ·W_att·h_b.
    w_att: ParamId,
    /// Emission projection onto the two tags.
    w_r: ParamId,
    /// Transition matrix over `CRF_STATES`.
    a: ParamId,
    max_len: usize,
}

impl Era {
    pub fn new(
        store: &mut ParamStore,
        vocab_size: usize,
        d_model: usize,
        heads: usize,
        layers: usize,
        max_len: usize,
    ) -> Self {
        Era {
            e_w: store.add("era.e_w", &[vocab_size, d_model], Init::Normal { std: 0.1 }),
            e_p: store.add("era.e_p", &[max_len, d_model], Init::Normal { std: 0.1 }),
            encoder: Encoder::new(store, "era.enc", d_model, heads, layers, 4 * d_model),
            w_att: store.add("era.w_att", &[d_model, d_model], Init::Uniform { fan_in: d_model }),
            w_r: store.add("era.w_r", &[2, d_model], Init::Uniform { fan_in: d_model }),
            a: store.add("era.a", &[CRF_STATES, CRF_STATES], Init::Zeros),
            max_len,
        }
    }

    /// Contextual token vectors `[len × d_model]`. Positions where `valid` is
    /// false (by default, PAD tokens) are excluded as attention keys, so they
    /// cannot influence any valid position.
    pub fn encode_tokens(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        tokens: &[usize],
        valid: Option<&[bool]>,
    ) -> Result<TensorId> {
        if tokens.is_empty() {
            return Err(Error::invalid("encode_tokens: empty sequence"));
        }
        if tokens.len() > self.max_len {
            return Err(Error::invalid(format!(
                "sequence length {} exceeds max_len {}",
                tokens.len(),
                self.max_len
            )));
        }
        let derived: Vec<bool>;
        let valid = match valid {
            Some(v) => {
                if v.len() != tokens.len() {
                    return Err(Error::invalid("valid mask length != token count"));
                }
                v
            }
            None => {
                derived = tokens.iter().map(|&t| t != PAD).collect();
                &derived
            }
        };
        let e_w = g.param(store, self.e_w);
        let e_p = g.param(store, self.e_p);
        let tok = g.rows(e_w, tokens);
        let positions: Vec<usize> = (0..tokens.len()).collect();
        let pos = g.rows(e_p, &positions);
        let x = g.add(tok, pos);
        let mask = key_mask(tokens.len(), valid);
        self.encoder.forward(g, store, x, Some(&mask))
    }

    /// Pairwise attention composition: `α = softmax(h·W_att·hᵀ)` row-wise,
    /// `h̃ = α·h`. Returns `(h̃, α)`.
    pub fn compose_attention(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        h: TensorId,
    ) -> Result<(TensorId, TensorId)> {
        let w = g.param(store, self.w_att);
        let ht = g.transpose(h);
        let wht = g.matmul(w, ht);
        let scores = g.matmul(h, wht);
        let alpha = g.softmax(scores)?;
        let h_tilde = g.matmul(alpha, h);
        Ok((h_tilde, alpha))
    }

    /// Per-position tag scores `[len × 2]`.
    pub fn emissions(&self, g: &mut Graph, store: &ParamStore, h_tilde: TensorId) -> TensorId {
        let w_r = g.param(store, self.w_r);
        let wt = g.transpose(w_r);
        g.matmul(h_tilde, wt)
    }

    /// `−log P(tags | h̃)`: gold path score minus the log-partition, which the
    /// forward algorithm accumulates in log space.
    pub fn crf_nll(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        emissions: TensorId,
        tags: &[Tag],
    ) -> Result<TensorId> {
        let len = g.shape(emissions)[0];
        if tags.len() != len {
            return Err(Error::invalid(format!(
                "{} tags for {len} positions",
                tags.len()
            )));
        }
        let a = g.param(store, self.a);

        // Gold path score: pick out the used emissions and count each
        // transition, including start→first and last→stop.
        let mut em_pick = vec![0.0; len * 2];
        for (t, tag) in tags.iter().enumerate() {
            em_pick[t * 2 + tag.index()] = 1.0;
        }
        let mut tr_count = vec![0.0; CRF_STATES * CRF_STATES];
        tr_count[S_START * CRF_STATES + tags[0].index()] += 1.0;
        for w in tags.windows(2) {
            tr_count[w[0].index() * CRF_STATES + w[1].index()] += 1.0;
        }
        tr_count[tags[len - 1].index() * CRF_STATES + S_STOP] += 1.0;
        let em_mask = g.leaf(em_pick, &[len, 2]);
        let tr_mask = g.leaf(tr_count, &[CRF_STATES, CRF_STATES]);
        let em_score = g.mul(emissions, em_mask);
        let em_score = g.sum(em_score);
        let tr_score = g.mul(a, tr_mask);
        let tr_score = g.sum(tr_score);
        let gold = g.add(em_score, tr_score);

        // Forward algorithm. `fwd[j]` is the log-score of all paths ending in
        // state j at the current position.
        let start_row = g.slice_rows(a, S_START, S_START + 1);
        let start = g.slice_cols(start_row, 0, 2);
        let trans = g.slice_rows(a, 0, 2);
        let trans = g.slice_cols(trans, 0, 2);
        let trans_t = g.transpose(trans);
        let e0 = g.slice_rows(emissions, 0, 1);
        let mut fwd = g.add(e0, start);
        for t in 1..len {
            // n[j][i] = A[i][j] + fwd[i]; log-sum-exp over i per row j.
            let n = g.add_row(trans_t, fwd);
            let lse = g.log_sum_exp_rows(n);
            let lse = g.reshape(lse, &[1, 2]);
            let et = g.slice_rows(emissions, t, t + 1);
            fwd = g.add(et, lse);
        }
        let stop_col = g.slice_cols(a, S_STOP, S_STOP + 1);
        let stop = g.slice_rows(stop_col, 0, 2);
        let stop = g.reshape(stop, &[1, 2]);
        let terminal = g.add(fwd, stop);
        let log_z = g.log_sum_exp_rows(terminal);

        Ok(g.sub(log_z, gold))
    }

    /// Most probable tag path. Ties break toward noem at every comparison,
    /// so an all-equal score landscape decodes as all-noem.
    pub fn viterbi_decode(
        &self,
        g: &Graph,
        store: &ParamStore,
        emissions: TensorId,
    ) -> Vec<Tag> {
        let em = g.data(emissions);
        let len = g.shape(emissions)[0];
        let a = &store.get(self.a).data;
        let at = |i: usize, j: usize| a[i * CRF_STATES + j];
        // Candidate order puts noem first; a later candidate must strictly
        // beat the incumbent, which implements the tie rule.
        const ORDER: [usize; 2] = [S_NOEM, S_EM];

        let mut score = vec![[0.0f64; 2]; len];
        let mut back = vec![[S_NOEM; 2]; len];
        for j in 0..2 {
            score[0][j] = em[j] + at(S_START, j);
        }
        for t in 1..len {
            for j in 0..2 {
                let mut best = f64::NEG_INFINITY;
                let mut arg = S_NOEM;
                for i in ORDER {
                    let s = score[t - 1][i] + at(i, j);
                    if s > best {
                        best = s;
                        arg = i;
                    }
                }
                score[t][j] = em[t * 2 + j] + best;
                back[t][j] = arg;
            }
        }
        let mut best = f64::NEG_INFINITY;
        let mut last = S_NOEM;
        for j in ORDER {
            let s = score[len - 1][j] + at(j, S_STOP);
            if s > best {
                best = s;
                last = j;
            }
        }
        let mut states = vec![last; len];
        for t in (1..len).rev() {
            states[t - 1] = back[t][states[t]];
        }
        states
            .into_iter()
            .map(|s| if s == S_EM { Tag::Em } else { Tag::Noem })
            .collect()
    }

    /// Training loss for one flattened context.
    pub fn loss(&self, g: &mut Graph, store: &ParamStore, fc: &FlatContext) -> Result<TensorId> {
        let h = self.encode_tokens(g, store, &fc.tokens, None)?;
        let (h_tilde, _) = self.compose_attention(g, store, h)?;
        let em = self.emissions(g, store, h_tilde);
        self.crf_nll(g, store, em, &fc.tags)
    }

    /// Predicted tags for a flattened context (bot positions forced to noem)
    /// plus the composed representation the downstream encoder consumes.
    pub fn annotate(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        fc: &FlatContext,
    ) -> Result<(Vec<Tag>, TensorId)> {
        let h = self.encode_tokens(g, store, &fc.tokens, None)?;
        let (h_tilde, _) = self.compose_attention(g, store, h)?;
        let em = self.emissions(g, store, h_tilde);
        let mut tags = self.viterbi_decode(g, store, em);
        for (tag, &user) in tags.iter_mut().zip(&fc.is_user) {
            if !user {
                *tag = Tag::Noem;
            }
        }
        Ok((tags, h_tilde))
    }
}

/// F1 of the em class. An example with no em tags anywhere counts as perfect.
pub fn tag_f1(pred: &[Tag], gold: &[Tag]) -> f64 {
    assert_eq!(pred.len(), gold.len(), "tag sequences must align");
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut fn_ = 0.0;
    for (p, g) in pred.iter().zip(gold) {
        match (p, g) {
            (Tag::Em, Tag::Em) => tp += 1.0,
            (Tag::Em, Tag::Noem) => fp += 1.0,
            (Tag::Noem, Tag::Em) => fn_ += 1.0,
            _ => {}
        }
    }
    if tp + fp + fn_ == 0.0 {
        1.0
    } else {
        2.0 * tp / (2.0 * tp + fp + fn_)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Stream};
    use crate::tensor::{Precision, DEFAULT_H, DEFAULT_TOL};

    fn small_era(store: &mut ParamStore) -> Era {
        Era::new(store, 12, 4, 2, 1, 8)
    }

    fn leaf_emissions(g: &mut Graph, seed: u64, len: usize) -> TensorId {
        let mut r = rng::stream_rng(seed, Stream::GradCheck);
        let data: Vec<f64> = (0..len * 2).map(|_| rng::uniform(&mut r, -1.5, 1.5)).collect();
        g.leaf(data, &[len, 2])
    }

    fn randomize_transitions(store: &mut ParamStore, era: &Era, seed: u64) {
        let mut r = rng::stream_rng(seed, Stream::GradCheck);
        for v in &mut store.get_mut(era.a).data {
            *v = rng::uniform(&mut r, -1.0, 1.0);
        }
    }

    /// Raw-score recomputation for one complete path.
    fn path_score(em: &[f64], a: &[f64], tags: &[usize]) -> f64 {
        let at = |i: usize, j: usize| a[i * CRF_STATES + j];
        let mut s = at(S_START, tags[0]) + em[tags[0]];
        for t in 1..tags.len() {
            s += at(tags[t - 1], tags[t]) + em[t * 2 + tags[t]];
        }
        s + at(tags[tags.len() - 1], S_STOP)
    }

    fn all_paths(len: usize) -> Vec<Vec<usize>> {
        (0..(1usize << len))
            .map(|bits| (0..len).map(|t| (bits >> t) & 1).collect())
            .collect()
    }

    #[test]
    fn encoding_is_deterministic_with_contract_shape() {
        let mut store = ParamStore::new(3, Precision::F64);
        let era = small_era(&mut store);
        let mut g = Graph::new();
        let a = era.encode_tokens(&mut g, &store, &[5, 6, 7], None).unwrap();
        let b = era.encode_tokens(&mut g, &store, &[5, 6, 7], None).unwrap();
        assert_eq!(g.shape(a), &[3, 4]);
        assert_eq!(g.data(a), g.data(b));
        assert!(era.encode_tokens(&mut g, &store, &[], None).is_err());
        assert!(era
            .encode_tokens(&mut g, &store, &(0..9).collect::<Vec<_>>(), None)
            .is_err());
    }

    #[test]
    fn masked_positions_cannot_influence_valid_ones() {
        let mut store = ParamStore::new(4, Precision::F64);
        let era = small_era(&mut store);
        let valid = [true, true, false];
        let mut g = Graph::new();
        let a = era.encode_tokens(&mut g, &store, &[5, 6, 0], Some(&valid)).unwrap();
        let b = era.encode_tokens(&mut g, &store, &[5, 6, 9], Some(&valid)).unwrap();
        // Rows 0 and 1 identical; only the masked row's own output may move.
        assert_eq!(g.data(a)[..8], g.data(b)[..8]);
        assert_ne!(g.data(a)[8..], g.data(b)[8..]);
    }

    #[test]
    fn compose_length_one_is_identity() {
        let mut store = ParamStore::new(5, Precision::F64);
        let era = small_era(&mut store);
        let mut g = Graph::new();
        let h = g.leaf(vec![0.3, -0.7, 1.1, 0.2], &[1, 4]);
        let (ht, alpha) = era.compose_attention(&mut g, &store, h).unwrap();
        assert_eq!(g.data(alpha), &[1.0]);
        assert_eq!(g.data(ht), g.data(h));
    }

    #[test]
    fn compose_with_zero_scores_averages_rows() {
        let mut store = ParamStore::new(6, Precision::F64);
        let era = small_era(&mut store);
        store.get_mut(era.w_att).data.fill(0.0);
        let mut g = Graph::new();
        let h = g.leaf(vec![1.0, 0.0, 3.0, 0.0, 0.0, 2.0, 0.0, 4.0], &[2, 4]);
        let (ht, alpha) = era.compose_attention(&mut g, &store, h).unwrap();
        assert_eq!(g.data(alpha), &[0.5, 0.5, 0.5, 0.5]);
        for row in 0..2 {
            for c in 0..4 {
                let mean = (g.data(h)[c] + g.data(h)[4 + c]) / 2.0;
                assert!((g.data(ht)[row * 4 + c] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn compose_matches_scalar_oracle() {
        let mut store = ParamStore::new(7, Precision::F64);
        let era = small_era(&mut store);
        let mut g = Graph::new();
        let mut r = rng::stream_rng(7, Stream::GradCheck);
        let hd: Vec<f64> = (0..12).map(|_| rng::uniform(&mut r, -1.0, 1.0)).collect();
        let h = g.leaf(hd.clone(), &[3, 4]);
        let (ht, alpha) = era.compose_attention(&mut g, &store, h).unwrap();

        let w = &store.get(era.w_att).data;
        for i in 0..3 {
            let mut scores = [0.0f64; 3];
            for j in 0..3 {
                for p in 0..4 {
                    for q in 0..4 {
                        scores[j] += hd[i * 4 + p] * w[p * 4 + q] * hd[j * 4 + q];
                    }
                }
            }
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = exps.iter().sum();
            for j in 0..3 {
                let want = exps[j] / z;
                assert!((g.data(alpha)[i * 3 + j] - want).abs() < 1e-10);
            }
            for c in 0..4 {
                let want: f64 = (0..3).map(|j| exps[j] / z * hd[j * 4 + c]).sum();
                assert!((g.data(ht)[i * 4 + c] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn compose_is_permutation_equivariant() {
        let mut store = ParamStore::new(8, Precision::F64);
        let era = small_era(&mut store);
        let mut g = Graph::new();
        let mut r = rng::stream_rng(8, Stream::GradCheck);
        let hd: Vec<f64> = (0..12).map(|_| rng::uniform(&mut r, -1.0, 1.0)).collect();
        let perm = [2usize, 0, 1];
        let mut pd = vec![0.0; 12];
        for (i, &p) in perm.iter().enumerate() {
            pd[i * 4..(i + 1) * 4].copy_from_slice(&hd[p * 4..(p + 1) * 4]);
        }
        let h = g.leaf(hd, &[3, 4]);
        let hp = g.leaf(pd, &[3, 4]);
        let (ht, _) = era.compose_attention(&mut g, &store, h).unwrap();
        let (htp, _) = era.compose_attention(&mut g, &store, hp).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            for c in 0..4 {
                let a = g.data(htp)[i * 4 + c];
                let b = g.data(ht)[p * 4 + c];
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn crf_distribution_is_normalized_by_brute_force() {
        let mut store = ParamStore::new(9, Precision::F64);
        let era = small_era(&mut store);
        randomize_transitions(&mut store, &era, 90);
        let mut g = Graph::new();
        let em = leaf_emissions(&mut g, 91, 4);
        let mut total = 0.0;
        for path in all_paths(4) {
            let tags: Vec<Tag> = path
                .iter()
                .map(|&s| if s == S_EM { Tag::Em } else { Tag::Noem })
                .collect();
            let nll = era.crf_nll(&mut g, &store, em, &tags).unwrap();
            total += (-g.value(nll)).exp();
        }
        assert!((total - 1.0).abs() < 1e-8, "sum of path probabilities {total}");
    }

    #[test]
    fn log_partition_matches_exhaustive_enumeration() {
        let mut store = ParamStore::new(10, Precision::F64);
        let era = small_era(&mut store);
        randomize_transitions(&mut store, &era, 100);
        for len in 1..=4 {
            let mut g = Graph::new();
            let em = leaf_emissions(&mut g, 101 + len as u64, len);
            let tags = vec![Tag::Em; len];
            let nll = era.crf_nll(&mut g, &store, em, &tags).unwrap();
            let a = store.get(era.a).data.clone();
            let gold = path_score(g.data(em), &a, &vec![S_EM; len]);
            let log_z_impl = g.value(nll) + gold;

            let scores: Vec<f64> = all_paths(len)
                .iter()
                .map(|p| path_score(g.data(em), &a, p))
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let log_z_brute = m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
            assert!(
                (log_z_impl - log_z_brute).abs() < 1e-8,
                "len {len}: {log_z_impl} vs {log_z_brute}"
            );
        }
    }

    #[test]
    fn single_position_with_zero_transitions_reduces_to_softmax() {
        let mut store = ParamStore::new(11, Precision::F64);
        let era = small_era(&mut store);
        let mut g = Graph::new();
        let em = g.leaf(vec![0.8, -0.3], &[1, 2]);
        let nll = era.crf_nll(&mut g, &store, em, &[Tag::Em]).unwrap();
        let z = (0.8f64).exp() + (-0.3f64).exp();
        let want = -(0.8 - z.ln());
        assert!((g.value(nll) - want).abs() < 1e-12);
    }

    #[test]
    fn loss_is_positive_and_rejects_misaligned_tags() {
        let mut store = ParamStore::new(12, Precision::F64);
        let era = small_era(&mut store);
        randomize_transitions(&mut store, &era, 120);
        let mut g = Graph::new();
        let em = leaf_emissions(&mut g, 121, 3);
        let nll = era.crf_nll(&mut g, &store, em, &[Tag::Em, Tag::Noem, Tag::Em]).unwrap();
        assert!(g.value(nll) > 0.0);
        assert!(era.crf_nll(&mut g, &store, em, &[Tag::Em]).is_err());
    }

    #[test]
    fn viterbi_with_zero_transitions_is_emission_argmax() {
        let mut store = ParamStore::new(13, Precision::F64);
        let era = small_era(&mut store);
        let mut g = Graph::new();
        let em = g.leaf(vec![2.0, 0.0, 0.0, 2.0, 1.0, 1.0], &[3, 2]);
        let tags = era.viterbi_decode(&g, &store, em);
        // Position 2 is an exact tie → noem.
        assert_eq!(tags, vec![Tag::Em, Tag::Noem, Tag::Noem]);
    }

    #[test]
    fn all_equal_scores_decode_as_all_noem() {
        let mut store = ParamStore::new(14, Precision::F64);
        let era = small_era(&mut store);
        let mut g = Graph::new();
        let em = g.leaf(vec![0.7; 8], &[4, 2]);
        assert_eq!(era.viterbi_decode(&g, &store, em), vec![Tag::Noem; 4]);
    }

    #[test]
    fn repulsive_transition_forces_alternation() {
        let mut store = ParamStore::new(15, Precision::F64);
        let era = small_era(&mut store);
        // Emissions favor em everywhere, but em→em is heavily penalized.
        store.get_mut(era.a).data[S_EM * CRF_STATES + S_EM] = -10.0;
        let mut g = Graph::new();
        let em = g.leaf(vec![2.0, 0.0, 2.0, 0.0, 2.0, 0.0, 2.0, 0.0], &[4, 2]);
        let tags = era.viterbi_decode(&g, &store, em);
        assert_eq!(tags, vec![Tag::Em, Tag::Noem, Tag::Em, Tag::Noem]);
    }

    #[test]
    fn viterbi_beats_every_enumerated_path() {
        let mut store = ParamStore::new(16, Precision::F64);
        let era = small_era(&mut store);
        for seed in 0..20u64 {
            randomize_transitions(&mut store, &era, 160 + seed);
            let mut g = Graph::new();
            let em = leaf_emissions(&mut g, 200 + seed, 4);
            let decoded = era.viterbi_decode(&g, &store, em);
            let a = store.get(era.a).data.clone();
            let decoded_states: Vec<usize> = decoded.iter().map(|t| t.index()).collect();
            let best = path_score(g.data(em), &a, &decoded_states);
            for path in all_paths(4) {
                let s = path_score(g.data(em), &a, &path);
                assert!(best >= s - 1e-12, "seed {seed}: viterbi {best} < path {s}");
            }
        }
    }

    #[test]
    fn annotate_forces_noem_on_bot_positions() {
        let mut store = ParamStore::new(17, Precision::F64);
        let era = small_era(&mut store);
        // Transitions that make em attractive everywhere.
        store.get_mut(era.a).data[S_START * CRF_STATES + S_EM] = 5.0;
        store.get_mut(era.a).data[S_EM * CRF_STATES + S_EM] = 5.0;
        let fc = FlatContext {
            tokens: vec![5, 6, 7, 8],
            tags: vec![Tag::Noem; 4],
            is_user: vec![true, true, false, false],
        };
        let mut g = Graph::new();
        let (tags, h_tilde) = era.annotate(&mut g, &store, &fc).unwrap();
        assert_eq!(tags.len(), 4);
        assert_eq!(tags[2], Tag::Noem);
        assert_eq!(tags[3], Tag::Noem);
        assert_eq!(g.shape(h_tilde), &[4, 4]);
    }

    #[test]
    fn full_pipeline_passes_finite_difference() {
        let mut store = ParamStore::new(18, Precision::F64);
        let era = small_era(&mut store);
        randomize_transitions(&mut store, &era, 180);
        let fc = FlatContext {
            tokens: vec![5, 6, 7],
            tags: vec![Tag::Em, Tag::Noem, Tag::Noem],
            is_user: vec![true; 3],
        };
        let report = crate::tensor::check_gradients(
            "era_pipeline",
            &mut store,
            |s| {
                let mut g = Graph::new();
                let l = era.loss(&mut g, s, &fc)?;
                Ok((g, l))
            },
            DEFAULT_H,
            DEFAULT_TOL,
            4,
            19,
        )
        .unwrap();
        assert!(report.passed, "{report}");
    }

    #[test]
    fn gradient_reaches_every_component() {
        let mut store = ParamStore::new(19, Precision::F64);
        let era = small_era(&mut store);
        randomize_transitions(&mut store, &era, 190);
        let fc = FlatContext {
            tokens: vec![5, 6, 7, 5],
            tags: vec![Tag::Em, Tag::Noem, Tag::Em, Tag::Noem],
            is_user: vec![true; 4],
        };
        let mut g = Graph::new();
        let l = era.loss(&mut g, &store, &fc).unwrap();
        g.backward(l).unwrap();
        g.grads_into(&mut store);
        for id in [era.e_w, era.e_p, era.w_att, era.w_r, era.a] {
            let norm: f64 = store.get(id).grad.iter().map(|v| v * v).sum();
            assert!(norm > 0.0, "no gradient into {}", store.get(id).name);
        }
    }

    #[test]
    fn f1_counts_the_em_class() {
        use Tag::{Em, Noem};
        assert_eq!(tag_f1(&[Em, Noem], &[Em, Noem]), 1.0);
        assert_eq!(tag_f1(&[Noem, Noem], &[Noem, Noem]), 1.0);
        assert_eq!(tag_f1(&[Noem, Noem], &[Em, Em]), 0.0);
        // tp=1, fp=1, fn=1 → 2/4.
        let f1 = tag_f1(&[Em, Em, Noem], &[Em, Noem, Em]);
        assert!((f1 - 0.5).abs() < 1e-12);
    }
}
