//! Response generation with a copy mechanism.
//!
//! A causal transformer decodes over a memory whose first row is the fused
//! emotion state and whose remaining rows are the tagged context encodings.
//! At each step the output distribution mixes a vocabulary softmax with a
//! copy distribution read off the deepest cross-attention layer, gated by a
//! learned scalar, so the model can reproduce context words — including ones
//! it could never score well from the vocabulary head alone.

use rand_chacha::ChaCha8Rng;

use crate::corpus::{Tag, CTX, EOS, PAD, SOS};
use crate::error::{Error, Result};
use crate::nn::{causal_mask, Decoder, Linear};
use crate::rng;
use crate::tensor::{Graph, ParamId, ParamStore, TensorId};

/// Cross-attention memory: the fused state, the context-marker row, then one
/// row per kept context token.
pub struct Memory {
    pub node: TensorId,
    /// Vocabulary ids of the copyable rows (everything after the fused and
    /// marker rows), in row order.
    pub copy_ids: Vec<usize>,
}

impl Memory {
    /// Index of the first copyable row.
    fn copy_offset(&self, g: &Graph) -> usize {
        g.shape(self.node)[0] - self.copy_ids.len()
    }
}

/// Stacks `[Emo_fused; h]` into one attention memory. `h` must carry the
/// context-marker row first, then exactly one row per entry of `copy_ids`.
pub fn build_memory(
    g: &mut Graph,
    fused: TensorId,
    h: TensorId,
    copy_ids: &[usize],
) -> Result<Memory> {
    if copy_ids.is_empty() {
        return Err(Error::invalid("memory needs at least one copyable token"));
    }
    let d = g.shape(h)[g.shape(h).len() - 1];
    let h_rows = g.data(h).len() / d;
    if h_rows != copy_ids.len() + 1 {
        return Err(Error::shape(
            "build_memory",
            format!("{h_rows} context rows for {} copy ids", copy_ids.len()),
        ));
    }
    let fused_row = g.reshape(fused, &[1, d]);
    let node = g.concat_rows(&[fused_row, h]);
    Ok(Memory { node, copy_ids: copy_ids.to_vec() })
}

/// Distributions produced for every prefix position.
pub struct StepOutputs {
    pub hidden: TensorId,
    /// `[steps × vocab]` vocabulary softmax.
    pub p_vocab: TensorId,
    /// `[steps × copyable]` renormalized copy attention.
    pub p_copy: TensorId,
    /// `[steps × 1]` mixing gate.
    pub p_gen: TensorId,
    /// `[steps × vocab]` final mixture.
    pub p_w: TensorId,
}

/// Decoding strategy for [`ResponseDecoder::generate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    /// Argmax each step; deterministic.
    Greedy,
    /// Sample among the `k` most probable tokens, renormalized.
    TopK(usize),
}

/// Causal decoder with a pointer-generator output head.
///
/// The three embedding tables are shared with the context encoder (passed in
/// by id), so copied tokens and generated tokens live in the same space.
pub struct ResponseDecoder {
    pub e_w: ParamId,
    pub e_p: ParamId,
    pub e_r: ParamId,
    decoder: Decoder,
    out: Linear,
    gate: Linear,
    vocab: usize,
    max_len: usize,
}

impl ResponseDecoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        vocab: usize,
        d_model: usize,
        heads: usize,
        layers: usize,
        max_len: usize,
        e_w: ParamId,
        e_p: ParamId,
        e_r: ParamId,
    ) -> ResponseDecoder {
        ResponseDecoder {
            e_w,
            e_p,
            e_r,
            decoder: Decoder::new(store, "dec", d_model, heads, layers, 4 * d_model),
            out: Linear::new(store, "dec.out", d_model, vocab),
            gate: Linear::new(store, "dec.gate", 3 * d_model, 1),
            vocab,
            max_len,
        }
    }

    /// Word + position + tag embedding of a response prefix. Response tokens
    /// carry no emotion annotation, so every row gets the plain-word tag.
    fn embed_prefix(&self, g: &mut Graph, store: &ParamStore, tokens: &[usize]) -> TensorId {
        let e_w = g.param(store, self.e_w);
        let e_p = g.param(store, self.e_p);
        let e_r = g.param(store, self.e_r);
        let positions: Vec<usize> = (0..tokens.len()).collect();
        let tag_rows = vec![Tag::Noem.index(); tokens.len()];
        let w = g.rows(e_w, tokens);
        let p = g.rows(e_p, &positions);
        let r = g.rows(e_r, &tag_rows);
        let wp = g.add(w, p);
        g.add(wp, r)
    }

    /// Teacher-forced pass: distributions at every position of `prefix`.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        prefix: &[usize],
        memory: &Memory,
    ) -> Result<StepOutputs> {
        if prefix.is_empty() {
            return Err(Error::invalid("decode: empty prefix"));
        }
        if prefix[0] != SOS {
            return Err(Error::invalid("decode: prefix must start with the start token"));
        }
        if prefix.len() > self.max_len {
            return Err(Error::invalid(format!(
                "decode: prefix length {} exceeds {}",
                prefix.len(),
                self.max_len
            )));
        }
        let steps = prefix.len();
        let x = self.embed_prefix(g, store, prefix);
        let mask = causal_mask(steps);
        let (hidden, cross_heads) =
            self.decoder.forward(g, store, x, memory.node, Some(&mask), None)?;

        // Head-averaged cross weights of the deepest layer.
        let mut cross = cross_heads[0];
        for &w in &cross_heads[1..] {
            cross = g.add(cross, w);
        }
        let cross = g.scale(cross, 1.0 / cross_heads.len() as f64);

        let logits = self.out.forward(g, store, hidden);
        let p_vocab = g.softmax(logits)?;

        // Copy distribution: token columns of the cross weights, renormalized.
        // Every weight is strictly positive (softmax over an unmasked row),
        // so the renormalizer never vanishes.
        let n_copy = memory.copy_ids.len();
        let offset = memory.copy_offset(g);
        let token_w = g.slice_cols(cross, offset, offset + n_copy);
        let ones_col = g.leaf(vec![1.0; n_copy], &[n_copy, 1]);
        let mass = g.matmul(token_w, ones_col);
        let ones_row = g.leaf(vec![1.0; n_copy], &[1, n_copy]);
        let mass_full = g.matmul(mass, ones_row);
        let p_copy = g.div(token_w, mass_full);

        // Mixing gate from [hidden; attended memory; prefix embedding].
        let context = g.matmul(cross, memory.node);
        let gate_in = g.concat_cols(&[hidden, context, x]);
        let gate_logit = self.gate.forward(g, store, gate_in);
        let p_gen = g.sigmoid(gate_logit);

        // Scatter the copy mass onto vocabulary ids, then mix.
        let mut scattered = Vec::with_capacity(steps);
        for t in 0..steps {
            let row = g.rows(p_copy, &[t]);
            let flat = g.reshape(row, &[n_copy]);
            scattered.push(g.scatter_add(flat, &memory.copy_ids, self.vocab));
        }
        let copy_vocab = g.stack_rows(&scattered);

        let ones_v = g.leaf(vec![1.0; self.vocab], &[1, self.vocab]);
        let gate_full = g.matmul(p_gen, ones_v);
        let neg_gate = g.scale(p_gen, -1.0);
        let inv_gate = g.add_const(neg_gate, 1.0);
        let inv_full = g.matmul(inv_gate, ones_v);
        let gen_part = g.mul(gate_full, p_vocab);
        let copy_part = g.mul(inv_full, copy_vocab);
        let p_w = g.add(gen_part, copy_part);

        Ok(StepOutputs { hidden, p_vocab, p_copy, p_gen, p_w })
    }

    /// Teacher-forced response loss: mean over positions of `−ln P_w[gold]`.
    /// Probabilities are floored, so an impossible gold token contributes a
    /// large finite penalty instead of an infinity.
    pub fn response_loss(
        &self,
        g: &mut Graph,
        outputs: &StepOutputs,
        gold: &[usize],
    ) -> Result<TensorId> {
        let steps = g.shape(outputs.p_w)[0];
        if gold.len() != steps {
            return Err(Error::invalid(format!(
                "{} gold tokens for {steps} decode positions",
                gold.len()
            )));
        }
        let mut terms = Vec::with_capacity(steps);
        for (t, &y) in gold.iter().enumerate() {
            if y >= self.vocab {
                return Err(Error::invalid(format!("gold token {y} outside vocab")));
            }
            let p = g.gather(outputs.p_w, t * self.vocab + y);
            terms.push(g.ln_clamped(p));
        }
        let all = g.concat(&terms);
        let m = g.mean(all);
        Ok(g.scale(m, -1.0))
    }

    /// Decodes a response from the memory. Stops at the end token or after
    /// `max_new` words; never emits padding, the context marker, or the start
    /// token. Greedy mode is deterministic; top-k draws from `rng`.
    pub fn generate(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        memory: &Memory,
        max_new: usize,
        mode: DecodeMode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<usize>> {
        if max_new + 1 > self.max_len {
            return Err(Error::invalid(format!(
                "generate: {max_new} new tokens will not fit a {}-step decoder",
                self.max_len
            )));
        }
        if let DecodeMode::TopK(k) = mode {
            if k == 0 {
                return Err(Error::invalid("generate: top-k needs k >= 1"));
            }
        }
        let mut prefix = vec![SOS];
        let mut out = Vec::new();
        while out.len() < max_new {
            let step = self.forward(g, store, &prefix, memory)?;
            let last = g.shape(step.p_w)[0] - 1;
            let row = &g.data(step.p_w)[last * self.vocab..(last + 1) * self.vocab];
            let next = match mode {
                DecodeMode::Greedy => pick_greedy(row),
                DecodeMode::TopK(k) => pick_topk(row, k, rng),
            };
            if next == EOS {
                break;
            }
            out.push(next);
            prefix.push(next);
        }
        Ok(out)
    }
}

const BANNED: [usize; 3] = [PAD, CTX, SOS];

fn pick_greedy(probs: &[f64]) -> usize {
    let mut best: Option<usize> = None;
    for (i, &p) in probs.iter().enumerate() {
        if BANNED.contains(&i) {
            continue;
        }
        if best.is_none_or(|b| p > probs[b]) {
            best = Some(i);
        }
    }
    best.expect("vocabulary is larger than the special tokens")
}

fn pick_topk(probs: &[f64], k: usize, rng: &mut ChaCha8Rng) -> usize {
    let mut ranked: Vec<usize> = (0..probs.len()).filter(|i| !BANNED.contains(i)).collect();
    ranked.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap().then(a.cmp(&b)));
    ranked.truncate(k);
    let total: f64 = ranked.iter().map(|&i| probs[i]).sum();
    if total <= 0.0 {
        return ranked[0];
    }
    let mut u = rng::uniform(rng, 0.0, total);
    for &i in &ranked {
        u -= probs[i];
        if u < 0.0 {
            return i;
        }
    }
    *ranked.last().expect("k >= 1")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::UNK;
    use crate::rng::{stream_rng, Stream};
    use crate::tensor::{check_gradients, Init, Precision, DEFAULT_H, DEFAULT_TOL};

    const V: usize = 40;
    const D: usize = 8;

    struct Fixture {
        store: ParamStore,
        dec: ResponseDecoder,
    }

    fn fixture(seed: u64) -> Fixture {
        let mut store = ParamStore::new(seed, Precision::F64);
        let e_w = store.add("emb.w", &[V, D], Init::Normal { std: 0.1 });
        let e_p = store.add("emb.p", &[32, D], Init::Normal { std: 0.1 });
        let e_r = store.add("emb.r", &[2, D], Init::Normal { std: 0.1 });
        let dec = ResponseDecoder::new(&mut store, V, D, 2, 2, 16, e_w, e_p, e_r);
        Fixture { store, dec }
    }

    /// A memory over three context tokens with ids 7, 9, 7.
    fn test_memory(g: &mut Graph, seed: u64) -> Memory {
        let mut r = stream_rng(seed, Stream::GradCheck);
        let fused = g.leaf(rng::normal_vec(&mut r, D), &[D]);
        let h = g.leaf(rng::normal_vec(&mut r, 4 * D), &[4, D]);
        build_memory(g, fused, h, &[7, 9, 7]).unwrap()
    }

    fn set_gate_bias(fx: &mut Fixture, v: f64) {
        let b = fx.dec.gate.b.unwrap();
        fx.store.get_mut(b).data[0] = v;
        fx.store.get_mut(fx.dec.gate.w).data.iter_mut().for_each(|x| *x = 0.0);
    }

    #[test]
    fn gate_saturated_high_reduces_to_the_vocabulary_head() {
        let mut fx = fixture(80);
        set_gate_bias(&mut fx, 1e9);
        let mut g = Graph::new();
        let mem = test_memory(&mut g, 81);
        let out = fx.dec.forward(&mut g, &fx.store, &[SOS, 6, 12], &mem).unwrap();
        assert_eq!(g.data(out.p_gen).to_vec(), vec![1.0; 3]);
        assert_eq!(g.data(out.p_w), g.data(out.p_vocab));
    }

    #[test]
    fn gate_saturated_low_puts_all_mass_on_context_tokens() {
        let mut fx = fixture(82);
        set_gate_bias(&mut fx, -1e9);
        let mut g = Graph::new();
        let mem = test_memory(&mut g, 83);
        let out = fx.dec.forward(&mut g, &fx.store, &[SOS, 6], &mem).unwrap();
        assert_eq!(g.data(out.p_gen).to_vec(), vec![0.0; 2]);
        let pw = g.data(out.p_w);
        for t in 0..2 {
            let row = &pw[t * V..(t + 1) * V];
            let copyable: f64 = row[7] + row[9];
            assert!((copyable - 1.0).abs() < 1e-12, "row {t}: copy mass {copyable}");
            for (i, &p) in row.iter().enumerate() {
                if i != 7 && i != 9 {
                    assert_eq!(p, 0.0, "unexpected mass on {i}");
                }
            }
        }
    }

    #[test]
    fn mixture_rows_always_sum_to_one() {
        for seed in [84u64, 85, 86] {
            let fx = fixture(seed);
            let mut g = Graph::new();
            let mem = test_memory(&mut g, seed + 10);
            let out = fx.dec.forward(&mut g, &fx.store, &[SOS, 3, 17, 2, 11], &mem).unwrap();
            let pw = g.data(out.p_w);
            for t in 0..5 {
                let s: f64 = pw[t * V..(t + 1) * V].iter().sum();
                assert!((s - 1.0).abs() < 1e-9, "seed {seed} row {t}: sum {s}");
                let gate = g.data(out.p_gen)[t];
                assert!((0.0..=1.0).contains(&gate));
            }
        }
    }

    #[test]
    fn uniform_vocabulary_head_costs_ln_v() {
        let mut fx = fixture(87);
        set_gate_bias(&mut fx, 1e9);
        fx.store.get_mut(fx.dec.out.w).data.iter_mut().for_each(|x| *x = 0.0);
        fx.store.get_mut(fx.dec.out.b.unwrap()).data.iter_mut().for_each(|x| *x = 0.0);
        let mut g = Graph::new();
        let mem = test_memory(&mut g, 88);
        let out = fx.dec.forward(&mut g, &fx.store, &[SOS, 5, 21], &mem).unwrap();
        let loss = fx.dec.response_loss(&mut g, &out, &[5, 21, EOS]).unwrap();
        assert!((g.value(loss) - (V as f64).ln()).abs() < 1e-12);
    }

    /// With the gate forced to copy and a single context token, the mixture
    /// puts probability one on that token — so predicting it is nearly free
    /// even though the vocabulary head knows nothing about it.
    #[test]
    fn concentrated_copy_makes_context_words_cheap() {
        let mut fx = fixture(89);
        set_gate_bias(&mut fx, -1e9);
        let mut g = Graph::new();
        let mut r = stream_rng(90, Stream::GradCheck);
        let fused = g.leaf(rng::normal_vec(&mut r, D), &[D]);
        let h = g.leaf(rng::normal_vec(&mut r, 2 * D), &[2, D]);
        let mem = build_memory(&mut g, fused, h, &[UNK]).unwrap();
        let out = fx.dec.forward(&mut g, &fx.store, &[SOS, UNK], &mem).unwrap();
        let loss = fx.dec.response_loss(&mut g, &out, &[UNK, UNK]).unwrap();
        assert!(
            g.value(loss) < (2f64).ln(),
            "copying should beat a coin flip: {}",
            g.value(loss)
        );
    }

    #[test]
    fn positions_before_a_divergence_are_unaffected_by_it() {
        let fx = fixture(91);
        let mut g = Graph::new();
        let mem = test_memory(&mut g, 92);
        let a = fx.dec.forward(&mut g, &fx.store, &[SOS, 4, 8, 15], &mem).unwrap();
        let b = fx.dec.forward(&mut g, &fx.store, &[SOS, 4, 8, 23], &mem).unwrap();
        let (pa, pb) = (g.data(a.p_w), g.data(b.p_w));
        for t in 0..3 {
            assert_eq!(
                pa[t * V..(t + 1) * V],
                pb[t * V..(t + 1) * V],
                "position {t} saw a future token"
            );
        }
        assert_ne!(pa[3 * V..4 * V], pb[3 * V..4 * V], "last position must differ");
    }

    #[test]
    fn malformed_prefixes_and_memories_are_rejected() {
        let fx = fixture(93);
        let mut g = Graph::new();
        let mem = test_memory(&mut g, 94);
        assert!(fx.dec.forward(&mut g, &fx.store, &[], &mem).is_err());
        assert!(fx.dec.forward(&mut g, &fx.store, &[5, 6], &mem).is_err());
        let long: Vec<usize> = std::iter::once(SOS).chain(std::iter::repeat(4).take(20)).collect();
        assert!(fx.dec.forward(&mut g, &fx.store, &long, &mem).is_err());

        let fused = g.leaf(vec![0.0; D], &[D]);
        let h = g.leaf(vec![0.0; 3 * D], &[3, D]);
        assert!(build_memory(&mut g, fused, h, &[]).is_err());
        assert!(build_memory(&mut g, fused, h, &[7]).is_err());

        let out = fx.dec.forward(&mut g, &fx.store, &[SOS, 4], &mem).unwrap();
        assert!(fx.dec.response_loss(&mut g, &out, &[4]).is_err());
        assert!(fx.dec.response_loss(&mut g, &out, &[4, V + 1]).is_err());
    }

    #[test]
    fn greedy_generation_is_deterministic_and_avoids_specials() {
        let fx = fixture(95);
        let mut runs = Vec::new();
        for _ in 0..2 {
            let mut g = Graph::new();
            let mem = test_memory(&mut g, 96);
            let mut r = stream_rng(97, Stream::PolicySample);
            let toks = fx
                .dec
                .generate(&mut g, &fx.store, &mem, 10, DecodeMode::Greedy, &mut r)
                .unwrap();
            assert!(toks.len() <= 10);
            for &t in &toks {
                assert!(t != PAD && t != CTX && t != SOS && t != EOS);
            }
            runs.push(toks);
        }
        assert_eq!(runs[0], runs[1]);

        let mut g = Graph::new();
        let mem = test_memory(&mut g, 96);
        let mut r = stream_rng(97, Stream::PolicySample);
        assert!(fx
            .dec
            .generate(&mut g, &fx.store, &mem, 16, DecodeMode::Greedy, &mut r)
            .is_err());
    }

    #[test]
    fn top_one_sampling_equals_greedy() {
        let fx = fixture(98);
        let mut g = Graph::new();
        let mem = test_memory(&mut g, 99);
        let mut r = stream_rng(100, Stream::PolicySample);
        let greedy = fx
            .dec
            .generate(&mut g, &fx.store, &mem, 8, DecodeMode::Greedy, &mut r)
            .unwrap();
        let mut g2 = Graph::new();
        let mem2 = test_memory(&mut g2, 99);
        let topk = fx
            .dec
            .generate(&mut g2, &fx.store, &mem2, 8, DecodeMode::TopK(1), &mut r)
            .unwrap();
        assert_eq!(greedy, topk);
        let mut g3 = Graph::new();
        let mem3 = test_memory(&mut g3, 99);
        assert!(fx
            .dec
            .generate(&mut g3, &fx.store, &mem3, 8, DecodeMode::TopK(0), &mut r)
            .is_err());
    }

    /// Finite differences through the whole mixture: vocabulary head, copy
    /// attention, gate, embeddings and the memory itself.
    #[test]
    fn pointer_mixture_passes_finite_differences() {
        let mut store = ParamStore::new(101, Precision::F64);
        let e_w = store.add("emb.w", &[V, D], Init::Normal { std: 0.1 });
        let e_p = store.add("emb.p", &[32, D], Init::Normal { std: 0.1 });
        let e_r = store.add("emb.r", &[2, D], Init::Normal { std: 0.1 });
        let dec = ResponseDecoder::new(&mut store, V, D, 2, 2, 16, e_w, e_p, e_r);
        let fused_p = store.add("fused", &[D], Init::Normal { std: 1.0 });
        let h_p = store.add("h", &[3, D], Init::Normal { std: 1.0 });
        let report = check_gradients(
            "pointer_decoder",
            &mut store,
            |store| {
                let mut g = Graph::new();
                let fused = g.param(store, fused_p);
                let h = g.param(store, h_p);
                let mem = build_memory(&mut g, fused, h, &[7, 9])?;
                let out = dec.forward(&mut g, store, &[SOS, 7, 3], &mem)?;
                let loss = dec.response_loss(&mut g, &out, &[7, 3, EOS])?;
                Ok((g, loss))
            },
            DEFAULT_H,
            DEFAULT_TOL,
            4,
            102,
        )
        .unwrap();
        assert!(report.passed, "{report}");
    }
}
