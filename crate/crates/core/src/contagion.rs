//! Emotion-contagion encoding: word + position + reason-tag embeddings are
//! summed per token, a CTX summary row is prepended, a transformer encoder
//! contextualizes the lot, and attention over the tagger's composed vectors
//! pools everything into one state vector `Q`.

use crate::corpus::{Tag, CTX, PAD};
use crate::error::{Error, Result};
use crate::nn::{key_mask, scaled_dot_attention, Encoder};
use crate::tensor::{Graph, Init, ParamId, ParamStore, TensorId};

pub struct Contagion {
    /// Word, position, and reason-tag embedding tables. The response decoder
    /// shares all three.
    pub e_w: ParamId,
    pub e_p: ParamId,
    pub e_r: ParamId,
    encoder: Encoder,
    max_len: usize,
}

/// Encoded context: `h` is the kept (CTX + non-PAD) encoder rows, `q` the
/// pooled contagion state `[d_model]`.
pub struct ContextState {
    pub h: TensorId,
    pub q: TensorId,
}

impl Contagion {
    pub fn new(
        store: &mut ParamStore,
        vocab_size: usize,
        d_model: usize,
        heads: usize,
        layers: usize,
        max_len: usize,
    ) -> Self {
        Contagion {
            e_w: store.add("ctx.e_w", &[vocab_size, d_model], Init::Normal { std: 0.1 }),
            e_p: store.add("ctx.e_p", &[max_len, d_model], Init::Normal { std: 0.1 }),
            e_r: store.add("ctx.e_r", &[2, d_model], Init::Normal { std: 0.1 }),
            encoder: Encoder::new(store, "ctx.enc", d_model, heads, layers, 4 * d_model),
            max_len,
        }
    }

    /// Per-token embedding `E_W[token] + E_P[position] + E_R[tag]`, summed in
    /// exactly that order.
    pub fn embed(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        tokens: &[usize],
        tags: &[Tag],
    ) -> Result<TensorId> {
        if tokens.is_empty() {
            return Err(Error::invalid("embed: empty sequence"));
        }
        if tokens.len() != tags.len() {
            return Err(Error::invalid(format!(
                "{} tokens vs {} reason tags",
                tokens.len(),
                tags.len()
            )));
        }
        let e_w = g.param(store, self.e_w);
        let e_p = g.param(store, self.e_p);
        let e_r = g.param(store, self.e_r);
        let positions: Vec<usize> = (0..tokens.len()).collect();
        let tag_rows: Vec<usize> = tags.iter().map(|t| t.index()).collect();
        let w = g.rows(e_w, tokens);
        let p = g.rows(e_p, &positions);
        let r = g.rows(e_r, &tag_rows);
        let wp = g.add(w, p);
        Ok(g.add(wp, r))
    }

    /// Encoder pass with the CTX summary row prepended (its embedding is the
    /// bare CTX word vector). `valid` marks real tokens; PAD positions are
    /// excluded as attention keys. Output has `len + 1` rows, CTX first.
    pub fn encode(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        e_c: TensorId,
        valid: &[bool],
    ) -> Result<TensorId> {
        let len = g.shape(e_c)[0];
        if len + 1 > self.max_len {
            return Err(Error::invalid(format!(
                "sequence length {len} exceeds max_len − 1 = {}",
                self.max_len - 1
            )));
        }
        if valid.len() != len {
            return Err(Error::invalid("valid mask length != sequence length"));
        }
        let e_w = g.param(store, self.e_w);
        let ctx_row = g.rows(e_w, &[CTX]);
        let x = g.concat_rows(&[ctx_row, e_c]);
        let mut allowed = Vec::with_capacity(len + 1);
        allowed.push(true);
        allowed.extend_from_slice(valid);
        let mask = key_mask(len + 1, &allowed);
        self.encoder.forward(g, store, x, Some(&mask))
    }

    /// `Q = mean over rows of Attention(H, h̃)`: every kept context row
    /// queries the tagger's composed vectors, and the answers are averaged.
    pub fn aggregate(&self, g: &mut Graph, h: TensorId, h_tilde: TensorId) -> Result<TensorId> {
        if g.shape(h_tilde)[0] == 0 {
            return Err(Error::invalid("aggregate: empty reason representation"));
        }
        let (att, _) = scaled_dot_attention(g, h, h_tilde, h_tilde, None)?;
        Ok(g.mean_rows(att))
    }

    /// Full pass: embed, encode, drop PAD rows, aggregate against `h_tilde`.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        tokens: &[usize],
        tags: &[Tag],
        h_tilde: TensorId,
    ) -> Result<ContextState> {
        let valid: Vec<bool> = tokens.iter().map(|&t| t != PAD).collect();
        let e_c = self.embed(g, store, tokens, tags)?;
        let h_full = self.encode(g, store, e_c, &valid)?;
        let h = if valid.iter().all(|&v| v) {
            h_full
        } else {
            let mut keep = vec![0usize];
            keep.extend(valid.iter().enumerate().filter(|(_, &v)| v).map(|(i, _)| i + 1));
            g.rows(h_full, &keep)
        };
        let q = self.aggregate(g, h, h_tilde)?;
        Ok(ContextState { h, q })
    }
}
