//! Network building blocks shared by the tagger, encoders, and decoder:
//! affine projections, scaled-dot attention, multi-head wrappers, and
//! pre-norm transformer layers.

use crate::error::{Error, Result};
use crate::tensor::{Graph, Init, ParamId, ParamStore, TensorId};

/// LayerNorm epsilon used everywhere.
pub const LN_EPS: f64 = 1e-5;

fn mat_shape(g: &Graph, t: TensorId) -> (usize, usize) {
    let s = g.shape(t);
    match s.len() {
        1 => (1, s[0]),
        2 => (s[0], s[1]),
        _ => panic!("expected matrix, got shape {s:?}"),
    }
}

/// Row-wise affine projection `x·W + b`.
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize) -> Self {
        Linear {
            w: store.add(&format!("{name}.w"), &[d_in, d_out], Init::Uniform { fan_in: d_in }),
            b: Some(store.add(&format!("{name}.b"), &[d_out], Init::Zeros)),
        }
    }

    /// Projection without a bias, for places where a bias would be inert
    /// (e.g. attention key projections, where softmax cancels it).
    pub fn no_bias(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize) -> Self {
        Linear {
            w: store.add(&format!("{name}.w"), &[d_in, d_out], Init::Uniform { fan_in: d_in }),
            b: None,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: TensorId) -> TensorId {
        let w = g.param(store, self.w);
        let xw = g.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = g.param(store, b);
                g.add_row(xw, b)
            }
            None => xw,
        }
    }
}

pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        LayerNorm {
            gain: store.add(&format!("{name}.gain"), &[d], Init::Ones),
            bias: store.add(&format!("{name}.bias"), &[d], Init::Zeros),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: TensorId) -> Result<TensorId> {
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        g.layer_norm(x, gain, bias, LN_EPS)
    }
}

/// `softmax(q·kᵀ/√d)·v`, returning `(output, weights)`.
///
/// `mask`, when given, is row-major `[rq × rk]` with `true` meaning the query
/// may attend to that key. Blocked positions get exactly zero weight. A row
/// with no allowed key is an error (its distribution would be undefined), as
/// is a query/key width mismatch.
pub fn scaled_dot_attention(
    g: &mut Graph,
    q: TensorId,
    k: TensorId,
    v: TensorId,
    mask: Option<&[bool]>,
) -> Result<(TensorId, TensorId)> {
    let (rq, dq) = mat_shape(g, q);
    let (rk, dk) = mat_shape(g, k);
    let (rv, _) = mat_shape(g, v);
    if dq != dk {
        return Err(Error::shape(
            "scaled_dot_attention",
            format!("query width {dq} != key width {dk}"),
        ));
    }
    if rk != rv {
        return Err(Error::shape(
            "scaled_dot_attention",
            format!("{rk} keys vs {rv} value rows"),
        ));
    }
    if let Some(m) = mask {
        if m.len() != rq * rk {
            return Err(Error::shape(
                "scaled_dot_attention",
                format!("mask length {} != {rq}x{rk}", m.len()),
            ));
        }
        for i in 0..rq {
            if !m[i * rk..(i + 1) * rk].iter().any(|&ok| ok) {
                return Err(Error::invalid(format!(
                    "scaled_dot_attention: query row {i} has every key masked"
                )));
            }
        }
    }
    let kt = g.transpose(k);
    let scores = g.matmul(q, kt);
    let mut scaled = g.scale(scores, 1.0 / (dq as f64).sqrt());
    if let Some(m) = mask {
        // -1e9 underflows to exactly zero weight after max-subtraction.
        let bias: Vec<f64> = m.iter().map(|&ok| if ok { 0.0 } else { -1e9 }).collect();
        let b = g.leaf(bias, &[rq, rk]);
        scaled = g.add(scaled, b);
    }
    let weights = g.softmax(scaled)?;
    let out = g.matmul(weights, v);
    Ok((out, weights))
}

/// Multi-head attention: project, split columns per head, attend, re-merge.
pub struct MultiHeadAttention {
    pub heads: usize,
    d_model: usize,
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, d_model: usize, heads: usize) -> Self {
        assert!(heads > 0 && d_model % heads == 0, "d_model must split across heads");
        MultiHeadAttention {
            heads,
            d_model,
            wq: Linear::new(store, &format!("{name}.wq"), d_model, d_model),
            // A key bias adds the same constant to every score in a query's
            // row, which softmax cancels; it would be an inert parameter.
            wk: Linear::no_bias(store, &format!("{name}.wk"), d_model, d_model),
            wv: Linear::new(store, &format!("{name}.wv"), d_model, d_model),
            wo: Linear::new(store, &format!("{name}.wo"), d_model, d_model),
        }
    }

    /// Returns the merged output and each head's `[rq × rk]` weight node.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        q_in: TensorId,
        kv_in: TensorId,
        mask: Option<&[bool]>,
    ) -> Result<(TensorId, Vec<TensorId>)> {
        let q = self.wq.forward(g, store, q_in);
        let k = self.wk.forward(g, store, kv_in);
        let v = self.wv.forward(g, store, kv_in);
        let dh = self.d_model / self.heads;
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qs = g.slice_cols(q, h * dh, (h + 1) * dh);
            let ks = g.slice_cols(k, h * dh, (h + 1) * dh);
            let vs = g.slice_cols(v, h * dh, (h + 1) * dh);
            let (o, w) = scaled_dot_attention(g, qs, ks, vs, mask)?;
            outs.push(o);
            weights.push(w);
        }
        let merged = g.concat_cols(&outs);
        Ok((self.wo.forward(g, store, merged), weights))
    }
}

/// Pre-norm encoder layer: self-attention and a tanh feed-forward, each with
/// a residual connection.
pub struct EncoderLayer {
    ln1: LayerNorm,
    attn: MultiHeadAttention,
    ln2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
}

impl EncoderLayer {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, heads: usize, d_ff: usize) -> Self {
        EncoderLayer {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), d, heads),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d),
            ff1: Linear::new(store, &format!("{name}.ff1"), d, d_ff),
            ff2: Linear::new(store, &format!("{name}.ff2"), d_ff, d),
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: TensorId,
        mask: Option<&[bool]>,
    ) -> Result<TensorId> {
        let n1 = self.ln1.forward(g, store, x)?;
        let (a, _) = self.attn.forward(g, store, n1, n1, mask)?;
        let x = g.add(x, a);
        let n2 = self.ln2.forward(g, store, x)?;
        let h = self.ff1.forward(g, store, n2);
        let h = g.tanh(h);
        let f = self.ff2.forward(g, store, h);
        Ok(g.add(x, f))
    }
}

/// Encoder stack with a final normalization.
pub struct Encoder {
    layers: Vec<EncoderLayer>,
    final_ln: LayerNorm,
}

impl Encoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        heads: usize,
        n_layers: usize,
        d_ff: usize,
    ) -> Self {
        Encoder {
            layers: (0..n_layers)
                .map(|i| EncoderLayer::new(store, &format!("{name}.l{i}"), d, heads, d_ff))
                .collect(),
            final_ln: LayerNorm::new(store, &format!("{name}.ln"), d),
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: TensorId,
        mask: Option<&[bool]>,
    ) -> Result<TensorId> {
        let mut x = x;
        for layer in &self.layers {
            x = layer.forward(g, store, x, mask)?;
        }
        self.final_ln.forward(g, store, x)
    }
}

/// Pre-norm decoder layer: causal self-attention, cross-attention over a
/// memory, feed-forward; residuals around each.
pub struct DecoderLayer {
    ln1: LayerNorm,
    self_attn: MultiHeadAttention,
    ln2: LayerNorm,
    cross_attn: MultiHeadAttention,
    ln3: LayerNorm,
    ff1: Linear,
    ff2: Linear,
}

impl DecoderLayer {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, heads: usize, d_ff: usize) -> Self {
        DecoderLayer {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d),
            self_attn: MultiHeadAttention::new(store, &format!("{name}.self"), d, heads),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d),
            cross_attn: MultiHeadAttention::new(store, &format!("{name}.cross"), d, heads),
            ln3: LayerNorm::new(store, &format!("{name}.ln3"), d),
            ff1: Linear::new(store, &format!("{name}.ff1"), d, d_ff),
            ff2: Linear::new(store, &format!("{name}.ff2"), d_ff, d),
        }
    }

    /// Returns the layer output and the per-head cross-attention weights.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: TensorId,
        memory: TensorId,
        self_mask: Option<&[bool]>,
        mem_mask: Option<&[bool]>,
    ) -> Result<(TensorId, Vec<TensorId>)> {
        let n1 = self.ln1.forward(g, store, x)?;
        let (sa, _) = self.self_attn.forward(g, store, n1, n1, self_mask)?;
        let x = g.add(x, sa);
        let n2 = self.ln2.forward(g, store, x)?;
        let (ca, cross) = self.cross_attn.forward(g, store, n2, memory, mem_mask)?;
        let x = g.add(x, ca);
        let n3 = self.ln3.forward(g, store, x)?;
        let h = self.ff1.forward(g, store, n3);
        let h = g.tanh(h);
        let f = self.ff2.forward(g, store, h);
        Ok((g.add(x, f), cross))
    }
}

/// Decoder stack; exposes the deepest layer's cross-attention weights (the
/// copy mechanism reads them).
pub struct Decoder {
    layers: Vec<DecoderLayer>,
    final_ln: LayerNorm,
}

impl Decoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        heads: usize,
        n_layers: usize,
        d_ff: usize,
    ) -> Self {
        Decoder {
            layers: (0..n_layers)
                .map(|i| DecoderLayer::new(store, &format!("{name}.l{i}"), d, heads, d_ff))
                .collect(),
            final_ln: LayerNorm::new(store, &format!("{name}.ln"), d),
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: TensorId,
        memory: TensorId,
        self_mask: Option<&[bool]>,
        mem_mask: Option<&[bool]>,
    ) -> Result<(TensorId, Vec<TensorId>)> {
        let mut x = x;
        let mut cross = Vec::new();
        for layer in &self.layers {
            let (y, w) = layer.forward(g, store, x, memory, self_mask, mem_mask)?;
            x = y;
            cross = w;
        }
        Ok((self.final_ln.forward(g, store, x)?, cross))
    }
}

/// Row-major `[n × n]` mask allowing position `i` to attend to `j ≤ i`.
pub fn causal_mask(n: usize) -> Vec<bool> {
    let mut m = vec![false; n * n];
    for i in 0..n {
        for j in 0..=i {
            m[i * n + j] = true;
        }
    }
    m
}

/// Row-major `[rq × rk]` mask letting every query attend exactly to the keys
/// flagged `true` in `allowed`.
pub fn key_mask(rq: usize, allowed: &[bool]) -> Vec<bool> {
    let mut m = Vec::with_capacity(rq * allowed.len());
    for _ in 0..rq {
        m.extend_from_slice(allowed);
    }
    m
}

/// Fixed sinusoidal embedding of a (diffusion) timestep.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    assert!(dim % 2 == 0, "time embedding dimension must be even");
    let mut e = vec![0.0; dim];
    for i in 0..dim / 2 {
        let freq = 1.0 / 10_000f64.powf(2.0 * i as f64 / dim as f64);
        e[2 * i] = (t as f64 * freq).sin();
        e[2 * i + 1] = (t as f64 * freq).cos();
    }
    e
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::rng::{self, Stream};
    use crate::tensor::{Precision, DEFAULT_H, DEFAULT_TOL};

    #[test]
    fn single_key_attention_returns_the_value_row() {
        let mut g = Graph::new();
        let q = g.leaf(vec![0.3, -0.8], &[1, 2]);
        let k = g.leaf(vec![0.3, -0.8], &[1, 2]);
        let v = g.leaf(vec![5.0, 6.0, 7.0], &[1, 3]);
        let (out, w) = scaled_dot_attention(&mut g, q, k, v, None).unwrap();
        assert_eq!(g.data(w), &[1.0]);
        assert_eq!(g.data(out), &[5.0, 6.0, 7.0]);
    }

    #[test]
    fn identical_keys_split_weight_evenly() {
        let mut g = Graph::new();
        let q = g.leaf(vec![1.0, 2.0], &[1, 2]);
        let k = g.leaf(vec![0.5, -0.5, 0.5, -0.5], &[2, 2]);
        let v = g.leaf(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]);
        let (out, w) = scaled_dot_attention(&mut g, q, k, v, None).unwrap();
        assert_eq!(g.data(w), &[0.5, 0.5]);
        assert_eq!(g.data(out), &[0.5, 0.5]);
    }

    #[test]
    fn attention_matches_scalar_oracle() {
        // 2 queries, 3 keys, width 2; recomputed with plain f64 arithmetic.
        let qd = [0.2, -0.4, 1.0, 0.3];
        let kd = [0.5, 0.1, -0.2, 0.8, 0.0, -1.0];
        let vd = [1.0, 2.0, 3.0, -1.0, 0.5, 0.25];
        let mut g = Graph::new();
        let q = g.leaf(qd.to_vec(), &[2, 2]);
        let k = g.leaf(kd.to_vec(), &[3, 2]);
        let v = g.leaf(vd.to_vec(), &[3, 2]);
        let (out, _) = scaled_dot_attention(&mut g, q, k, v, None).unwrap();

        let scale = 1.0 / 2f64.sqrt();
        for i in 0..2 {
            let scores: Vec<f64> = (0..3)
                .map(|j| scale * (qd[2 * i] * kd[2 * j] + qd[2 * i + 1] * kd[2 * j + 1]))
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = exps.iter().sum();
            for c in 0..2 {
                let want: f64 = (0..3).map(|j| exps[j] / z * vd[2 * j + c]).sum();
                let got = g.data(out)[2 * i + c];
                assert!((want - got).abs() < 1e-10, "({i},{c}): {want} vs {got}");
            }
        }
    }

    #[test]
    fn attention_rejects_mismatched_widths() {
        let mut g = Graph::new();
        let q = g.leaf(vec![0.0; 3], &[1, 3]);
        let k = g.leaf(vec![0.0; 4], &[2, 2]);
        let v = g.leaf(vec![0.0; 4], &[2, 2]);
        assert!(scaled_dot_attention(&mut g, q, k, v, None).is_err());
    }

    #[test]
    fn attention_rejects_fully_masked_rows() {
        let mut g = Graph::new();
        let q = g.leaf(vec![0.0; 4], &[2, 2]);
        let k = g.leaf(vec![0.0; 4], &[2, 2]);
        let v = g.leaf(vec![0.0; 4], &[2, 2]);
        let mask = vec![true, true, false, false];
        assert!(scaled_dot_attention(&mut g, q, k, v, Some(&mask)).is_err());
    }

    #[test]
    fn masked_keys_get_exactly_zero_weight() {
        let mut g = Graph::new();
        let q = g.leaf(vec![0.4, -0.2], &[1, 2]);
        let k = g.leaf(vec![0.1, 0.9, -0.3, 0.2, 0.7, 0.7], &[3, 2]);
        let v = g.leaf(vec![1.0; 6], &[3, 2]);
        let mask = vec![true, false, true];
        let (_, w) = scaled_dot_attention(&mut g, q, k, v, Some(&mask)).unwrap();
        assert_eq!(g.data(w)[1], 0.0);
        let s: f64 = g.data(w).iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn causal_mask_zeroes_the_upper_triangle() {
        let mut g = Graph::new();
        let mut r = rng::stream_rng(4, Stream::GradCheck);
        let x: Vec<f64> = (0..8).map(|_| rng::uniform(&mut r, -1.0, 1.0)).collect();
        let q = g.leaf(x.clone(), &[4, 2]);
        let k = g.leaf(x.clone(), &[4, 2]);
        let v = g.leaf(x, &[4, 2]);
        let mask = causal_mask(4);
        let (_, w) = scaled_dot_attention(&mut g, q, k, v, Some(&mask)).unwrap();
        for i in 0..4 {
            for j in i + 1..4 {
                assert_eq!(g.data(w)[i * 4 + j], 0.0, "({i},{j})");
            }
        }
    }

    #[test]
    fn encoder_block_passes_finite_difference() {
        let mut store = ParamStore::new(11, Precision::F64);
        let x = store.add("x", &[3, 4], Init::Normal { std: 1.0 });
        let enc = Encoder::new(&mut store, "enc", 4, 2, 1, 16);
        let report = crate::tensor::check_gradients(
            "encoder_block",
            &mut store,
            |s| {
                let mut g = Graph::new();
                let xn = g.param(s, x);
                let h = enc.forward(&mut g, s, xn, None)?;
                let n = g.data(h).len();
                let shape = g.shape(h).to_vec();
                let w = g.leaf((0..n).map(|i| (i as f64 * 0.41).cos() + 0.1).collect(), &shape);
                let p = g.mul(h, w);
                let l = g.sum(p);
                Ok((g, l))
            },
            DEFAULT_H,
            DEFAULT_TOL,
            6,
            13,
        )
        .unwrap();
        assert!(report.passed, "{report}");
    }

    #[test]
    fn decoder_block_passes_finite_difference() {
        let mut store = ParamStore::new(12, Precision::F64);
        let x = store.add("x", &[3, 4], Init::Normal { std: 1.0 });
        let mem = store.add("mem", &[2, 4], Init::Normal { std: 1.0 });
        let dec = Decoder::new(&mut store, "dec", 4, 2, 1, 16);
        let mask = causal_mask(3);
        let report = crate::tensor::check_gradients(
            "decoder_block",
            &mut store,
            |s| {
                let mut g = Graph::new();
                let xn = g.param(s, x);
                let mn = g.param(s, mem);
                let (h, _) = dec.forward(&mut g, s, xn, mn, Some(&mask), None)?;
                let n = g.data(h).len();
                let shape = g.shape(h).to_vec();
                let w = g.leaf((0..n).map(|i| (i as f64 * 0.29).sin() + 0.2).collect(), &shape);
                let p = g.mul(h, w);
                let l = g.sum(p);
                Ok((g, l))
            },
            DEFAULT_H,
            DEFAULT_TOL,
            6,
            14,
        )
        .unwrap();
        assert!(report.passed, "{report}");
    }

    #[test]
    fn time_embedding_is_bounded_and_distinct() {
        let a = time_embedding(1, 16);
        let b = time_embedding(25, 16);
        assert!(a.iter().all(|v| v.abs() <= 1.0));
        assert_ne!(a, b);
        assert_eq!(a, time_embedding(1, 16));
    }

    proptest! {
        #[test]
        fn attention_weights_are_row_stochastic(
            rq in 1usize..4,
            rk in 1usize..5,
            seed in 0u64..500,
        ) {
            let mut r = rng::stream_rng(seed, Stream::GradCheck);
            let mut g = Graph::new();
            let qd: Vec<f64> = (0..rq * 3).map(|_| rng::uniform(&mut r, -2.0, 2.0)).collect();
            let kd: Vec<f64> = (0..rk * 3).map(|_| rng::uniform(&mut r, -2.0, 2.0)).collect();
            let vd: Vec<f64> = (0..rk * 2).map(|_| rng::uniform(&mut r, -2.0, 2.0)).collect();
            // Random mask with at least one allowed key per row.
            let mut mask = vec![false; rq * rk];
            for i in 0..rq {
                let forced = rng::uniform(&mut r, 0.0, rk as f64) as usize;
                for j in 0..rk {
                    mask[i * rk + j] = j == forced.min(rk - 1) || rng::uniform(&mut r, 0.0, 1.0) < 0.5;
                }
            }
            let q = g.leaf(qd, &[rq, 3]);
            let k = g.leaf(kd, &[rk, 3]);
            let v = g.leaf(vd, &[rk, 2]);
            let (_, w) = scaled_dot_attention(&mut g, q, k, v, Some(&mask)).unwrap();
            for i in 0..rq {
                let row = &g.data(w)[i * rk..(i + 1) * rk];
                let s: f64 = row.iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-9);
                for j in 0..rk {
                    if !mask[i * rk + j] {
                        prop_assert_eq!(row[j], 0.0);
                    }
                }
            }
        }
    }
}
