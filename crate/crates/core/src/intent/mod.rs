//! Two-pass intent selection over the dialogue emotion state.
//!
//! The first pass scores the nine response intents from the pooled state Q:
//! a semantic score (cosine against learned intent embeddings) plus a
//! weighted classifier score. The state is then noised and denoised through
//! two polarity-specific diffusion models, the reconstructions are fused by
//! cross-attention with the tagged context, and a small policy picks one of
//! the three table-recommended intents for the speaker's emotion. A
//! reward-driven correction finally re-scores all nine intents through the
//! same classifier head, yielding the second-pass intent and its loss.

pub mod diffusion;
pub mod policy;
pub mod table;

pub use diffusion::{
    diffuse_iterative, diffuse_jump, diffuse_node, eps_mse, reverse_step, x0_node, Denoiser,
    DiffusionSample, NoiseSchedule, VarianceForm, TIME_DIM,
};
pub use policy::{
    alignment_reward, importance_ratio, policy_loss, sample_action, PolicyNet, PolicySnapshot,
    RATIO_CLIP, SNAPSHOT_EVERY,
};
pub use table::IntentTable;

use crate::corpus::{IntentLabel, Polarity};
use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::tensor::{Graph, ParamId, ParamStore, TensorId};

/// First-pass intent scores and their two ingredients.
pub struct IntentFirst {
    /// `p_semantic + α·p_intent`; unnormalized (sums to `1 + α`).
    pub scores: TensorId,
    /// Softmax over cosine similarity between Q and each intent embedding.
    pub p_semantic: TensorId,
    /// Softmax output of the shared classifier head.
    pub p_intent: TensorId,
}

/// Positive and negative denoised reconstructions of a noised state.
pub struct EmuStates {
    pub q_t: TensorId,
    pub emo_pos: TensorId,
    pub emo_neg: TensorId,
    /// Noise predictions, kept for the denoiser losses.
    pub eps_hat_pos: TensorId,
    pub eps_hat_neg: TensorId,
}

/// Second-pass rescoring of all nine intents.
pub struct Correction {
    pub logits: TensorId,
    pub probs: TensorId,
    pub predicted: IntentLabel,
}

/// The full two-pass intent mechanism: embeddings, shared classifier head,
/// paired denoisers, policy, and the reference table.
pub struct IntentTwice {
    pub e_int: ParamId,
    /// Shared head: scores intents both for the first pass and after the
    /// second-pass blend.
    pub head: Linear,
    pub den_pos: Denoiser,
    pub den_neg: Denoiser,
    pub policy: PolicyNet,
    pub table: IntentTable,
    pub schedule: NoiseSchedule,
    pub form: VarianceForm,
    /// Weight of the classifier score inside the first pass.
    pub alpha: f64,
    d_model: usize,
}

impl IntentTwice {
    pub fn new(store: &mut ParamStore, d_model: usize, t_steps: usize) -> IntentTwice {
        IntentTwice {
            e_int: store.add(
                "intent.emb",
                &[IntentLabel::COUNT, d_model],
                crate::tensor::Init::Normal { std: 0.1 },
            ),
            head: Linear::new(store, "intent.head", d_model, IntentLabel::COUNT),
            den_pos: Denoiser::new(store, "intent.den_pos", d_model, IntentLabel::COUNT),
            den_neg: Denoiser::new(store, "intent.den_neg", d_model, IntentLabel::COUNT),
            policy: PolicyNet::new(store, "intent.policy", d_model),
            table: IntentTable::bundled(),
            schedule: NoiseSchedule::linear(t_steps),
            form: VarianceForm::Product,
            alpha: 1.0,
            d_model,
        }
    }

    /// First-pass intent scores for a pooled state `q` (`[d]` or `[1 × d]`).
    pub fn intent_first(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        q: TensorId,
    ) -> Result<IntentFirst> {
        let d = self.d_model;
        if g.data(q).len() != d {
            return Err(Error::shape(
                "intent_first",
                format!("expected {d} dims, got {:?}", g.shape(q)),
            ));
        }
        let q_row = g.reshape(q, &[1, d]);

        // Cosine similarity against each intent embedding row.
        let qn = normalize_rows(g, q_row, d);
        let emb = g.param(store, self.e_int);
        let en = normalize_rows(g, emb, d);
        let ent = g.transpose(en);
        let sims = g.matmul(qn, ent);
        let p_semantic = g.softmax(sims)?;

        let logits = self.head.forward(g, store, q_row);
        let p_intent = g.softmax(logits)?;

        let weighted = g.scale(p_intent, self.alpha);
        let scores = g.add(p_semantic, weighted);
        Ok(IntentFirst { scores, p_semantic, p_intent })
    }

    /// Noises `q` to step `t` with the given draw and reconstructs it through
    /// both polarity denoisers, conditioned on the first-pass scores.
    pub fn emu_states(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        q: TensorId,
        t: usize,
        eps: &[f64],
        intent_scores: TensorId,
    ) -> Result<EmuStates> {
        let q_row = g.reshape(q, &[1, self.d_model]);
        let q_t = diffuse_node(g, q_row, eps, t, &self.schedule)?;
        let eps_hat_pos = self.den_pos.predict(g, store, q_t, t, intent_scores)?;
        let eps_hat_neg = self.den_neg.predict(g, store, q_t, t, intent_scores)?;
        let emo_pos = x0_node(g, q_t, eps_hat_pos, t, &self.schedule, self.form)?;
        let emo_neg = x0_node(g, q_t, eps_hat_neg, t, &self.schedule, self.form)?;
        Ok(EmuStates { q_t, emo_pos, emo_neg, eps_hat_pos, eps_hat_neg })
    }

    /// Reward for picking `intent`: alignment between its embedding and the
    /// reconstruction matching the speaker's polarity. Computed on raw data;
    /// the policy gradient treats it as a constant.
    pub fn reward_for(
        &self,
        store: &ParamStore,
        polarity: Polarity,
        emo_pos: &[f64],
        emo_neg: &[f64],
        intent: IntentLabel,
    ) -> f64 {
        let d = self.d_model;
        let row = intent.index();
        let e_a = &store.get(self.e_int).data[row * d..(row + 1) * d];
        let state = match polarity {
            Polarity::Pos => emo_pos,
            _ => emo_neg,
        };
        alignment_reward(state, e_a)
    }

    /// Second pass: blend the sampled reference intent's embedding with the
    /// expectation of the first-pass scores, and re-score through the shared
    /// head.
    pub fn correct_intent(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        action: IntentLabel,
        first: &IntentFirst,
    ) -> Result<Correction> {
        let emb = g.param(store, self.e_int);
        let e_a = g.rows(emb, &[action.index()]);
        let soft = g.softmax(first.scores)?;
        let expected = g.matmul(soft, emb);
        let blend = g.add(e_a, expected);
        let logits = self.head.forward(g, store, blend);
        let probs = g.softmax(logits)?;
        let predicted = IntentLabel::from_index(argmax(g.data(probs)))
            .expect("argmax over 9 intents is in range");
        Ok(Correction { logits, probs, predicted })
    }
}

/// `−ln p[gold]` from a `[1 × n]` probability row.
pub fn nll(g: &mut Graph, probs: TensorId, gold: usize) -> TensorId {
    let p = g.gather(probs, gold);
    let lp = g.ln_clamped(p);
    g.scale(lp, -1.0)
}

/// `L_kl_pos + L_kl_neg + L_intent`.
pub fn twice_loss(
    g: &mut Graph,
    kl_pos: TensorId,
    kl_neg: TensorId,
    l_intent: TensorId,
) -> TensorId {
    let kl = g.add(kl_pos, kl_neg);
    g.add(kl, l_intent)
}

/// Mean of scalar nodes, or an exact-zero leaf when the list is empty (a
/// batch can lack one polarity entirely).
pub fn mean_or_zero(g: &mut Graph, terms: &[TensorId]) -> TensorId {
    if terms.is_empty() {
        g.leaf(vec![0.0], &[1])
    } else {
        let all = g.concat(terms);
        g.mean(all)
    }
}

/// Cross-attention fusion of the two reconstructions with the tagged context
/// rows `h`: queries `[Emo_pos; h]`, keys/values `[Emo_neg; h]`, mean-pooled
/// to a single `[d]` vector.
pub fn emu_fuse(
    g: &mut Graph,
    emo_pos: TensorId,
    emo_neg: TensorId,
    h: TensorId,
) -> Result<TensorId> {
    let d = g.shape(h)[g.shape(h).len() - 1];
    let pos_row = g.reshape(emo_pos, &[1, d]);
    let neg_row = g.reshape(emo_neg, &[1, d]);
    let queries = g.concat_rows(&[pos_row, h]);
    let keyvals = g.concat_rows(&[neg_row, h]);
    let (out, _) = crate::nn::scaled_dot_attention(g, queries, keyvals, keyvals, None)?;
    Ok(g.mean_rows(out))
}

fn normalize_rows(g: &mut Graph, m: TensorId, d: usize) -> TensorId {
    let sq = g.mul(m, m);
    let ones_col = g.leaf(vec![1.0; d], &[d, 1]);
    let norms_sq = g.matmul(sq, ones_col);
    let norms = g.sqrt(norms_sq);
    let ones_row = g.leaf(vec![1.0; d], &[1, d]);
    let norms_full = g.matmul(norms, ones_row);
    g.div(m, norms_full)
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
