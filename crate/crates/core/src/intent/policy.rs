//! Action policy over the three candidate intents, trained with
//! importance-weighted REINFORCE.
//!
//! Actions are sampled from a frozen snapshot of the policy (the behavior
//! distribution μ) while gradients flow through the live policy π; the
//! π(a)/μ(a) ratio reweights each sample and is clipped to keep the estimator
//! bounded as the two drift apart between snapshot refreshes.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::rng;
use crate::tensor::{Graph, ParamStore, TensorId};

/// Importance ratios are clamped to this range.
pub const RATIO_CLIP: (f64, f64) = (0.1, 10.0);

/// Optimizer steps between behavior-snapshot refreshes.
pub const SNAPSHOT_EVERY: usize = 50;

/// Two-layer network mapping a fused emotion state to a distribution over
/// the three candidate intents.
pub struct PolicyNet {
    l1: Linear,
    l2: Linear,
    d_model: usize,
}

impl PolicyNet {
    pub fn new(store: &mut ParamStore, name: &str, d_model: usize) -> PolicyNet {
        PolicyNet {
            l1: Linear::new(store, &format!("{name}.l1"), d_model, d_model),
            l2: Linear::new(store, &format!("{name}.l2"), d_model, 3),
            d_model,
        }
    }

    /// Action distribution `[1 × 3]` for a `[d]` or `[1 × d]` state.
    pub fn probs(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        state: TensorId,
    ) -> Result<TensorId> {
        if g.data(state).len() != self.d_model {
            return Err(Error::shape(
                "policy",
                format!("expected {} dims, got {:?}", self.d_model, g.shape(state)),
            ));
        }
        let x = g.reshape(state, &[1, self.d_model]);
        let h = self.l1.forward(g, store, x);
        let h = g.tanh(h);
        let logits = self.l2.forward(g, store, h);
        g.softmax(logits)
    }

    /// A frozen copy of the current weights, usable without the store.
    pub fn snapshot(&self, store: &ParamStore) -> PolicySnapshot {
        PolicySnapshot {
            w1: store.get(self.l1.w).data.clone(),
            b1: store.get(self.l1.b.expect("policy l1 has bias")).data.clone(),
            w2: store.get(self.l2.w).data.clone(),
            b2: store.get(self.l2.b.expect("policy l2 has bias")).data.clone(),
            d_model: self.d_model,
        }
    }
}

/// Frozen behavior policy μ. Evaluation replays the exact op sequence of
/// [`PolicyNet::probs`] on a throwaway graph, so a fresh snapshot agrees with
/// the live policy bit for bit.
pub struct PolicySnapshot {
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    d_model: usize,
}

impl PolicySnapshot {
    /// Behavior distribution over the three actions.
    pub fn probs(&self, state: &[f64]) -> Result<Vec<f64>> {
        let d = self.d_model;
        if state.len() != d {
            return Err(Error::shape(
                "policy snapshot",
                format!("expected {d} dims, got {}", state.len()),
            ));
        }
        let mut g = Graph::new();
        let x = g.leaf(state.to_vec(), &[1, d]);
        let w1 = g.leaf(self.w1.clone(), &[d, d]);
        let b1 = g.leaf(self.b1.clone(), &[d]);
        let xw = g.matmul(x, w1);
        let h = g.add_row(xw, b1);
        let h = g.tanh(h);
        let w2 = g.leaf(self.w2.clone(), &[d, 3]);
        let b2 = g.leaf(self.b2.clone(), &[3]);
        let hw = g.matmul(h, w2);
        let logits = g.add_row(hw, b2);
        let p = g.softmax(logits)?;
        Ok(g.data(p).to_vec())
    }
}

/// `π(a)/μ(a)` clamped to [`RATIO_CLIP`].
pub fn importance_ratio(pi_a: f64, mu_a: f64) -> f64 {
    (pi_a / mu_a).clamp(RATIO_CLIP.0, RATIO_CLIP.1)
}

/// Samples an action from the behavior distribution `mu` and attaches the
/// clipped importance ratio against the live distribution `pi`.
pub fn sample_action(
    pi: &[f64],
    mu: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<(usize, f64)> {
    if pi.len() != mu.len() || mu.is_empty() {
        return Err(Error::shape(
            "sample_action",
            format!("pi has {} entries, mu has {}", pi.len(), mu.len()),
        ));
    }
    let u = rng::uniform(rng, 0.0, 1.0);
    let mut cum = 0.0;
    let mut action = mu.len() - 1;
    for (i, &p) in mu.iter().enumerate() {
        cum += p;
        if u < cum {
            action = i;
            break;
        }
    }
    Ok((action, importance_ratio(pi[action], mu[action])))
}

/// Reward for choosing a candidate intent: how well the selected intent's
/// embedding aligns with the polarity-matched emotion state, squashed to
/// `(0, 1)`.
pub fn alignment_reward(state: &[f64], intent_emb: &[f64]) -> f64 {
    let dot: f64 = state.iter().zip(intent_emb).map(|(a, b)| a * b).sum();
    1.0 / (1.0 + (-dot).exp())
}

/// Importance-weighted REINFORCE objective with a batch-mean baseline:
/// `−mean_i(ratio_i · (R_i − R̄) · log π(a_i))`.
///
/// `log_pis` are in-graph log-probabilities of the sampled actions, so the
/// returned node carries gradients into the policy and its state inputs.
pub fn policy_loss(
    g: &mut Graph,
    log_pis: &[TensorId],
    ratios: &[f64],
    rewards: &[f64],
) -> Result<TensorId> {
    let n = log_pis.len();
    if n == 0 {
        return Err(Error::invalid("policy_loss: empty trajectory"));
    }
    if ratios.len() != n || rewards.len() != n {
        return Err(Error::shape(
            "policy_loss",
            format!("{n} log-probs, {} ratios, {} rewards", ratios.len(), rewards.len()),
        ));
    }
    let baseline = rewards.iter().sum::<f64>() / n as f64;
    let terms: Vec<TensorId> = log_pis
        .iter()
        .zip(ratios.iter().zip(rewards))
        .map(|(&lp, (&w, &r))| g.scale(lp, -w * (r - baseline) / n as f64))
        .collect();
    let all = g.concat(&terms);
    Ok(g.sum(all))
}
