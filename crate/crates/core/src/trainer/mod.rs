//! Joint optimization: the weighted multi-task objective, the Noam learning
//! rate schedule with a post-warmup floor, Adam, and the fit loop with
//! seeded batching, periodic validation, early stopping, and a behavior
//! snapshot refresh for the policy's importance ratios.

pub mod checkpoint;

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::Dialogue;
use crate::error::{Error, Result};
use crate::intent::SNAPSHOT_EVERY;
use crate::model::{argmax, Model, RlDecision, SampleOutput};
use crate::rng::{self, Stream};
use crate::tensor::{Graph, ParamStore, TensorId};

/// Validation samples draw their diffusion noise from lanes far above any
/// training lane, so evals are comparable across the run.
const VAL_LANE_BASE: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the emotion loss.
    pub delta: f64,
    /// Weight of the intent-twice loss.
    pub zeta: f64,
    /// Weight of the response loss.
    pub eta: f64,
    pub batch_size: usize,
    pub warmup: usize,
    /// Post-warmup floor: the learning rate never drops below
    /// `lr_decay × peak`.
    pub lr_decay: f64,
    pub max_iters: usize,
    /// Evaluations (not steps) without improvement before stopping.
    pub patience: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub val_fraction: f64,
}

impl TrainConfig {
    /// Desk-scale defaults: small batches, short warmup.
    pub fn desk() -> TrainConfig {
        TrainConfig {
            delta: 1.0,
            zeta: 1.0,
            eta: 1.0,
            batch_size: 16,
            warmup: 300,
            lr_decay: 0.01,
            max_iters: 3000,
            patience: 5,
            eval_every: 200,
            seed: 7,
            val_fraction: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("delta", self.delta), ("zeta", self.zeta), ("eta", self.eta)] {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::invalid(format!("{name} = {w} must be finite and >= 0")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if self.warmup == 0 {
            return Err(Error::invalid("warmup must be positive"));
        }
        if !self.lr_decay.is_finite() || !(0.0..=1.0).contains(&self.lr_decay) {
            return Err(Error::invalid(format!("lr_decay = {} outside [0, 1]", self.lr_decay)));
        }
        if self.patience == 0 || self.eval_every == 0 {
            return Err(Error::invalid("patience and eval_every must be positive"));
        }
        if !self.val_fraction.is_finite() || !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::invalid(format!(
                "val_fraction = {} outside [0, 1)",
                self.val_fraction
            )));
        }
        Ok(())
    }
}

/// `δ·L_em + ζ·L_twice + η·L_res` as a graph node. Each component must be
/// finite; the error names the offender.
pub fn joint_loss(
    g: &mut Graph,
    l_em: TensorId,
    l_twice: TensorId,
    l_res: TensorId,
    cfg: &TrainConfig,
) -> Result<TensorId> {
    for (name, node) in [("L_em", l_em), ("L_twice", l_twice), ("L_res", l_res)] {
        if !g.value(node).is_finite() {
            return Err(Error::NonFinite {
                op: "joint_loss",
                detail: format!("{name} = {}", g.value(node)),
            });
        }
    }
    let a = g.scale(l_em, cfg.delta);
    let b = g.scale(l_twice, cfg.zeta);
    let c = g.scale(l_res, cfg.eta);
    let ab = g.add(a, b);
    Ok(g.add(ab, c))
}

/// `d_model^{-1/2} · min(step^{-1/2}, step · warmup^{-3/2})`.
pub fn noam_lr(step: usize, d_model: usize, warmup: usize) -> Result<f64> {
    if step == 0 {
        return Err(Error::invalid("noam_lr is undefined at step 0"));
    }
    let s = step as f64;
    let w = warmup as f64;
    Ok((d_model as f64).powf(-0.5) * (s.powf(-0.5)).min(s * w.powf(-1.5)))
}

/// Noam with a floor after warmup: the rate never decays below
/// `decay × peak`, where the peak is the value at the warmup step.
pub fn scheduled_lr(step: usize, d_model: usize, warmup: usize, decay: f64) -> Result<f64> {
    let lr = noam_lr(step, d_model, warmup)?;
    if step <= warmup {
        return Ok(lr);
    }
    let peak = noam_lr(warmup, d_model, warmup)?;
    Ok(lr.max(decay * peak))
}

/// Adam with the store-resident moment buffers.
#[derive(Debug, Clone, Copy)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam { beta1: 0.9, beta2: 0.98, eps: 1e-9 }
    }
}

impl Adam {
    /// One bias-corrected update from the accumulated gradients. `t` is the
    /// 1-based optimizer step.
    pub fn step(&self, store: &mut ParamStore, lr: f64, t: usize) {
        assert!(t >= 1, "Adam step count is 1-based");
        let bc1 = 1.0 - self.beta1.powi(t as i32);
        let bc2 = 1.0 - self.beta2.powi(t as i32);
        let precision = store.precision();
        for id in store.ids().collect::<Vec<_>>() {
            let p = store.get_mut(id);
            for i in 0..p.data.len() {
                let g = p.grad[i];
                p.m[i] = self.beta1 * p.m[i] + (1.0 - self.beta1) * g;
                p.v[i] = self.beta2 * p.v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = p.m[i] / bc1;
                let v_hat = p.v[i] / bc2;
                p.data[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
                if precision == crate::tensor::Precision::F32 {
                    p.data[i] = p.data[i] as f32 as f64;
                }
            }
        }
    }
}

/// One CSV row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRow {
    pub step: usize,
    pub lr: f64,
    pub l_em: f64,
    pub l_twice: f64,
    pub l_res: f64,
    /// The full optimized objective (joint plus tagger and policy terms).
    pub l: f64,
    pub val_l: Option<f64>,
}

/// Writes the log in the fixed column order.
pub fn write_log_csv(w: &mut impl Write, rows: &[TrainLogRow]) -> Result<()> {
    writeln!(w, "step,lr,L_em,L_twice,L_res,L,val_L")?;
    for r in rows {
        let val = r.val_l.map(|v| v.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{},{},{},{},{}", r.step, r.lr, r.l_em, r.l_twice, r.l_res, r.l, val)?;
    }
    Ok(())
}

#[derive(Debug)]
pub struct FitOutcome {
    pub log: Vec<TrainLogRow>,
    /// Best validation joint loss, when any evaluation ran.
    pub best_val: Option<f64>,
    pub steps: usize,
}

struct BestState {
    val: f64,
    params: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)>,
}

fn capture_params(store: &ParamStore) -> Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    store
        .ids()
        .map(|id| {
            let p = store.get(id);
            (p.data.clone(), p.m.clone(), p.v.clone())
        })
        .collect()
}

fn restore_params(store: &mut ParamStore, saved: &[(Vec<f64>, Vec<f64>, Vec<f64>)]) {
    for (id, (data, m, v)) in store.ids().collect::<Vec<_>>().into_iter().zip(saved) {
        let p = store.get_mut(id);
        p.data.copy_from_slice(data);
        p.m.copy_from_slice(m);
        p.v.copy_from_slice(v);
    }
}

/// Trains the model in place. The dialogue list is shuffled once (seeded)
/// and split into train/validation; batches are drawn with replacement from
/// per-step seeded lanes, so a fixed `(seed, config)` pair reproduces the
/// whole parameter trajectory bitwise. Early stopping restores the best
/// validated parameters. A non-finite objective aborts with
/// [`Error::Diverged`] after restoring the best state seen.
pub fn fit(
    model: &mut Model,
    store: &mut ParamStore,
    dialogues: &[Dialogue],
    cfg: &TrainConfig,
) -> Result<FitOutcome> {
    cfg.validate()?;
    if dialogues.is_empty() {
        return Err(Error::invalid("fit: empty corpus"));
    }

    let mut order: Vec<usize> = (0..dialogues.len()).collect();
    let mut shuffle_rng = rng::stream_rng(cfg.seed, Stream::DataOrder);
    order.shuffle(&mut shuffle_rng);
    let n_val = (dialogues.len() as f64 * cfg.val_fraction).floor() as usize;
    let (val_idx, train_idx) = order.split_at(n_val);
    let val: Vec<&Dialogue> = val_idx.iter().map(|&i| &dialogues[i]).collect();
    let train: Vec<&Dialogue> = train_idx.iter().map(|&i| &dialogues[i]).collect();
    if train.is_empty() {
        return Err(Error::invalid("fit: validation split leaves no training data"));
    }

    let adam = Adam::default();
    let mut log = Vec::new();
    let mut best: Option<BestState> = None;
    let mut evals_since_best = 0usize;
    let mut snapshot = model.intent.policy.snapshot(store);

    let mut step = 0;
    while step < cfg.max_iters {
        step += 1;
        if (step - 1) % SNAPSHOT_EVERY == 0 {
            snapshot = model.intent.policy.snapshot(store);
        }

        let mut batch_rng = rng::sample_rng(cfg.seed, Stream::DataOrder, step as u64);
        let picks: Vec<&Dialogue> = (0..cfg.batch_size)
            .map(|_| train[batch_rng.random_range(0..train.len())])
            .collect();

        // Any non-finite value inside the step — whether an op rejects an
        // overflowed input or a loss component goes NaN — is divergence:
        // restore the best validated state and abort.
        let diverge = |store: &mut ParamStore, best: &Option<BestState>| {
            if let Some(b) = best {
                restore_params(store, &b.params);
            }
            Error::Diverged { step }
        };
        let built = (|| {
            let mut g = Graph::new();
            let mut outs = Vec::with_capacity(picks.len());
            for (i, d) in picks.iter().enumerate() {
                let lane = (step as u64 - 1) * cfg.batch_size as u64 + i as u64;
                outs.push(model.train_sample(&mut g, store, d, &snapshot, cfg.seed, lane)?);
            }
            let bl = model.batch_losses(&mut g, store, &outs)?;
            let joint = joint_loss(&mut g, bl.l_em, bl.l_twice, bl.l_res, cfg)?;
            let with_era = g.add(joint, bl.l_era);
            let total = g.add(with_era, bl.l_pg);
            Ok((g, bl, total))
        })();
        let (mut g, bl, total) = match built {
            Ok(x) => x,
            Err(Error::NonFinite { .. }) => return Err(diverge(store, &best)),
            Err(e) => return Err(e),
        };

        let total_v = g.value(total);
        if !total_v.is_finite() {
            return Err(diverge(store, &best));
        }

        let lr = scheduled_lr(step, model.d_model, cfg.warmup, cfg.lr_decay)?;
        g.backward(total)?;
        store.zero_grads();
        g.grads_into(store);
        adam.step(store, lr, step);

        let mut row = TrainLogRow {
            step,
            lr,
            l_em: g.value(bl.l_em),
            l_twice: g.value(bl.l_twice),
            l_res: g.value(bl.l_res),
            l: total_v,
            val_l: None,
        };

        if !val.is_empty() && step % cfg.eval_every == 0 {
            let val_l = validation_loss(model, store, &val, cfg)?;
            row.val_l = Some(val_l);
            let improved = best.as_ref().is_none_or(|b| val_l < b.val);
            if improved {
                best = Some(BestState { val: val_l, params: capture_params(store) });
                evals_since_best = 0;
            } else {
                evals_since_best += 1;
            }
            if evals_since_best >= cfg.patience {
                log.push(row);
                break;
            }
        }
        log.push(row);
    }

    if let Some(b) = &best {
        restore_params(store, &b.params);
    }
    model.trained = true;
    Ok(FitOutcome { log, best_val: best.map(|b| b.val), steps: step.min(cfg.max_iters) })
}

/// Mean joint loss over the validation split, decided deterministically:
/// greedy actions, fixed noise lanes. The tagger and policy terms stay out,
/// matching the objective the weights are tuned for.
fn validation_loss(
    model: &Model,
    store: &ParamStore,
    val: &[&Dialogue],
    cfg: &TrainConfig,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (chunk_no, chunk) in val.chunks(cfg.batch_size).enumerate() {
        let mut g = Graph::new();
        let mut outs: Vec<SampleOutput> = Vec::with_capacity(chunk.len());
        for (i, d) in chunk.iter().enumerate() {
            let lane = VAL_LANE_BASE + (chunk_no * cfg.batch_size + i) as u64;
            let sg = model.sample_graph(&mut g, store, d, cfg.seed, lane)?;
            let rl = RlDecision { action: argmax(g.data(sg.pi)), ratio: 1.0, reward: 0.5 };
            outs.push(model.finish_sample(&mut g, store, sg, rl)?);
        }
        let bl = model.batch_losses(&mut g, store, &outs)?;
        let joint = joint_loss(&mut g, bl.l_em, bl.l_twice, bl.l_res, cfg)?;
        total += g.value(joint) * chunk.len() as f64;
        count += chunk.len();
    }
    Ok(total / count as f64)
}
