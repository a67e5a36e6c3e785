//! Forward noising and learned denoising of emotion state vectors.
//!
//! A fixed variance schedule turns a clean vector `q_0` into progressively
//! noisier `q_t` (closed-form jump or step-by-step), and a small conditional
//! MLP learns to predict the injected noise so the process can be run
//! backwards. Two independent denoisers are trained downstream, one per
//! emotion polarity.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{time_embedding, Linear};
use crate::rng;
use crate::tensor::{Graph, ParamStore, TensorId};

/// Width of the sinusoidal step embedding fed to the denoiser.
pub const TIME_DIM: usize = 16;

/// Which accumulated-noise factor scales the predicted noise in the reverse
/// step (and the single-step reconstruction).
///
/// `Product` uses `1 − ᾱ_t` with `ᾱ_t = ∏(1 − β_s)`, which stays in `(0, 1)`
/// for any horizon. `Sum` uses the literal `1 − Σ β_s`, which goes
/// nonpositive once the raw variances add past one, at which point operations
/// that need it return an error. `Product` is the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceForm {
    Product,
    Sum,
}

impl Default for VarianceForm {
    fn default() -> Self {
        VarianceForm::Product
    }
}

/// Per-step noise variances `β_1..β_T` with their running products and sums.
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
    beta_sum: Vec<f64>,
}

impl NoiseSchedule {
    /// `T` steps linearly spaced from `1e-5` to `5e-2`.
    pub fn linear(t_steps: usize) -> NoiseSchedule {
        const BETA_MIN: f64 = 1e-5;
        const BETA_MAX: f64 = 5e-2;
        let betas: Vec<f64> = if t_steps == 1 {
            vec![BETA_MIN]
        } else {
            (0..t_steps)
                .map(|i| BETA_MIN + (BETA_MAX - BETA_MIN) * i as f64 / (t_steps - 1) as f64)
                .collect()
        };
        NoiseSchedule::from_betas(betas).expect("linear schedule is valid")
    }

    /// A schedule from explicit variances. Each `β` must lie in `[0, 1)`.
    pub fn from_betas(betas: Vec<f64>) -> Result<NoiseSchedule> {
        if betas.is_empty() {
            return Err(Error::invalid("noise schedule needs at least one step"));
        }
        for (i, &b) in betas.iter().enumerate() {
            if !b.is_finite() || !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(format!(
                    "noise schedule step {}: beta {b} outside [0, 1)",
                    i + 1
                )));
            }
        }
        let mut alpha_bar = Vec::with_capacity(betas.len());
        let mut beta_sum = Vec::with_capacity(betas.len());
        let mut prod = 1.0;
        let mut sum = 0.0;
        for &b in &betas {
            prod *= 1.0 - b;
            sum += b;
            alpha_bar.push(prod);
            beta_sum.push(sum);
        }
        Ok(NoiseSchedule { betas, alpha_bar, beta_sum })
    }

    /// Number of steps `T`.
    pub fn t_max(&self) -> usize {
        self.betas.len()
    }

    /// `β_t` for `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// `ᾱ_t = ∏_{s≤t} (1 − β_s)` for `t` in `1..=T`; `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    /// The accumulated-noise factor at step `t` under `form`: `1 − ᾱ_t` for
    /// `Product`, the literal `1 − Σ β_s` for `Sum`. The `Sum` form errors
    /// once `Σ β` reaches one and the square root stops existing.
    pub fn one_minus(&self, t: usize, form: VarianceForm) -> Result<f64> {
        self.check_t(t, "one_minus")?;
        match form {
            VarianceForm::Product => Ok(1.0 - self.alpha_bar[t - 1]),
            VarianceForm::Sum => {
                let v = 1.0 - self.beta_sum[t - 1];
                if v <= 0.0 {
                    return Err(Error::invalid(format!(
                        "sum-form noise factor is nonpositive at step {t} (sum of betas = {:.4})",
                        self.beta_sum[t - 1]
                    )));
                }
                Ok(v)
            }
        }
    }

    fn check_t(&self, t: usize, op: &str) -> Result<()> {
        if t == 0 || t > self.t_max() {
            return Err(Error::invalid(format!(
                "{op}: step {t} outside 1..={}",
                self.t_max()
            )));
        }
        Ok(())
    }
}

/// A noised vector together with the exact noise that produced it.
pub struct DiffusionSample {
    pub q_t: Vec<f64>,
    pub eps: Vec<f64>,
}

/// Closed-form jump to step `t`: `q_t = √ᾱ_t·q_0 + √(1−ᾱ_t)·ε` with a single
/// standard normal draw `ε`.
pub fn diffuse_jump(
    q0: &[f64],
    t: usize,
    schedule: &NoiseSchedule,
    rng: &mut ChaCha8Rng,
) -> Result<DiffusionSample> {
    schedule.check_t(t, "diffuse_jump")?;
    let eps = rng::normal_vec(rng, q0.len());
    let a = schedule.alpha_bar(t);
    let (sa, so) = (a.sqrt(), (1.0 - a).sqrt());
    let q_t = q0.iter().zip(&eps).map(|(x, e)| sa * x + so * e).collect();
    Ok(DiffusionSample { q_t, eps })
}

/// Step-by-step noising: `q_s = √(1−β_s)·q_{s−1} + √β_s·ε_s` for `s` in
/// `1..=t`, drawing fresh noise at every step.
pub fn diffuse_iterative(
    q0: &[f64],
    t: usize,
    schedule: &NoiseSchedule,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    schedule.check_t(t, "diffuse_iterative")?;
    let mut q = q0.to_vec();
    for s in 1..=t {
        let b = schedule.beta(s);
        let (keep, add) = ((1.0 - b).sqrt(), b.sqrt());
        for x in q.iter_mut() {
            *x = keep * *x + add * rng::normal(rng);
        }
    }
    Ok(q)
}

/// One reverse step from `q_t` to an estimate of `q_{t−1}`, given the
/// denoiser's noise prediction:
/// `q̃_{t−1} = (q_t − β_t·ε̂/√(1−ᾱ_t)) / √(1−β_t)`.
pub fn reverse_step(
    q_t: &[f64],
    eps_hat: &[f64],
    t: usize,
    schedule: &NoiseSchedule,
    form: VarianceForm,
) -> Result<Vec<f64>> {
    if q_t.len() != eps_hat.len() {
        return Err(Error::shape(
            "reverse_step",
            format!("q_t has {} dims but eps_hat has {}", q_t.len(), eps_hat.len()),
        ));
    }
    schedule.check_t(t, "reverse_step")?;
    let b = schedule.beta(t);
    let om = schedule.one_minus(t, form)?;
    // β_t = 0 makes the correction exactly zero; guard the 0/0 that the
    // all-zero test schedule would otherwise hit.
    let coef = if b == 0.0 { 0.0 } else { b / om.sqrt() };
    let keep = 1.0 / (1.0 - b).sqrt();
    Ok(q_t
        .iter()
        .zip(eps_hat)
        .map(|(x, e)| keep * (x - coef * e))
        .collect())
}

/// In-graph jump to step `t` with externally drawn noise, so gradients flow
/// back into `q_0`.
pub fn diffuse_node(
    g: &mut Graph,
    q0: TensorId,
    eps: &[f64],
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<TensorId> {
    schedule.check_t(t, "diffuse_node")?;
    let shape = g.shape(q0).to_vec();
    if shape.iter().product::<usize>() != eps.len() {
        return Err(Error::shape(
            "diffuse_node",
            format!("q_0 has {shape:?} but eps has {} values", eps.len()),
        ));
    }
    let a = schedule.alpha_bar(t);
    let scaled = g.scale(q0, a.sqrt());
    let e = g.leaf(eps.to_vec(), &shape);
    let noise = g.scale(e, (1.0 - a).sqrt());
    Ok(g.add(scaled, noise))
}

/// In-graph single-step reconstruction of the clean vector from `q_t` and a
/// noise estimate: `x̂_0 = (q_t − √(1−ᾱ_t)·ε̂) / √ᾱ_t`.
pub fn x0_node(
    g: &mut Graph,
    q_t: TensorId,
    eps_hat: TensorId,
    t: usize,
    schedule: &NoiseSchedule,
    form: VarianceForm,
) -> Result<TensorId> {
    let om = schedule.one_minus(t, form)?;
    let scaled_eps = g.scale(eps_hat, om.sqrt());
    let diff = g.sub(q_t, scaled_eps);
    Ok(g.scale(diff, 1.0 / schedule.alpha_bar(t).sqrt()))
}

/// Per-sample noise-prediction loss: `Σ_dims (ε − ε̂)²`.
pub fn eps_mse(g: &mut Graph, target: TensorId, pred: TensorId) -> TensorId {
    let d = g.sub(target, pred);
    let sq = g.mul(d, d);
    g.sum(sq)
}

/// Conditional noise predictor: a two-hidden-layer tanh MLP over the noised
/// vector, a sinusoidal embedding of the step, and the first-pass intent
/// scores.
pub struct Denoiser {
    l1: Linear,
    l2: Linear,
    l3: Linear,
    d_model: usize,
    cond_dim: usize,
}

impl Denoiser {
    pub fn new(store: &mut ParamStore, name: &str, d_model: usize, cond_dim: usize) -> Denoiser {
        let hidden = 2 * d_model;
        Denoiser {
            l1: Linear::new(store, &format!("{name}.l1"), d_model + TIME_DIM + cond_dim, hidden),
            l2: Linear::new(store, &format!("{name}.l2"), hidden, hidden),
            l3: Linear::new(store, &format!("{name}.l3"), hidden, d_model),
            d_model,
            cond_dim,
        }
    }

    /// Predicted noise `ε̂` for a `[1 × d]` noised vector at step `t`,
    /// conditioned on `[1 × cond_dim]` intent scores. Returns `[1 × d]`.
    pub fn predict(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        q_t: TensorId,
        t: usize,
        cond: TensorId,
    ) -> Result<TensorId> {
        if g.data(q_t).len() != self.d_model {
            return Err(Error::shape(
                "denoiser",
                format!("expected {} dims, got {:?}", self.d_model, g.shape(q_t)),
            ));
        }
        if g.data(cond).len() != self.cond_dim {
            return Err(Error::shape(
                "denoiser",
                format!("expected {}-dim condition, got {:?}", self.cond_dim, g.shape(cond)),
            ));
        }
        let q_row = g.reshape(q_t, &[1, self.d_model]);
        let t_emb = g.leaf(time_embedding(t, TIME_DIM), &[1, TIME_DIM]);
        let c_row = g.reshape(cond, &[1, self.cond_dim]);
        let x = g.concat_cols(&[q_row, t_emb, c_row]);
        let h1 = self.l1.forward(g, store, x);
        let h1 = g.tanh(h1);
        let h2 = self.l2.forward(g, store, h1);
        let h2 = g.tanh(h2);
        Ok(self.l3.forward(g, store, h2))
    }
}
