//! Learnable parameters, stored outside any single computation graph.
//!
//! A [`ParamStore`] owns the canonical values, accumulated gradients, and
//! Adam moment buffers for every weight in a model. Computation graphs copy
//! values in via [`crate::tensor::Graph::param`] and flush gradients back out
//! via [`crate::tensor::Graph::grads_into`].

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{self, Stream};

/// Handle into a [`ParamStore`]; stable for the lifetime of the store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Storage precision for parameter values. Compute is always 64-bit; with
/// [`Precision::F32`] values are rounded through `f32` after initialization
/// and after every optimizer update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F64,
    F32,
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Vec<f64>,
    /// Adam first-moment buffer (kept here so checkpoints can resume).
    pub m: Vec<f64>,
    /// Adam second-moment buffer.
    pub v: Vec<f64>,
}

/// Initialization schemes for new parameters.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    Const(f64),
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    Uniform { fan_in: usize },
    Normal { std: f64 },
}

pub struct ParamStore {
    params: Vec<Param>,
    precision: Precision,
    init_rng: ChaCha8Rng,
}

impl ParamStore {
    /// A store whose initialization draws derive from `seed`. Parameters are
    /// deterministic given the seed and the registration order.
    pub fn new(seed: u64, precision: Precision) -> Self {
        ParamStore {
            params: Vec::new(),
            precision,
            init_rng: rng::stream_rng(seed, Stream::ParamInit),
        }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    /// Registers a parameter. Names must be unique; they key checkpoint
    /// records.
    pub fn add(&mut self, name: &str, shape: &[usize], init: Init) -> ParamId {
        assert!(
            self.by_name(name).is_none(),
            "duplicate parameter name {name:?}"
        );
        let n: usize = shape.iter().product();
        let mut data: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Const(c) => vec![c; n],
            Init::Uniform { fan_in } => {
                let b = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..n)
                    .map(|_| rng::uniform(&mut self.init_rng, -b, b))
                    .collect()
            }
            Init::Normal { std } => (0..n)
                .map(|_| std * rng::normal(&mut self.init_rng))
                .collect(),
        };
        self.quantize(&mut data);
        self.params.push(Param {
            name: name.to_string(),
            shape: shape.to_vec(),
            data,
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
        });
        ParamId(self.params.len() - 1)
    }

    /// Rounds values through `f32` when the store is in 32-bit mode.
    pub fn quantize(&self, data: &mut [f64]) {
        if self.precision == Precision::F32 {
            for x in data.iter_mut() {
                *x = *x as f32 as f64;
            }
        }
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// All ids in registration order (the checkpoint serialization order).
    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registration_is_deterministic() {
        let mut a = ParamStore::new(3, Precision::F64);
        let mut b = ParamStore::new(3, Precision::F64);
        let ia = a.add("w", &[4, 4], Init::Uniform { fan_in: 4 });
        let ib = b.add("w", &[4, 4], Init::Uniform { fan_in: 4 });
        assert_eq!(a.get(ia).data, b.get(ib).data);
    }

    #[test]
    fn f32_mode_rounds_values() {
        let mut s = ParamStore::new(3, Precision::F32);
        let id = s.add("w", &[8], Init::Normal { std: 1.0 });
        for &x in &s.get(id).data {
            assert_eq!(x, x as f32 as f64);
        }
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new(0, Precision::F64);
        s.add("w", &[1], Init::Zeros);
        s.add("w", &[1], Init::Zeros);
    }
}
