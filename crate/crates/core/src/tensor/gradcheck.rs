//! Central finite-difference verification of backward-pass gradients.

use rand::Rng;

use super::{Graph, ParamStore, TensorId};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Relative-error tolerance used by the standard checks (64-bit mode).
pub const DEFAULT_TOL: f64 = 1e-4;
/// Central-difference step.
pub const DEFAULT_H: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub op_name: String,
    pub max_rel_error: f64,
    pub passed: bool,
    pub probe_count: usize,
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: max_rel_error={:.3e} over {} probes [{}]",
            self.op_name,
            self.max_rel_error,
            self.probe_count,
            if self.passed { "ok" } else { "FAIL" }
        )
    }
}

/// Verifies the analytic gradient of `f` against central finite differences,
/// probing every parameter in `store`.
///
/// `f` must rebuild its graph from the store on each call and return the
/// scalar loss node. It must be deterministic: two evaluations at identical
/// parameters are compared bitwise up front, and any mismatch is an error
/// (fresh noise per call would turn the difference quotient into garbage).
///
/// The reported error is `|analytic − numeric| / max(1e-8, |analytic| +
/// |numeric|)`, maximized over probed coordinates. Parameters larger than
/// `max_probes_per_param` are subsampled with a seeded draw so reports are
/// reproducible.
pub fn check_gradients<F>(
    op_name: &str,
    store: &mut ParamStore,
    mut f: F,
    h: f64,
    tol: f64,
    max_probes_per_param: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<(Graph, TensorId)>,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    fn eval<F>(f: &mut F, store: &ParamStore) -> Result<f64>
    where
        F: FnMut(&ParamStore) -> Result<(Graph, TensorId)>,
    {
        let (g, loss) = f(store)?;
        Ok(g.value(loss))
    }

    let l0 = eval(&mut f, store)?;
    let l1 = eval(&mut f, store)?;
    if l0.to_bits() != l1.to_bits() {
        return Err(Error::invalid(format!(
            "gradient check requires a deterministic loss; got {l0} then {l1}"
        )));
    }

    store.zero_grads();
    let (mut g, loss) = f(store)?;
    g.backward(loss)?;
    g.grads_into(store);

    let mut probe_rng = rng::stream_rng(seed, Stream::GradCheck);
    let mut max_rel: f64 = 0.0;
    let mut probes = 0;
    for pid in store.ids().collect::<Vec<_>>() {
        let n = store.get(pid).data.len();
        let coords: Vec<usize> = if n <= max_probes_per_param {
            (0..n).collect()
        } else {
            let mut picked = std::collections::BTreeSet::new();
            while picked.len() < max_probes_per_param {
                picked.insert(probe_rng.random_range(0..n));
            }
            picked.into_iter().collect()
        };
        for idx in coords {
            let orig = store.get(pid).data[idx];
            store.get_mut(pid).data[idx] = orig + h;
            let lp = eval(&mut f, store)?;
            store.get_mut(pid).data[idx] = orig - h;
            let lm = eval(&mut f, store)?;
            store.get_mut(pid).data[idx] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let analytic = store.get(pid).grad[idx];
            let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8);
            max_rel = max_rel.max(rel);
            probes += 1;
        }
    }
    Ok(GradCheckReport {
        op_name: op_name.to_string(),
        max_rel_error: max_rel,
        passed: max_rel < tol,
        probe_count: probes,
    })
}
