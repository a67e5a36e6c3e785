//! Op builders (eager forward) and the per-op backward rules.
//!
//! Shape misuse inside the crate is a bug, so most builders `assert!` their
//! preconditions. Ops whose inputs can come from user data (`softmax`,
//! `log_softmax`, `layer_norm`) validate and return `Result` instead.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Op, TensorId};
use crate::error::{Error, Result};

/// Probability floor shared by `ln_clamped` and perplexity.
pub const PROB_FLOOR: f64 = 1e-12;

/// `A[m,k] · B[k,n]`.
pub(crate) fn mm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let (orow, brow) = (i * n, p * n);
            for j in 0..n {
                out[orow + j] += av * b[brow + j];
            }
        }
    }
    out
}

/// `A[rows,inner] · B[cols,inner]ᵀ`.
fn mm_nt(a: &[f64], b: &[f64], rows: usize, inner: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        let arow = &a[i * inner..(i + 1) * inner];
        for j in 0..cols {
            let brow = &b[j * inner..(j + 1) * inner];
            out[i * cols + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `A[inner,rows]ᵀ · B[inner,cols]`.
fn mm_tn(a: &[f64], b: &[f64], rows: usize, inner: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for p in 0..inner {
        for i in 0..rows {
            let av = a[p * rows + i];
            if av == 0.0 {
                continue;
            }
            let (orow, brow) = (i * cols, p * cols);
            for j in 0..cols {
                out[orow + j] += av * b[brow + j];
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

impl Graph {
    fn rg1(&self, a: TensorId) -> bool {
        self.nodes[a.0].requires_grad
    }

    fn rg2(&self, a: TensorId, b: TensorId) -> bool {
        self.rg1(a) || self.rg1(b)
    }

    fn assert_same_shape(&self, a: TensorId, b: TensorId, op: &str) {
        assert_eq!(
            self.nodes[a.0].shape, self.nodes[b.0].shape,
            "{op}: shape mismatch"
        );
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.assert_same_shape(a, b, "add");
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg2(a, b);
        self.push(data, shape, Op::Add(a, b), rg, None)
    }

    pub fn add_row(&mut self, a: TensorId, row: TensorId) -> TensorId {
        let (r, c) = self.rc(a);
        assert_eq!(self.nodes[row.0].data.len(), c, "add_row: width mismatch");
        let mut data = self.nodes[a.0].data.clone();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] += self.nodes[row.0].data[j];
            }
        }
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg2(a, row);
        self.push(data, shape, Op::AddRow(a, row), rg, None)
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.assert_same_shape(a, b, "sub");
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg2(a, b);
        self.push(data, shape, Op::Sub(a, b), rg, None)
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.assert_same_shape(a, b, "mul");
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg2(a, b);
        self.push(data, shape, Op::Mul(a, b), rg, None)
    }

    pub fn div(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.assert_same_shape(a, b, "div");
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x / y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg2(a, b);
        self.push(data, shape, Op::Div(a, b), rg, None)
    }

    pub fn scale(&mut self, a: TensorId, k: f64) -> TensorId {
        let data = self.nodes[a.0].data.iter().map(|x| x * k).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg1(a);
        self.push(data, shape, Op::Scale(a, k), rg, None)
    }

    pub fn add_const(&mut self, a: TensorId, k: f64) -> TensorId {
        let data = self.nodes[a.0].data.iter().map(|x| x + k).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg1(a);
        self.push(data, shape, Op::AddConst(a), rg, None)
    }

    pub fn mul_scalar(&mut self, a: TensorId, s: TensorId) -> TensorId {
        assert_eq!(self.nodes[s.0].data.len(), 1, "mul_scalar: s must be [1]");
        let sv = self.nodes[s.0].data[0];
        let data = self.nodes[a.0].data.iter().map(|x| x * sv).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg2(a, s);
        self.push(data, shape, Op::MulScalar(a, s), rg, None)
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let sa = &self.nodes[a.0].shape;
        let sb = &self.nodes[b.0].shape;
        assert!(
            sa.len() == 2 && sb.len() == 2 && sa[1] == sb[0],
            "matmul: incompatible shapes {sa:?} x {sb:?}"
        );
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = mm_nn(&self.nodes[a.0].data, &self.nodes[b.0].data, m, k, n);
        let rg = self.rg2(a, b);
        self.push(data, vec![m, n], Op::MatMul(a, b), rg, None)
    }

    pub fn transpose(&mut self, a: TensorId) -> TensorId {
        let (r, c) = self.rc(a);
        let data = transpose_raw(&self.nodes[a.0].data, r, c);
        let rg = self.rg1(a);
        self.push(data, vec![c, r], Op::Transpose(a), rg, None)
    }

    pub fn relu(&mut self, a: TensorId) -> TensorId {
        let data = self.nodes[a.0].data.iter().map(|x| x.max(0.0)).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg1(a);
        self.push(data, shape, Op::Relu(a), rg, None)
    }

    pub fn tanh(&mut self, a: TensorId) -> TensorId {
        let data = self.nodes[a.0].data.iter().map(|x| x.tanh()).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg1(a);
        self.push(data, shape, Op::Tanh(a), rg, None)
    }

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        let data = self.nodes[a.0]
            .data
            .iter()
            .map(|x| 1.0 / (1.0 + (-x).exp()))
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg1(a);
        self.push(data, shape, Op::Sigmoid(a), rg, None)
    }

    pub fn exp(&mut self, a: TensorId) -> TensorId {
        let data = self.nodes[a.0].data.iter().map(|x| x.exp()).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg1(a);
        self.push(data, shape, Op::Exp(a), rg, None)
    }

    /// `ln(max(x, PROB_FLOOR))`; safe on probabilities that may underflow to
    /// zero. Perplexity uses the same floor so the two quantities agree.
    pub fn ln_clamped(&mut self, a: TensorId) -> TensorId {
        let data = self
            .nodes[a.0]
            .data
            .iter()
            .map(|x| x.max(PROB_FLOOR).ln())
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg1(a);
        self.push(data, shape, Op::ClampedLn(a, PROB_FLOOR), rg, None)
    }

    pub fn sqrt(&mut self, a: TensorId) -> TensorId {
        let data = self.nodes[a.0].data.iter().map(|x| x.sqrt()).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg1(a);
        self.push(data, shape, Op::Sqrt(a), rg, None)
    }

    /// Row-wise softmax (a 1-D input is one row), stable via max-subtraction.
    pub fn softmax(&mut self, a: TensorId) -> Result<TensorId> {
        if let Some(bad) = self.nodes[a.0].data.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                op: "softmax",
                detail: format!("input contains {bad}"),
            });
        }
        let (r, c) = self.rc(a);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            let row = &self.nodes[a.0].data[i * c..(i + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..c {
                let e = (row[j] - m).exp();
                data[i * c + j] = e;
                z += e;
            }
            for j in 0..c {
                data[i * c + j] /= z;
            }
        }
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg1(a);
        Ok(self.push(data, shape, Op::Softmax(a), rg, None))
    }

    /// Row-wise log-softmax, stable via max-subtraction.
    pub fn log_softmax(&mut self, a: TensorId) -> Result<TensorId> {
        if let Some(bad) = self.nodes[a.0].data.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                op: "log_softmax",
                detail: format!("input contains {bad}"),
            });
        }
        let (r, c) = self.rc(a);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            let row = &self.nodes[a.0].data[i * c..(i + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            for j in 0..c {
                data[i * c + j] = row[j] - lse;
            }
        }
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg1(a);
        Ok(self.push(data, shape, Op::LogSoftmax(a), rg, None))
    }

    /// Per-row `log Σ exp`, `[r, c] -> [r]` (a 1-D input yields `[1]`).
    pub fn log_sum_exp_rows(&mut self, a: TensorId) -> TensorId {
        let (r, c) = self.rc(a);
        let mut data = vec![0.0; r];
        for i in 0..r {
            let row = &self.nodes[a.0].data[i * c..(i + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            data[i] = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        }
        let rg = self.rg1(a);
        self.push(data, vec![r], Op::LogSumExpRows(a), rg, None)
    }

    /// Row-wise normalization to zero mean / unit variance, then a learned
    /// per-column affine: `y = gain ∘ x̂ + bias`.
    pub fn layer_norm(
        &mut self,
        x: TensorId,
        gain: TensorId,
        bias: TensorId,
        eps: f64,
    ) -> Result<TensorId> {
        if eps <= 0.0 {
            return Err(Error::invalid(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let (r, c) = self.rc(x);
        if self.nodes[gain.0].data.len() != c || self.nodes[bias.0].data.len() != c {
            return Err(Error::shape(
                "layer_norm",
                format!("gain/bias must have length {c}"),
            ));
        }
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            let row = &self.nodes[x.0].data[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let std = (var + eps).sqrt();
            for j in 0..c {
                let xhat = (row[j] - mean) / std;
                data[i * c + j] = self.nodes[gain.0].data[j] * xhat + self.nodes[bias.0].data[j];
            }
        }
        let shape = self.nodes[x.0].shape.clone();
        let rg = self.rg1(x) || self.rg2(gain, bias);
        Ok(self.push(data, shape, Op::LayerNorm { x, gain, bias, eps }, rg, None))
    }

    pub fn sum(&mut self, a: TensorId) -> TensorId {
        let data = vec![self.nodes[a.0].data.iter().sum()];
        let rg = self.rg1(a);
        self.push(data, vec![1], Op::Sum(a), rg, None)
    }

    pub fn mean(&mut self, a: TensorId) -> TensorId {
        let n = self.nodes[a.0].data.len().max(1);
        let data = vec![self.nodes[a.0].data.iter().sum::<f64>() / n as f64];
        let rg = self.rg1(a);
        self.push(data, vec![1], Op::Mean(a), rg, None)
    }

    /// Column means: `[r, c] -> [c]`.
    pub fn mean_rows(&mut self, a: TensorId) -> TensorId {
        let (r, c) = self.rc(a);
        let mut data = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                data[j] += self.nodes[a.0].data[i * c + j];
            }
        }
        data.iter_mut().for_each(|v| *v /= r as f64);
        let rg = self.rg1(a);
        self.push(data, vec![c], Op::MeanRows(a), rg, None)
    }

    /// Gather rows of a matrix (embedding lookup). Repeated indices are fine;
    /// their gradients accumulate.
    pub fn rows(&mut self, a: TensorId, idx: &[usize]) -> TensorId {
        let sa = &self.nodes[a.0].shape;
        assert_eq!(sa.len(), 2, "rows: expected a matrix");
        let (r, c) = (sa[0], sa[1]);
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            assert!(i < r, "rows: index {i} out of range {r}");
            data.extend_from_slice(&self.nodes[a.0].data[i * c..(i + 1) * c]);
        }
        let rg = self.rg1(a);
        self.push(data, vec![idx.len(), c], Op::Rows(a, idx.to_vec()), rg, None)
    }

    /// Stack `k` vectors of length `c` into a `[k, c]` matrix.
    pub fn stack_rows(&mut self, vs: &[TensorId]) -> TensorId {
        assert!(!vs.is_empty(), "stack_rows: empty input");
        let c = self.nodes[vs[0].0].data.len();
        let mut data = Vec::with_capacity(vs.len() * c);
        for &v in vs {
            assert_eq!(self.nodes[v.0].data.len(), c, "stack_rows: ragged rows");
            data.extend_from_slice(&self.nodes[v.0].data);
        }
        let rg = vs.iter().any(|&v| self.rg1(v));
        self.push(data, vec![vs.len(), c], Op::StackRows(vs.to_vec()), rg, None)
    }

    /// Concatenate matrices with equal width along the row axis.
    pub fn concat_rows(&mut self, vs: &[TensorId]) -> TensorId {
        assert!(!vs.is_empty(), "concat_rows: empty input");
        let (_, c) = self.rc(vs[0]);
        let mut rows = 0;
        let mut data = Vec::new();
        for &v in vs {
            let (ri, ci) = self.rc(v);
            assert_eq!(ci, c, "concat_rows: width mismatch");
            rows += ri;
            data.extend_from_slice(&self.nodes[v.0].data);
        }
        let rg = vs.iter().any(|&v| self.rg1(v));
        self.push(data, vec![rows, c], Op::ConcatRows(vs.to_vec()), rg, None)
    }

    /// Concatenate matrices with equal height along the column axis.
    pub fn concat_cols(&mut self, vs: &[TensorId]) -> TensorId {
        assert!(!vs.is_empty(), "concat_cols: empty input");
        let (r, _) = self.rc(vs[0]);
        let widths: Vec<usize> = vs
            .iter()
            .map(|&v| {
                let (ri, ci) = self.rc(v);
                assert_eq!(ri, r, "concat_cols: height mismatch");
                ci
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; r * total];
        for i in 0..r {
            let mut off = 0;
            for (&v, &w) in vs.iter().zip(&widths) {
                data[i * total + off..i * total + off + w]
                    .copy_from_slice(&self.nodes[v.0].data[i * w..(i + 1) * w]);
                off += w;
            }
        }
        let rg = vs.iter().any(|&v| self.rg1(v));
        self.push(data, vec![r, total], Op::ConcatCols(vs.to_vec()), rg, None)
    }

    /// Concatenate 1-D vectors.
    pub fn concat(&mut self, vs: &[TensorId]) -> TensorId {
        assert!(!vs.is_empty(), "concat: empty input");
        let mut data = Vec::new();
        for &v in vs {
            data.extend_from_slice(&self.nodes[v.0].data);
        }
        let n = data.len();
        let rg = vs.iter().any(|&v| self.rg1(v));
        self.push(data, vec![n], Op::Concat(vs.to_vec()), rg, None)
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, a: TensorId, start: usize, end: usize) -> TensorId {
        let (r, c) = self.rc(a);
        assert!(start < end && end <= r, "slice_rows: bad range {start}..{end} of {r}");
        let data = self.nodes[a.0].data[start * c..end * c].to_vec();
        let rg = self.rg1(a);
        self.push(data, vec![end - start, c], Op::SliceRows(a, start, end), rg, None)
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: TensorId, start: usize, end: usize) -> TensorId {
        let (r, c) = self.rc(a);
        assert!(start < end && end <= c, "slice_cols: bad range {start}..{end} of {c}");
        let w = end - start;
        let mut data = Vec::with_capacity(r * w);
        for i in 0..r {
            data.extend_from_slice(&self.nodes[a.0].data[i * c + start..i * c + end]);
        }
        let rg = self.rg1(a);
        self.push(data, vec![r, w], Op::SliceCols(a, start, end), rg, None)
    }

    pub fn reshape(&mut self, a: TensorId, shape: &[usize]) -> TensorId {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.nodes[a.0].data.len(),
            "reshape: element count mismatch"
        );
        let data = self.nodes[a.0].data.clone();
        let rg = self.rg1(a);
        self.push(data, shape.to_vec(), Op::Reshape(a), rg, None)
    }

    /// One element of the flattened input, as a `[1]` node.
    pub fn gather(&mut self, a: TensorId, at: usize) -> TensorId {
        assert!(at < self.nodes[a.0].data.len(), "gather: index out of range");
        let data = vec![self.nodes[a.0].data[at]];
        let rg = self.rg1(a);
        self.push(data, vec![1], Op::Gather(a, at), rg, None)
    }

    /// Scatter-accumulate a vector into a fresh zero vector of length `size`:
    /// `out[idx[i]] += a[i]`.
    pub fn scatter_add(&mut self, a: TensorId, idx: &[usize], size: usize) -> TensorId {
        let av = &self.nodes[a.0].data;
        assert_eq!(av.len(), idx.len(), "scatter_add: index count mismatch");
        let mut data = vec![0.0; size];
        for (&i, &v) in idx.iter().zip(av) {
            assert!(i < size, "scatter_add: index {i} out of range {size}");
            data[i] += v;
        }
        let rg = self.rg1(a);
        self.push(data, vec![size], Op::ScatterAdd { a, idx: idx.to_vec() }, rg, None)
    }

    pub fn dot(&mut self, a: TensorId, b: TensorId) -> TensorId {
        assert_eq!(
            self.nodes[a.0].data.len(),
            self.nodes[b.0].data.len(),
            "dot: length mismatch"
        );
        let data = vec![self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x * y)
            .sum()];
        let rg = self.rg2(a, b);
        self.push(data, vec![1], Op::Dot(a, b), rg, None)
    }

    /// Inverted dropout: keeps each element with probability `1 - rate` and
    /// rescales by `1/(1 - rate)`. `rate == 0` is the identity.
    pub fn dropout(&mut self, a: TensorId, rate: f64, rng: &mut ChaCha8Rng) -> TensorId {
        assert!((0.0..1.0).contains(&rate), "dropout: rate must be in [0, 1)");
        if rate == 0.0 {
            return a;
        }
        let keep = 1.0 - rate;
        let mask: Vec<f64> = (0..self.nodes[a.0].data.len())
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let m = self.leaf(mask, &shape);
        self.mul(a, m)
    }

    /// Routes `d = ∂loss/∂node(i)` into the node's inputs.
    pub(crate) fn push_back(&self, i: usize, d: &[f64], delta: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for t in [*a, *b] {
                    if self.rg1(t) {
                        let g = Graph::add_delta(delta, t, d.len());
                        for (gi, di) in g.iter_mut().zip(d) {
                            *gi += di;
                        }
                    }
                }
            }
            Op::AddRow(a, row) => {
                let (r, c) = self.rc(*a);
                if self.rg1(*a) {
                    let g = Graph::add_delta(delta, *a, r * c);
                    for (gi, di) in g.iter_mut().zip(d) {
                        *gi += di;
                    }
                }
                if self.rg1(*row) {
                    let g = Graph::add_delta(delta, *row, c);
                    for i in 0..r {
                        for j in 0..c {
                            g[j] += d[i * c + j];
                        }
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.rg1(*a) {
                    let g = Graph::add_delta(delta, *a, d.len());
                    for (gi, di) in g.iter_mut().zip(d) {
                        *gi += di;
                    }
                }
                if self.rg1(*b) {
                    let g = Graph::add_delta(delta, *b, d.len());
                    for (gi, di) in g.iter_mut().zip(d) {
                        *gi -= di;
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.rg1(*a) {
                    let bv = &self.nodes[b.0].data;
                    let g = Graph::add_delta(delta, *a, d.len());
                    for ((gi, di), bi) in g.iter_mut().zip(d).zip(bv) {
                        *gi += di * bi;
                    }
                }
                if self.rg1(*b) {
                    let av = &self.nodes[a.0].data;
                    let g = Graph::add_delta(delta, *b, d.len());
                    for ((gi, di), ai) in g.iter_mut().zip(d).zip(av) {
                        *gi += di * ai;
                    }
                }
            }
            Op::Div(a, b) => {
                let bv = &self.nodes[b.0].data;
                if self.rg1(*a) {
                    let g = Graph::add_delta(delta, *a, d.len());
                    for ((gi, di), bi) in g.iter_mut().zip(d).zip(bv) {
                        *gi += di / bi;
                    }
                }
                if self.rg1(*b) {
                    let y = &node.data;
                    let g = Graph::add_delta(delta, *b, d.len());
                    for i in 0..d.len() {
                        g[i] -= d[i] * y[i] / bv[i];
                    }
                }
            }
            Op::Scale(a, k) => {
                if self.rg1(*a) {
                    let g = Graph::add_delta(delta, *a, d.len());
                    for (gi, di) in g.iter_mut().zip(d) {
                        *gi += k * di;
                    }
                }
            }
            Op::AddConst(a) => {
                if self.rg1(*a) {
                    let g = Graph::add_delta(delta, *a, d.len());
                    for (gi, di) in g.iter_mut().zip(d) {
                        *gi += di;
                    }
                }
            }
            Op::MulScalar(a, s) => {
                let sv = self.nodes[s.0].data[0];
                if self.rg1(*a) {
                    let g = Graph::add_delta(delta, *a, d.len());
                    for (gi, di) in g.iter_mut().zip(d) {
                        *gi += sv * di;
                    }
                }
                if self.rg1(*s) {
                    let av = &self.nodes[a.0].data;
                    let acc: f64 = d.iter().zip(av).map(|(di, ai)| di * ai).sum();
                    Graph::add_delta(delta, *s, 1)[0] += acc;
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = self.rc(*a);
                let (_, n) = self.rc(*b);
                if self.rg1(*a) {
                    let da = mm_nt(d, &self.nodes[b.0].data, m, n, k);
                    let g = Graph::add_delta(delta, *a, m * k);
                    for (gi, di) in g.iter_mut().zip(&da) {
                        *gi += di;
                    }
                }
                if self.rg1(*b) {
                    let db = mm_tn(&self.nodes[a.0].data, d, k, m, n);
                    let g = Graph::add_delta(delta, *b, k * n);
                    for (gi, di) in g.iter_mut().zip(&db) {
                        *gi += di;
                    }
                }
            }
            Op::Transpose(a) => {
                if self.rg1(*a) {
                    let (r, c) = self.rc(*a);
                    // d has the transposed shape [c, r]; send it back.
                    let dt = transpose_raw(d, c, r);
                    let g = Graph::add_delta(delta, *a, r * c);
                    for (gi, di) in g.iter_mut().zip(&dt) {
                        *gi += di;
                    }
                }
            }
            Op::Relu(a) => {
                if self.rg1(*a) {
                    let av = &self.nodes[a.0].data;
                    let g = Graph::add_delta(delta, *a, d.len());
                    for i in 0..d.len() {
                        if av[i] > 0.0 {
                            g[i] += d[i];
                        }
                    }
                }
            }
            Op::Tanh(a) => {
                if self.rg1(*a) {
                    let y = &node.data;
                    let g = Graph::add_delta(delta, *a, d.len());
                    for i in 0..d.len() {
                        g[i] += d[i] * (1.0 - y[i] * y[i]);
                    }
                }
            }
            Op::Sigmoid(a) => {
                if self.rg1(*a) {
                    let y = &node.data;
                    let g = Graph::add_delta(delta, *a, d.len());
                    for i in 0..d.len() {
                        g[i] += d[i] * y[i] * (1.0 - y[i]);
                    }
                }
            }
            Op::Exp(a) => {
                if self.rg1(*a) {
                    let y = &node.data;
                    let g = Graph::add_delta(delta, *a, d.len());
                    for i in 0..d.len() {
                        g[i] += d[i] * y[i];
                    }
                }
            }
            Op::ClampedLn(a, floor) => {
                if self.rg1(*a) {
                    let av = &self.nodes[a.0].data;
                    let g = Graph::add_delta(delta, *a, d.len());
                    for i in 0..d.len() {
                        if av[i] > *floor {
                            g[i] += d[i] / av[i];
                        }
                    }
                }
            }
            Op::Sqrt(a) => {
                if self.rg1(*a) {
                    let y = &node.data;
                    let g = Graph::add_delta(delta, *a, d.len());
                    for i in 0..d.len() {
                        g[i] += d[i] / (2.0 * y[i]);
                    }
                }
            }
            Op::Softmax(a) => {
                if self.rg1(*a) {
                    let (r, c) = self.rc(*a);
                    let y = &node.data;
                    let g = Graph::add_delta(delta, *a, r * c);
                    for i in 0..r {
                        let row = i * c;
                        let s: f64 = (0..c).map(|j| d[row + j] * y[row + j]).sum();
                        for j in 0..c {
                            g[row + j] += y[row + j] * (d[row + j] - s);
                        }
                    }
                }
            }
            Op::LogSoftmax(a) => {
                if self.rg1(*a) {
                    let (r, c) = self.rc(*a);
                    let y = &node.data;
                    let g = Graph::add_delta(delta, *a, r * c);
                    for i in 0..r {
                        let row = i * c;
                        let s: f64 = (0..c).map(|j| d[row + j]).sum();
                        for j in 0..c {
                            g[row + j] += d[row + j] - y[row + j].exp() * s;
                        }
                    }
                }
            }
            Op::LogSumExpRows(a) => {
                if self.rg1(*a) {
                    let (r, c) = self.rc(*a);
                    let av = &self.nodes[a.0].data;
                    let y = &node.data;
                    let g = Graph::add_delta(delta, *a, r * c);
                    for i in 0..r {
                        for j in 0..c {
                            g[i * c + j] += d[i] * (av[i * c + j] - y[i]).exp();
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let (r, c) = self.rc(*x);
                let xv = &self.nodes[x.0].data;
                let gv = &self.nodes[gain.0].data;
                for i in 0..r {
                    let row = &xv[i * c..(i + 1) * c];
                    let mean = row.iter().sum::<f64>() / c as f64;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                    let std = (var + eps).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|v| (v - mean) / std).collect();
                    let drow = &d[i * c..(i + 1) * c];
                    if self.rg1(*gain) {
                        let g = Graph::add_delta(delta, *gain, c);
                        for j in 0..c {
                            g[j] += drow[j] * xhat[j];
                        }
                    }
                    if self.rg1(*bias) {
                        let g = Graph::add_delta(delta, *bias, c);
                        for j in 0..c {
                            g[j] += drow[j];
                        }
                    }
                    if self.rg1(*x) {
                        let gy: Vec<f64> = (0..c).map(|j| drow[j] * gv[j]).collect();
                        let m1 = gy.iter().sum::<f64>() / c as f64;
                        let m2 = gy.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                        let g = Graph::add_delta(delta, *x, r * c);
                        for j in 0..c {
                            g[i * c + j] += (gy[j] - m1 - xhat[j] * m2) / std;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if self.rg1(*a) {
                    let n = self.nodes[a.0].data.len();
                    let g = Graph::add_delta(delta, *a, n);
                    for gi in g.iter_mut() {
                        *gi += d[0];
                    }
                }
            }
            Op::Mean(a) => {
                if self.rg1(*a) {
                    let n = self.nodes[a.0].data.len();
                    let w = d[0] / n as f64;
                    let g = Graph::add_delta(delta, *a, n);
                    for gi in g.iter_mut() {
                        *gi += w;
                    }
                }
            }
            Op::MeanRows(a) => {
                if self.rg1(*a) {
                    let (r, c) = self.rc(*a);
                    let g = Graph::add_delta(delta, *a, r * c);
                    for i in 0..r {
                        for j in 0..c {
                            g[i * c + j] += d[j] / r as f64;
                        }
                    }
                }
            }
            Op::Rows(a, idx) => {
                if self.rg1(*a) {
                    let (r, c) = {
                        let s = &self.nodes[a.0].shape;
                        (s[0], s[1])
                    };
                    let g = Graph::add_delta(delta, *a, r * c);
                    for (k, &i) in idx.iter().enumerate() {
                        for j in 0..c {
                            g[i * c + j] += d[k * c + j];
                        }
                    }
                }
            }
            Op::StackRows(vs) => {
                let c = self.nodes[vs[0].0].data.len();
                for (k, &v) in vs.iter().enumerate() {
                    if self.rg1(v) {
                        let g = Graph::add_delta(delta, v, c);
                        for j in 0..c {
                            g[j] += d[k * c + j];
                        }
                    }
                }
            }
            Op::ConcatRows(vs) => {
                let mut off = 0;
                for &v in vs {
                    let n = self.nodes[v.0].data.len();
                    if self.rg1(v) {
                        let g = Graph::add_delta(delta, v, n);
                        for j in 0..n {
                            g[j] += d[off + j];
                        }
                    }
                    off += n;
                }
            }
            Op::ConcatCols(vs) => {
                let (r, total) = self.rc(TensorId(i));
                let mut off = 0;
                for &v in vs {
                    let (_, w) = self.rc(v);
                    if self.rg1(v) {
                        let g = Graph::add_delta(delta, v, r * w);
                        for ri in 0..r {
                            for j in 0..w {
                                g[ri * w + j] += d[ri * total + off + j];
                            }
                        }
                    }
                    off += w;
                }
            }
            Op::Concat(vs) => {
                let mut off = 0;
                for &v in vs {
                    let n = self.nodes[v.0].data.len();
                    if self.rg1(v) {
                        let g = Graph::add_delta(delta, v, n);
                        for j in 0..n {
                            g[j] += d[off + j];
                        }
                    }
                    off += n;
                }
            }
            Op::SliceRows(a, start, _end) => {
                if self.rg1(*a) {
                    let (r, c) = self.rc(*a);
                    let g = Graph::add_delta(delta, *a, r * c);
                    for (k, di) in d.iter().enumerate() {
                        g[start * c + k] += di;
                    }
                }
            }
            Op::SliceCols(a, start, end) => {
                if self.rg1(*a) {
                    let (r, c) = self.rc(*a);
                    let w = end - start;
                    let g = Graph::add_delta(delta, *a, r * c);
                    for ri in 0..r {
                        for j in 0..w {
                            g[ri * c + start + j] += d[ri * w + j];
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if self.rg1(*a) {
                    let g = Graph::add_delta(delta, *a, d.len());
                    for (gi, di) in g.iter_mut().zip(d) {
                        *gi += di;
                    }
                }
            }
            Op::Gather(a, at) => {
                if self.rg1(*a) {
                    let n = self.nodes[a.0].data.len();
                    Graph::add_delta(delta, *a, n)[*at] += d[0];
                }
            }
            Op::ScatterAdd { a, idx } => {
                if self.rg1(*a) {
                    let g = Graph::add_delta(delta, *a, idx.len());
                    for (k, &i) in idx.iter().enumerate() {
                        g[k] += d[i];
                    }
                }
            }
            Op::Dot(a, b) => {
                if self.rg1(*a) {
                    let bv = &self.nodes[b.0].data;
                    let g = Graph::add_delta(delta, *a, bv.len());
                    for (gi, bi) in g.iter_mut().zip(bv) {
                        *gi += d[0] * bi;
                    }
                }
                if self.rg1(*b) {
                    let av = &self.nodes[a.0].data;
                    let g = Graph::add_delta(delta, *b, av.len());
                    for (gi, ai) in g.iter_mut().zip(av) {
                        *gi += d[0] * ai;
                    }
                }
            }
        }
    }
}
