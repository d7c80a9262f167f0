//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation of one forward pass as a node holding
//! its output value and whatever the backward rule needs. Nodes are appended
//! in evaluation order, so [`Graph::backward`] is a single reverse sweep.
//!
//! Parameters enter a graph through [`Graph::param`], which copies the current
//! value out of a [`ParamStore`]; after the backward sweep their gradients are
//! added back with [`Graph::accumulate_param_grads`].

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamStore};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Backward rule of a user-supplied unary op: `(input, output, d_output) -> d_input`.
pub type CustomBackward<T> = Box<dyn Fn(&Tensor<T>, &Tensor<T>, &Tensor<T>) -> Tensor<T>>;

enum Op<T: Scalar> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Add(Var, Var),
    AddRowBias {
        x: Var,
        b: Var,
    },
    Scale {
        x: Var,
        c: T,
    },
    Relu(Var),
    Softmax {
        x: Var,
        fallback_rows: Vec<bool>,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        shift: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        cols: Vec<T>,
    },
    MaskMul {
        x: Var,
        mask: Vec<T>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Mse {
        pred: Var,
        diff: Vec<T>,
        denom: T,
    },
    WeightedSum {
        x: Var,
        weights: Vec<T>,
    },
    ConcatCols {
        parts: Vec<Var>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    RepeatRows {
        x: Var,
        counts: Vec<usize>,
    },
    RelGather {
        r: Var,
        clip_k: usize,
    },
    Custom {
        x: Var,
        backward: CustomBackward<T>,
    },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Default layer-norm epsilon.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// One forward pass worth of recorded operations.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    params: HashMap<ParamId, Var>,
    dropout_rng: Option<ChaCha8Rng>,
    warnings: Vec<String>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::eval()
    }
}

fn expect2(t: &Tensor<impl Scalar>, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::shape(format!(
            "{what} expects a 2-D tensor, got {s:?}"
        ))),
    }
}

impl<T: Scalar> Graph<T> {
    /// A graph whose dropout layers are the identity.
    pub fn eval() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            params: HashMap::new(),
            dropout_rng: None,
            warnings: Vec::new(),
        }
    }

    /// A graph whose dropout layers sample masks from a stream seeded by `seed`.
    pub fn train(seed: u64) -> Self {
        Self {
            dropout_rng: Some(ChaCha8Rng::seed_from_u64(seed)),
            ..Self::eval()
        }
    }

    pub fn is_train(&self) -> bool {
        self.dropout_rng.is_some()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Warnings raised by degenerate inputs (all-masked rows, empty masks).
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    fn warn(&mut self, msg: String) {
        log::warn!("{msg}");
        self.warnings.push(msg);
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf whose gradient is tracked.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Brings a parameter into the graph; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).value.clone(), Op::Leaf, true);
        self.params.insert(id, v);
        v
    }

    /// Fails with the given label if `v` holds NaN or infinity.
    pub fn check_finite(&self, v: Var, label: &str) -> Result<()> {
        if self.value(v).is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(label.to_string()))
        }
    }

    // ---------------------------------------------------------------------
    // operations

    /// `op(a) * op(b)` for 2-D tensors, with optional transposes.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (ar, ac) = expect2(self.value(a), "matmul")?;
        let (br, bc) = expect2(self.value(b), "matmul")?;
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul inner dimensions differ: {:?}{} x {:?}{}",
                self.value(a).shape(),
                if ta { "^T" } else { "" },
                self.value(b).shape(),
                if tb { "^T" } else { "" },
            )));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            self.value(a).data(),
            ta,
            self.value(b).data(),
            tb,
            T::zero(),
            &mut out,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor::new(vec![m, n], out)?,
            Op::MatMul { a, b, ta, tb },
            rg,
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// Adds `b[d]` to every row of `x[n, d]`.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (n, d) = expect2(self.value(x), "bias add")?;
        if self.value(b).numel() != d {
            return Err(Error::shape(format!(
                "bias of {} values for width {d}",
                self.value(b).numel()
            )));
        }
        let bias = self.value(b).data();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(d) {
            for (o, &bv) in row.iter_mut().zip(bias) {
                *o = *o + bv;
            }
        }
        debug_assert_eq!(out.rows(), n);
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(out, Op::AddRowBias { x, b }, rg))
    }

    /// `x W + b` with `x[n, din]`, `W[din, dout]`, `b[dout]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_row_bias(y, b),
            None => Ok(y),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(format!(
                "add {:?} + {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v * c);
        let rg = self.rg(x);
        self.push(out, Op::Scale { x, c }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self
            .value(x)
            .map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        self.softmax_rows_masked(x, None)
    }

    /// Row-wise softmax where columns with `key_mask[j] == false` get zero
    /// weight, as if their logits were minus infinity. A row with every
    /// column masked falls back to uniform weights and raises a warning.
    pub fn softmax_rows_masked(&mut self, x: Var, key_mask: Option<&[bool]>) -> Result<Var> {
        let (n, m) = expect2(self.value(x), "softmax")?;
        if let Some(mask) = key_mask {
            if mask.len() != m {
                return Err(Error::shape(format!(
                    "key mask of length {} for {m} columns",
                    mask.len()
                )));
            }
        }
        let valid = |j: usize| key_mask.is_none_or(|mk| mk[j]);
        let mut out = vec![T::zero(); n * m];
        let mut fallback_rows = vec![false; n];
        let xv = self.value(x).data();
        for i in 0..n {
            let row = &xv[i * m..(i + 1) * m];
            let orow = &mut out[i * m..(i + 1) * m];
            let max = (0..m)
                .filter(|&j| valid(j))
                .map(|j| row[j])
                .fold(None, |acc: Option<T>, v| Some(acc.map_or(v, |a| a.max(v))));
            match max {
                None => {
                    fallback_rows[i] = true;
                    let u = T::one() / T::from_usize(m).unwrap();
                    orow.iter_mut().for_each(|o| *o = u);
                }
                Some(max) => {
                    let mut sum = T::zero();
                    for j in 0..m {
                        if valid(j) {
                            let e = (row[j] - max).exp();
                            orow[j] = e;
                            sum = sum + e;
                        }
                    }
                    orow.iter_mut().for_each(|o| *o = *o / sum);
                }
            }
        }
        let n_fallback = fallback_rows.iter().filter(|&&f| f).count();
        if n_fallback > 0 {
            self.warn(format!(
                "softmax: {n_fallback} row(s) fully masked, using uniform weights"
            ));
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![n, m], out)?,
            Op::Softmax { x, fallback_rows },
            rg,
        ))
    }

    /// Normalizes each row to zero mean and unit variance, then applies
    /// `gain * xhat + shift`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var, eps: f64) -> Result<Var> {
        let (n, d) = expect2(self.value(x), "layer_norm")?;
        if self.value(gain).numel() != d || self.value(shift).numel() != d {
            return Err(Error::shape(format!(
                "layer_norm affine params must have width {d}"
            )));
        }
        if eps <= 0.0 {
            return Err(Error::config("layer_norm eps must be positive"));
        }
        let eps = T::from_f64_lossy(eps);
        let dn = T::from_usize(d).unwrap();
        let xv = self.value(x).data();
        let gv = self.value(gain).data();
        let sv = self.value(shift).data();
        let mut xhat = vec![T::zero(); n * d];
        let mut inv_std = vec![T::zero(); n];
        let mut out = vec![T::zero(); n * d];
        for i in 0..n {
            let row = &xv[i * d..(i + 1) * d];
            let mean = row.iter().fold(T::zero(), |a, &v| a + v) / dn;
            let var = row
                .iter()
                .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean))
                / dn;
            let inv = T::one() / (var + eps).sqrt();
            inv_std[i] = inv;
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat[i * d + j] = h;
                out[i * d + j] = h * gv[j] + sv[j];
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(shift);
        Ok(self.push(
            Tensor::new(vec![n, d], out)?,
            Op::LayerNorm {
                x,
                gain,
                shift,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Cross-correlation along the sequence axis with zero "same" padding.
    ///
    /// `x[n, cin]`, `w[k, cin, cout]` with odd `k`, `b[cout]` -> `[n, cout]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (n, cin) = expect2(self.value(x), "conv1d")?;
        let (k, wcin, cout) = match self.value(w).shape() {
            [k, c, o] => (*k, *c, *o),
            s => {
                return Err(Error::shape(format!(
                    "conv1d kernel must be 3-D, got {s:?}"
                )))
            }
        };
        if k % 2 == 0 {
            return Err(Error::config(format!("conv1d kernel size {k} is even")));
        }
        if wcin != cin || self.value(b).numel() != cout {
            return Err(Error::shape(format!(
                "conv1d input width {cin} vs kernel {:?}, bias {}",
                self.value(w).shape(),
                self.value(b).numel()
            )));
        }
        let pad = k / 2;
        let kc = k * cin;
        let xv = self.value(x).data();
        let mut cols = vec![T::zero(); n * kc];
        for t in 0..n {
            for j in 0..k {
                let src = t + j;
                if src < pad || src - pad >= n {
                    continue;
                }
                let s = src - pad;
                cols[t * kc + j * cin..t * kc + (j + 1) * cin]
                    .copy_from_slice(&xv[s * cin..(s + 1) * cin]);
            }
        }
        let bias = self.value(b).data();
        let mut out = Vec::with_capacity(n * cout);
        for _ in 0..n {
            out.extend_from_slice(bias);
        }
        T::gemm(
            n,
            kc,
            cout,
            T::one(),
            &cols,
            false,
            self.value(w).data(),
            false,
            T::one(),
            &mut out,
        );
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(
            Tensor::new(vec![n, cout], out)?,
            Op::Conv1d { x, w, b, cols },
            rg,
        ))
    }

    /// Inverted dropout: keeps each entry with probability `keep` and scales
    /// survivors by `1/keep`. The identity in eval graphs or when `keep >= 1`.
    pub fn dropout(&mut self, x: Var, keep: f64) -> Result<Var> {
        if !(keep > 0.0 && keep <= 1.0) {
            return Err(Error::config(format!(
                "dropout keep-probability {keep} not in (0, 1]"
            )));
        }
        let Some(rng) = self.dropout_rng.as_mut() else {
            return Ok(x);
        };
        if keep >= 1.0 {
            return Ok(x);
        }
        let scale = T::from_f64_lossy(1.0 / keep);
        let numel = self.nodes[x.0].value.numel();
        let mask: Vec<T> = (0..numel)
            .map(|_| {
                if rng.random::<f64>() < keep {
                    scale
                } else {
                    T::zero()
                }
            })
            .collect();
        Ok(self.mask_mul(x, mask))
    }

    fn mask_mul(&mut self, x: Var, mask: Vec<T>) -> Var {
        let mut out = self.value(x).clone();
        for (o, &m) in out.data_mut().iter_mut().zip(&mask) {
            *o = *o * m;
        }
        let rg = self.rg(x);
        self.push(out, Op::MaskMul { x, mask }, rg)
    }

    /// Zeroes the rows of `x` where `row_mask` is false.
    pub fn mask_rows(&mut self, x: Var, row_mask: &[bool]) -> Result<Var> {
        let (n, d) = expect2(self.value(x), "mask_rows")?;
        if row_mask.len() != n {
            return Err(Error::shape(format!(
                "row mask of {} for {n} rows",
                row_mask.len()
            )));
        }
        let mask = row_mask
            .iter()
            .flat_map(|&keep| std::iter::repeat_n(if keep { T::one() } else { T::zero() }, d))
            .collect();
        Ok(self.mask_mul(x, mask))
    }

    /// Row `ids[i]` of `table` for every `i`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = expect2(self.value(table), "embedding")?;
        if ids.is_empty() {
            return Err(Error::shape("embedding lookup of an empty id list"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::shape(format!(
                "embedding index {bad} outside table of {v} rows"
            )));
        }
        let tv = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        let rg = self.rg(table);
        Ok(self.push(
            Tensor::new(vec![ids.len(), d], out)?,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Mean squared error over the rows where `row_mask` is true.
    ///
    /// An all-false mask yields a loss of zero and records a warning.
    pub fn mse(&mut self, pred: Var, target: &Tensor<T>, row_mask: &[bool]) -> Result<Var> {
        let shape = self.value(pred).shape().to_vec();
        if shape != target.shape() {
            return Err(Error::shape(format!(
                "mse prediction {shape:?} vs target {:?}",
                target.shape()
            )));
        }
        let rows = shape[0];
        if row_mask.len() != rows {
            return Err(Error::shape(format!(
                "mse mask of {} for {rows} rows",
                row_mask.len()
            )));
        }
        let width = target.numel() / rows;
        let pv = self.value(pred).data();
        let tv = target.data();
        let mut diff = vec![T::zero(); pv.len()];
        let mut sse = T::zero();
        let mut count = 0usize;
        for (i, &keep) in row_mask.iter().enumerate() {
            if !keep {
                continue;
            }
            count += width;
            for j in i * width..(i + 1) * width {
                let d = pv[j] - tv[j];
                diff[j] = d;
                sse = sse + d * d;
            }
        }
        let (loss, denom) = if count == 0 {
            self.warn("mse: mask selects no rows, loss defined as 0".to_string());
            (T::zero(), T::one())
        } else {
            let denom = T::from_usize(count).unwrap();
            (sse / denom, denom)
        };
        let rg = self.rg(pred);
        Ok(self.push(Tensor::scalar(loss), Op::Mse { pred, diff, denom }, rg))
    }

    /// `sum(x * weights)` as a scalar; `weights` is a constant.
    pub fn weighted_sum(&mut self, x: Var, weights: &[T]) -> Result<Var> {
        if weights.len() != self.value(x).numel() {
            return Err(Error::shape("weighted_sum weight count"));
        }
        let s = self
            .value(x)
            .data()
            .iter()
            .zip(weights)
            .fold(T::zero(), |a, (&v, &w)| a + v * w);
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::scalar(s),
            Op::WeightedSum {
                x,
                weights: weights.to_vec(),
            },
            rg,
        ))
    }

    /// Sum of all entries.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let w = vec![T::one(); self.value(x).numel()];
        self.weighted_sum(x, &w)
    }

    /// Concatenates 2-D tensors with equal row counts along the feature axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::shape("concat of nothing"))?;
        let n = self.value(first).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = expect2(self.value(p), "concat")?;
            if r != n {
                return Err(Error::shape(format!("concat row counts {n} vs {r}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::new(vec![n, total], out)?,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            rg,
        ))
    }

    /// Columns `start..start + width` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let (n, d) = expect2(self.value(x), "slice_cols")?;
        if width == 0 || start + width > d {
            return Err(Error::shape(format!(
                "slice {start}..{} of width {d}",
                start + width
            )));
        }
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(n * width);
        for i in 0..n {
            out.extend_from_slice(&xv[i * d + start..i * d + start + width]);
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![n, width], out)?,
            Op::SliceCols { x, start },
            rg,
        ))
    }

    /// Repeats row `i` of `x` `counts[i]` times, preserving order.
    pub fn repeat_rows(&mut self, x: Var, counts: &[usize]) -> Result<Var> {
        let (n, d) = expect2(self.value(x), "repeat_rows")?;
        if counts.len() != n {
            return Err(Error::shape(format!(
                "{} repeat counts for {n} rows",
                counts.len()
            )));
        }
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(Error::Inference(
                "empty output: all repeat counts are zero".into(),
            ));
        }
        let mut out = Vec::with_capacity(total * d);
        for (i, &c) in counts.iter().enumerate() {
            for _ in 0..c {
                out.extend_from_slice(self.value(x).row(i));
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![total, d], out)?,
            Op::RepeatRows {
                x,
                counts: counts.to_vec(),
            },
            rg,
        ))
    }

    /// Expands per-offset scores into a pairwise matrix.
    ///
    /// `r[n, 2k+1]` holds, for each query `i`, a score per clipped relative
    /// offset; the output `[n, n]` has `out[i][j] = r[i][clip(j - i, k) + k]`.
    pub fn relative_gather(&mut self, r: Var, clip_k: usize) -> Result<Var> {
        let (n, width) = expect2(self.value(r), "relative_gather")?;
        if width != 2 * clip_k + 1 {
            return Err(Error::shape(format!(
                "relative scores width {width} for clip {clip_k}"
            )));
        }
        let rv = self.value(r).data();
        let mut out = vec![T::zero(); n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = rv[i * width + relative_index(i, j, clip_k)];
            }
        }
        let rg = self.rg(r);
        Ok(self.push(
            Tensor::new(vec![n, n], out)?,
            Op::RelGather { r, clip_k },
            rg,
        ))
    }

    /// Elementwise op with a caller-supplied value and backward rule.
    pub fn custom(&mut self, x: Var, value: Tensor<T>, backward: CustomBackward<T>) -> Var {
        let rg = self.rg(x);
        self.push(value, Op::Custom { x, backward }, rg)
    }

    // ---------------------------------------------------------------------
    // backward

    /// Runs the reverse sweep from a scalar node.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).numel() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar root, got {:?}",
                self.value(root).shape()
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[root.0] = Some(Tensor::full(self.value(root).shape(), T::one()));
        for idx in (0..=root.0).rev() {
            let Some(dy) = self.grads[idx].take() else {
                continue;
            };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.backward_node(idx, &dy)?;
            if !dy.is_finite() {
                return Err(Error::NonFinite(format!("gradient of node {idx}")));
            }
            self.grads[idx] = Some(dy);
        }
        Ok(())
    }

    /// Gradient of `v` after [`Graph::backward`], if any flowed to it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Adds the gradients of every parameter used in this graph to `store`.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore<T>) -> Result<()> {
        for (&id, &v) in &self.params {
            if let Some(g) = self.grad(v) {
                store.accumulate(id, g)?;
            }
        }
        Ok(())
    }

    fn acc(&mut self, v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backward_node(&mut self, idx: usize, dy: &Tensor<T>) -> Result<()> {
        // The op is moved out for the duration of the rule so that the
        // gradient slots can be borrowed mutably; it is restored afterwards.
        let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
        let res = self.apply_rule(idx, &op, dy);
        self.nodes[idx].op = op;
        res
    }

    fn apply_rule(&mut self, idx: usize, op: &Op<T>, dy: &Tensor<T>) -> Result<()> {
        let zero = T::zero();
        let one = T::one();
        match op {
            Op::Leaf => {}
            &Op::MatMul { a, b, ta, tb } => {
                let (m, n) = (dy.rows(), dy.cols());
                let (ar, ac) = (self.value(a).rows(), self.value(a).cols());
                let k = if ta { ar } else { ac };
                if self.rg(a) {
                    let mut da = vec![zero; ar * ac];
                    if ta {
                        T::gemm(
                            k,
                            n,
                            m,
                            one,
                            self.value(b).data(),
                            tb,
                            dy.data(),
                            true,
                            zero,
                            &mut da,
                        );
                    } else {
                        T::gemm(
                            m,
                            n,
                            k,
                            one,
                            dy.data(),
                            false,
                            self.value(b).data(),
                            !tb,
                            zero,
                            &mut da,
                        );
                    }
                    let shape = self.value(a).shape().to_vec();
                    self.acc(a, Tensor::new(shape, da)?);
                }
                if self.rg(b) {
                    let shape = self.value(b).shape().to_vec();
                    let mut db = vec![zero; self.value(b).numel()];
                    if tb {
                        T::gemm(
                            n,
                            m,
                            k,
                            one,
                            dy.data(),
                            true,
                            self.value(a).data(),
                            ta,
                            zero,
                            &mut db,
                        );
                    } else {
                        T::gemm(
                            k,
                            m,
                            n,
                            one,
                            self.value(a).data(),
                            !ta,
                            dy.data(),
                            false,
                            zero,
                            &mut db,
                        );
                    }
                    self.acc(b, Tensor::new(shape, db)?);
                }
            }
            &Op::Add(a, b) => {
                self.acc(a, dy.clone());
                self.acc(b, dy.clone());
            }
            &Op::AddRowBias { x, b } => {
                self.acc(x, dy.clone());
                if self.rg(b) {
                    let d = dy.cols();
                    let mut db = vec![zero; d];
                    for row in dy.data().chunks(d) {
                        for (s, &v) in db.iter_mut().zip(row) {
                            *s = *s + v;
                        }
                    }
                    let shape = self.value(b).shape().to_vec();
                    self.acc(b, Tensor::new(shape, db)?);
                }
            }
            &Op::Scale { x, c } => self.acc(x, dy.map(|v| v * c)),
            &Op::Relu(x) => {
                let mut dx = dy.clone();
                for (g, &y) in dx.data_mut().iter_mut().zip(self.nodes[idx].value.data()) {
                    if y <= zero {
                        *g = zero;
                    }
                }
                self.acc(x, dx);
            }
            Op::Softmax { x, fallback_rows } => {
                let y = &self.nodes[idx].value;
                let m = y.cols();
                let mut dx = vec![zero; y.numel()];
                for (i, &fallback) in fallback_rows.iter().enumerate() {
                    if fallback {
                        continue;
                    }
                    let yr = y.row(i);
                    let gr = dy.row(i);
                    let dot = yr.iter().zip(gr).fold(zero, |a, (&p, &g)| a + p * g);
                    for j in 0..m {
                        dx[i * m + j] = yr[j] * (gr[j] - dot);
                    }
                }
                let shape = y.shape().to_vec();
                self.acc(*x, Tensor::new(shape, dx)?);
            }
            Op::LayerNorm {
                x,
                gain,
                shift,
                xhat,
                inv_std,
            } => {
                let (n, d) = (dy.rows(), dy.cols());
                let gv = self.value(*gain).data().to_vec();
                if self.rg(*x) {
                    let dn = T::from_usize(d).unwrap();
                    let mut dx = vec![zero; n * d];
                    for i in 0..n {
                        let g = dy.row(i);
                        let h = &xhat[i * d..(i + 1) * d];
                        let mut sum_dh = zero;
                        let mut sum_dh_h = zero;
                        for j in 0..d {
                            let dh = g[j] * gv[j];
                            sum_dh = sum_dh + dh;
                            sum_dh_h = sum_dh_h + dh * h[j];
                        }
                        let c = inv_std[i] / dn;
                        for j in 0..d {
                            let dh = g[j] * gv[j];
                            dx[i * d + j] = c * (dn * dh - sum_dh - h[j] * sum_dh_h);
                        }
                    }
                    let shape = self.value(*x).shape().to_vec();
                    self.acc(*x, Tensor::new(shape, dx)?);
                }
                if self.rg(*gain) || self.rg(*shift) {
                    let mut dg = vec![zero; d];
                    let mut ds = vec![zero; d];
                    for i in 0..n {
                        for j in 0..d {
                            let g = dy.data()[i * d + j];
                            dg[j] = dg[j] + g * xhat[i * d + j];
                            ds[j] = ds[j] + g;
                        }
                    }
                    let gs = self.value(*gain).shape().to_vec();
                    let ss = self.value(*shift).shape().to_vec();
                    self.acc(*gain, Tensor::new(gs, dg)?);
                    self.acc(*shift, Tensor::new(ss, ds)?);
                }
            }
            Op::Conv1d { x, w, b, cols } => {
                let (n, cout) = (dy.rows(), dy.cols());
                let wshape = self.value(*w).shape().to_vec();
                let (k, cin) = (wshape[0], wshape[1]);
                let kc = k * cin;
                if self.rg(*w) {
                    let mut dw = vec![zero; kc * cout];
                    T::gemm(
                        kc,
                        n,
                        cout,
                        one,
                        cols,
                        true,
                        dy.data(),
                        false,
                        zero,
                        &mut dw,
                    );
                    self.acc(*w, Tensor::new(wshape.clone(), dw)?);
                }
                if self.rg(*b) {
                    let mut db = vec![zero; cout];
                    for row in dy.data().chunks(cout) {
                        for (s, &v) in db.iter_mut().zip(row) {
                            *s = *s + v;
                        }
                    }
                    let bs = self.value(*b).shape().to_vec();
                    self.acc(*b, Tensor::new(bs, db)?);
                }
                if self.rg(*x) {
                    let mut dcols = vec![zero; n * kc];
                    T::gemm(
                        n,
                        cout,
                        kc,
                        one,
                        dy.data(),
                        false,
                        self.value(*w).data(),
                        true,
                        zero,
                        &mut dcols,
                    );
                    let pad = k / 2;
                    let mut dx = vec![zero; n * cin];
                    for t in 0..n {
                        for j in 0..k {
                            let src = t + j;
                            if src < pad || src - pad >= n {
                                continue;
                            }
                            let s = src - pad;
                            for c in 0..cin {
                                dx[s * cin + c] = dx[s * cin + c] + dcols[t * kc + j * cin + c];
                            }
                        }
                    }
                    let xs = self.value(*x).shape().to_vec();
                    self.acc(*x, Tensor::new(xs, dx)?);
                }
            }
            Op::MaskMul { x, mask } => {
                let mut dx = dy.clone();
                for (g, &m) in dx.data_mut().iter_mut().zip(mask) {
                    *g = *g * m;
                }
                self.acc(*x, dx);
            }
            Op::Embedding { table, ids } => {
                let shape = self.value(*table).shape().to_vec();
                let d = shape[1];
                let mut dt = vec![zero; shape[0] * d];
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        dt[id * d + j] = dt[id * d + j] + dy.data()[r * d + j];
                    }
                }
                self.acc(*table, Tensor::new(shape, dt)?);
            }
            Op::Mse { pred, diff, denom } => {
                let s = dy.data()[0] * T::from_f64_lossy(2.0) / *denom;
                let shape = self.value(*pred).shape().to_vec();
                self.acc(
                    *pred,
                    Tensor::new(shape, diff.iter().map(|&d| d * s).collect())?,
                );
            }
            Op::WeightedSum { x, weights } => {
                let s = dy.data()[0];
                let shape = self.value(*x).shape().to_vec();
                self.acc(
                    *x,
                    Tensor::new(shape, weights.iter().map(|&w| w * s).collect())?,
                );
            }
            Op::ConcatCols { parts } => {
                let n = dy.rows();
                let total = dy.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.rg(p) {
                        let mut dp = Vec::with_capacity(n * w);
                        for i in 0..n {
                            dp.extend_from_slice(
                                &dy.data()[i * total + offset..i * total + offset + w],
                            );
                        }
                        self.acc(p, Tensor::new(vec![n, w], dp)?);
                    }
                    offset += w;
                }
            }
            &Op::SliceCols { x, start } => {
                let (n, w) = (dy.rows(), dy.cols());
                let d = self.value(x).cols();
                let mut dx = vec![zero; n * d];
                for i in 0..n {
                    dx[i * d + start..i * d + start + w].copy_from_slice(dy.row(i));
                }
                self.acc(x, Tensor::new(vec![n, d], dx)?);
            }
            Op::RepeatRows { x, counts } => {
                let d = dy.cols();
                let mut dx = vec![zero; counts.len() * d];
                let mut r = 0;
                for (i, &c) in counts.iter().enumerate() {
                    for _ in 0..c {
                        for j in 0..d {
                            dx[i * d + j] = dx[i * d + j] + dy.data()[r * d + j];
                        }
                        r += 1;
                    }
                }
                self.acc(*x, Tensor::new(vec![counts.len(), d], dx)?);
            }
            &Op::RelGather { r, clip_k } => {
                let n = dy.rows();
                let width = 2 * clip_k + 1;
                let mut dr = vec![zero; n * width];
                for i in 0..n {
                    for j in 0..n {
                        let slot = i * width + relative_index(i, j, clip_k);
                        dr[slot] = dr[slot] + dy.data()[i * n + j];
                    }
                }
                self.acc(r, Tensor::new(vec![n, width], dr)?);
            }
            Op::Custom { x, backward } => {
                let dx = backward(self.value(*x), &self.nodes[idx].value, dy);
                self.acc(*x, dx);
            }
        }
        Ok(())
    }
}

/// Clips a relative offset to `[-k, k]`.
pub fn clip_offset(offset: isize, k: usize) -> isize {
    let k = k as isize;
    offset.clamp(-k, k)
}

/// Table row for the pair `(i, j)`: `clip(j - i, k) + k`.
pub fn relative_index(i: usize, j: usize, k: usize) -> usize {
    (clip_offset(j as isize - i as isize, k) + k as isize) as usize
}

/// Draws a fresh seed from a parent stream, for per-step dropout graphs.
pub fn child_seed<R: Rng + ?Sized>(rng: &mut R) -> u64 {
    rng.random()
}
