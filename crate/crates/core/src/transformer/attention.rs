//! Scaled dot-product self-attention, with optional clipped relative
//! position terms on the keys.

use rand::Rng;

use super::positional::PeMode;
use crate::error::{Error, Result};
use crate::nncore::layers::Dense;
use crate::nncore::{Graph, ParamId, ParamStore, Scalar, Var};

/// Default relative-offset clipping distance.
pub const DEFAULT_CLIP_K: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttentionConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub pe_mode: PeMode,
    pub clip_k: usize,
}

impl AttentionConfig {
    pub fn new(d_model: usize, n_heads: usize, pe_mode: PeMode, clip_k: usize) -> Result<Self> {
        let cfg = Self {
            d_model,
            n_heads,
            pe_mode,
            clip_k,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 {
            return Err(Error::config(
                "attention width and head count must be positive",
            ));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::config(format!(
                "width {} is not divisible by {} heads",
                self.d_model, self.n_heads
            )));
        }
        if self.pe_mode == PeMode::Relative && self.clip_k == 0 {
            return Err(Error::config("relative attention needs clip_k >= 1"));
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Three bias-free projections of the same input.
pub fn qkv_project<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    wq: Var,
    wk: Var,
    wv: Var,
) -> Result<(Var, Var, Var)> {
    Ok((g.matmul(x, wq)?, g.matmul(x, wk)?, g.matmul(x, wv)?))
}

/// Output and attention weights of one head.
pub struct HeadOutput {
    pub out: Var,
    pub weights: Var,
}

fn attend<T: Scalar>(
    g: &mut Graph<T>,
    q: Var,
    k: Var,
    v: Var,
    relative: Option<(Var, usize)>,
    key_mask: Option<&[bool]>,
) -> Result<HeadOutput> {
    let (nq, dq) = (g.value(q).rows(), g.value(q).cols());
    let (nk, dk) = (g.value(k).rows(), g.value(k).cols());
    if dq != dk || nq != nk || g.value(v).rows() != nk {
        return Err(Error::shape(format!(
            "self-attention needs matching q/k/v, got {:?} {:?} {:?}",
            g.value(q).shape(),
            g.value(k).shape(),
            g.value(v).shape()
        )));
    }
    let mut logits = g.matmul_t(q, k, false, true)?;
    if let Some((table, clip_k)) = relative {
        let per_offset = g.matmul_t(q, table, false, true)?;
        let rel = g.relative_gather(per_offset, clip_k)?;
        logits = g.add(logits, rel)?;
    }
    let logits = g.scale(logits, T::from_f64_lossy(1.0 / (dq as f64).sqrt()));
    let weights = g.softmax_rows_masked(logits, key_mask)?;
    let out = g.matmul(weights, v)?;
    Ok(HeadOutput { out, weights })
}

/// `softmax(Q K^T / sqrt(d)) V`; masked keys get zero weight.
pub fn scaled_dot_attention<T: Scalar>(
    g: &mut Graph<T>,
    q: Var,
    k: Var,
    v: Var,
    key_mask: Option<&[bool]>,
) -> Result<HeadOutput> {
    attend(g, q, k, v, None, key_mask)
}

/// Attention whose logits gain `q_i . a_ij` with `a_ij` the row of `table`
/// for offset `clip(j - i, clip_k)`; `table` is `[2 clip_k + 1, d]`.
pub fn relative_attention<T: Scalar>(
    g: &mut Graph<T>,
    q: Var,
    k: Var,
    v: Var,
    table: Var,
    clip_k: usize,
    key_mask: Option<&[bool]>,
) -> Result<HeadOutput> {
    let shape = g.value(table).shape().to_vec();
    if shape != [2 * clip_k + 1, g.value(q).cols()] {
        return Err(Error::shape(format!(
            "relative table {shape:?} for clip {clip_k} and head width {}",
            g.value(q).cols()
        )));
    }
    attend(g, q, k, v, Some((table, clip_k)), key_mask)
}

/// Multi-head self-attention followed by an output projection.
///
/// With relative positions, one table of `2 clip_k + 1` rows is shared by
/// all heads of the layer.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub cfg: AttentionConfig,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub out: Dense,
    pub rel_table: Option<ParamId>,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: AttentionConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let wq = store.add_glorot(format!("{name}.wq"), &[d, d], rng)?;
        let wk = store.add_glorot(format!("{name}.wk"), &[d, d], rng)?;
        let wv = store.add_glorot(format!("{name}.wv"), &[d, d], rng)?;
        let out = Dense::new(store, &format!("{name}.out"), d, d, true, rng)?;
        let rel_table = if cfg.pe_mode == PeMode::Relative {
            Some(store.add_glorot(
                format!("{name}.rel_table"),
                &[2 * cfg.clip_k + 1, cfg.d_head()],
                rng,
            )?)
        } else {
            None
        };
        Ok(Self {
            cfg,
            wq,
            wk,
            wv,
            out,
            rel_table,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        key_mask: Option<&[bool]>,
    ) -> Result<Var> {
        Ok(self.forward_with_weights(g, store, x, key_mask)?.0)
    }

    /// Also returns each head's attention-weight matrix.
    pub fn forward_with_weights<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        key_mask: Option<&[bool]>,
    ) -> Result<(Var, Vec<Var>)> {
        if g.value(x).cols() != self.cfg.d_model {
            return Err(Error::shape(format!(
                "attention of width {} fed {:?}",
                self.cfg.d_model,
                g.value(x).shape()
            )));
        }
        let wq = g.param(store, self.wq);
        let wk = g.param(store, self.wk);
        let wv = g.param(store, self.wv);
        let (q, k, v) = qkv_project(g, x, wq, wk, wv)?;
        let table = self.rel_table.map(|t| g.param(store, t));
        let dh = self.cfg.d_head();
        let mut heads = Vec::with_capacity(self.cfg.n_heads);
        let mut weights = Vec::with_capacity(self.cfg.n_heads);
        for h in 0..self.cfg.n_heads {
            let (qh, kh, vh) = if self.cfg.n_heads == 1 {
                (q, k, v)
            } else {
                (
                    g.slice_cols(q, h * dh, dh)?,
                    g.slice_cols(k, h * dh, dh)?,
                    g.slice_cols(v, h * dh, dh)?,
                )
            };
            let head = match table {
                Some(t) => relative_attention(g, qh, kh, vh, t, self.cfg.clip_k, key_mask)?,
                None => scaled_dot_attention(g, qh, kh, vh, key_mask)?,
            };
            heads.push(head.out);
            weights.push(head.weights);
        }
        let joined = if heads.len() == 1 {
            heads[0]
        } else {
            g.concat_cols(&heads)?
        };
        Ok((self.out.forward(g, store, joined)?, weights))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::Tensor;

    #[test]
    fn config_validation() {
        assert!(AttentionConfig::new(8, 3, PeMode::None, 10).is_err());
        assert!(AttentionConfig::new(8, 2, PeMode::Relative, 0).is_err());
        assert_eq!(
            AttentionConfig::new(8, 2, PeMode::Relative, 10)
                .unwrap()
                .d_head(),
            4
        );
    }

    #[test]
    fn single_position_returns_value() {
        let mut g = Graph::<f64>::eval();
        let q = g.constant(Tensor::new(vec![1, 2], vec![3.0, -1.0]).unwrap());
        let k = g.constant(Tensor::new(vec![1, 2], vec![0.5, 2.0]).unwrap());
        let v = g.constant(Tensor::new(vec![1, 2], vec![7.0, 8.0]).unwrap());
        let h = scaled_dot_attention(&mut g, q, k, v, None).unwrap();
        assert_eq!(g.value(h.out).data(), &[7.0, 8.0]);
    }

    #[test]
    fn zero_queries_average_values() {
        let mut g = Graph::<f64>::eval();
        let q = g.constant(Tensor::zeros(&[3, 2]));
        let k = g.constant(Tensor::new(vec![3, 2], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let v = g.constant(Tensor::new(vec![3, 2], vec![1., 10., 2., 20., 6., 60.]).unwrap());
        let h = scaled_dot_attention(&mut g, q, k, v, None).unwrap();
        for i in 0..3 {
            let r = g.value(h.out).row(i);
            assert!((r[0] - 3.0).abs() < 1e-12 && (r[1] - 30.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_position_hand_case() {
        // d = 1: q = [1, 2], k = [1, -1], v = [10, 20]
        let mut g = Graph::<f64>::eval();
        let q = g.constant(Tensor::new(vec![2, 1], vec![1.0, 2.0]).unwrap());
        let k = g.constant(Tensor::new(vec![2, 1], vec![1.0, -1.0]).unwrap());
        let v = g.constant(Tensor::new(vec![2, 1], vec![10.0, 20.0]).unwrap());
        let h = scaled_dot_attention(&mut g, q, k, v, None).unwrap();
        // row 0 logits [1, -1] -> weights [e/(e+1/e), ...]
        let w0 = 1.0f64.exp() / (1.0f64.exp() + (-1.0f64).exp());
        let w1 = 2.0f64.exp() / (2.0f64.exp() + (-2.0f64).exp());
        let expect = [10.0 * w0 + 20.0 * (1.0 - w0), 10.0 * w1 + 20.0 * (1.0 - w1)];
        for (a, b) in g.value(h.out).data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
