//! Feed Forward Transformer layers: self-attention and a two-layer
//! convolutional network, each wrapped in a residual connection followed
//! by layer normalization.

use rand::Rng;

use super::attention::{AttentionConfig, MultiHeadAttention};
use crate::error::{Error, Result};
use crate::nncore::layers::{Conv1d, LayerNorm};
use crate::nncore::{Graph, ParamStore, Scalar, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FftLayerConfig {
    pub attention: AttentionConfig,
    pub conv_kernel: usize,
    pub conv_hidden: usize,
    /// Dropout keep-probability applied to each sublayer output in training.
    pub keep: f64,
}

impl FftLayerConfig {
    /// Kernel 3, hidden width `2 d_model`, keep-probability 0.9.
    pub fn new(attention: AttentionConfig) -> Self {
        Self {
            attention,
            conv_kernel: 3,
            conv_hidden: 2 * attention.d_model,
            keep: 0.9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.attention.validate()?;
        if self.conv_kernel % 2 == 0 {
            return Err(Error::config(format!(
                "convolution kernel {} must be odd",
                self.conv_kernel
            )));
        }
        if self.conv_hidden == 0 {
            return Err(Error::config("convolution hidden width must be positive"));
        }
        if !(self.keep > 0.0 && self.keep <= 1.0) {
            return Err(Error::config(format!(
                "keep probability {} outside (0, 1]",
                self.keep
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct FftLayer {
    pub cfg: FftLayerConfig,
    pub attn: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub conv1: Conv1d,
    pub conv2: Conv1d,
    pub norm2: LayerNorm,
}

impl FftLayer {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: FftLayerConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.attention.d_model;
        Ok(Self {
            cfg,
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), cfg.attention, rng)?,
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), d)?,
            conv1: Conv1d::new(
                store,
                &format!("{name}.conv1"),
                cfg.conv_kernel,
                d,
                cfg.conv_hidden,
                rng,
            )?,
            conv2: Conv1d::new(
                store,
                &format!("{name}.conv2"),
                cfg.conv_kernel,
                cfg.conv_hidden,
                d,
                rng,
            )?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), d)?,
        })
    }

    /// `mask[i]` is true for real rows. Padded rows are excluded as
    /// attention keys and zeroed before each convolution, so they never
    /// reach real outputs.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        mask: Option<&[bool]>,
    ) -> Result<Var> {
        if let Some(m) = mask {
            if m.len() != g.value(x).rows() {
                return Err(Error::shape(format!(
                    "mask of length {} for {} rows",
                    m.len(),
                    g.value(x).rows()
                )));
            }
        }
        let a = self.attn.forward(g, store, x, mask)?;
        let a = g.dropout(a, self.cfg.keep)?;
        let y1 = g.add(x, a)?;
        let y1 = self.norm1.forward(g, store, y1)?;

        let h = masked(g, y1, mask)?;
        let h = self.conv1.forward(g, store, h)?;
        let h = g.relu(h);
        let h = masked(g, h, mask)?;
        let h = self.conv2.forward(g, store, h)?;
        let h = g.dropout(h, self.cfg.keep)?;
        let y2 = g.add(y1, h)?;
        self.norm2.forward(g, store, y2)
    }
}

fn masked<T: Scalar>(g: &mut Graph<T>, x: Var, mask: Option<&[bool]>) -> Result<Var> {
    match mask {
        Some(m) if m.iter().any(|&keep| !keep) => g.mask_rows(x, m),
        _ => Ok(x),
    }
}

/// Sequential FFT layers with independent parameters.
#[derive(Clone, Debug)]
pub struct FftStack {
    pub layers: Vec<FftLayer>,
}

impl FftStack {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        n_layers: usize,
        cfg: FftLayerConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if n_layers < 1 {
            return Err(Error::config(format!(
                "{name}: an FFT stack needs at least one layer"
            )));
        }
        let layers = (0..n_layers)
            .map(|i| FftLayer::new(store, &format!("{name}.{i}"), cfg, rng))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        mut x: Var,
        mask: Option<&[bool]>,
    ) -> Result<Var> {
        for layer in &self.layers {
            x = layer.forward(g, store, x, mask)?;
        }
        Ok(x)
    }
}
