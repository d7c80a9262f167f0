//! Network bodies of the two tasks.

use rand::Rng;

use super::config::ModelConfig;
use super::types::{N_ARTICULATORS, N_FEATURES};
use crate::error::{Error, Result};
use crate::nncore::layers::{Conv1d, Dense, LayerNorm};
use crate::nncore::{Graph, ParamId, ParamStore, Scalar, Tensor, Var};
use crate::transformer::{apply_pe, sinusoidal_pe, FftStack, PeMode};

/// Adds or appends a sinusoidal table sized for `x`.
fn positions<T: Scalar>(g: &mut Graph<T>, x: Var, cfg: &ModelConfig) -> Result<Var> {
    let (n, width) = (g.value(x).rows(), g.value(x).cols());
    match cfg.pe_mode {
        PeMode::None | PeMode::Relative => Ok(x),
        PeMode::Additive => apply_pe(g, x, PeMode::Additive, &sinusoidal_pe(n, width)?),
        PeMode::Concatenative => apply_pe(
            g,
            x,
            PeMode::Concatenative,
            &sinusoidal_pe(n, cfg.pe_dim())?,
        ),
    }
}

fn stack_forward<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    stack: &FftStack,
    mut x: Var,
    label: &str,
) -> Result<Var> {
    for (i, layer) in stack.layers.iter().enumerate() {
        x = layer.forward(g, store, x, None)?;
        g.check_finite(x, &format!("{label} layer {i}"))?;
    }
    Ok(x)
}

/// Dense embedding, two FFT stacks over the frame sequence, linear output.
#[derive(Clone, Debug)]
pub struct AaiNet {
    pub embed1: Dense,
    pub embed2: Dense,
    pub encoder: FftStack,
    pub decoder: FftStack,
    pub out: Dense,
}

impl AaiNet {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let d = cfg.d_model;
        Ok(Self {
            embed1: Dense::new(store, "embed1", N_FEATURES, d, true, rng)?,
            embed2: Dense::new(store, "embed2", d, d, true, rng)?,
            encoder: FftStack::new(
                store,
                "encoder",
                cfg.enc_layers,
                cfg.fft_config(cfg.encoder_width())?,
                rng,
            )?,
            decoder: FftStack::new(
                store,
                "decoder",
                cfg.dec_layers,
                cfg.fft_config(cfg.decoder_width())?,
                rng,
            )?,
            out: Dense::new(store, "out", cfg.decoder_width(), N_ARTICULATORS, true, rng)?,
        })
    }

    /// `x` holds the real frames `[n, 13]`; the result is `[n, 12]`.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        cfg: &ModelConfig,
        x: Var,
    ) -> Result<Var> {
        if g.value(x).cols() != N_FEATURES {
            return Err(Error::shape(format!(
                "acoustic input needs {N_FEATURES} columns, got {:?}",
                g.value(x).shape()
            )));
        }
        let h = self.embed1.forward(g, store, x)?;
        let h = g.relu(h);
        let h = self.embed2.forward(g, store, h)?;
        g.check_finite(h, "embedding")?;
        let h = positions(g, h, cfg)?;
        let h = stack_forward(g, store, &self.encoder, h, "encoder")?;
        let h = stack_forward(g, store, &self.decoder, h, "decoder")?;
        let y = self.out.forward(g, store, h)?;
        g.check_finite(y, "output projection")?;
        Ok(y)
    }
}

/// Two convolution blocks (conv, ReLU, layer norm, dropout) and a scalar
/// output per position.
#[derive(Clone, Debug)]
pub struct DurationPredictor {
    pub conv1: Conv1d,
    pub norm1: LayerNorm,
    pub conv2: Conv1d,
    pub norm2: LayerNorm,
    pub out: Dense,
    pub keep: f64,
}

impl DurationPredictor {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        width: usize,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let (c, k) = (cfg.dur_channels, cfg.dur_kernel);
        Ok(Self {
            conv1: Conv1d::new(store, &format!("{name}.conv1"), k, width, c, rng)?,
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), c)?,
            conv2: Conv1d::new(store, &format!("{name}.conv2"), k, c, c, rng)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), c)?,
            out: Dense::new(store, &format!("{name}.out"), c, 1, true, rng)?,
            keep: cfg.keep_prob,
        })
    }

    /// `h[m, width]` to raw frame-count predictions `[m, 1]`.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        h: Var,
    ) -> Result<Var> {
        let mut x = h;
        for (conv, norm) in [(&self.conv1, &self.norm1), (&self.conv2, &self.norm2)] {
            x = conv.forward(g, store, x)?;
            x = g.relu(x);
            x = norm.forward(g, store, x)?;
            x = g.dropout(x, self.keep)?;
        }
        self.out.forward(g, store, x)
    }
}

/// Expands row `i` of `h` into `durations[i]` copies.
pub fn length_regulator<T: Scalar>(g: &mut Graph<T>, h: Var, durations: &[usize]) -> Result<Var> {
    g.repeat_rows(h, durations)
}

/// Phoneme embedding, FFT block, duration predictor, length regulator,
/// second FFT block, linear output.
#[derive(Clone, Debug)]
pub struct PtaNet {
    pub embedding: ParamId,
    pub encoder: FftStack,
    pub duration: DurationPredictor,
    pub decoder: FftStack,
    pub out: Dense,
}

/// Outputs of a PTA pass.
pub struct PtaOutput {
    /// Trajectory `[sum(durations), 12]`.
    pub trajectory: Var,
    /// Raw duration predictions `[m, 1]`.
    pub durations: Var,
}

impl PtaNet {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let embedding = store.add_glorot("embedding", &[cfg.vocab_size + 1, cfg.d_model], rng)?;
        Ok(Self {
            embedding,
            encoder: FftStack::new(
                store,
                "encoder",
                cfg.enc_layers,
                cfg.fft_config(cfg.encoder_width())?,
                rng,
            )?,
            duration: DurationPredictor::new(store, "duration", cfg.encoder_width(), cfg, rng)?,
            decoder: FftStack::new(
                store,
                "decoder",
                cfg.dec_layers,
                cfg.fft_config(cfg.decoder_width())?,
                rng,
            )?,
            out: Dense::new(store, "out", cfg.decoder_width(), N_ARTICULATORS, true, rng)?,
        })
    }

    /// Phoneme features and raw duration predictions.
    pub fn encode<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        cfg: &ModelConfig,
        ids: &[usize],
    ) -> Result<(Var, Var)> {
        if ids.is_empty() {
            return Err(Error::Data("empty phoneme sequence".into()));
        }
        if let Some(bad) = ids.iter().find(|&&i| i == 0 || i > cfg.vocab_size) {
            return Err(Error::Data(format!(
                "phoneme id {bad} outside 1..={}",
                cfg.vocab_size
            )));
        }
        let table = g.param(store, self.embedding);
        let h = g.embedding(table, ids)?;
        let h = positions(g, h, cfg)?;
        let h = stack_forward(g, store, &self.encoder, h, "encoder")?;
        let d = self.duration.forward(g, store, h)?;
        g.check_finite(d, "duration predictor")?;
        Ok((h, d))
    }

    /// Expands `h` by `durations` and decodes to a trajectory.
    pub fn decode<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        cfg: &ModelConfig,
        h: Var,
        durations: &[usize],
    ) -> Result<Var> {
        let e = length_regulator(g, h, durations)?;
        let e = positions(g, e, cfg)?;
        let e = stack_forward(g, store, &self.decoder, e, "decoder")?;
        let y = self.out.forward(g, store, e)?;
        g.check_finite(y, "output projection")?;
        Ok(y)
    }

    /// Teacher-forced pass: the decoder length comes from `gt_durations`.
    pub fn forward_train<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        cfg: &ModelConfig,
        ids: &[usize],
        gt_durations: &[usize],
    ) -> Result<PtaOutput> {
        if gt_durations.len() != ids.len() {
            return Err(Error::shape(format!(
                "{} durations for {} phonemes",
                gt_durations.len(),
                ids.len()
            )));
        }
        let (h, durations) = self.encode(g, store, cfg, ids)?;
        let trajectory = self.decode(g, store, cfg, h, gt_durations)?;
        Ok(PtaOutput {
            trajectory,
            durations,
        })
    }
}

/// Turns raw duration predictions into frame counts.
///
/// Each value is rounded half away from zero and clamped to at least one
/// frame. If the total exceeds `max_total`, counts are rescaled
/// proportionally, rounded and clamped again, then the largest entries are
/// decremented until the cap holds.
pub fn round_durations(raw: &[f64], max_total: usize) -> Result<Vec<usize>> {
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("predicted durations".into()));
    }
    if raw.len() > max_total {
        return Err(Error::Inference(format!(
            "{} phonemes cannot fit in {max_total} frames at one frame each",
            raw.len()
        )));
    }
    let clamp = |v: f64| (v.round().max(1.0)) as usize;
    let mut d: Vec<usize> = raw.iter().map(|&v| clamp(v)).collect();
    let total: usize = d.iter().sum();
    if total > max_total {
        let factor = max_total as f64 / total as f64;
        d = d.iter().map(|&v| clamp(v as f64 * factor)).collect();
        let mut total: usize = d.iter().sum();
        while total > max_total {
            let (i, _) = d
                .iter()
                .enumerate()
                .rev()
                .max_by_key(|(_, &v)| v)
                .expect("non-empty");
            d[i] -= 1;
            total -= 1;
        }
    }
    Ok(d)
}

pub(crate) fn to_tensor<T: Scalar>(a: &ndarray::Array2<f64>) -> Result<Tensor<T>> {
    Tensor::new(
        vec![a.nrows(), a.ncols()],
        a.iter().map(|&v| T::from_f64_lossy(v)).collect(),
    )
}

pub(crate) fn to_array<T: Scalar>(t: &Tensor<T>) -> ndarray::Array2<f64> {
    ndarray::Array2::from_shape_vec(
        (t.rows(), t.cols()),
        t.data().iter().map(|v| v.to_f64_lossy()).collect(),
    )
    .expect("tensor shape matches data")
}
