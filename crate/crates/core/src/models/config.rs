use std::fmt;
use std::str::FromStr;

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::transformer::{AttentionConfig, FftLayerConfig, PeMode, DEFAULT_CLIP_K};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    /// Acoustic features to articulatory trajectories.
    Aai,
    /// Phoneme sequence to articulatory trajectories.
    Pta,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Aai => "aai",
            Task::Pta => "pta",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aai" => Ok(Task::Aai),
            "pta" => Ok(Task::Pta),
            other => Err(Error::config(format!("unknown task '{other}' (aai, pta)"))),
        }
    }
}

/// Architecture hyperparameters; echoed into checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub task: Task,
    pub d_model: usize,
    pub n_heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub conv_kernel: usize,
    /// Hidden width of the FFT convolutions; twice the stack width if unset.
    pub conv_hidden: Option<usize>,
    pub pe_mode: PeMode,
    /// Width of concatenated sinusoidal tables; `d_model` if unset.
    pub pe_dim: Option<usize>,
    pub clip_k: usize,
    pub keep_prob: f64,
    pub dur_channels: usize,
    pub dur_kernel: usize,
    pub vocab_size: usize,
}

impl ModelConfig {
    pub fn new(task: Task) -> Self {
        Self {
            task,
            d_model: 128,
            n_heads: 2,
            enc_layers: 2,
            dec_layers: 2,
            conv_kernel: 3,
            conv_hidden: None,
            pe_mode: PeMode::Relative,
            pe_dim: None,
            clip_k: DEFAULT_CLIP_K,
            keep_prob: 0.9,
            dur_channels: 128,
            dur_kernel: 3,
            vocab_size: 39,
        }
    }

    pub fn pe_dim(&self) -> usize {
        self.pe_dim.unwrap_or(self.d_model)
    }

    fn concat_extra(&self) -> usize {
        if self.pe_mode == PeMode::Concatenative {
            self.pe_dim()
        } else {
            0
        }
    }

    /// Width of the first FFT stack.
    pub fn encoder_width(&self) -> usize {
        self.d_model + self.concat_extra()
    }

    /// Width of the second FFT stack; a PTA decoder also appends a table
    /// to the expanded sequence in concatenative mode.
    pub fn decoder_width(&self) -> usize {
        match self.task {
            Task::Aai => self.encoder_width(),
            Task::Pta => self.encoder_width() + self.concat_extra(),
        }
    }

    pub fn fft_config(&self, width: usize) -> Result<FftLayerConfig> {
        let attention = AttentionConfig::new(width, self.n_heads, self.pe_mode, self.clip_k)?;
        Ok(FftLayerConfig {
            attention,
            conv_kernel: self.conv_kernel,
            conv_hidden: self.conv_hidden.unwrap_or(2 * width),
            keep: self.keep_prob,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("enc_layers", self.enc_layers),
            ("dec_layers", self.dec_layers),
            ("dur_channels", self.dur_channels),
            ("vocab_size", self.vocab_size),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("{k} must be positive")));
        }
        if self.dur_kernel % 2 == 0 {
            return Err(Error::config(format!(
                "dur_kernel {} must be odd",
                self.dur_kernel
            )));
        }
        if self.pe_mode == PeMode::Concatenative && self.pe_dim() % 2 == 1 {
            return Err(Error::config(format!(
                "pe_dim {} must be even",
                self.pe_dim()
            )));
        }
        if matches!(self.pe_mode, PeMode::Additive) && self.d_model % 2 == 1 {
            return Err(Error::config("additive encoding needs an even d_model"));
        }
        self.fft_config(self.encoder_width())?.validate()?;
        self.fft_config(self.decoder_width())?.validate()
    }

    /// Reads the model keys of `kv`, defaulting missing ones.
    pub fn from_kv(kv: &KvConfig, task: Option<Task>) -> Result<Self> {
        let task = match (kv.get::<Task>("task")?, task) {
            (Some(a), Some(b)) if a != b => {
                return Err(Error::config(format!(
                    "config says task={a}, command asks for {b}"
                )))
            }
            (Some(t), _) | (None, Some(t)) => t,
            (None, None) => return Err(Error::config("missing task (aai or pta)")),
        };
        let d = Self::new(task);
        let cfg = Self {
            task,
            d_model: kv.get_or("d_model", d.d_model)?,
            n_heads: kv.get_or("n_heads", d.n_heads)?,
            enc_layers: kv.get_or("enc_layers", d.enc_layers)?,
            dec_layers: kv.get_or("dec_layers", d.dec_layers)?,
            conv_kernel: kv.get_or("conv_kernel", d.conv_kernel)?,
            conv_hidden: kv.get("conv_hidden")?,
            pe_mode: kv.get_or("pe_mode", d.pe_mode)?,
            pe_dim: kv.get("pe_dim")?,
            clip_k: kv.get_or("clip_k", d.clip_k)?,
            keep_prob: kv.get_or("keep_prob", d.keep_prob)?,
            dur_channels: kv.get_or("dur_channels", d.dur_channels)?,
            dur_kernel: kv.get_or("dur_kernel", d.dur_kernel)?,
            vocab_size: kv.get_or("vocab_size", d.vocab_size)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every key with its value, optional widths resolved.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let pairs: [(&str, String); 14] = [
            ("task", self.task.to_string()),
            ("d_model", self.d_model.to_string()),
            ("n_heads", self.n_heads.to_string()),
            ("enc_layers", self.enc_layers.to_string()),
            ("dec_layers", self.dec_layers.to_string()),
            ("conv_kernel", self.conv_kernel.to_string()),
            ("pe_mode", self.pe_mode.to_string()),
            ("pe_dim", self.pe_dim().to_string()),
            ("clip_k", self.clip_k.to_string()),
            ("keep_prob", self.keep_prob.to_string()),
            ("dur_channels", self.dur_channels.to_string()),
            ("dur_kernel", self.dur_kernel.to_string()),
            ("vocab_size", self.vocab_size.to_string()),
            (
                "conv_hidden",
                self.conv_hidden
                    .map_or_else(|| "auto".to_string(), |h| h.to_string()),
            ),
        ];
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let filtered: Vec<(String, String)> = pairs
            .iter()
            .filter(|(k, v)| !(k == "conv_hidden" && v == "auto"))
            .cloned()
            .collect();
        let kv = KvConfig::from_pairs(filtered);
        let cfg = Self::from_kv(&kv, None)?;
        kv.finish()?;
        Ok(cfg)
    }
}
