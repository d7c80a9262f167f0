//! Self-attention, positional encodings and Feed Forward Transformer blocks.

pub mod attention;
pub mod fft;
pub mod positional;

pub use attention::{
    relative_attention, scaled_dot_attention, AttentionConfig, HeadOutput, MultiHeadAttention,
    DEFAULT_CLIP_K,
};
pub use fft::{FftLayer, FftLayerConfig, FftStack};
pub use positional::{apply_pe, encode_positions, sinusoidal_pe, PeMode};
