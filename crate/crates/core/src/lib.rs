//! Transformer models for estimating articulatory trajectories from speech
//! acoustics (inversion) and from phoneme sequences, together with the data,
//! training and evaluation pipeline around them.

pub mod bench;
pub mod cli;
pub mod config;
pub mod datakit;
pub mod error;
pub mod evalkit;
pub mod gradsuite;
pub mod models;
pub mod nncore;
pub mod trainkit;
pub mod transformer;

pub use error::{Error, Result};
