//! Parameter-holding wrappers around graph operations.
//!
//! Layers only store [`ParamId`]s, so one layer description serves any
//! precision of [`ParamStore`].

use rand::Rng;

use super::graph::{Graph, Var, LAYER_NORM_EPS};
use super::params::{ParamId, ParamStore};
use super::tensor::Scalar;
use crate::error::Result;

/// Fully connected layer `x W + b`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Dense {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let w = store.add_glorot(format!("{name}.weight"), &[d_in, d_out], rng)?;
        let b = if bias {
            Some(store.add_const(format!("{name}.bias"), &[d_out], 0.0)?)
        } else {
            None
        };
        Ok(Self { w, b, d_in, d_out })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = self.b.map(|b| g.param(store, b));
        g.linear(x, w, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub shift: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, width: usize) -> Result<Self> {
        Ok(Self {
            gain: store.add_const(format!("{name}.gain"), &[width], 1.0)?,
            shift: store.add_const(format!("{name}.shift"), &[width], 0.0)?,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let gain = g.param(store, self.gain);
        let shift = g.param(store, self.shift);
        g.layer_norm(x, gain, shift, LAYER_NORM_EPS)
    }
}

/// Sequence convolution with "same" zero padding.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub kernel: usize,
}

impl Conv1d {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        kernel: usize,
        c_in: usize,
        c_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(crate::Error::config(format!(
                "{name}: kernel size {kernel} must be odd"
            )));
        }
        Ok(Self {
            w: store.add_glorot(format!("{name}.weight"), &[kernel, c_in, c_out], rng)?,
            b: store.add_const(format!("{name}.bias"), &[c_out], 0.0)?,
            kernel,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.conv1d(x, w, b)
    }
}
