use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nncore::{Graph, Scalar, Tensor, Var};

/// How position information enters the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PeMode {
    None,
    /// Sinusoidal table added to the features.
    Additive,
    /// Sinusoidal table appended along the feature axis.
    Concatenative,
    /// Learned clipped relative-offset embeddings inside attention.
    Relative,
}

impl PeMode {
    pub const ALL: [PeMode; 4] = [
        PeMode::None,
        PeMode::Additive,
        PeMode::Concatenative,
        PeMode::Relative,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PeMode::None => "none",
            PeMode::Additive => "additive",
            PeMode::Concatenative => "concatenative",
            PeMode::Relative => "relative",
        }
    }
}

impl fmt::Display for PeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PeMode::None),
            "additive" => Ok(PeMode::Additive),
            "concatenative" | "concat" => Ok(PeMode::Concatenative),
            "relative" => Ok(PeMode::Relative),
            other => Err(Error::config(format!(
                "unknown positional encoding '{other}' (none, additive, concatenative, relative)"
            ))),
        }
    }
}

/// Angular frequency for even index `i` of a `d_pe`-wide table.
pub fn frequency(i: usize, d_pe: usize) -> f64 {
    1.0 / 10000f64.powf(i as f64 / d_pe as f64)
}

/// Sinusoidal table of `n` positions and width `d_pe`.
///
/// Frequencies use the even indices `0, 2, ..., d_pe - 2`; each row holds
/// all sines first, then all cosines.
pub fn sinusoidal_pe<T: Scalar>(n: usize, d_pe: usize) -> Result<Tensor<T>> {
    if d_pe == 0 || d_pe % 2 == 1 {
        return Err(Error::config(format!(
            "sinusoidal encoding width must be even and positive, got {d_pe}"
        )));
    }
    let half = d_pe / 2;
    let omegas: Vec<f64> = (0..half).map(|h| frequency(2 * h, d_pe)).collect();
    let mut data = Vec::with_capacity(n * d_pe);
    for pos in 0..n {
        let p = pos as f64;
        data.extend(omegas.iter().map(|w| T::from_f64_lossy((w * p).sin())));
        data.extend(omegas.iter().map(|w| T::from_f64_lossy((w * p).cos())));
    }
    Tensor::new(vec![n, d_pe], data)
}

/// Combines features with a sinusoidal table according to `mode`.
///
/// `None` and `Relative` leave `x` untouched (relative positions are
/// handled inside attention). `Additive` requires `pe` to match the width
/// of `x`; `Concatenative` appends `pe` to the feature axis.
pub fn apply_pe<T: Scalar>(g: &mut Graph<T>, x: Var, mode: PeMode, pe: &Tensor<T>) -> Result<Var> {
    match mode {
        PeMode::None | PeMode::Relative => Ok(x),
        PeMode::Additive => {
            if g.value(x).shape() != pe.shape() {
                return Err(Error::shape(format!(
                    "additive encoding {:?} does not match features {:?}",
                    pe.shape(),
                    g.value(x).shape()
                )));
            }
            let p = g.constant(pe.clone());
            g.add(x, p)
        }
        PeMode::Concatenative => {
            let p = g.constant(pe.clone());
            g.concat_cols(&[x, p])
        }
    }
}

/// Applies `mode` with a freshly computed table of width `d_pe`.
pub fn encode_positions<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    mode: PeMode,
    d_pe: usize,
) -> Result<Var> {
    match mode {
        PeMode::None | PeMode::Relative => Ok(x),
        _ => {
            let n = g.value(x).rows();
            let pe = sinusoidal_pe(n, d_pe)?;
            apply_pe(g, x, mode, &pe)
        }
    }
}
