//! Sequence records exchanged between data loading, models and evaluation.
//!
//! Each record keeps its real rows only; [`pad_rows`] and the `padded`
//! helpers produce the fixed-length zero-padded form with a mask.

use ndarray::{s, Array2};

use crate::error::{Error, Result};

pub const N_FEATURES: usize = 13;
pub const N_ARTICULATORS: usize = 12;
pub const MAX_PHONEMES: usize = 60;
pub const MAX_FRAMES: usize = 400;
pub const PAD_ID: usize = 0;

/// Channel order of articulatory trajectories.
pub const ARTICULATOR_NAMES: [&str; N_ARTICULATORS] = [
    "UL_x", "UL_y", "LL_x", "LL_y", "Jaw_x", "Jaw_y", "TT_x", "TT_y", "TB_x", "TB_y", "TD_x",
    "TD_y",
];

/// Phoneme ids `1..=vocab`; id 0 is reserved for padding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhonemeSequence {
    ids: Vec<usize>,
}

impl PhonemeSequence {
    pub fn new(ids: Vec<usize>, vocab: usize) -> Result<Self> {
        if ids.is_empty() || ids.len() > MAX_PHONEMES {
            return Err(Error::Data(format!(
                "phoneme sequence length {} outside 1..={MAX_PHONEMES}",
                ids.len()
            )));
        }
        if let Some(bad) = ids.iter().find(|&&i| i == PAD_ID || i > vocab) {
            return Err(Error::Data(format!("phoneme id {bad} outside 1..={vocab}")));
        }
        Ok(Self { ids })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn true_len(&self) -> usize {
        self.ids.len()
    }

    /// Ids zero-padded to `max_len`, with the real-position mask.
    pub fn padded(&self, max_len: usize) -> Result<(Vec<usize>, Vec<bool>)> {
        if self.ids.len() > max_len {
            return Err(Error::Data(format!(
                "{} phonemes exceed cap {max_len}",
                self.ids.len()
            )));
        }
        let mut ids = self.ids.clone();
        ids.resize(max_len, PAD_ID);
        Ok((ids, mask(self.ids.len(), max_len)))
    }
}

/// Frames per phoneme.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DurationVector(pub Vec<usize>);

impl DurationVector {
    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

fn frames_record(frames: Array2<f64>, width: usize, what: &str) -> Result<Array2<f64>> {
    if frames.ncols() != width {
        return Err(Error::Data(format!(
            "{what} need {width} columns, got {}",
            frames.ncols()
        )));
    }
    if frames.nrows() == 0 || frames.nrows() > MAX_FRAMES {
        return Err(Error::Data(format!(
            "{what}: {} frames outside 1..={MAX_FRAMES}",
            frames.nrows()
        )));
    }
    if frames.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data(format!("{what} contain non-finite values")));
    }
    Ok(frames)
}

/// Acoustic feature frames `[n, 13]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AcousticFeatures {
    frames: Array2<f64>,
}

impl AcousticFeatures {
    pub fn new(frames: Array2<f64>) -> Result<Self> {
        Ok(Self {
            frames: frames_record(frames, N_FEATURES, "acoustic features")?,
        })
    }

    pub fn frames(&self) -> &Array2<f64> {
        &self.frames
    }

    pub fn true_len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn padded(&self, max_len: usize) -> Result<(Array2<f64>, Vec<bool>)> {
        pad_rows(&self.frames, max_len)
    }
}

/// Articulator positions `[n, 12]` in [`ARTICULATOR_NAMES`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct ArticulatoryTrajectory {
    frames: Array2<f64>,
}

impl ArticulatoryTrajectory {
    pub fn new(frames: Array2<f64>) -> Result<Self> {
        Ok(Self {
            frames: frames_record(frames, N_ARTICULATORS, "articulatory trajectory")?,
        })
    }

    pub fn frames(&self) -> &Array2<f64> {
        &self.frames
    }

    pub fn true_len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn padded(&self, max_len: usize) -> Result<(Array2<f64>, Vec<bool>)> {
        pad_rows(&self.frames, max_len)
    }
}

fn mask(n: usize, max_len: usize) -> Vec<bool> {
    (0..max_len).map(|i| i < n).collect()
}

/// Appends zero rows up to `max_len`; the mask marks the original rows.
pub fn pad_rows(x: &Array2<f64>, max_len: usize) -> Result<(Array2<f64>, Vec<bool>)> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::Data("cannot pad an empty sequence".into()));
    }
    if n > max_len {
        return Err(Error::Data(format!(
            "sequence of {n} rows exceeds cap {max_len}"
        )));
    }
    let mut out = Array2::zeros((max_len, x.ncols()));
    out.slice_mut(s![..n, ..]).assign(x);
    Ok((out, mask(n, max_len)))
}

/// Keeps the rows whose mask entry is set (the real prefix).
pub fn unpad_rows(x: &Array2<f64>, mask: &[bool]) -> Result<Array2<f64>> {
    if mask.len() != x.nrows() {
        return Err(Error::shape(format!(
            "mask of {} for {} rows",
            mask.len(),
            x.nrows()
        )));
    }
    let n = mask.iter().take_while(|&&m| m).count();
    if mask[n..].iter().any(|&m| m) {
        return Err(Error::Data("mask is not a contiguous prefix".into()));
    }
    Ok(x.slice(s![..n, ..]).to_owned())
}
