//! Loading and validating sentences listed in a manifest.

use ndarray::Array2;

use super::formats::{read_durations, read_matrix, read_phonemes, CorpusManifest, Record, Split};
use super::preprocess::preprocess_trajectory;
use crate::error::{Error, Result};
use crate::models::{
    AcousticFeatures, ArticulatoryTrajectory, DurationVector, PhonemeSequence, MAX_FRAMES,
    N_ARTICULATORS, N_FEATURES,
};

/// Phoneme inventory assumed when a manifest does not declare one.
pub const DEFAULT_VOCAB: usize = 39;

/// A validated sentence as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Sentence {
    pub id: String,
    pub subject: String,
    pub split: Split,
    pub phonemes: PhonemeSequence,
    pub durations: DurationVector,
    pub trajectory: ArticulatoryTrajectory,
    pub acoustics: AcousticFeatures,
}

fn data_err(r: &Record, msg: impl std::fmt::Display) -> Error {
    Error::Data(format!("sentence {}: {msg}", r.id))
}

/// Reads every file of `rec` and checks that they agree.
pub fn load_record(manifest: &CorpusManifest, rec: &Record) -> Result<Sentence> {
    let vocab = manifest.vocab_size().unwrap_or(DEFAULT_VOCAB);
    let ids = read_phonemes(&manifest.resolve(&rec.phonemes))?;
    let durations = read_durations(&manifest.resolve(&rec.durations))?;
    let traj = read_matrix(&manifest.resolve(&rec.trajectory), N_ARTICULATORS)?;
    let ac = read_matrix(&manifest.resolve(&rec.acoustics), N_FEATURES)?;
    if durations.len() != ids.len() {
        return Err(data_err(
            rec,
            format!("{} durations for {} phonemes", durations.len(), ids.len()),
        ));
    }
    let total: usize = durations.iter().sum();
    if total != traj.nrows() {
        return Err(data_err(
            rec,
            format!(
                "durations sum to {total} but the trajectory has {} frames",
                traj.nrows()
            ),
        ));
    }
    if total > MAX_FRAMES {
        return Err(data_err(
            rec,
            format!("{total} frames exceed the {MAX_FRAMES}-frame cap"),
        ));
    }
    if ac.nrows() != traj.nrows() {
        return Err(data_err(
            rec,
            format!(
                "{} acoustic frames for {} trajectory frames",
                ac.nrows(),
                traj.nrows()
            ),
        ));
    }
    Ok(Sentence {
        id: rec.id.clone(),
        subject: rec.subject.clone(),
        split: rec.split,
        phonemes: PhonemeSequence::new(ids, vocab).map_err(|e| data_err(rec, e))?,
        durations: DurationVector(durations),
        trajectory: ArticulatoryTrajectory::new(traj).map_err(|e| data_err(rec, e))?,
        acoustics: AcousticFeatures::new(ac).map_err(|e| data_err(rec, e))?,
    })
}

pub fn load_sentence(manifest: &CorpusManifest, id: &str) -> Result<Sentence> {
    load_record(manifest, manifest.record(id)?)
}

/// A sentence ready for training or evaluation: acoustics as stored,
/// trajectory low-passed and normalized.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub subject: String,
    pub phonemes: Vec<usize>,
    pub durations: Vec<usize>,
    pub acoustics: Array2<f64>,
    pub target: Array2<f64>,
}

impl Example {
    pub fn from_sentence(s: &Sentence) -> Result<Self> {
        Ok(Self {
            id: s.id.clone(),
            subject: s.subject.clone(),
            phonemes: s.phonemes.ids().to_vec(),
            durations: s.durations.as_slice().to_vec(),
            acoustics: s.acoustics.frames().clone(),
            target: preprocess_trajectory(s.trajectory.frames())?,
        })
    }

    pub fn frames(&self) -> usize {
        self.target.nrows()
    }
}

/// Prepared examples of one split, optionally restricted to one subject,
/// in manifest order.
pub fn load_examples(
    manifest: &CorpusManifest,
    subject: Option<&str>,
    split: Split,
) -> Result<Vec<Example>> {
    manifest
        .select(subject, split)
        .map(|r| Example::from_sentence(&load_record(manifest, r)?))
        .collect()
}
