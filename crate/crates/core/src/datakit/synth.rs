//! Synthetic articulatory corpus with a known linear acoustic mapping.
//!
//! Every phoneme has a 12-dimensional articulatory target and a mean
//! duration. A sentence is a random phoneme string; its canonical
//! trajectory holds each target for the sampled number of frames, smoothed
//! by a 5-frame moving average and the 25 Hz low-pass. Acoustics are a
//! fixed linear image of the canonical trajectory plus Gaussian noise, and
//! each subject's recorded trajectory is a subject-specific affine
//! transform of it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, StandardNormal};

use super::corpus::load_examples;
use super::filter::{CUTOFF, TRAJECTORY_RATE};
use super::formats::{format_ints, format_matrix, write, CorpusManifest, Record, Split};
use super::preprocess::lowpass_channels;
use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::evalkit::framewise_metrics;
use crate::models::{MAX_FRAMES, MAX_PHONEMES, N_ARTICULATORS, N_FEATURES};

pub const MANIFEST_NAME: &str = "manifest.tsv";
const SMOOTH_WINDOW: usize = 5;
/// Shape of the duration distribution; larger is tighter around the mean.
const DURATION_SHAPE: f64 = 50.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub n_subjects: usize,
    pub sentences_per_subject: usize,
    pub vocab_size: usize,
    pub min_phonemes: usize,
    pub max_phonemes: usize,
    pub min_mean_duration: f64,
    pub max_mean_duration: f64,
    pub min_duration: usize,
    pub max_duration: usize,
    pub noise_std: f64,
    /// Size of the random part of each subject's linear transform.
    pub subject_scale: f64,
    /// Standard deviation of each subject's offset.
    pub subject_offset: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_subjects: 4,
            sentences_per_subject: 200,
            vocab_size: 20,
            min_phonemes: 5,
            max_phonemes: 25,
            min_mean_duration: 5.0,
            max_mean_duration: 20.0,
            min_duration: 2,
            max_duration: 40,
            noise_std: 0.05,
            subject_scale: 0.3,
            subject_offset: 0.5,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.n_subjects == 0 {
            return bad("n_subjects must be positive".into());
        }
        if self.sentences_per_subject < 3 {
            return bad("sentences_per_subject must be at least 3 (train, val and test)".into());
        }
        if self.vocab_size == 0 {
            return bad("vocab_size must be positive".into());
        }
        if self.min_phonemes == 0
            || self.min_phonemes > self.max_phonemes
            || self.max_phonemes > MAX_PHONEMES
        {
            return bad(format!(
                "phoneme range {}..={} must lie within 1..={MAX_PHONEMES}",
                self.min_phonemes, self.max_phonemes
            ));
        }
        if !(self.min_mean_duration > 0.0 && self.min_mean_duration <= self.max_mean_duration) {
            return bad("mean duration range must be positive and ordered".into());
        }
        if self.min_duration == 0 || self.min_duration > self.max_duration {
            return bad("duration clamp range must be positive and ordered".into());
        }
        if self.min_phonemes * self.min_duration > MAX_FRAMES {
            return bad(format!("shortest sentence exceeds {MAX_FRAMES} frames"));
        }
        if !(self.noise_std >= 0.0 && self.subject_scale >= 0.0 && self.subject_offset >= 0.0) {
            return bad("noise_std, subject_scale and subject_offset must be non-negative".into());
        }
        Ok(())
    }

    pub fn from_kv(kv: &KvConfig, seed: u64) -> Result<Self> {
        let d = Self::default();
        let spec = Self {
            seed,
            n_subjects: kv.get_or("n_subjects", d.n_subjects)?,
            sentences_per_subject: kv.get_or("sentences_per_subject", d.sentences_per_subject)?,
            vocab_size: kv.get_or("vocab_size", d.vocab_size)?,
            min_phonemes: kv.get_or("min_phonemes", d.min_phonemes)?,
            max_phonemes: kv.get_or("max_phonemes", d.max_phonemes)?,
            min_mean_duration: kv.get_or("min_mean_duration", d.min_mean_duration)?,
            max_mean_duration: kv.get_or("max_mean_duration", d.max_mean_duration)?,
            min_duration: kv.get_or("min_duration", d.min_duration)?,
            max_duration: kv.get_or("max_duration", d.max_duration)?,
            noise_std: kv.get_or("noise_std", d.noise_std)?,
            subject_scale: kv.get_or("subject_scale", d.subject_scale)?,
            subject_offset: kv.get_or("subject_offset", d.subject_offset)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn subject_name(i: usize) -> String {
        format!("S{:02}", i + 1)
    }
}

/// Parameters shared by all subjects.
#[derive(Clone, Debug)]
pub struct Inventory {
    /// Row `p - 1` is the target of phoneme `p`.
    pub targets: Array2<f64>,
    pub mean_durations: Vec<f64>,
    /// `[13, 12]` acoustic mixing matrix.
    pub mixing: Array2<f64>,
    pub offset: Array1<f64>,
}

#[derive(Clone, Debug)]
pub struct SubjectTransform {
    pub matrix: Array2<f64>,
    pub offset: Array1<f64>,
}

/// One generated sentence before it is written to disk.
#[derive(Clone, Debug)]
pub struct SyntheticSentence {
    pub phonemes: Vec<usize>,
    pub durations: Vec<usize>,
    /// Canonical (subject-independent) trajectory.
    pub canonical: Array2<f64>,
    pub trajectory: Array2<f64>,
    pub acoustics: Array2<f64>,
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

impl Inventory {
    pub fn sample<R: Rng>(spec: &SyntheticSpec, rng: &mut R) -> Self {
        let targets = Array2::from_shape_fn((spec.vocab_size, N_ARTICULATORS), |_| {
            rng.random_range(-1.0..1.0)
        });
        let mean_durations = (0..spec.vocab_size)
            .map(|_| {
                if spec.min_mean_duration == spec.max_mean_duration {
                    spec.min_mean_duration
                } else {
                    rng.random_range(spec.min_mean_duration..spec.max_mean_duration)
                }
            })
            .collect();
        let g = DMatrix::from_fn(N_FEATURES, N_FEATURES, |_, _| normal(rng));
        let q = g.qr().q();
        let scales: Vec<f64> = (0..N_ARTICULATORS)
            .map(|_| rng.random_range(0.5..1.5))
            .collect();
        let mixing =
            Array2::from_shape_fn((N_FEATURES, N_ARTICULATORS), |(i, j)| q[(i, j)] * scales[j]);
        let offset = Array1::from_shape_fn(N_FEATURES, |_| 0.5 * normal(rng));
        Self {
            targets,
            mean_durations,
            mixing,
            offset,
        }
    }
}

impl SubjectTransform {
    pub fn identity() -> Self {
        Self {
            matrix: Array2::eye(N_ARTICULATORS),
            offset: Array1::zeros(N_ARTICULATORS),
        }
    }

    pub fn sample<R: Rng>(spec: &SyntheticSpec, rng: &mut R) -> Self {
        let k = spec.subject_scale / (N_ARTICULATORS as f64).sqrt();
        let matrix = Array2::from_shape_fn((N_ARTICULATORS, N_ARTICULATORS), |(i, j)| {
            f64::from(u8::from(i == j)) + k * normal(rng)
        });
        let offset = Array1::from_shape_fn(N_ARTICULATORS, |_| spec.subject_offset * normal(rng));
        Self { matrix, offset }
    }

    pub fn apply(&self, y: &Array2<f64>) -> Array2<f64> {
        y.dot(&self.matrix.t()) + &self.offset
    }
}

/// Centered moving average; the window shrinks at the edges.
pub fn moving_average(x: &Array2<f64>, window: usize) -> Array2<f64> {
    let n = x.nrows();
    let half = window / 2;
    let mut out = Array2::zeros(x.dim());
    for t in 0..n {
        let lo = t.saturating_sub(half);
        let hi = (t + half).min(n - 1);
        let slice = x.slice(ndarray::s![lo..=hi, ..]);
        out.row_mut(t)
            .assign(&slice.mean_axis(ndarray::Axis(0)).expect("non-empty window"));
    }
    out
}

pub fn sample_sentence<R: Rng>(
    spec: &SyntheticSpec,
    inv: &Inventory,
    subject: &SubjectTransform,
    rng: &mut R,
) -> Result<SyntheticSentence> {
    let len = rng.random_range(spec.min_phonemes..=spec.max_phonemes);
    let mut phonemes: Vec<usize> = (0..len)
        .map(|_| rng.random_range(1..=spec.vocab_size))
        .collect();
    let mut durations: Vec<usize> = phonemes
        .iter()
        .map(|&p| {
            let mu = inv.mean_durations[p - 1];
            let g = Gamma::new(DURATION_SHAPE, mu / DURATION_SHAPE).expect("positive parameters");
            let d: f64 = rng.sample(g);
            (d.round() as usize).clamp(spec.min_duration, spec.max_duration)
        })
        .collect();
    while durations.iter().sum::<usize>() > MAX_FRAMES && phonemes.len() > spec.min_phonemes {
        phonemes.pop();
        durations.pop();
    }
    let total: usize = durations.iter().sum();
    if total > MAX_FRAMES {
        return Err(Error::config(format!(
            "cannot keep {} phonemes within {MAX_FRAMES} frames; lower the duration range",
            spec.min_phonemes
        )));
    }
    let mut y = Array2::zeros((total, N_ARTICULATORS));
    let mut t = 0;
    for (&p, &d) in phonemes.iter().zip(&durations) {
        for _ in 0..d {
            y.row_mut(t).assign(&inv.targets.row(p - 1));
            t += 1;
        }
    }
    let canonical = lowpass_channels(&moving_average(&y, SMOOTH_WINDOW), TRAJECTORY_RATE, CUTOFF)?;
    let mut acoustics = canonical.dot(&inv.mixing.t()) + &inv.offset;
    if spec.noise_std > 0.0 {
        acoustics.mapv_inplace(|v| v + spec.noise_std * normal(rng));
    }
    let trajectory = subject.apply(&canonical);
    Ok(SyntheticSentence {
        phonemes,
        durations,
        canonical,
        trajectory,
        acoustics,
    })
}

/// Split labels for `n` sentences: 10% validation, 10% test (at least one
/// each), the rest training, assigned by a seeded shuffle.
pub fn split_labels<R: Rng>(n: usize, rng: &mut R) -> Vec<Split> {
    let n_val = (n / 10).max(1);
    let n_test = (n / 10).max(1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut labels = vec![Split::Train; n];
    for (k, &i) in order.iter().enumerate() {
        if k < n_val {
            labels[i] = Split::Val;
        } else if k < n_val + n_test {
            labels[i] = Split::Test;
        }
    }
    labels
}

/// Writes the corpus under `out_dir` and returns its manifest, which is
/// also saved as `out_dir/manifest.tsv`.
///
/// The manifest metadata records the generator settings and, per subject,
/// the held-out correlation of a per-channel least-squares map from acoustics to the
/// preprocessed trajectories (`ols_cc.<subject>`).
pub fn generate_synthetic(spec: &SyntheticSpec, out_dir: &Path) -> Result<CorpusManifest> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let inv = Inventory::sample(spec, &mut rng);
    let mut records = Vec::new();
    for s in 0..spec.n_subjects {
        let subject = SyntheticSpec::subject_name(s);
        let transform = SubjectTransform::sample(spec, &mut rng);
        let labels = split_labels(spec.sentences_per_subject, &mut rng);
        for (k, split) in labels.into_iter().enumerate() {
            let sent = sample_sentence(spec, &inv, &transform, &mut rng)?;
            let id = format!("{}_{:04}", subject, k + 1);
            let rel = |ext: &str| PathBuf::from(&subject).join(format!("{id}.{ext}"));
            let rec = Record {
                id: id.clone(),
                subject: subject.clone(),
                phonemes: rel("phn"),
                durations: rel("dur"),
                trajectory: rel("art.csv"),
                acoustics: rel("ac.csv"),
                split,
            };
            write(&out_dir.join(&rec.phonemes), &format_ints(&sent.phonemes))?;
            write(&out_dir.join(&rec.durations), &format_ints(&sent.durations))?;
            write(
                &out_dir.join(&rec.trajectory),
                &format_matrix(&sent.trajectory),
            )?;
            write(
                &out_dir.join(&rec.acoustics),
                &format_matrix(&sent.acoustics),
            )?;
            records.push(rec);
        }
    }
    let mut meta = BTreeMap::new();
    meta.insert("generator_seed".to_string(), spec.seed.to_string());
    meta.insert("vocab_size".to_string(), spec.vocab_size.to_string());
    meta.insert("n_subjects".to_string(), spec.n_subjects.to_string());
    meta.insert(
        "sentences_per_subject".to_string(),
        spec.sentences_per_subject.to_string(),
    );
    meta.insert("noise_std".to_string(), spec.noise_std.to_string());
    let mut manifest = CorpusManifest {
        root: out_dir.to_path_buf(),
        meta,
        records,
    };
    for subject in manifest.subjects() {
        let cc = ols_baseline(&manifest, &subject)?;
        manifest
            .meta
            .insert(format!("ols_cc.{subject}"), cc.to_string());
    }
    manifest.save(&out_dir.join(MANIFEST_NAME))?;
    Ok(manifest)
}

/// Held-out mean correlation of a per-channel least-squares fit from
/// acoustics (plus intercept) to preprocessed trajectories, fitted on the
/// subject's training split and scored on its test split.
pub fn ols_baseline(manifest: &CorpusManifest, subject: &str) -> Result<f64> {
    let train = load_examples(manifest, Some(subject), Split::Train)?;
    let test = load_examples(manifest, Some(subject), Split::Test)?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::Data(format!(
            "subject {subject} lacks train or test sentences"
        )));
    }
    let design = |a: &Array2<f64>| {
        let mut x = Array2::ones((a.nrows(), N_FEATURES + 1));
        x.slice_mut(ndarray::s![.., ..N_FEATURES]).assign(a);
        x
    };
    let p = N_FEATURES + 1;
    let mut xtx = DMatrix::<f64>::zeros(p, p);
    let mut xty = DMatrix::<f64>::zeros(p, N_ARTICULATORS);
    for ex in &train {
        let x = design(&ex.acoustics);
        let xm = DMatrix::from_row_iterator(x.nrows(), p, x.iter().copied());
        let ym = DMatrix::from_row_iterator(
            ex.target.nrows(),
            N_ARTICULATORS,
            ex.target.iter().copied(),
        );
        xtx += xm.transpose() * &xm;
        xty += xm.transpose() * ym;
    }
    let beta = match xtx.clone().cholesky() {
        Some(ch) => ch.solve(&xty),
        None => xtx
            .svd(true, true)
            .solve(&xty, 1e-12)
            .map_err(|e| Error::Data(format!("least-squares fit failed: {e}")))?,
    };
    let beta = Array2::from_shape_fn((p, N_ARTICULATORS), |(i, j)| beta[(i, j)]);
    let mut total = Vec::with_capacity(test.len());
    for ex in &test {
        let pred = design(&ex.acoustics).dot(&beta);
        total.push(framewise_metrics(pred.view(), ex.target.view())?.mean_cc());
    }
    Ok(crate::evalkit::mean(&total))
}
