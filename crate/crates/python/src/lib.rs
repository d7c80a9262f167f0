//! Python bindings: models, inference, metrics, DTW, filtering, the
//! synthetic corpus generator and the gradient suite.
//!
//! Matrices cross the boundary as lists of rows.

use std::path::PathBuf;

use ndarray::Array2;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use artic::datakit::{
    generate_synthetic, lowpass as lowpass_rs, SyntheticSpec, CUTOFF, TRAJECTORY_RATE,
};
use artic::evalkit;
use artic::gradsuite::{run_suite, SuiteOptions};
use artic::models::{
    round_durations as round_rs, AcousticFeatures, Model, ModelConfig, PhonemeSequence, Task,
    MAX_FRAMES,
};
use artic::nncore::{Graph, Tensor};
use artic::transformer::{sinusoidal_pe as pe_rs, PeMode};
use artic::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_array(rows: &[Vec<f64>]) -> PyResult<Array2<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), cols), flat)
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn tensor_rows(t: &Tensor<f64>) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(py_err)
}

/// An AAI or PTA transformer in single precision.
#[pyclass(name = "Model")]
struct PyModel {
    inner: Model<f32>,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (task, d_model=128, n_heads=2, enc_layers=2, dec_layers=2, pe_mode="relative", vocab_size=39, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        task: &str,
        d_model: usize,
        n_heads: usize,
        enc_layers: usize,
        dec_layers: usize,
        pe_mode: &str,
        vocab_size: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let mut c = ModelConfig::new(parse::<Task>(task)?);
        c.d_model = d_model;
        c.n_heads = n_heads;
        c.enc_layers = enc_layers;
        c.dec_layers = dec_layers;
        c.pe_mode = parse::<PeMode>(pe_mode)?;
        c.vocab_size = vocab_size;
        c.validate().map_err(py_err)?;
        Ok(Self {
            inner: Model::new(c, seed).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: Model::load(&path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(py_err)
    }

    #[getter]
    fn task(&self) -> String {
        self.inner.task().to_string()
    }

    #[getter]
    fn pe_mode(&self) -> String {
        self.inner.config.pe_mode.to_string()
    }

    #[getter]
    fn n_params(&self) -> usize {
        self.inner.params.numel()
    }

    /// Acoustic frames `[n, 13]` to articulatory frames `[n, 12]`.
    fn infer_aai(&self, frames: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = AcousticFeatures::new(to_array(&frames)?).map_err(py_err)?;
        let y = self.inner.infer_aai(&x).map_err(py_err)?;
        Ok(to_rows(y.frames()))
    }

    /// Phoneme ids to `(trajectory, durations)`.
    fn infer_pta(&self, ids: Vec<usize>) -> PyResult<(Vec<Vec<f64>>, Vec<usize>)> {
        let p = PhonemeSequence::new(ids, self.inner.config.vocab_size).map_err(py_err)?;
        let (y, d) = self.inner.infer_pta(&p).map_err(py_err)?;
        Ok((to_rows(y.frames()), d.as_slice().to_vec()))
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(task={}, d_model={}, pe_mode={}, params={})",
            self.inner.task(),
            self.inner.config.d_model,
            self.inner.config.pe_mode,
            self.inner.params.numel()
        )
    }
}

/// Returns `(total_cost, path)`.
#[pyfunction]
fn dtw(pred: Vec<Vec<f64>>, gt: Vec<Vec<f64>>) -> PyResult<(f64, Vec<(usize, usize)>)> {
    let r = evalkit::dtw(to_array(&pred)?.view(), to_array(&gt)?.view()).map_err(py_err)?;
    Ok((r.total_cost, r.path))
}

#[pyfunction]
fn cc(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    evalkit::cc(&a, &b).map_err(py_err)
}

#[pyfunction]
fn rmse(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    evalkit::rmse(&a, &b).map_err(py_err)
}

/// Per-channel `(cc, rmse)` of one sentence; PTA predictions are DTW-aligned first.
#[pyfunction]
fn evaluate_sentence(
    task: &str,
    pred: Vec<Vec<f64>>,
    gt: Vec<Vec<f64>>,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let r =
        evalkit::evaluate_sentence(parse(task)?, to_array(&pred)?.view(), to_array(&gt)?.view())
            .map_err(py_err)?;
    Ok((r.cc, r.rmse))
}

/// Returns `(t, df, p)`.
#[pyfunction]
fn welch_t_test(a: Vec<f64>, b: Vec<f64>) -> PyResult<(f64, f64, f64)> {
    let r = evalkit::welch_t_test(&a, &b).map_err(py_err)?;
    Ok((r.t, r.df, r.p))
}

#[pyfunction]
#[pyo3(signature = (x, fs=TRAJECTORY_RATE, fc=CUTOFF))]
fn lowpass(x: Vec<f64>, fs: f64, fc: f64) -> PyResult<Vec<f64>> {
    lowpass_rs(&x, fs, fc).map_err(py_err)
}

#[pyfunction]
fn sinusoidal_pe(n: usize, d: usize) -> PyResult<Vec<Vec<f64>>> {
    Ok(tensor_rows(&pe_rs::<f64>(n, d).map_err(py_err)?))
}

#[pyfunction]
fn length_regulator(h: Vec<Vec<f64>>, durations: Vec<usize>) -> PyResult<Vec<Vec<f64>>> {
    let rows = to_array(&h)?;
    let t = Tensor::new(
        vec![rows.nrows(), rows.ncols()],
        rows.iter().copied().collect(),
    )
    .map_err(py_err)?;
    let mut g = Graph::<f64>::eval();
    let hv = g.constant(t);
    let e = artic::models::length_regulator(&mut g, hv, &durations).map_err(py_err)?;
    Ok(tensor_rows(g.value(e)))
}

#[pyfunction]
#[pyo3(signature = (raw, max_total=MAX_FRAMES))]
fn round_durations(raw: Vec<f64>, max_total: usize) -> PyResult<Vec<usize>> {
    round_rs(&raw, max_total).map_err(py_err)
}

/// Writes a synthetic corpus and returns the manifest path.
#[pyfunction]
#[pyo3(signature = (out_dir, seed=0, n_subjects=4, sentences_per_subject=200))]
fn synthesize(
    out_dir: PathBuf,
    seed: u64,
    n_subjects: usize,
    sentences_per_subject: usize,
) -> PyResult<String> {
    let spec = SyntheticSpec {
        seed,
        n_subjects,
        sentences_per_subject,
        ..SyntheticSpec::default()
    };
    generate_synthetic(&spec, &out_dir).map_err(py_err)?;
    Ok(out_dir
        .join(artic::datakit::MANIFEST_NAME)
        .display()
        .to_string())
}

/// Runs the gradient suite; returns `(passed, {case: max_rel_error})`.
#[pyfunction]
#[pyo3(signature = (seeds=20, seed=0))]
fn gradcheck(seeds: usize, seed: u64) -> PyResult<(bool, Vec<(String, f64)>)> {
    let r = run_suite(&SuiteOptions {
        seeds,
        base_seed: seed,
        inject_fault: None,
    })
    .map_err(py_err)?;
    let cases = r
        .cases
        .iter()
        .map(|c| (c.name.to_string(), c.max_rel_error))
        .collect();
    Ok((r.passed(), cases))
}

#[pymodule]
pub fn pyartic(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(dtw, m)?)?;
    m.add_function(wrap_pyfunction!(cc, m)?)?;
    m.add_function(wrap_pyfunction!(rmse, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_sentence, m)?)?;
    m.add_function(wrap_pyfunction!(welch_t_test, m)?)?;
    m.add_function(wrap_pyfunction!(lowpass, m)?)?;
    m.add_function(wrap_pyfunction!(sinusoidal_pe, m)?)?;
    m.add_function(wrap_pyfunction!(length_regulator, m)?)?;
    m.add_function(wrap_pyfunction!(round_durations, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add("MAX_FRAMES", MAX_FRAMES)?;
    Ok(())
}
