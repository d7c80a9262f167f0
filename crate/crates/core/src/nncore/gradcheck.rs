//! Finite-difference verification of analytic gradients.
//!
//! Only `Graph<f64>` is accepted: central differences at step 1e-5 are
//! meaningless in single precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::Result;

pub const FD_STEP: f64 = 1e-5;
pub const DEFAULT_TOL: f64 = 1e-4;

/// Denominator floor of the relative error, so that entries whose true
/// gradient is essentially zero are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-3;

/// Outcome of one gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub tol: f64,
    pub passed: bool,
    /// Set when the check could not be carried out (non-finite values, errors).
    pub failure: Option<String>,
}

impl GradCheckReport {
    fn failed(name: &str, tol: f64, why: String) -> Self {
        Self {
            name: name.to_string(),
            max_rel_error: f64::INFINITY,
            checked: 0,
            tol,
            passed: false,
            failure: Some(why),
        }
    }
}

/// `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Settings for a gradient check.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub tol: f64,
    pub step: f64,
    /// When set, graphs are built in train mode with this dropout seed, so
    /// every evaluation draws the same masks.
    pub dropout_seed: Option<u64>,
    /// Upper bound on coordinates checked per tensor (random subset).
    pub max_coords: Option<usize>,
    /// Seed for the output projection and the coordinate subset.
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            step: FD_STEP,
            dropout_seed: None,
            max_coords: None,
            seed: 0,
        }
    }
}

struct Eval<'a> {
    cfg: &'a GradCheck,
    weights: Option<Vec<f64>>,
}

impl Eval<'_> {
    fn graph(&self) -> Graph<f64> {
        match self.cfg.dropout_seed {
            Some(s) => Graph::train(s),
            None => Graph::eval(),
        }
    }

    /// Reduces a non-scalar output to a scalar with fixed random weights.
    fn reduce(&mut self, g: &mut Graph<f64>, out: Var) -> Result<Var> {
        let n = g.value(out).numel();
        if n == 1 && self.weights.is_none() {
            return Ok(out);
        }
        let seed = self.cfg.seed;
        let w = self.weights.get_or_insert_with(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            (0..n).map(|_| rng.sample(StandardNormal)).collect()
        });
        g.weighted_sum(out, w)
    }
}

fn coords(n: usize, max: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    match max {
        Some(m) if m < n => rand::seq::index::sample(rng, n, m).into_vec(),
        _ => (0..n).collect(),
    }
}

impl GradCheck {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }

    fn finish(&self, name: &str, analytic: &[f64], numeric: &[f64]) -> GradCheckReport {
        if analytic.iter().chain(numeric).any(|v| !v.is_finite()) {
            return GradCheckReport::failed(name, self.tol, "non-finite gradient".into());
        }
        let max_rel_error = analytic
            .iter()
            .zip(numeric)
            .map(|(&a, &n)| relative_error(a, n))
            .fold(0.0, f64::max);
        GradCheckReport {
            name: name.to_string(),
            max_rel_error,
            checked: analytic.len(),
            tol: self.tol,
            passed: max_rel_error < self.tol,
            failure: None,
        }
    }

    /// Checks the gradient of `f` with respect to every input tensor.
    pub fn inputs<F>(&self, name: &str, inputs: &[Tensor<f64>], f: F) -> GradCheckReport
    where
        F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    {
        match self.try_inputs(inputs, f) {
            Ok((a, n)) => self.finish(name, &a, &n),
            Err(e) => GradCheckReport::failed(name, self.tol, e.to_string()),
        }
    }

    fn try_inputs<F>(&self, inputs: &[Tensor<f64>], f: F) -> Result<(Vec<f64>, Vec<f64>)>
    where
        F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    {
        let mut ev = Eval {
            cfg: self,
            weights: None,
        };
        let mut g = ev.graph();
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        let root = ev.reduce(&mut g, out)?;
        g.backward(root)?;

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        let mut work: Vec<Tensor<f64>> = inputs.to_vec();
        for (k, &v) in vars.iter().enumerate() {
            let grad = g
                .grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
            for c in coords(inputs[k].numel(), self.max_coords, &mut rng) {
                let orig = work[k].data()[c];
                let mut eval_at = |x: f64, work: &mut Vec<Tensor<f64>>| -> Result<f64> {
                    work[k].data_mut()[c] = x;
                    let mut g = ev.graph();
                    let vars: Vec<Var> = work.iter().map(|t| g.input(t.clone())).collect();
                    let out = f(&mut g, &vars)?;
                    let root = ev.reduce(&mut g, out)?;
                    Ok(g.value(root).data()[0])
                };
                let plus = eval_at(orig + self.step, &mut work)?;
                let minus = eval_at(orig - self.step, &mut work)?;
                work[k].data_mut()[c] = orig;
                analytic.push(grad.data()[c]);
                numeric.push((plus - minus) / (2.0 * self.step));
            }
        }
        Ok((analytic, numeric))
    }

    /// Checks the gradient of `f` with respect to every parameter in `store`.
    pub fn params<F>(&self, name: &str, store: &ParamStore<f64>, f: F) -> GradCheckReport
    where
        F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
    {
        match self.try_params(store, f) {
            Ok((a, n)) => self.finish(name, &a, &n),
            Err(e) => GradCheckReport::failed(name, self.tol, e.to_string()),
        }
    }

    fn try_params<F>(&self, store: &ParamStore<f64>, f: F) -> Result<(Vec<f64>, Vec<f64>)>
    where
        F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
    {
        let mut ev = Eval {
            cfg: self,
            weights: None,
        };
        let mut work = store.clone();
        work.zero_grad();
        let mut g = ev.graph();
        let out = f(&mut g, &work)?;
        let root = ev.reduce(&mut g, out)?;
        g.backward(root)?;
        g.accumulate_param_grads(&mut work)?;
        let grads: Vec<Tensor<f64>> = work.iter().map(|p| p.grad.clone()).collect();

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        let ids: Vec<_> = (0..work.len()).collect();
        for pi in ids {
            let numel = grads[pi].numel();
            for c in coords(numel, self.max_coords, &mut rng) {
                let id = super::params::ParamId(pi);
                let orig = work.get(id).value.data()[c];
                let mut eval_at = |x: f64, work: &mut ParamStore<f64>| -> Result<f64> {
                    work.get_mut(id).value.data_mut()[c] = x;
                    let mut g = ev.graph();
                    let out = f(&mut g, work)?;
                    let root = ev.reduce(&mut g, out)?;
                    Ok(g.value(root).data()[0])
                };
                let plus = eval_at(orig + self.step, &mut work)?;
                let minus = eval_at(orig - self.step, &mut work)?;
                work.get_mut(id).value.data_mut()[c] = orig;
                analytic.push(grads[pi].data()[c]);
                numeric.push((plus - minus) / (2.0 * self.step));
            }
        }
        Ok((analytic, numeric))
    }
}
