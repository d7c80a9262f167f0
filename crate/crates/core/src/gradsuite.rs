//! Finite-difference checks of every differentiable op, the transformer
//! layers and both full models, in double precision.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::models::{Model, ModelConfig, Net, Task};
use crate::nncore::{GradCheck, GradCheckReport, Graph, ParamStore, Tensor, Var, LAYER_NORM_EPS};
use crate::transformer::{
    apply_pe, relative_attention, scaled_dot_attention, sinusoidal_pe, AttentionConfig, FftLayer,
    FftLayerConfig, FftStack, MultiHeadAttention, PeMode,
};

pub const DEFAULT_SEEDS: usize = 20;

#[derive(Clone, Debug)]
pub struct SuiteOptions {
    pub seeds: usize,
    pub base_seed: u64,
    /// Case whose backward pass gets its sign flipped, to prove the suite
    /// catches a wrong gradient.
    pub inject_fault: Option<String>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seeds: DEFAULT_SEEDS,
            base_seed: 0,
            inject_fault: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CaseSummary {
    pub name: &'static str,
    pub seeds: usize,
    pub max_rel_error: f64,
    pub passed: bool,
    pub failures: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub cases: Vec<CaseSummary>,
    pub tol: f64,
    pub elapsed: Duration,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<24} {:>6} {:>12}  result\n",
            "case", "seeds", "max_rel_err"
        );
        for c in &self.cases {
            out.push_str(&format!(
                "{:<24} {:>6} {:>12.3e}  {}\n",
                c.name,
                c.seeds,
                c.max_rel_error,
                if c.passed { "ok" } else { "FAIL" }
            ));
            for f in &c.failures {
                out.push_str(&format!("    {f}\n"));
            }
        }
        out.push_str(&format!(
            "{} of {} cases passed at tolerance {:e} in {:.1}s\n",
            self.cases.iter().filter(|c| c.passed).count(),
            self.cases.len(),
            self.tol,
            self.elapsed.as_secs_f64()
        ));
        out
    }
}

struct Ctx {
    rng: ChaCha8Rng,
    check: GradCheck,
    fault: bool,
}

impl Ctx {
    fn randn(&mut self, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.sample(StandardNormal)).collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    fn dim(&mut self, lo: usize, hi: usize) -> usize {
        self.rng.random_range(lo..=hi)
    }

    fn mask(&mut self, n: usize) -> Vec<bool> {
        let mut m: Vec<bool> = (0..n).map(|_| self.rng.random_bool(0.7)).collect();
        let i = self.rng.random_range(0..n);
        m[i] = true;
        m
    }
}

/// Identity forward; the backward pass negates the incoming gradient.
fn flip_sign(g: &mut Graph<f64>, v: Var) -> Var {
    let value = g.value(v).clone();
    g.custom(v, value, Box::new(|_, _, dy| dy.map(|a| -a)))
}

fn finish(g: &mut Graph<f64>, v: Var, fault: bool) -> Var {
    if fault {
        flip_sign(g, v)
    } else {
        v
    }
}

type CaseFn = fn(&mut Ctx) -> GradCheckReport;

fn inputs_case(
    ctx: &Ctx,
    name: &str,
    inputs: &[Tensor<f64>],
    f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
) -> GradCheckReport {
    let fault = ctx.fault;
    ctx.check.inputs(name, inputs, |g, v| {
        let out = f(g, v)?;
        Ok(finish(g, out, fault))
    })
}

fn params_case(
    ctx: &Ctx,
    name: &str,
    store: &ParamStore<f64>,
    f: impl Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
) -> GradCheckReport {
    let fault = ctx.fault;
    ctx.check.params(name, store, |g, s| {
        let out = f(g, s)?;
        Ok(finish(g, out, fault))
    })
}

fn case_matmul(c: &mut Ctx) -> GradCheckReport {
    let (n, k, m) = (c.dim(1, 5), c.dim(1, 5), c.dim(1, 5));
    let (ta, tb) = (c.rng.random_bool(0.5), c.rng.random_bool(0.5));
    let a = c.randn(&if ta { [k, n] } else { [n, k] });
    let b = c.randn(&if tb { [m, k] } else { [k, m] });
    inputs_case(c, "matmul", &[a, b], |g, v| g.matmul_t(v[0], v[1], ta, tb))
}

fn case_linear(c: &mut Ctx) -> GradCheckReport {
    let (n, din, dout) = (c.dim(1, 5), c.dim(1, 5), c.dim(1, 5));
    let ins = [c.randn(&[n, din]), c.randn(&[din, dout]), c.randn(&[dout])];
    inputs_case(c, "linear", &ins, |g, v| g.linear(v[0], v[1], Some(v[2])))
}

fn case_add_scale(c: &mut Ctx) -> GradCheckReport {
    let shape = [c.dim(1, 4), c.dim(1, 4)];
    let s = c.rng.random_range(-2.0..2.0);
    let ins = [c.randn(&shape), c.randn(&shape)];
    inputs_case(c, "add_scale", &ins, |g, v| {
        let a = g.scale(v[0], s);
        g.add(a, v[1])
    })
}

fn case_relu(c: &mut Ctx) -> GradCheckReport {
    let shape = [c.dim(1, 4), c.dim(1, 4)];
    let mut x = c.randn(&shape);
    // keep inputs clear of the kink
    for v in x.data_mut() {
        *v = v.signum() * (0.01 + v.abs());
    }
    inputs_case(c, "relu", &[x], |g, v| Ok(g.relu(v[0])))
}

fn case_softmax(c: &mut Ctx) -> GradCheckReport {
    let (n, m) = (c.dim(1, 5), c.dim(1, 6));
    let x = c.randn(&[n, m]);
    let mask = c.mask(m);
    inputs_case(c, "softmax_rows", &[x], |g, v| {
        g.softmax_rows_masked(v[0], Some(&mask))
    })
}

fn case_layer_norm(c: &mut Ctx) -> GradCheckReport {
    let (n, d) = (c.dim(1, 4), c.dim(2, 6));
    let ins = [c.randn(&[n, d]), c.randn(&[d]), c.randn(&[d])];
    inputs_case(c, "layer_norm", &ins, |g, v| {
        g.layer_norm(v[0], v[1], v[2], LAYER_NORM_EPS)
    })
}

fn case_conv1d(c: &mut Ctx) -> GradCheckReport {
    let (n, cin, cout) = (c.dim(1, 6), c.dim(1, 3), c.dim(1, 3));
    let k = [1, 3, 5][c.rng.random_range(0..3)];
    let ins = [
        c.randn(&[n, cin]),
        c.randn(&[k, cin, cout]),
        c.randn(&[cout]),
    ];
    inputs_case(c, "conv1d", &ins, |g, v| g.conv1d(v[0], v[1], v[2]))
}

fn case_dropout(c: &mut Ctx) -> GradCheckReport {
    let shape = [c.dim(1, 5), c.dim(1, 5)];
    let x = c.randn(&shape);
    let keep = c.rng.random_range(0.3..1.0);
    c.check.dropout_seed = Some(c.rng.random());
    inputs_case(c, "dropout", &[x], |g, v| g.dropout(v[0], keep))
}

fn case_mask_rows(c: &mut Ctx) -> GradCheckReport {
    let (n, d) = (c.dim(1, 5), c.dim(1, 4));
    let x = c.randn(&[n, d]);
    let mask = c.mask(n);
    inputs_case(c, "mask_rows", &[x], |g, v| g.mask_rows(v[0], &mask))
}

fn case_embedding(c: &mut Ctx) -> GradCheckReport {
    let (vocab, d, n) = (c.dim(2, 6), c.dim(1, 4), c.dim(1, 8));
    let table = c.randn(&[vocab, d]);
    let ids: Vec<usize> = (0..n).map(|_| c.rng.random_range(0..vocab)).collect();
    inputs_case(c, "embedding", &[table], |g, v| g.embedding(v[0], &ids))
}

fn case_mse(c: &mut Ctx) -> GradCheckReport {
    let (n, d) = (c.dim(1, 5), c.dim(1, 4));
    let pred = c.randn(&[n, d]);
    let target = c.randn(&[n, d]);
    let mask = c.mask(n);
    inputs_case(c, "mse", &[pred], |g, v| g.mse(v[0], &target, &mask))
}

fn case_reductions(c: &mut Ctx) -> GradCheckReport {
    let (n, d) = (c.dim(1, 4), c.dim(1, 4));
    let x = c.randn(&[n, d]);
    let w: Vec<f64> = (0..n * d).map(|_| c.rng.sample(StandardNormal)).collect();
    inputs_case(c, "sum_weighted_sum", &[x], |g, v| {
        let a = g.weighted_sum(v[0], &w)?;
        let sq = g.matmul_t(v[0], v[0], true, false)?;
        let b = g.sum(sq)?;
        g.add(a, b)
    })
}

fn case_concat_slice(c: &mut Ctx) -> GradCheckReport {
    let (n, d1, d2) = (c.dim(1, 4), c.dim(1, 3), c.dim(1, 3));
    let ins = [c.randn(&[n, d1]), c.randn(&[n, d2])];
    let start = c.rng.random_range(0..d1 + d2);
    let width = c.rng.random_range(1..=d1 + d2 - start);
    inputs_case(c, "concat_slice_cols", &ins, |g, v| {
        let cat = g.concat_cols(&[v[0], v[1]])?;
        let s = g.slice_cols(cat, start, width)?;
        let sq = g.matmul_t(s, s, false, true)?;
        g.add(sq, sq)
    })
}

fn case_repeat_rows(c: &mut Ctx) -> GradCheckReport {
    let (n, d) = (c.dim(1, 5), c.dim(1, 3));
    let x = c.randn(&[n, d]);
    let mut counts: Vec<usize> = (0..n).map(|_| c.rng.random_range(0..4)).collect();
    counts[0] = counts[0].max(1);
    inputs_case(c, "repeat_rows", &[x], |g, v| g.repeat_rows(v[0], &counts))
}

fn case_relative_gather(c: &mut Ctx) -> GradCheckReport {
    let (n, k) = (c.dim(1, 7), c.dim(1, 3));
    let r = c.randn(&[n, 2 * k + 1]);
    inputs_case(c, "relative_gather", &[r], |g, v| {
        g.relative_gather(v[0], k)
    })
}

fn case_positional(c: &mut Ctx) -> GradCheckReport {
    let (n, d) = (c.dim(1, 6), 2 * c.dim(1, 3));
    let x = c.randn(&[n, d]);
    let mode = [PeMode::Additive, PeMode::Concatenative][c.rng.random_range(0..2)];
    let pe = sinusoidal_pe::<f64>(n, d).unwrap();
    inputs_case(c, "apply_pe", &[x], |g, v| {
        let y = apply_pe(g, v[0], mode, &pe)?;
        let sq = g.matmul_t(y, y, false, true)?;
        Ok(sq)
    })
}

fn case_attention(c: &mut Ctx) -> GradCheckReport {
    let (n, d) = (c.dim(1, 6), c.dim(1, 4));
    let ins = [c.randn(&[n, d]), c.randn(&[n, d]), c.randn(&[n, d])];
    let mask = c.mask(n);
    inputs_case(c, "scaled_dot_attention", &ins, |g, v| {
        Ok(scaled_dot_attention(g, v[0], v[1], v[2], Some(&mask))?.out)
    })
}

fn case_relative_attention(c: &mut Ctx) -> GradCheckReport {
    let (n, d, k) = (c.dim(1, 7), c.dim(1, 4), c.dim(1, 3));
    let ins = [
        c.randn(&[n, d]),
        c.randn(&[n, d]),
        c.randn(&[n, d]),
        c.randn(&[2 * k + 1, d]),
    ];
    let mask = c.mask(n);
    inputs_case(c, "relative_attention", &ins, |g, v| {
        Ok(relative_attention(g, v[0], v[1], v[2], v[3], k, Some(&mask))?.out)
    })
}

fn random_params(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    // zero-initialized tables and unit norms would hide some gradient paths
    for p in store.iter_mut() {
        for v in p.value.data_mut() {
            *v += 0.3 * rng.sample::<f64, _>(StandardNormal);
        }
    }
}

fn attention_config(c: &mut Ctx, n_heads: usize) -> AttentionConfig {
    let d = n_heads * c.dim(1, 3);
    let mode = PeMode::ALL[c.rng.random_range(0..4)];
    AttentionConfig::new(d, n_heads, mode, c.dim(1, 3)).unwrap()
}

fn case_mha(c: &mut Ctx) -> GradCheckReport {
    let heads = c.dim(1, 2);
    let cfg = attention_config(c, heads);
    let mut store = ParamStore::new();
    let mha = MultiHeadAttention::new(&mut store, "mha", cfg, &mut c.rng).unwrap();
    random_params(&mut store, &mut c.rng);
    let n = c.dim(1, 6);
    let x = c.randn(&[n, cfg.d_model]);
    let mask = c.mask(x.rows());
    params_case(c, "multi_head_attention", &store, |g, s| {
        let x = g.constant(x.clone());
        mha.forward(g, s, x, Some(&mask))
    })
}

fn fft_config(c: &mut Ctx) -> FftLayerConfig {
    let mut cfg = FftLayerConfig::new(attention_config(c, 2));
    cfg.conv_hidden = c.dim(2, 6);
    cfg.conv_kernel = [1, 3][c.rng.random_range(0..2)];
    cfg
}

fn case_fft_layer(c: &mut Ctx) -> GradCheckReport {
    let cfg = fft_config(c);
    let mut store = ParamStore::new();
    let layer = FftLayer::new(&mut store, "fft", cfg, &mut c.rng).unwrap();
    random_params(&mut store, &mut c.rng);
    let n = c.dim(2, 6);
    let x = c.randn(&[n, cfg.attention.d_model]);
    let mask = c.mask(x.rows());
    c.check.dropout_seed = Some(c.rng.random());
    params_case(c, "fft_layer", &store, |g, s| {
        let x = g.constant(x.clone());
        layer.forward(g, s, x, Some(&mask))
    })
}

fn case_fft_stack(c: &mut Ctx) -> GradCheckReport {
    let cfg = fft_config(c);
    let mut store = ParamStore::new();
    let stack = FftStack::new(&mut store, "stack", 2, cfg, &mut c.rng).unwrap();
    random_params(&mut store, &mut c.rng);
    let n = c.dim(1, 5);
    let x = c.randn(&[n, cfg.attention.d_model]);
    params_case(c, "fft_stack", &store, |g, s| {
        let x = g.constant(x.clone());
        stack.forward(g, s, x, None)
    })
}

fn small_model(c: &mut Ctx, task: Task) -> Model<f64> {
    let mut cfg = ModelConfig::new(task);
    cfg.d_model = 4;
    cfg.n_heads = 2;
    cfg.enc_layers = 1;
    cfg.dec_layers = 1;
    cfg.conv_hidden = Some(6);
    cfg.pe_mode = PeMode::ALL[c.rng.random_range(0..4)];
    cfg.pe_dim = Some(2);
    cfg.clip_k = 2;
    cfg.dur_channels = 4;
    cfg.vocab_size = 5;
    let mut m = Model::<f64>::new(cfg, c.rng.random()).unwrap();
    random_params(&mut m.params, &mut c.rng);
    m
}

fn case_aai_model(c: &mut Ctx) -> GradCheckReport {
    let model = small_model(c, Task::Aai);
    let n = c.dim(2, 6);
    let x = c.randn(&[n, crate::models::N_FEATURES]);
    let Net::Aai(net) = &model.net else {
        unreachable!()
    };
    c.check.max_coords = Some(12);
    params_case(c, "aai_model", &model.params, |g, s| {
        let x = g.constant(x.clone());
        net.forward(g, s, &model.config, x)
    })
}

fn case_pta_model(c: &mut Ctx) -> GradCheckReport {
    let model = small_model(c, Task::Pta);
    let m = c.dim(1, 4);
    let ids: Vec<usize> = (0..m).map(|_| c.rng.random_range(1..=5)).collect();
    let durs: Vec<usize> = (0..m).map(|_| c.rng.random_range(1..=3)).collect();
    let Net::Pta(net) = &model.net else {
        unreachable!()
    };
    c.check.max_coords = Some(12);
    params_case(c, "pta_model", &model.params, |g, s| {
        let out = net.forward_train(g, s, &model.config, &ids, &durs)?;
        // both heads feed the checked scalar
        let d = g.sum(out.durations)?;
        let t = g.sum(out.trajectory)?;
        let t2 = g.matmul_t(out.trajectory, out.trajectory, true, false)?;
        let t2 = g.sum(t2)?;
        let a = g.add(d, t)?;
        g.add(a, t2)
    })
}

const CASES: &[(&str, CaseFn)] = &[
    ("matmul", case_matmul),
    ("linear", case_linear),
    ("add_scale", case_add_scale),
    ("relu", case_relu),
    ("softmax_rows", case_softmax),
    ("layer_norm", case_layer_norm),
    ("conv1d", case_conv1d),
    ("dropout", case_dropout),
    ("mask_rows", case_mask_rows),
    ("embedding", case_embedding),
    ("mse", case_mse),
    ("sum_weighted_sum", case_reductions),
    ("concat_slice_cols", case_concat_slice),
    ("repeat_rows", case_repeat_rows),
    ("relative_gather", case_relative_gather),
    ("apply_pe", case_positional),
    ("scaled_dot_attention", case_attention),
    ("relative_attention", case_relative_attention),
    ("multi_head_attention", case_mha),
    ("fft_layer", case_fft_layer),
    ("fft_stack", case_fft_stack),
    ("aai_model", case_aai_model),
    ("pta_model", case_pta_model),
];

pub fn case_names() -> Vec<&'static str> {
    CASES.iter().map(|(n, _)| *n).collect()
}

/// Runs every case for `opts.seeds` seeds.
pub fn run_suite(opts: &SuiteOptions) -> Result<SuiteReport> {
    if let Some(f) = &opts.inject_fault {
        if !CASES.iter().any(|(n, _)| n == f) {
            return Err(crate::Error::config(format!(
                "unknown gradient-check case '{f}' (known: {})",
                case_names().join(", ")
            )));
        }
    }
    let start = Instant::now();
    let mut cases = Vec::new();
    for (ci, &(name, case)) in CASES.iter().enumerate() {
        let fault = opts.inject_fault.as_deref() == Some(name);
        let mut summary = CaseSummary {
            name,
            seeds: 0,
            max_rel_error: 0.0,
            passed: true,
            failures: Vec::new(),
        };
        for s in 0..opts.seeds {
            let seed = opts.base_seed.wrapping_add((ci as u64) << 32 | s as u64);
            let mut ctx = Ctx {
                rng: ChaCha8Rng::seed_from_u64(seed),
                check: GradCheck {
                    seed,
                    ..GradCheck::default()
                },
                fault,
            };
            let r = case(&mut ctx);
            summary.seeds += 1;
            summary.max_rel_error = summary.max_rel_error.max(r.max_rel_error);
            if !r.passed {
                summary.passed = false;
                summary.failures.push(describe(seed, &r));
            }
        }
        cases.push(summary);
    }
    Ok(SuiteReport {
        cases,
        tol: GradCheck::default().tol,
        elapsed: start.elapsed(),
    })
}

fn describe(seed: u64, r: &GradCheckReport) -> String {
    match &r.failure {
        Some(f) => format!("seed {seed:#x}: {f}"),
        None => format!(
            "seed {seed:#x}: relative error {:.3e} over {} entries",
            r.max_rel_error, r.checked
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fault_in_unknown_case_is_rejected() {
        let o = SuiteOptions {
            inject_fault: Some("nope".into()),
            ..SuiteOptions::default()
        };
        assert!(run_suite(&o).is_err());
    }
}
