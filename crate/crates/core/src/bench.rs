//! Forward-pass timing of one FFT layer against sequence length.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::evalkit::{mean, sample_std};
use crate::nncore::{Graph, ParamStore, Tensor};
use crate::transformer::{AttentionConfig, FftLayer, FftLayerConfig, PeMode, DEFAULT_CLIP_K};

pub const MIN_WARMUP: usize = 3;
pub const MIN_REPS: usize = 10;

pub const BENCH_NOTE: &str = "attention-only scaling benchmark: one FFT layer forward pass, \
single thread; no recurrent baseline is timed";

#[derive(Clone, Debug)]
pub struct BenchOptions {
    pub lengths: Vec<usize>,
    pub widths: Vec<usize>,
    pub n_heads: usize,
    pub pe_mode: PeMode,
    pub warmup: usize,
    pub reps: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            lengths: vec![128, 256, 512, 1024, 2048],
            widths: vec![32, 64],
            n_heads: 2,
            pe_mode: PeMode::Relative,
            warmup: MIN_WARMUP,
            reps: MIN_REPS,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchRow {
    pub n: usize,
    pub d: usize,
    pub mean_s: f64,
    pub std_s: f64,
}

#[derive(Clone, Debug)]
pub struct WidthFit {
    pub d: usize,
    /// Least-squares slope of log(time) against log(n).
    pub slope: f64,
    /// t(n_max) / t(n_max / 2) when both lengths were timed.
    pub top_ratio: Option<f64>,
}

impl WidthFit {
    pub fn superlinear(&self) -> bool {
        self.top_ratio.is_some_and(|r| r >= 2.0)
    }
}

#[derive(Clone, Debug)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub fits: Vec<WidthFit>,
    pub warmup: usize,
    pub reps: usize,
}

pub const BENCH_HEADER: &str = "n,d,mean_s,std_s";

impl BenchReport {
    pub fn fit(&self, d: usize) -> Option<&WidthFit> {
        self.fits.iter().find(|f| f.d == d)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# {BENCH_NOTE}").unwrap();
        writeln!(out, "# warmup={} reps={}", self.warmup, self.reps).unwrap();
        for f in &self.fits {
            let ratio = f.top_ratio.map_or("na".to_string(), |r| format!("{r:.3}"));
            writeln!(
                out,
                "# d={} slope={:.3} top_ratio={ratio} superlinear={}",
                f.d,
                f.slope,
                f.superlinear()
            )
            .unwrap();
        }
        writeln!(out, "{BENCH_HEADER}").unwrap();
        for r in &self.rows {
            writeln!(out, "{},{},{:e},{:e}", r.n, r.d, r.mean_s, r.std_s).unwrap();
        }
        out
    }
}

fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let (mx, my) = (mean(&xs), mean(&ys));
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        f64::NAN
    } else {
        sxy / sxx
    }
}

fn time_layer(opts: &BenchOptions, n: usize, d: usize, rng: &mut ChaCha8Rng) -> Result<BenchRow> {
    let attn = AttentionConfig::new(d, opts.n_heads, opts.pe_mode, DEFAULT_CLIP_K)?;
    let mut store = ParamStore::<f32>::new();
    let layer = FftLayer::new(&mut store, "bench", FftLayerConfig::new(attn), rng)?;
    let x = Tensor::new(
        vec![n, d],
        (0..n * d).map(|_| rng.sample(StandardNormal)).collect(),
    )?;
    let run = || -> Result<f64> {
        let start = Instant::now();
        let mut g = Graph::eval();
        let xv = g.constant(x.clone());
        let y = layer.forward(&mut g, &store, xv, None)?;
        std::hint::black_box(g.value(y).data()[0]);
        Ok(start.elapsed().as_secs_f64())
    };
    for _ in 0..opts.warmup {
        run()?;
    }
    let times = (0..opts.reps).map(|_| run()).collect::<Result<Vec<_>>>()?;
    Ok(BenchRow {
        n,
        d,
        mean_s: mean(&times),
        std_s: sample_std(&times),
    })
}

/// Times every `(n, d)` combination; only warm runs are recorded.
pub fn run_bench(opts: &BenchOptions) -> Result<BenchReport> {
    if opts.warmup < MIN_WARMUP || opts.reps < MIN_REPS {
        return Err(Error::config(format!(
            "bench needs at least {MIN_WARMUP} warmup runs and {MIN_REPS} repetitions"
        )));
    }
    if opts.lengths.is_empty() || opts.widths.is_empty() || opts.lengths.contains(&0) {
        return Err(Error::config(
            "bench needs positive sequence lengths and at least one width",
        ));
    }
    let mut lengths = opts.lengths.clone();
    lengths.sort_unstable();
    lengths.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    for &d in &opts.widths {
        let mut these = Vec::new();
        for &n in &lengths {
            let r = time_layer(opts, n, d, &mut rng)?;
            log::info!("n={n} d={d}: {:.3e}s", r.mean_s);
            these.push(r);
        }
        let points: Vec<(f64, f64)> = these.iter().map(|r| (r.n as f64, r.mean_s)).collect();
        let top = these.last().unwrap();
        let top_ratio = these
            .iter()
            .find(|r| 2 * r.n == top.n)
            .map(|half| top.mean_s / half.mean_s);
        fits.push(WidthFit {
            d,
            slope: loglog_slope(&points),
            top_ratio,
        });
        rows.extend(these);
    }
    Ok(BenchReport {
        rows,
        fits,
        warmup: opts.warmup,
        reps: opts.reps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = [8.0, 16.0, 32.0, 64.0]
            .iter()
            .map(|&n| (n, 3.0 * n * n))
            .collect();
        assert!((loglog_slope(&pts) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_too_few_reps() {
        let o = BenchOptions {
            reps: 2,
            ..BenchOptions::default()
        };
        assert!(run_bench(&o).is_err());
    }
}
