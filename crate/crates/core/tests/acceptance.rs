//! Acceptance suite: one PASS/FAIL line per criterion, 2 through 12.
//! Criterion 12 is informative and prints WARN instead of failing.

use std::path::Path;
use std::time::{Duration, Instant};

use artic::bench::{run_bench, BenchOptions};
use artic::cli::{cmd_train, Common};
use artic::datakit::{generate_synthetic, load_examples, CorpusManifest, Split, SyntheticSpec};
use artic::evalkit::{dtw, euclidean};
use artic::gradsuite::{run_suite, SuiteOptions};
use artic::models::{length_regulator, Model, ModelConfig, Task};
use artic::nncore::graph::relative_index;
use artic::nncore::{Graph, Tensor};
use artic::trainkit::{
    run_experiment, train_epoch, Adam, ExperimentPlan, ExperimentResult, Setup, TrainConfig,
};
use artic::transformer::{relative_attention, scaled_dot_attention, sinusoidal_pe, PeMode};
use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

// Fixture thresholds. The PTA ones were fixed after a pilot on seed 0
// (CC 0.911, duration error 12.8% of the mean duration).
const GRAD_BUDGET: Duration = Duration::from_secs(120);
const DTW_BUDGET: Duration = Duration::from_secs(10);
const REGULATOR_BUDGET: Duration = Duration::from_secs(5);
const AAI_MARGIN: f64 = 0.05;
const AAI_BUDGET: Duration = Duration::from_secs(15 * 60);
const PTA_MIN_CC: f64 = 0.7;
const PTA_MAX_REL_MAE: f64 = 0.20;
const PTA_BUDGET: Duration = Duration::from_secs(20 * 60);
const FINE_TUNE_SLACK: f64 = 0.02;
const OVERFIT_LOSS: f64 = 1e-2;
const OVERFIT_EPOCHS: usize = 500;
const BENCH_RATIO: f64 = 2.0;

struct Outcome {
    criterion: u32,
    pass: bool,
    gating: bool,
    detail: String,
}

fn outcome(criterion: u32, pass: bool, detail: String) -> Outcome {
    Outcome {
        criterion,
        pass,
        gating: true,
        detail,
    }
}

fn desk_model(task: Task, vocab: usize) -> ModelConfig {
    let mut c = ModelConfig::new(task);
    c.d_model = 32;
    c.n_heads = 2;
    c.dur_channels = 32;
    c.vocab_size = vocab;
    c
}

fn desk_train(max_epochs: usize) -> TrainConfig {
    TrainConfig {
        lr: 1e-3,
        max_epochs,
        ..TrainConfig::default()
    }
}

fn corpus(dir: &Path, subjects: usize, sentences: usize) -> CorpusManifest {
    let spec = SyntheticSpec {
        n_subjects: subjects,
        sentences_per_subject: sentences,
        ..SyntheticSpec::default()
    };
    generate_synthetic(&spec, dir).expect("corpus generation")
}

fn experiment(
    setup: Setup,
    task: Task,
    m: &CorpusManifest,
    out: &Path,
    epochs: usize,
) -> ExperimentResult {
    let plan = ExperimentPlan {
        setup,
        subjects: Vec::new(),
        source: None,
    };
    let vocab = m.vocab_size().unwrap();
    run_experiment(&plan, &desk_train(epochs), &desk_model(task, vocab), m, out)
        .expect("experiment")
}

fn gradient_suite() -> Outcome {
    let t = Instant::now();
    let r = run_suite(&SuiteOptions::default()).expect("suite");
    let elapsed = t.elapsed();
    let worst = r
        .cases
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .unwrap();
    let failed: Vec<_> = r
        .cases
        .iter()
        .filter(|c| !c.passed)
        .map(|c| c.name)
        .collect();
    outcome(
        2,
        r.passed() && elapsed < GRAD_BUDGET && r.cases.iter().all(|c| c.seeds >= 20),
        format!(
            "gradient suite, {} cases x {} seeds, worst {} rel err {:.3e} (tol {:e}), failed {:?}, {:.1}s",
            r.cases.len(),
            r.cases[0].seeds,
            worst.name,
            worst.max_rel_error,
            r.tol,
            failed,
            elapsed.as_secs_f64()
        ),
    )
}

fn brute_force(p: ArrayView2<f64>, g: ArrayView2<f64>, i: usize, j: usize, acc: f64) -> f64 {
    if (i, j) == (p.nrows() - 1, g.nrows() - 1) {
        return acc;
    }
    let mut best = f64::INFINITY;
    for (a, b) in [(i + 1, j + 1), (i + 1, j), (i, j + 1)] {
        if a < p.nrows() && b < g.nrows() {
            let c = euclidean(p.row(a), g.row(b));
            best = best.min(brute_force(p, g, a, b, acc + c));
        }
    }
    best
}

fn dtw_oracle() -> Outcome {
    let t = Instant::now();
    let mut mismatches = 0;
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let (n, m) = (rng.random_range(1..=5), rng.random_range(1..=5));
        let p = Array2::from_shape_fn((n, 3), |_| rng.sample(StandardNormal));
        let g = Array2::from_shape_fn((m, 3), |_| rng.sample(StandardNormal));
        let start = euclidean(p.row(0), g.row(0));
        if dtw(p.view(), g.view()).unwrap().total_cost
            != brute_force(p.view(), g.view(), 0, 0, start)
        {
            mismatches += 1;
        }
    }
    let elapsed = t.elapsed();
    outcome(
        3,
        mismatches == 0 && elapsed < DTW_BUDGET,
        format!(
            "DTW equals exhaustive search on 200 pairs ({mismatches} mismatches, {:.3}s)",
            elapsed.as_secs_f64()
        ),
    )
}

fn regulate(h: &Tensor<f64>, d: &[usize]) -> Tensor<f64> {
    let mut g = Graph::<f64>::eval();
    let hv = g.constant(h.clone());
    let e = length_regulator(&mut g, hv, d).unwrap();
    g.value(e).clone()
}

fn regulator() -> Outcome {
    let t = Instant::now();
    let h = Tensor::from_rows(&[vec![1.0], vec![2.0], vec![3.0], vec![4.0]]).unwrap();
    let mut ok = regulate(&h, &[2, 2, 3, 1]).data() == [1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 3.0, 4.0];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..1000 {
        let m = rng.random_range(1..=10);
        let w = rng.random_range(1..=3);
        let h = Tensor::new(vec![m, w], (0..m * w).map(|_| rng.random()).collect()).unwrap();
        let mut d: Vec<usize> = (0..m).map(|_| rng.random_range(0..=5)).collect();
        if d.iter().all(|&v| v == 0) {
            d[0] = 1;
        }
        let e = regulate(&h, &d);
        let want: Vec<f64> = d
            .iter()
            .enumerate()
            .flat_map(|(i, &c)| std::iter::repeat_n(h.row(i).to_vec(), c).flatten())
            .collect();
        ok &= e.rows() == d.iter().sum::<usize>() && e.data() == want.as_slice();
    }
    let elapsed = t.elapsed();
    outcome(
        4,
        ok && elapsed < REGULATOR_BUDGET,
        format!(
            "length regulator on the worked example and 1000 random cases ({:.3}s)",
            elapsed.as_secs_f64()
        ),
    )
}

fn encodings() -> Outcome {
    let d = 16;
    let pe0 = sinusoidal_pe::<f64>(1, d).unwrap();
    let first_row = pe0
        .row(0)
        .iter()
        .enumerate()
        .all(|(i, &v)| v == if i < d / 2 { 0.0 } else { 1.0 });
    let pe = sinusoidal_pe::<f32>(400, 64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (pos, h) = (rng.random_range(0..400), rng.random_range(0..32));
        let w = 1.0 / 10000f64.powf(2.0 * h as f64 / 64.0);
        worst = worst
            .max((pe.get2(pos, h) as f64 - (pos as f64 * w).sin()).abs())
            .max((pe.get2(pos, 32 + h) as f64 - (pos as f64 * w).cos()).abs());
    }
    let mut prefix = true;
    for _ in 0..50 {
        let n1 = rng.random_range(1..100);
        let n2 = n1 + rng.random_range(1..100);
        let (a, b) = (
            sinusoidal_pe::<f64>(n1, d).unwrap(),
            sinusoidal_pe::<f64>(n2, d).unwrap(),
        );
        prefix &= a.data() == &b.data()[..n1 * d];
    }
    outcome(
        5,
        first_row && worst < 1e-6 && prefix,
        format!(
            "PE(0) exact: {first_row}, closed-form max err {worst:.2e}, prefix extension: {prefix}"
        ),
    )
}

fn relative_attention_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut bitwise = 0;
    for _ in 0..50 {
        let (n, d, k) = (
            rng.random_range(1..=16),
            rng.random_range(1..=8),
            rng.random_range(1..=10),
        );
        let mut t = |r: usize, c: usize| {
            Tensor::<f32>::new(
                vec![r, c],
                (0..r * c).map(|_| rng.sample(StandardNormal)).collect(),
            )
            .unwrap()
        };
        let (q, kk, v) = (t(n, d), t(n, d), t(n, d));
        let mut g = Graph::<f32>::eval();
        let (qv, kv, vv) = (g.constant(q), g.constant(kk), g.constant(v));
        let zero = g.constant(Tensor::zeros(&[2 * k + 1, d]));
        let rel = relative_attention(&mut g, qv, kv, vv, zero, k, None).unwrap();
        let abs = scaled_dot_attention(&mut g, qv, kv, vv, None).unwrap();
        let bits = |x: &Tensor<f32>| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        if bits(g.value(rel.out)) == bits(g.value(abs.out)) {
            bitwise += 1;
        }
    }
    let n = 31;
    let r = Tensor::new(vec![n, 21], (0..n * 21).map(|v| v as f64).collect()).unwrap();
    let mut g = Graph::<f64>::eval();
    let rv = g.constant(r);
    let gathered = g.relative_gather(rv, 10).unwrap();
    let mut offsets = 0;
    for off in -15isize..=15 {
        let (i, j) = if off >= 0 {
            (0, off as usize)
        } else {
            ((-off) as usize, 0)
        };
        let col = off.clamp(-10, 10) + 10;
        if relative_index(i, j, 10) as isize == col
            && g.value(gathered).get2(i, j) == (i * 21) as f64 + col as f64
        {
            offsets += 1;
        }
    }
    outcome(
        6,
        bitwise == 50 && offsets == 31,
        format!("zero table bitwise equal in {bitwise}/50 cases, clipped offsets correct for {offsets}/31"),
    )
}

fn ols(m: &CorpusManifest, subject: &str) -> f64 {
    m.meta[&format!("ols_cc.{subject}")].parse().unwrap()
}

fn mean_cc(r: &ExperimentResult) -> f64 {
    r.subjects
        .iter()
        .map(|s| s.evaluation.summary.mean_cc.0)
        .sum::<f64>()
        / r.subjects.len() as f64
}

fn synthetic_aai(m: &CorpusManifest, out: &Path) -> Outcome {
    let t = Instant::now();
    let r = experiment(Setup::E1, Task::Aai, m, out, 10);
    let elapsed = t.elapsed();
    let (cc, base) = (mean_cc(&r), ols(m, "S01"));
    outcome(
        7,
        cc >= base - AAI_MARGIN && elapsed < AAI_BUDGET,
        format!(
            "synthetic AAI E1: test CC {cc:.4} vs OLS {base:.4} - {AAI_MARGIN} ({:.0}s)",
            elapsed.as_secs_f64()
        ),
    )
}

fn synthetic_pta(m: &CorpusManifest, out: &Path) -> Outcome {
    let t = Instant::now();
    let r = experiment(Setup::E1, Task::Pta, m, out, 15);
    let elapsed = t.elapsed();
    let cc = mean_cc(&r);
    let d = r.subjects[0].evaluation.durations.as_ref().unwrap();
    outcome(
        8,
        cc >= PTA_MIN_CC && d.relative_mae() <= PTA_MAX_REL_MAE && elapsed < PTA_BUDGET,
        format!(
            "synthetic PTA E1: post-DTW CC {cc:.4} (>= {PTA_MIN_CC}), duration MAE {:.3} = {:.1}% of mean {:.2} (<= {:.0}%) ({:.0}s)",
            d.mae,
            100.0 * d.relative_mae(),
            d.mean_gt,
            100.0 * PTA_MAX_REL_MAE,
            elapsed.as_secs_f64()
        ),
    )
}

fn trends(dir: &Path) -> Outcome {
    let m = corpus(&dir.join("corpus4"), 4, 60);
    let mut ccs = Vec::new();
    let mut worst_drop = f64::NEG_INFINITY;
    for task in [Task::Aai, Task::Pta] {
        let out = dir.join(format!("trend_{task}"));
        let e2 = experiment(Setup::E2, task, &m, &out, 10);
        let e3 = experiment(Setup::E3, task, &m, &out, 10);
        for (a, b) in e2.subjects.iter().zip(&e3.subjects) {
            worst_drop =
                worst_drop.max(a.evaluation.summary.mean_cc.0 - b.evaluation.summary.mean_cc.0);
        }
        ccs.push((mean_cc(&e2), mean_cc(&e3)));
    }
    let (aai, pta) = (ccs[0], ccs[1]);
    let a = aai.0 > pta.0 && aai.1 > pta.1;
    let b = worst_drop <= FINE_TUNE_SLACK;
    outcome(
        9,
        a && b,
        format!(
            "trends: (a) AAI > PTA: E2 {:.4} vs {:.4}, E3 {:.4} vs {:.4}; (b) largest E2 - E3 per-subject drop {worst_drop:.4} (<= {FINE_TUNE_SLACK})",
            aai.0, pta.0, aai.1, pta.1
        ),
    )
}

fn overfit(m: &CorpusManifest) -> Outcome {
    let subset: Vec<_> = load_examples(m, Some("S01"), Split::Train)
        .unwrap()
        .into_iter()
        .take(2)
        .collect();
    let cfg = TrainConfig {
        batch_size: 2,
        ..desk_train(OVERFIT_EPOCHS)
    };
    let mut parts = Vec::new();
    let mut ok = true;
    for task in [Task::Aai, Task::Pta] {
        let mut mc = desk_model(task, m.vocab_size().unwrap());
        mc.keep_prob = 1.0;
        let mut model = Model::<f32>::new(mc, 0).unwrap();
        let mut adam = Adam::new(&model.params);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut reached = None;
        let mut loss = f64::INFINITY;
        for epoch in 1..=OVERFIT_EPOCHS {
            loss = train_epoch(&mut model, &mut adam, &subset, &cfg, cfg.lr, &mut rng).unwrap();
            if loss < OVERFIT_LOSS {
                reached = Some(epoch);
                break;
            }
        }
        ok &= reached.is_some();
        parts.push(match reached {
            Some(e) => format!("{task} below {OVERFIT_LOSS:e} at epoch {e}"),
            None => format!("{task} stuck at {loss:.3e}"),
        });
    }
    outcome(
        10,
        ok,
        format!("overfit probe on 2 sentences: {}", parts.join(", ")),
    )
}

fn determinism(dir: &Path) -> Outcome {
    corpus(&dir.join("corpus_small"), 1, 12);
    let cfg = dir.join("tiny.cfg");
    std::fs::write(&cfg, "d_model=8\nn_heads=2\nenc_layers=1\ndec_layers=1\ndur_channels=8\nmax_epochs=3\nlr=0.001\n").unwrap();
    let mut same = true;
    for task in [Task::Aai, Task::Pta] {
        let mut csvs = Vec::new();
        for run in 0..2 {
            let out = dir.join(format!("det_{task}_{run}"));
            let common = Common {
                config: Some(cfg.clone()),
                manifest: Some(dir.join("corpus_small").join("manifest.tsv")),
                seed: 7,
                out: Some(out.clone()),
            };
            cmd_train(
                &common,
                Some(task),
                Setup::E1,
                Some(PeMode::Relative),
                &[],
                None,
            )
            .unwrap();
            csvs.push(std::fs::read(out.join("E1_metrics.csv")).unwrap());
        }
        same &= csvs[0] == csvs[1] && !csvs[0].is_empty();
    }
    outcome(
        11,
        same,
        format!("two seeded train runs give byte-identical metrics CSVs: {same}"),
    )
}

fn bench() -> Outcome {
    let opts = BenchOptions {
        lengths: vec![1024, 2048],
        widths: vec![32],
        ..BenchOptions::default()
    };
    let r = run_bench(&opts).unwrap();
    let t = |n: usize| r.rows.iter().find(|row| row.n == n).unwrap().mean_s;
    let ratio = t(2048) / t(1024);
    Outcome {
        criterion: 12,
        pass: ratio >= BENCH_RATIO,
        gating: false,
        detail: format!(
            "bench (informative) d=32: t(1024) {:.4}s, t(2048) {:.4}s, ratio {ratio:.2} (>= {BENCH_RATIO})",
            t(1024),
            t(2048)
        ),
    }
}

fn main() {
    // `cargo test -- <filter>` passes arguments through; run only when the
    // filter (if any) names this suite.
    let args: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return;
    }
    let dir = tempfile::tempdir().expect("temp dir");
    let one = corpus(&dir.path().join("corpus1"), 1, 200);

    let mut results = Vec::new();
    let mut record = |o: Outcome| {
        let tag = match (o.pass, o.gating) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "WARN",
        };
        println!("{tag} criterion {}: {}", o.criterion, o.detail);
        results.push(o);
    };
    record(gradient_suite());
    record(dtw_oracle());
    record(regulator());
    record(encodings());
    record(relative_attention_checks());
    record(synthetic_aai(&one, &dir.path().join("c7")));
    record(synthetic_pta(&one, &dir.path().join("c8")));
    record(trends(dir.path()));
    record(overfit(&one));
    record(determinism(dir.path()));
    record(bench());

    let failed: Vec<u32> = results
        .iter()
        .filter(|o| o.gating && !o.pass)
        .map(|o| o.criterion)
        .collect();
    if failed.is_empty() {
        println!("acceptance: all gating criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
