use std::collections::BTreeMap;

use artic::evalkit::{
    align_by_path, cc, dtw, duration_significance, euclidean, evaluate_sentence, pearson, rmse,
    welch_t_test,
};
use artic::models::Task;
use ndarray::{array, Array2, ArrayView2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

// Minimum over every monotone path of the left-folded frame costs.
fn brute_force(pred: ArrayView2<f64>, gt: ArrayView2<f64>) -> f64 {
    fn walk(i: usize, j: usize, acc: f64, p: ArrayView2<f64>, g: ArrayView2<f64>, best: &mut f64) {
        let (n, m) = (p.nrows(), g.nrows());
        if (i, j) == (n - 1, m - 1) {
            *best = best.min(acc);
            return;
        }
        for (di, dj) in [(1, 1), (1, 0), (0, 1)] {
            let (a, b) = (i + di, j + dj);
            if a < n && b < m {
                let c = euclidean(p.row(a), g.row(b));
                walk(a, b, acc + c, p, g, best);
            }
        }
    }
    let mut best = f64::INFINITY;
    walk(0, 0, euclidean(pred.row(0), gt.row(0)), pred, gt, &mut best);
    best
}

fn randn(rng: &mut ChaCha8Rng, n: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, c), |_| rng.sample(StandardNormal))
}

#[test]
fn dtw_matches_exhaustive_search() {
    for seed in 0..200 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, m) = (rng.random_range(1..=5), rng.random_range(1..=5));
        let (p, g) = (randn(&mut rng, n, 3), randn(&mut rng, m, 3));
        let r = dtw(p.view(), g.view()).unwrap();
        assert_eq!(r.total_cost, brute_force(p.view(), g.view()), "seed {seed}");
        assert_eq!(r.path[0], (0, 0));
        assert_eq!(*r.path.last().unwrap(), (n - 1, m - 1));
        for w in r.path.windows(2) {
            let step = (w[1].0 - w[0].0, w[1].1 - w[0].1);
            assert!(matches!(step, (1, 0) | (0, 1) | (1, 1)));
        }
        let on_path: f64 = r
            .path
            .iter()
            .fold(0.0, |a, &(i, j)| a + euclidean(p.row(i), g.row(j)));
        assert!((on_path - r.total_cost).abs() < 1e-12);
    }
}

#[test]
fn single_prediction_frame_aligns_to_everything() {
    let p = array![[0.0, 0.0]];
    let g = array![[3.0, 4.0], [0.0, 1.0], [6.0, 8.0]];
    let r = dtw(p.view(), g.view()).unwrap();
    assert_eq!(r.total_cost, 5.0 + 1.0 + 10.0);
    assert_eq!(r.path, [(0, 0), (0, 1), (0, 2)]);
}

#[test]
fn align_by_path_hand_expansion() {
    let p = array![[1.0], [2.0], [3.0], [4.0]];
    let path = [(0, 0), (1, 0), (2, 1), (3, 2)];
    let a = align_by_path(p.view(), 3, &path).unwrap();
    assert_eq!(a, array![[1.5], [3.0], [4.0]]);
    let spread = [(0, 0), (0, 1), (1, 2), (2, 2), (3, 2)];
    assert_eq!(
        align_by_path(p.view(), 3, &spread).unwrap(),
        array![[1.0], [1.0], [3.0]]
    );
    assert!(align_by_path(p.view(), 3, &[(0, 0), (1, 2)]).is_err());
}

#[test]
fn dtw_rejects_empty_and_mismatched_inputs() {
    let e = Array2::<f64>::zeros((0, 2));
    let a = Array2::<f64>::zeros((3, 2));
    assert!(dtw(e.view(), a.view()).is_err());
    assert!(dtw(a.view(), Array2::<f64>::zeros((3, 1)).view()).is_err());
}

#[test]
fn correlation_and_rmse_examples() {
    let r = cc(&[1.0, 2.0, 3.0], &[1.0, 2.0, 2.0]).unwrap();
    assert!((r - 0.8660254037844386).abs() < 1e-12);
    let x = [0.3, -1.2, 4.0, 2.2];
    let neg: Vec<f64> = x.iter().map(|v| -v).collect();
    assert!((cc(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
    assert!((cc(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 12.5f64.sqrt());
    assert_eq!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap(), None);
    assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
}

#[test]
fn welch_matches_reference_values() {
    let cases: [(&[f64], &[f64], f64, f64); 4] = [
        (
            &[3., 4., 5., 4., 3., 5., 4.],
            &[6., 7., 5., 8., 6., 7.],
            -4.736654667156709,
            0.0009371345794030703,
        ),
        (
            &[10., 12., 9.5, 11.],
            &[10.5, 11.5, 10., 12.5, 11.],
            -0.676990177462621,
            0.5234245344057299,
        ),
        (
            &[1., 2.],
            &[1., 3., 2., 5., 4., 6.],
            -2.1908902300206647,
            0.07675324329071413,
        ),
        (
            &[5., 5., 5., 6.],
            &[9., 9., 8., 9., 10.],
            -9.302605094190634,
            3.6116542048218496e-05,
        ),
    ];
    for (a, b, t, p) in cases {
        let r = welch_t_test(a, b).unwrap();
        assert!((r.t - t).abs() < 1e-10, "t {} vs {t}", r.t);
        assert!((r.p - p).abs() < 1e-8 * p.max(1e-3), "p {} vs {p}", r.p);
        let s = welch_t_test(b, a).unwrap();
        assert!((s.t + r.t).abs() < 1e-12 && (s.p - r.p).abs() < 1e-12);
    }
}

#[test]
fn welch_flags_shifted_normals() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a: Vec<f64> = (0..30)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let b: Vec<f64> = (0..30)
        .map(|_| 10.0 + rng.sample::<f64, _>(StandardNormal))
        .collect();
    assert!(welch_t_test(&a, &b).unwrap().p < 1e-6);
    assert!(welch_t_test(&[1.0], &b).is_err());
}

#[test]
fn duration_significance_skips_small_groups() {
    let gt = BTreeMap::from([
        (1, vec![3.0, 4.0, 5.0]),
        (2, vec![7.0]),
        (3, vec![2.0, 2.5]),
    ]);
    let pred = BTreeMap::from([
        (1, vec![3.5, 4.5, 5.5]),
        (2, vec![7.0, 8.0]),
        (4, vec![1.0, 2.0]),
    ]);
    let rows = duration_significance(&gt, &pred).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].phoneme, 1);
    assert_eq!(rows[0].test, welch_t_test(&gt[&1], &pred[&1]).unwrap());
    assert_eq!(rows[0].significant, rows[0].test.p < 0.05);
}

fn column_oracle(pred: ArrayView2<f64>, gt: ArrayView2<f64>, c: usize) -> (f64, f64) {
    let n = gt.nrows() as f64;
    let (a, b) = (pred.column(c), gt.column(c));
    let (ma, mb) = (a.sum() / n, b.sum() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    let mse: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n;
    (cov / (va * vb).sqrt(), mse.sqrt())
}

#[test]
fn sentence_metrics_match_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let gt = randn(&mut rng, 40, 12);
    let pred = &gt * 0.8 + randn(&mut rng, 40, 12) * 0.3;
    let r = evaluate_sentence(Task::Aai, pred.view(), gt.view()).unwrap();
    for c in 0..12 {
        let (rc, rr) = column_oracle(pred.view(), gt.view(), c);
        assert!((r.cc[c] - rc).abs() < 1e-12);
        assert!((r.rmse[c] - rr).abs() < 1e-12);
    }
    assert!(evaluate_sentence(Task::Aai, pred.view(), gt.slice(ndarray::s![..39, ..])).is_err());

    // PTA: a time-stretched copy aligns back onto the ground truth exactly.
    let stretched = Array2::from_shape_fn((80, 12), |(i, c)| gt[[i / 2, c]]);
    let r = evaluate_sentence(Task::Pta, stretched.view(), gt.view()).unwrap();
    assert!(r.cc.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    assert!(r.rmse.iter().all(|&v| v < 1e-12));
}

#[test]
fn constant_channel_scores_zero() {
    let gt = array![[1.0, 0.0], [2.0, 0.0], [3.0, 0.0]];
    let pred = array![[1.0, 1.0], [2.0, 2.0], [4.0, 3.0]];
    let r = evaluate_sentence(Task::Aai, pred.view(), gt.view()).unwrap();
    assert_eq!(r.degenerate_channels, [1]);
    assert_eq!(r.cc[1], 0.0);
}

proptest! {
    #[test]
    fn cc_is_bounded_and_symmetric(a in prop::collection::vec(-50.0f64..50.0, 3..30), seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<f64> = a.iter().map(|v| v * rng.random_range(-1.0..1.0) + rng.random::<f64>()).collect();
        if let (Some(r), Some(s)) = (pearson(&a, &b).unwrap(), pearson(&b, &a).unwrap()) {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
            prop_assert!((r - s).abs() < 1e-12);
        }
    }

    #[test]
    fn dtw_of_identical_sequences_is_diagonal(n in 1usize..20, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = randn(&mut rng, n, 3);
        let r = dtw(x.view(), x.view()).unwrap();
        prop_assert_eq!(r.total_cost, 0.0);
        prop_assert_eq!(r.path, (0..n).map(|i| (i, i)).collect::<Vec<_>>());
    }
}
