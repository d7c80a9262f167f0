use artic::models::{
    length_regulator, pad_rows, round_durations, unpad_rows, AcousticFeatures, Model, ModelConfig,
    PhonemeSequence, Task, MAX_FRAMES, N_ARTICULATORS, N_FEATURES,
};
use artic::nncore::{Graph, Tensor};
use artic::transformer::PeMode;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small(task: Task, mode: PeMode) -> ModelConfig {
    let mut c = ModelConfig::new(task);
    c.d_model = 8;
    c.n_heads = 2;
    c.enc_layers = 1;
    c.dec_layers = 1;
    c.dur_channels = 8;
    c.pe_mode = mode;
    c.vocab_size = 10;
    c
}

fn regulate(h: &Tensor<f64>, d: &[usize]) -> Tensor<f64> {
    let mut g = Graph::<f64>::eval();
    let hv = g.constant(h.clone());
    let e = length_regulator(&mut g, hv, d).unwrap();
    g.value(e).clone()
}

#[test]
fn regulator_worked_example() {
    let h = Tensor::from_rows(&[
        vec![1.0, 10.0],
        vec![2.0, 20.0],
        vec![3.0, 30.0],
        vec![4.0, 40.0],
    ])
    .unwrap();
    let e = regulate(&h, &[2, 2, 3, 1]);
    let firsts: Vec<f64> = (0..e.rows()).map(|i| e.get2(i, 0)).collect();
    assert_eq!(firsts, [1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 3.0, 4.0]);
    assert_eq!(regulate(&h, &[1, 1, 1, 1]).data(), h.data());
    let two = Tensor::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
    assert_eq!(regulate(&two, &[0, 3]).data(), &[2.0, 2.0, 2.0]);
}

#[test]
fn regulator_repeats_rows_for_random_durations() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..1000 {
        let m = rng.random_range(1..=12);
        let d = rng.random_range(1..=4);
        let h = Tensor::new(
            vec![m, d],
            (0..m * d).map(|_| rng.random::<f64>()).collect(),
        )
        .unwrap();
        let mut durs: Vec<usize> = (0..m).map(|_| rng.random_range(0..=6)).collect();
        if durs.iter().sum::<usize>() == 0 {
            durs[0] = 1;
        }
        let e = regulate(&h, &durs);
        assert_eq!(e.rows(), durs.iter().sum::<usize>());
        let mut row = 0;
        for (i, &c) in durs.iter().enumerate() {
            for _ in 0..c {
                assert_eq!(e.row(row), h.row(i));
                row += 1;
            }
        }
    }
}

#[test]
fn rounding_examples() {
    assert_eq!(round_durations(&[1.4, 2.6], MAX_FRAMES).unwrap(), [1, 3]);
    assert_eq!(round_durations(&[0.2], MAX_FRAMES).unwrap(), [1]);
    assert_eq!(round_durations(&[2.5, -3.0], MAX_FRAMES).unwrap(), [3, 1]);
}

#[test]
fn single_phoneme_expands_to_identical_rows() {
    let model = Model::<f64>::new(small(Task::Pta, PeMode::None), 3).unwrap();
    let mut g = Graph::eval();
    let (h, _) = model.pta_encode(&mut g, &[4]).unwrap();
    let e = length_regulator(&mut g, h, &[5]).unwrap();
    let e = g.value(e);
    assert_eq!(e.rows(), 5);
    for i in 1..5 {
        assert_eq!(e.row(i), e.row(0));
    }
}

#[test]
fn both_losses_reach_their_parameters() {
    let model = Model::<f64>::new(small(Task::Pta, PeMode::Relative), 5).unwrap();
    let ids = [1, 5, 2, 9];
    let durs = [3, 1, 4, 2];
    let grads_of = |use_traj: bool| {
        let mut g = Graph::eval();
        let out = model.pta_forward_train(&mut g, &ids, &durs).unwrap();
        let root = if use_traj {
            let t = Tensor::zeros(g.value(out.trajectory).shape());
            g.mse(out.trajectory, &t, &[true; 10]).unwrap()
        } else {
            let t = Tensor::new(vec![4, 1], vec![3.0, 1.0, 4.0, 2.0]).unwrap();
            g.mse(out.durations, &t, &[true; 4]).unwrap()
        };
        g.backward(root).unwrap();
        let mut p = model.params.clone();
        p.zero_grad();
        g.accumulate_param_grads(&mut p).unwrap();
        p
    };
    let norm = |p: &artic::nncore::ParamStore<f64>, prefix: &str| -> f64 {
        p.iter()
            .filter(|q| q.name.starts_with(prefix))
            .flat_map(|q| q.grad.data().iter().map(|v| v * v))
            .sum::<f64>()
    };
    let traj = grads_of(true);
    let dur = grads_of(false);
    assert!(norm(&traj, "decoder") > 0.0);
    assert!(norm(&traj, "embedding") > 0.0);
    assert!(norm(&dur, "duration") > 0.0);
    assert!(norm(&dur, "encoder") > 0.0);
    assert_eq!(norm(&dur, "decoder"), 0.0);
    assert_eq!(norm(&traj, "duration"), 0.0);
}

#[test]
fn duration_loss_toy_case() {
    let mut g = Graph::<f64>::eval();
    let p = g.constant(Tensor::new(vec![2, 1], vec![3.0, 50.0]).unwrap());
    let l = g
        .mse(
            p,
            &Tensor::new(vec![2, 1], vec![2.0, 0.0]).unwrap(),
            &[true, false],
        )
        .unwrap();
    assert_eq!(g.value(l).data()[0], 1.0);
}

#[test]
fn zero_acoustics_give_finite_deterministic_output() {
    let model = Model::<f32>::new(small(Task::Aai, PeMode::Additive), 1).unwrap();
    let x = AcousticFeatures::new(Array2::zeros((7, N_FEATURES))).unwrap();
    let a = model.infer_aai(&x).unwrap();
    let b = model.infer_aai(&x).unwrap();
    assert!(a.frames().iter().all(|v| v.is_finite()));
    assert_eq!(a.frames(), b.frames());
}

#[test]
fn pta_inference_respects_frame_cap() {
    let model = Model::<f32>::new(small(Task::Pta, PeMode::Concatenative), 2).unwrap();
    let p = PhonemeSequence::new(vec![3; 60], 10).unwrap();
    let (traj, d) = model.infer_pta(&p).unwrap();
    assert_eq!(traj.frames().nrows(), d.total());
    assert!(d.total() <= MAX_FRAMES);
    assert_eq!(d.len(), 60);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn aai_output_shape(n in 1usize..=400, mode in 0usize..4) {
        let model = Model::<f32>::new(small(Task::Aai, PeMode::ALL[mode]), 0).unwrap();
        let x = AcousticFeatures::new(Array2::from_elem((n, N_FEATURES), 0.1)).unwrap();
        let y = model.infer_aai(&x).unwrap();
        prop_assert_eq!(y.frames().dim(), (n, N_ARTICULATORS));
    }

    #[test]
    fn rounded_total_is_capped(raw in prop::collection::vec(-5.0f64..60.0, 1..60)) {
        let d = round_durations(&raw, MAX_FRAMES).unwrap();
        prop_assert_eq!(d.len(), raw.len());
        prop_assert!(d.iter().all(|&v| v >= 1));
        prop_assert!(d.iter().sum::<usize>() <= MAX_FRAMES);
    }

    #[test]
    fn pad_then_unpad_is_identity(n in 1usize..50, extra in 0usize..20) {
        let x = Array2::from_shape_fn((n, 3), |(i, j)| (i * 3 + j) as f64);
        let (p, mask) = pad_rows(&x, n + extra).unwrap();
        prop_assert_eq!(p.nrows(), n + extra);
        prop_assert_eq!(mask.iter().filter(|&&m| m).count(), n);
        prop_assert_eq!(unpad_rows(&p, &mask).unwrap(), x);
    }
}
