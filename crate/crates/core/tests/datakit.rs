use std::f64::consts::PI;
use std::path::Path;

use artic::datakit::{
    generate_synthetic, load_examples, load_record, lowpass, normalize_sentence, parse_durations,
    parse_matrix, parse_phonemes, CorpusManifest, Split, SyntheticSpec, CUTOFF, MANIFEST_NAME,
    TRAJECTORY_RATE,
};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        seed,
        n_subjects: 2,
        sentences_per_subject: 12,
        ..SyntheticSpec::default()
    }
}

fn tone(freq: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| (2.0 * PI * freq * i as f64 / TRAJECTORY_RATE).sin())
        .collect()
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

#[test]
fn lowpass_matches_reference_filtfilt() {
    let x: Vec<f64> = (0..60)
        .map(|n| {
            let t = n as f64 / 250.0;
            (2.0 * PI * 5.0 * t).sin() + 0.5 * (2.0 * PI * 60.0 * t).sin() + 0.02 * n as f64
        })
        .collect();
    let y = lowpass(&x, 250.0, 25.0).unwrap();
    let want = [
        (0, -0.002247320986386),
        (1, 0.143794405417585),
        (7, 0.910725908382201),
        (30, 0.012308937290722),
        (59, 2.504869818396492),
    ];
    for (i, v) in want {
        assert!((y[i] - v).abs() < 1e-9, "y[{i}] = {} vs {v}", y[i]);
    }
}

#[test]
fn lowpass_passband_and_stopband() {
    let n = 1000;
    let inner = 200..800;
    let low = lowpass(&tone(5.0, n), TRAJECTORY_RATE, CUTOFF).unwrap();
    let ratio = rms(&low[inner.clone()]) / rms(&tone(5.0, n)[inner.clone()]);
    assert!((ratio - 1.0).abs() < 0.05, "5 Hz gain {ratio}");
    let high = lowpass(&tone(50.0, n), TRAJECTORY_RATE, CUTOFF).unwrap();
    let db = 20.0 * (rms(&high[inner.clone()]) / rms(&tone(50.0, n)[inner])).log10();
    assert!(db <= -20.0, "50 Hz attenuation {db} dB");
}

#[test]
fn lowpass_rejects_non_finite() {
    assert!(lowpass(&[1.0, f64::NAN, 2.0], 250.0, 25.0).is_err());
}

#[test]
fn normalization_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = Array2::from_shape_fn((9, 3), |_| rng.random_range(-5.0..5.0));
    let (y, stats) = normalize_sentence(&x).unwrap();
    for c in 0..3 {
        let col = x.column(c);
        let mu = col.sum() / 9.0;
        let sd = (col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 9.0).sqrt();
        assert!((stats.mean[c] - mu).abs() < 1e-12);
        assert!((stats.std[c] - sd).abs() < 1e-12);
        for i in 0..9 {
            assert!((y[[i, c]] - (x[[i, c]] - mu) / sd).abs() < 1e-12);
        }
    }
    assert!(normalize_sentence(&Array2::zeros((1, 3))).is_err());
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synthetic_corpus_is_deterministic() {
    let (a, b, c) = (
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
    );
    generate_synthetic(&small_spec(9), a.path()).unwrap();
    generate_synthetic(&small_spec(9), b.path()).unwrap();
    generate_synthetic(&small_spec(10), c.path()).unwrap();
    let (ta, tb, tc) = (
        read_tree(a.path()),
        read_tree(b.path()),
        read_tree(c.path()),
    );
    assert_eq!(ta.len(), 1 + 2 * 12 * 4);
    assert_eq!(ta, tb);
    assert_ne!(ta, tc);
}

#[test]
fn synthetic_corpus_loads_and_splits() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_synthetic(&small_spec(3), dir.path()).unwrap();
    assert_eq!(m.subjects(), ["S01", "S02"]);
    for s in m.subjects() {
        for split in [Split::Train, Split::Val, Split::Test] {
            assert!(m.select(Some(&s), split).count() > 0, "{s} {split}");
        }
    }
    for r in &m.records {
        let sent = load_record(&m, r).unwrap();
        assert_eq!(sent.durations.total(), sent.trajectory.frames().nrows());
        assert!(sent.phonemes.ids().iter().all(|&p| (1..=20).contains(&p)));
    }
    let ex = load_examples(&m, Some("S01"), Split::Train).unwrap();
    for e in &ex {
        for c in 0..e.target.ncols() {
            let col = e.target.column(c);
            assert!((col.sum() / e.frames() as f64).abs() < 1e-9);
        }
    }
}

#[test]
fn least_squares_baseline_is_strong() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        n_subjects: 1,
        sentences_per_subject: 40,
        ..SyntheticSpec::default()
    };
    let m = generate_synthetic(&spec, dir.path()).unwrap();
    let cc: f64 = m.meta["ols_cc.S01"].parse().unwrap();
    assert!(cc >= 0.9, "ols cc {cc}");
}

#[test]
fn manifest_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_synthetic(&small_spec(5), dir.path()).unwrap();
    let path = dir.path().join(MANIFEST_NAME);
    let loaded = CorpusManifest::load(&path).unwrap();
    assert_eq!(loaded, m);
    assert_eq!(CorpusManifest::parse(&path, &loaded.to_text()).unwrap(), m);
    assert_eq!(loaded.vocab_size(), Some(20));
}

#[test]
fn invalid_specs_are_rejected() {
    let d = SyntheticSpec::default();
    for bad in [
        SyntheticSpec {
            n_subjects: 0,
            ..d.clone()
        },
        SyntheticSpec {
            sentences_per_subject: 2,
            ..d.clone()
        },
        SyntheticSpec {
            min_phonemes: 30,
            max_phonemes: 10,
            ..d.clone()
        },
        SyntheticSpec {
            min_duration: 0,
            ..d.clone()
        },
        SyntheticSpec {
            noise_std: -1.0,
            ..d.clone()
        },
    ] {
        assert!(bad.validate().is_err(), "{bad:?}");
    }
}

#[test]
fn damaged_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_synthetic(&small_spec(6), dir.path()).unwrap();
    let r = &m.records[0];

    let art = m.resolve(&r.trajectory);
    let text = std::fs::read_to_string(&art).unwrap();
    let truncated: Vec<&str> = text.lines().collect();
    std::fs::write(&art, truncated[..truncated.len() - 1].join("\n")).unwrap();
    assert!(load_record(&m, r).is_err());
    std::fs::write(&art, &text).unwrap();
    assert!(load_record(&m, r).is_ok());

    let ac = m.resolve(&r.acoustics);
    let original = std::fs::read_to_string(&ac).unwrap();
    std::fs::write(&ac, original.replacen(',', ",x", 1)).unwrap();
    assert!(load_record(&m, r).is_err());
    std::fs::write(&ac, &original).unwrap();

    let phn = m.resolve(&r.phonemes);
    std::fs::write(&phn, "1 2 banana").unwrap();
    assert!(load_record(&m, r).is_err());
    std::fs::write(&phn, "999").unwrap();
    assert!(load_record(&m, r).is_err());

    let p = Path::new("m.tsv");
    assert!(CorpusManifest::parse(p, "a\tS01\tx\ty\tz\tw\n").is_err());
    assert!(CorpusManifest::parse(p, "a\tS01\tx\ty\tz\tw\tholdout\n").is_err());
    assert!(CorpusManifest::parse(p, "a\tS\tx\ty\tz\tw\ttest\na\tS\tx\ty\tz\tw\ttest\n").is_err());
    assert!(CorpusManifest::parse(p, "# only=comments\n").is_err());
}

#[test]
fn matrix_parser_checks_width() {
    let p = Path::new("x.csv");
    assert_eq!(
        parse_matrix(p, "1,2\n3,4\n", 2).unwrap(),
        ndarray::array![[1.0, 2.0], [3.0, 4.0]]
    );
    assert!(parse_matrix(p, "1,2\n3\n", 2).is_err());
    assert!(parse_matrix(p, "1,nan\n", 2).is_err());
    assert_eq!(parse_durations(p, "3 0 2\n").unwrap(), [3, 0, 2]);
    assert!(parse_durations(p, "3 -1").is_err());
    assert!(parse_phonemes(p, "").is_err());
}

proptest! {
    #[test]
    fn parsers_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
        let text = String::from_utf8_lossy(&bytes);
        let p = Path::new("fuzz");
        let _ = parse_matrix(p, &text, 3);
        let _ = parse_phonemes(p, &text);
        let _ = parse_durations(p, &text);
        let _ = CorpusManifest::parse(p, &text);
    }

    #[test]
    fn structured_garbage_never_panics(fields in prop::collection::vec("[a-z0-9,.\\t -]{0,12}", 0..10)) {
        let text = fields.join("\t");
        let p = Path::new("fuzz");
        let _ = CorpusManifest::parse(p, &text);
        let _ = parse_matrix(p, &text.replace('\t', "\n"), 2);
    }
}
