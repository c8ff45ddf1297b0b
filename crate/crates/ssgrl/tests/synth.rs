use std::fs;
use std::path::Path;

use ssgrl::dataset::{self, TEST, TRAIN};
use ssgrl::synth::{generate, SyntheticSpec};
use ssgrl_core::cooccurrence::build_graph;

fn spec() -> SyntheticSpec {
    SyntheticSpec {
        categories: 5,
        width: 3,
        height: 4,
        channels: 6,
        embed_dim: 4,
        train_samples: 40,
        test_samples: 10,
        label_density: 1.5,
        pattern_strength: 4.0,
        noise_sigma: 0.3,
        bias_pairs: vec![],
        bias_probability: 0.9,
        seed: 9,
    }
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn same_seed_writes_identical_directories() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    generate(&spec()).unwrap().write(a.path()).unwrap();
    generate(&spec()).unwrap().write(b.path()).unwrap();
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert!(fa.len() > 50);
    assert_eq!(fa, fb);

    let mut other = spec();
    other.seed += 1;
    let c = tempfile::tempdir().unwrap();
    generate(&other).unwrap().write(c.path()).unwrap();
    assert_ne!(files(c.path()), fa);
}

#[test]
fn written_dataset_reads_back_unchanged() {
    let data = generate(&spec()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    data.write(dir.path()).unwrap();
    let info = dataset::load_info(dir.path()).unwrap();
    assert_eq!(info.categories, data.categories);
    assert_eq!(info.embeddings, data.embeddings);
    assert_eq!(
        dataset::load_split(dir.path(), TRAIN, &info.categories).unwrap(),
        data.train
    );
    assert_eq!(
        dataset::load_split(dir.path(), TEST, &info.categories).unwrap(),
        data.test
    );
}

#[test]
fn noiseless_pattern_peaks_at_home() {
    let mut s = spec();
    s.noise_sigma = 0.0;
    let data = generate(&s).unwrap();
    let mut homes = data.homes.clone();
    homes.sort();
    homes.dedup();
    assert_eq!(homes.len(), s.categories);
    for sample in &data.train {
        for (k, _) in sample.labels.iter().enumerate().filter(|(_, &y)| y) {
            let p = &data.patterns[k];
            let score = |w: usize, h: usize| -> f64 {
                sample
                    .features
                    .at(w, h)
                    .iter()
                    .zip(p)
                    .map(|(a, b)| a * b)
                    .sum()
            };
            let (hw, hh) = data.homes[k];
            let best = score(hw, hh);
            assert!((best - s.pattern_strength).abs() < 1e-5, "{best}");
            for w in 0..s.width {
                for h in 0..s.height {
                    if (w, h) != (hw, hh) {
                        assert!(score(w, h) < best);
                    }
                }
            }
        }
    }
}

#[test]
fn patterns_are_orthonormal_up_to_channel_count() {
    let data = generate(&spec()).unwrap();
    for (i, a) in data.patterns.iter().enumerate() {
        for (j, b) in data.patterns.iter().enumerate() {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((dot - want).abs() < 1e-12, "{i},{j}: {dot}");
        }
    }
    // more categories than channels still gives unit patterns
    let mut wide = spec();
    wide.categories = 9;
    wide.width = 4;
    for p in generate(&wide).unwrap().patterns {
        let n: f64 = p.iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-12);
    }
}

#[test]
fn label_marginals_match_density() {
    let mut s = spec();
    s.train_samples = 1000;
    s.test_samples = 0;
    s.label_density = 2.0;
    let data = generate(&s).unwrap();
    let q = s.label_density / s.categories as f64;
    let n = data.train.len() as f64;
    let sigma = (q * (1.0 - q) / n).sqrt();
    for k in 0..s.categories {
        let freq = data.train.iter().filter(|x| x.labels[k]).count() as f64 / n;
        assert!(
            (freq - q).abs() < 3.0 * sigma,
            "category {k}: {freq} vs {q}"
        );
    }
}

#[test]
fn bias_pair_raises_conditional_cooccurrence() {
    let mut s = spec();
    s.train_samples = 600;
    s.test_samples = 0;
    s.label_density = 1.0;
    let plain = generate(&s).unwrap();
    let baseline =
        build_graph(&dataset::annotations_of(&plain.categories, &plain.train).unwrap()).unwrap();
    s.bias_pairs = vec![(0, 1)];
    let data = generate(&s).unwrap();
    let biased =
        build_graph(&dataset::annotations_of(&data.categories, &data.train).unwrap()).unwrap();
    let before = baseline.adjacency().at(0, 1);
    let after = biased.adjacency().at(0, 1);
    // P(1 | 0) goes from about 0.2 to about 0.2 + 0.8·0.9
    assert!(before < 0.4, "{before}");
    assert!(after > 0.8, "{after}");
}

#[test]
fn invalid_specs_are_rejected() {
    type Edit = Box<dyn Fn(&mut SyntheticSpec)>;
    let cases: Vec<Edit> = vec![
        Box::new(|s| s.label_density = 0.0),
        Box::new(|s| s.label_density = 6.0),
        Box::new(|s| s.channels = 0),
        Box::new(|s| s.noise_sigma = -1.0),
        Box::new(|s| s.bias_pairs = vec![(0, 0)]),
        Box::new(|s| s.bias_pairs = vec![(0, 5)]),
        Box::new(|s| s.bias_probability = 1.5),
    ];
    for f in cases {
        let mut s = spec();
        f(&mut s);
        assert!(generate(&s).is_err(), "{s:?}");
    }
}
