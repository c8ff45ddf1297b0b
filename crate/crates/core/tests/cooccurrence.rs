mod common;

use common::{cases, names};
use proptest::prelude::*;
use ssgrl_core::cooccurrence::{build_graph, AnnotationSet};

fn annotation_sets() -> impl Strategy<Value = (usize, Vec<Vec<usize>>)> {
    (1usize..=10).prop_flat_map(|c| {
        let sample = prop::collection::vec(0..c, 0..=c);
        (Just(c), prop::collection::vec(sample, 1..=50))
    })
}

/// Counts by scanning samples once per ordered pair.
fn naive(c: usize, samples: &[Vec<usize>]) -> Vec<Vec<f64>> {
    let has = |s: &Vec<usize>, k: usize| s.contains(&k);
    (0..c)
        .map(|i| {
            let support = samples.iter().filter(|s| has(s, i)).count();
            (0..c)
                .map(|j| {
                    if support == 0 {
                        return 0.0;
                    }
                    let both = samples.iter().filter(|s| has(s, i) && has(s, j)).count();
                    both as f64 / support as f64
                })
                .collect()
        })
        .collect()
}

proptest! {
    #![proptest_config(cases(100))]

    #[test]
    fn matches_naive_counting((c, samples) in annotation_sets()) {
        let mut ann = AnnotationSet::new(names(c));
        for (i, s) in samples.iter().enumerate() {
            ann.push(&format!("s{i}"), s).unwrap();
        }
        let g = build_graph(&ann).unwrap();
        let want = naive(c, &samples);
        for (i, row) in want.iter().enumerate() {
            for (j, w) in row.iter().enumerate() {
                prop_assert_eq!(g.get(i, j).to_bits(), w.to_bits());
            }
            let supported = samples.iter().any(|s| s.contains(&i));
            prop_assert_eq!(g.get(i, i), if supported { 1.0 } else { 0.0 });
        }
    }

    /// `A[i][j]·support(i) = A[j][i]·support(j)`: both count the same samples.
    #[test]
    fn rows_rescale_a_symmetric_count((c, samples) in annotation_sets()) {
        let mut ann = AnnotationSet::new(names(c));
        for (i, s) in samples.iter().enumerate() {
            ann.push(&format!("s{i}"), s).unwrap();
        }
        let g = build_graph(&ann).unwrap();
        let support = ann.support();
        for i in 0..c {
            for j in 0..c {
                let a = g.get(i, j) * support[i] as f64;
                let b = g.get(j, i) * support[j] as f64;
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn three_sample_hand_example() {
    let mut ann = AnnotationSet::new(names(3));
    ann.push("a", &[0, 1]).unwrap();
    ann.push("b", &[0, 1, 2]).unwrap();
    ann.push("c", &[0]).unwrap();
    let g = build_graph(&ann).unwrap();
    assert_eq!(g.get(0, 1), 2.0 / 3.0);
    assert_eq!(g.get(1, 0), 1.0);
    assert_eq!(g.get(0, 2), 1.0 / 3.0);
    assert_eq!(g.get(2, 0), 1.0);
    assert_eq!(g.get(1, 2), 0.5);
}
