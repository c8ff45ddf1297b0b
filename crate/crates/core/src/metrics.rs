//! Multi-label evaluation: per-category AP and mAP, and overall / per-class
//! precision, recall and F1 under the top-3 and 0.5-threshold label rules.
//!
//! Conventions: AP averages precision at the rank of each positive (no
//! interpolation), ties in score are broken by ascending sample index, any
//! ratio with a zero denominator is 0, and categories without ground-truth
//! positives are left out of mAP and of the per-class averages.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{dim_err, Result};

/// Threshold below which a top-k label is dropped, and above which a label is
/// positive under [`Setting::Threshold`].
pub const PROBABILITY_THRESHOLD: f64 = 0.5;
pub const TOP_K: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Setting {
    /// Three highest-probability labels, minus any below 0.5.
    Top3,
    /// Every label with probability strictly above 0.5.
    Threshold,
}

impl Setting {
    pub fn as_str(self) -> &'static str {
        match self {
            Setting::Top3 => "top3",
            Setting::Threshold => "threshold",
        }
    }
}

/// Indices of one row sorted by descending score, ties by ascending index.
fn ranked(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Binary predictions for every image (`M × C`).
pub fn assign_labels(probabilities: &[Vec<f64>], setting: Setting) -> Vec<Vec<bool>> {
    probabilities
        .iter()
        .map(|row| {
            let mut pred = vec![false; row.len()];
            match setting {
                Setting::Top3 => {
                    for &c in ranked(row).iter().take(TOP_K) {
                        if row[c] >= PROBABILITY_THRESHOLD {
                            pred[c] = true;
                        }
                    }
                }
                Setting::Threshold => {
                    for (p, &v) in pred.iter_mut().zip(row) {
                        *p = v > PROBABILITY_THRESHOLD;
                    }
                }
            }
            pred
        })
        .collect()
}

/// Per-category counts: correct, predicted, ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CategoryCounts {
    pub correct: usize,
    pub predicted: usize,
    pub ground_truth: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PrfScores {
    pub op: f64,
    pub or: f64,
    pub of1: f64,
    pub cp: f64,
    pub cr: f64,
    pub cf1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SettingReport {
    pub scores: PrfScores,
    pub counts: Vec<CategoryCounts>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn check_same_shape(a: &[Vec<bool>], b: &[Vec<bool>]) -> Result<usize> {
    if a.len() != b.len() {
        return Err(dim_err("prf_suite", &[a.len()], &[b.len()]));
    }
    let c = a.first().map_or(0, Vec::len);
    for (x, y) in a.iter().zip(b) {
        if x.len() != c || y.len() != c {
            return Err(dim_err("prf_suite", &[x.len()], &[y.len()]));
        }
    }
    Ok(c)
}

pub fn category_counts(pred: &[Vec<bool>], gt: &[Vec<bool>]) -> Result<Vec<CategoryCounts>> {
    let c = check_same_shape(pred, gt)?;
    let mut counts = vec![CategoryCounts::default(); c];
    for (p_row, g_row) in pred.iter().zip(gt) {
        for (k, (&p, &g)) in p_row.iter().zip(g_row).enumerate() {
            counts[k].predicted += p as usize;
            counts[k].ground_truth += g as usize;
            counts[k].correct += (p && g) as usize;
        }
    }
    Ok(counts)
}

/// OP/OR/OF1 over pooled counts and CP/CR/CF1 averaged over categories.
pub fn prf_suite(pred: &[Vec<bool>], gt: &[Vec<bool>]) -> Result<SettingReport> {
    let counts = category_counts(pred, gt)?;
    let (nc, np, ng) = counts.iter().fold((0, 0, 0), |(a, b, c), k| {
        (a + k.correct, b + k.predicted, c + k.ground_truth)
    });
    let op = ratio(nc, np);
    let or = ratio(nc, ng);
    let included: Vec<&CategoryCounts> = counts.iter().filter(|k| k.ground_truth > 0).collect();
    let (cp, cr) = if included.is_empty() {
        (0.0, 0.0)
    } else {
        let n = included.len() as f64;
        let p: f64 = included.iter().map(|k| ratio(k.correct, k.predicted)).sum();
        let r: f64 = included
            .iter()
            .map(|k| ratio(k.correct, k.ground_truth))
            .sum();
        (p / n, r / n)
    };
    Ok(SettingReport {
        scores: PrfScores {
            op,
            or,
            of1: f1(op, or),
            cp,
            cr,
            cf1: f1(cp, cr),
        },
        counts,
    })
}

/// Non-interpolated AP of one category; `None` without positives.
pub fn average_precision(scores: &[f64], gt: &[bool]) -> Result<Option<f64>> {
    if scores.len() != gt.len() {
        return Err(dim_err("average_precision", &[scores.len()], &[gt.len()]));
    }
    let positives = gt.iter().filter(|&&g| g).count();
    if positives == 0 {
        return Ok(None);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in ranked(scores).iter().enumerate() {
        if gt[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(Some(sum / positives as f64))
}

/// Per-category AP over `M × C` scores and the mean over defined categories.
pub fn mean_average_precision(
    scores: &[Vec<f64>],
    gt: &[Vec<bool>],
) -> Result<(Vec<Option<f64>>, f64)> {
    if scores.len() != gt.len() {
        return Err(dim_err(
            "mean_average_precision",
            &[scores.len()],
            &[gt.len()],
        ));
    }
    let c = scores.first().map_or(0, Vec::len);
    let mut per = Vec::with_capacity(c);
    for k in 0..c {
        let col: Vec<f64> = scores.iter().map(|r| r[k]).collect();
        let g: Vec<bool> = gt.iter().map(|r| r[k]).collect();
        per.push(average_precision(&col, &g)?);
    }
    let defined: Vec<f64> = per.iter().flatten().copied().collect();
    let map = if defined.is_empty() {
        0.0
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    };
    Ok((per, map))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_category_ap: Vec<Option<f64>>,
    pub map: f64,
    pub top3: SettingReport,
    pub threshold: SettingReport,
}

impl EvalReport {
    pub fn setting(&self, s: Setting) -> &SettingReport {
        match s {
            Setting::Top3 => &self.top3,
            Setting::Threshold => &self.threshold,
        }
    }
}

/// Full report from `M × C` probabilities and labels.
pub fn evaluate(probabilities: &[Vec<f64>], gt: &[Vec<bool>]) -> Result<EvalReport> {
    let (per_category_ap, map) = mean_average_precision(probabilities, gt)?;
    let top3 = prf_suite(&assign_labels(probabilities, Setting::Top3), gt)?;
    let threshold = prf_suite(&assign_labels(probabilities, Setting::Threshold), gt)?;
    Ok(EvalReport {
        per_category_ap,
        map,
        top3,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(c: usize, labels: &[usize]) -> Vec<bool> {
        let mut v = vec![false; c];
        labels.iter().for_each(|&l| v[l] = true);
        v
    }

    #[test]
    fn top3_takes_three_highest() {
        let pred = assign_labels(&[vec![0.9, 0.8, 0.7, 0.6, 0.2]], Setting::Top3);
        assert_eq!(pred[0], set(5, &[0, 1, 2]));
    }

    #[test]
    fn top3_drops_low_probabilities() {
        let pred = assign_labels(&[vec![0.9, 0.4, 0.3, 0.2]], Setting::Top3);
        assert_eq!(pred[0], set(4, &[0]));
    }

    #[test]
    fn threshold_is_strict() {
        let pred = assign_labels(&[vec![0.5, 0.5000001, 0.49]], Setting::Threshold);
        assert_eq!(pred[0], vec![false, true, false]);
    }

    #[test]
    fn hand_counted_prf() {
        let gt = vec![set(2, &[0]), set(2, &[0, 1]), set(2, &[1])];
        let pred = vec![set(2, &[0, 1]), set(2, &[0]), set(2, &[1])];
        let s = prf_suite(&pred, &gt).unwrap().scores;
        for v in [s.op, s.or, s.of1, s.cp, s.cr, s.cf1] {
            assert_eq!(v, 0.75);
        }
    }

    #[test]
    fn perfect_and_empty_predictions() {
        let gt = vec![set(3, &[0, 2]), set(3, &[1])];
        let s = prf_suite(&gt, &gt).unwrap().scores;
        assert_eq!([s.op, s.or, s.of1, s.cp, s.cr, s.cf1], [1.0; 6]);
        let none = vec![vec![false; 3]; 2];
        let s = prf_suite(&none, &gt).unwrap().scores;
        assert_eq!((s.op, s.or, s.of1), (0.0, 0.0, 0.0));
        assert_eq!((s.cp, s.cr, s.cf1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn ap_examples() {
        let ap = average_precision(&[0.9, 0.8, 0.1], &[true, false, true])
            .unwrap()
            .unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        let ap = average_precision(&[0.9, 0.8, 0.1, 0.0], &[true, true, false, false]).unwrap();
        assert_eq!(ap, Some(1.0));
        let ap = average_precision(&[0.9, 0.8, 0.7, 0.1], &[false, false, false, true]).unwrap();
        assert_eq!(ap, Some(0.25));
        assert_eq!(
            average_precision(&[0.3, 0.2], &[false, false]).unwrap(),
            None
        );
    }

    #[test]
    fn ties_break_by_sample_index() {
        // Positive at index 1 ties with the negative at index 0 and ranks second.
        let ap = average_precision(&[0.5, 0.5], &[false, true])
            .unwrap()
            .unwrap();
        assert_eq!(ap, 0.5);
    }

    #[test]
    fn map_skips_categories_without_positives() {
        let scores = vec![vec![0.9, 0.1, 0.3], vec![0.2, 0.8, 0.3]];
        let gt = vec![set(3, &[0]), set(3, &[0])];
        let (per, map) = mean_average_precision(&scores, &gt).unwrap();
        assert_eq!(per, vec![Some(1.0), None, None]);
        assert_eq!(map, 1.0);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        assert!(prf_suite(&[vec![true]], &[vec![true, false]]).is_err());
        assert!(average_precision(&[0.1], &[true, false]).is_err());
    }
}
