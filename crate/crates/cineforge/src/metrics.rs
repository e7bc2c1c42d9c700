//! Classification metrics, ROC/AUC, paired DeLong testing, stratified
//! k-fold splitting, and the variance-of-Laplacian blur baseline.
//!
//! Balanced accuracy here is `(precision + recall) / 2`. That differs from
//! the more common `(sensitivity + specificity) / 2`, and is kept because
//! the rest of the pipeline reports and compares against that definition.

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::cine::CineSequence;
use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fneg: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fneg + self.tn
    }
}

/// Threshold metrics; undefined ratios are reported as 0 with a flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub balanced_accuracy: f64,
    pub undefined_precision: bool,
    pub undefined_recall: bool,
}

/// `(precision + recall) / 2`.
pub fn balanced_accuracy(precision: f64, recall: f64) -> f64 {
    (precision + recall) / 2.0
}

pub fn confusion_and_metrics(
    scores: &[f64],
    labels: &[u8],
    threshold: f64,
) -> Result<(ConfusionCounts, Metrics)> {
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(Error::BadDataset(
            "scores and labels must be equal-length and nonempty".into(),
        ));
    }
    let mut c = ConfusionCounts::default();
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y != 0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fneg += 1,
            (false, false) => c.tn += 1,
        }
    }
    let ratio = |num: usize, den: usize| -> (f64, bool) {
        if den == 0 {
            (0.0, true)
        } else {
            (num as f64 / den as f64, false)
        }
    };
    let (precision, undefined_precision) = ratio(c.tp, c.tp + c.fp);
    let (recall, undefined_recall) = ratio(c.tp, c.tp + c.fneg);
    let metrics = Metrics {
        accuracy: (c.tp + c.tn) as f64 / c.total() as f64,
        precision,
        recall,
        balanced_accuracy: balanced_accuracy(precision, recall),
        undefined_precision,
        undefined_recall,
    };
    Ok((c, metrics))
}

/// ROC curve points `(FPR, TPR)` from `(0,0)` to `(1,1)` plus the score
/// threshold that produced each point (the first is +inf).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<(f64, f64)>,
    pub thresholds: Vec<f64>,
}

/// ROC over all distinct score thresholds and its trapezoidal area.
///
/// The trapezoid rule over tie-grouped points makes the area identical to
/// the Mann-Whitney statistic with ties counted 1/2.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<(RocCurve, f64)> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::BadDataset("empty or mismatched score/label input".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y != 0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::BadDataset("ROC needs both classes present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));

    let mut points = vec![(0.0, 0.0)];
    let mut thresholds = vec![f64::INFINITY];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let score = scores[order[i]];
        while i < order.len() && scores[order[i]] == score {
            if labels[order[i]] != 0 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
        thresholds.push(score);
    }
    let auc = points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum();
    Ok((RocCurve { points, thresholds }, auc))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeLongResult {
    pub auc_a: f64,
    pub auc_b: f64,
    pub z: f64,
    pub p_value: f64,
    /// Set when the paired variance collapses (e.g. identical score
    /// vectors); the p-value is then reported as 1.
    pub degenerate: bool,
}

fn placements(scores: &[f64], pos: &[usize], neg: &[usize]) -> (Vec<f64>, Vec<f64>, f64) {
    let psi = |a: f64, b: f64| -> f64 {
        if a > b {
            1.0
        } else if a == b {
            0.5
        } else {
            0.0
        }
    };
    let v10: Vec<f64> = pos
        .iter()
        .map(|&i| neg.iter().map(|&j| psi(scores[i], scores[j])).sum::<f64>() / neg.len() as f64)
        .collect();
    let v01: Vec<f64> = neg
        .iter()
        .map(|&j| pos.iter().map(|&i| psi(scores[i], scores[j])).sum::<f64>() / pos.len() as f64)
        .collect();
    let auc = v10.iter().sum::<f64>() / v10.len() as f64;
    (v10, v01, auc)
}

fn sample_cov(a: &[f64], ma: f64, b: &[f64], mb: f64) -> f64 {
    let n = a.len();
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - ma) * (y - mb))
        .sum::<f64>()
        / (n - 1) as f64
}

/// Paired DeLong test for the difference of two correlated AUCs.
///
/// Returns the two AUC estimates (identical to [`roc_auc`]) and a two-sided
/// normal p-value for their difference.
pub fn delong_test(scores_a: &[f64], scores_b: &[f64], labels: &[u8]) -> Result<DeLongResult> {
    if scores_a.len() != labels.len() || scores_b.len() != labels.len() {
        return Err(Error::BadDataset("paired scores must match label length".into()));
    }
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != 0).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 0).collect();
    if pos.len() < 2 || neg.len() < 2 {
        return Err(Error::BadDataset(
            "DeLong needs at least two items of each class".into(),
        ));
    }
    let (v10_a, v01_a, theta_a) = placements(scores_a, &pos, &neg);
    let (v10_b, v01_b, theta_b) = placements(scores_b, &pos, &neg);
    // Report the shared trapezoid estimator; identical to the placement mean.
    let auc_a = roc_auc(scores_a, labels)?.1;
    let auc_b = roc_auc(scores_b, labels)?.1;

    let s10 = [
        sample_cov(&v10_a, theta_a, &v10_a, theta_a),
        sample_cov(&v10_a, theta_a, &v10_b, theta_b),
        sample_cov(&v10_b, theta_b, &v10_b, theta_b),
    ];
    let s01 = [
        sample_cov(&v01_a, theta_a, &v01_a, theta_a),
        sample_cov(&v01_a, theta_a, &v01_b, theta_b),
        sample_cov(&v01_b, theta_b, &v01_b, theta_b),
    ];
    let var = (s10[0] + s10[2] - 2.0 * s10[1]) / pos.len() as f64
        + (s01[0] + s01[2] - 2.0 * s01[1]) / neg.len() as f64;
    if var <= 1e-24 {
        return Ok(DeLongResult {
            auc_a,
            auc_b,
            z: 0.0,
            p_value: 1.0,
            degenerate: true,
        });
    }
    let z = (theta_a - theta_b) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let p_value = 2.0 * (1.0 - normal.cdf(z.abs()));
    Ok(DeLongResult {
        auc_a,
        auc_b,
        z,
        p_value,
        degenerate: false,
    })
}

/// Stratified k-fold split: each item lands in exactly one test fold and
/// per-fold class proportions match the global ones within one item.
pub fn stratified_kfold(labels: &[u8], k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 {
        return Err(Error::invalid("k must be >= 2"));
    }
    let minority = {
        let n_pos = labels.iter().filter(|&&y| y != 0).count();
        n_pos.min(labels.len() - n_pos)
    };
    if k > minority {
        return Err(Error::invalid(format!(
            "k={k} exceeds minority class count {minority}"
        )));
    }
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..labels.len())
            .filter(|&i| (labels[i] != 0) == (class != 0))
            .collect();
        let mut rng = RngStream::root(seed).derive(class as u64).rng();
        idx.shuffle(&mut rng);
        for (i, item) in idx.into_iter().enumerate() {
            folds[i % k].push(item);
        }
    }
    Ok((0..k)
        .map(|f| {
            let mut test = folds[f].clone();
            test.sort_unstable();
            let mut train: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|(g, _)| *g != f)
                .flat_map(|(_, v)| v.iter().copied())
                .collect();
            train.sort_unstable();
            (train, test)
        })
        .collect())
}

/// Mean over frames of the variance of the 3x3 Laplacian response
/// (edge-clamped). Lower values indicate more blur.
pub fn variance_of_laplacian(seq: &CineSequence) -> f64 {
    let (t, h, w) = seq.dims();
    assert!(t > 0 && h > 0 && w > 0, "empty sequence");
    let mut total = 0.0;
    for frame in seq.frames.outer_iter() {
        let mut resp = Array2::<f64>::zeros((h, w));
        for y in 0..h {
            for x in 0..w {
                let at = |yy: i64, xx: i64| -> f64 {
                    frame[[
                        yy.clamp(0, h as i64 - 1) as usize,
                        xx.clamp(0, w as i64 - 1) as usize,
                    ]] as f64
                };
                resp[[y, x]] = at(y as i64 - 1, x as i64)
                    + at(y as i64 + 1, x as i64)
                    + at(y as i64, x as i64 - 1)
                    + at(y as i64, x as i64 + 1)
                    - 4.0 * at(y as i64, x as i64);
            }
        }
        let n = (h * w) as f64;
        let mean = resp.sum() / n;
        let var = resp.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
        total += var;
    }
    total / t as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub acc: f64,
    pub prec: f64,
    pub rec: f64,
    pub ba: f64,
    pub auc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeLongSummary {
    pub auc_a: f64,
    pub auc_b: f64,
    pub p: f64,
}

/// Plot-ready evaluation report emitted by the `eval` pipeline stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: u32,
    pub folds: Vec<FoldMetrics>,
    pub roc: Vec<[f64; 2]>,
    pub confusion: ConfusionCounts,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delong: Option<DeLongSummary>,
}

/// Score a labelled set fold-by-fold (stratified split of the evaluation
/// set, `repeats` reshuffles) plus a pooled ROC and confusion matrix.
pub fn evaluate_scores(
    scores: &[f64],
    labels: &[u8],
    k: usize,
    repeats: usize,
    seed: u64,
    threshold: f64,
) -> Result<EvalReport> {
    let mut folds = Vec::new();
    for rep in 0..repeats.max(1) {
        let split = stratified_kfold(labels, k, RngStream::root(seed).derive(rep as u64).stream_id)?;
        for (_, test) in split {
            let s: Vec<f64> = test.iter().map(|&i| scores[i]).collect();
            let y: Vec<u8> = test.iter().map(|&i| labels[i]).collect();
            let (_, m) = confusion_and_metrics(&s, &y, threshold)?;
            let auc = roc_auc(&s, &y).map(|(_, a)| a).unwrap_or(f64::NAN);
            folds.push(FoldMetrics {
                acc: m.accuracy,
                prec: m.precision,
                rec: m.recall,
                ba: m.balanced_accuracy,
                auc,
            });
        }
    }
    let (confusion, _) = confusion_and_metrics(scores, labels, threshold)?;
    let (curve, _) = roc_auc(scores, labels)?;
    Ok(EvalReport {
        schema: 1,
        folds,
        roc: curve.points.iter().map(|&(f, t)| [f, t]).collect(),
        confusion,
        delong: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use proptest::prelude::*;
    use rand::Rng;

    /// O(n^2) pair-counting oracle for the AUC (ties count one half).
    fn pair_count_auc(scores: &[f64], labels: &[u8]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &si) in scores.iter().enumerate() {
            if labels[i] == 0 {
                continue;
            }
            for (j, &sj) in scores.iter().enumerate() {
                if labels[j] != 0 {
                    continue;
                }
                pairs += 1.0;
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn confusion_arithmetic() {
        let scores = [0.9, 0.8, 0.7, 0.6, 0.4, 0.3, 0.2, 0.1, 0.05, 0.01];
        let labels = [1, 1, 0, 1, 0, 0, 0, 0, 0, 0];
        let (c, m) = confusion_and_metrics(&scores, &labels, 0.5).unwrap();
        assert_eq!((c.tp, c.fp, c.fneg, c.tn), (3, 1, 0, 6));
        let scores = [0.9, 0.8, 0.7, 0.2, 0.4, 0.3, 0.6, 0.1, 0.05, 0.01];
        let labels = [1, 1, 0, 1, 0, 0, 0, 0, 0, 0];
        let (c, m2) = confusion_and_metrics(&scores, &labels, 0.5).unwrap();
        assert_eq!((c.tp, c.fp, c.fneg, c.tn), (2, 2, 1, 5));
        assert!((m2.accuracy - 0.7).abs() < 1e-12);
        assert!((m2.precision - 0.5).abs() < 1e-12);
        assert!((m2.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((m2.balanced_accuracy - (0.5 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert!((m.accuracy - 0.9).abs() < 1e-12);
    }

    #[test]
    fn spec_confusion_example() {
        // TP=2, FP=1, FN=1, TN=6.
        let scores = [0.9, 0.8, 0.7, 0.2, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1];
        let labels = [1, 1, 0, 1, 0, 0, 0, 0, 0, 0];
        let (c, m) = confusion_and_metrics(&scores, &labels, 0.5).unwrap();
        assert_eq!((c.tp, c.fp, c.fneg, c.tn), (2, 1, 1, 6));
        assert!((m.accuracy - 0.8).abs() < 1e-12);
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.balanced_accuracy - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn all_correct_gives_ones() {
        let scores = [0.9, 0.8, 0.1, 0.2];
        let labels = [1, 1, 0, 0];
        let (_, m) = confusion_and_metrics(&scores, &labels, 0.5).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.precision, 1.0);
        assert_eq!(m.recall, 1.0);
        assert_eq!(m.balanced_accuracy, 1.0);
    }

    #[test]
    fn published_precision_recall_pair_reproduces_reported_ba() {
        assert!((balanced_accuracy(0.751, 0.733) - 0.742).abs() <= 0.0005);
    }

    #[test]
    fn zero_denominator_is_flagged() {
        let scores = [0.1, 0.2, 0.3];
        let labels = [0, 0, 1];
        let (_, m) = confusion_and_metrics(&scores, &labels, 0.5).unwrap();
        assert!(m.undefined_precision);
        assert_eq!(m.precision, 0.0);
    }

    #[test]
    fn separated_scores_have_auc_one() {
        let scores = [0.9, 0.8, 0.7, 0.3, 0.2, 0.1];
        let labels = [1, 1, 1, 0, 0, 0];
        let (curve, auc) = roc_auc(&scores, &labels).unwrap();
        assert_eq!(auc, 1.0);
        assert_eq!(curve.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(curve.points.last(), Some(&(1.0, 1.0)));
    }

    #[test]
    fn label_independent_interleaved_scores_have_auc_half() {
        // Distinct scores, classes interleaved symmetrically: chance level.
        let scores = [0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1];
        let labels = [1, 0, 0, 1, 1, 0, 0, 1];
        let (_, auc) = roc_auc(&scores, &labels).unwrap();
        assert_eq!(auc, 0.5);
    }

    #[test]
    fn single_class_is_rejected() {
        assert!(roc_auc(&[0.1, 0.2], &[1, 1]).is_err());
    }

    #[test]
    fn trapezoid_matches_pair_count_oracle() {
        let mut rng = RngStream::root(31).rng();
        for trial in 0..100 {
            let n = rng.random_range(4..=200);
            let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2) as u8).collect();
            labels[0] = 1;
            labels[1] = 0;
            // Quantised scores force plenty of ties.
            let scores: Vec<f64> = (0..n)
                .map(|_| (rng.random_range(0.0f64..1.0) * 8.0).round() / 8.0)
                .collect();
            let (_, auc) = roc_auc(&scores, &labels).unwrap();
            let oracle = pair_count_auc(&scores, &labels);
            assert!(
                (auc - oracle).abs() < 1e-9,
                "trial {trial}: {auc} vs {oracle}"
            );
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn auc_properties(seed in any::<u64>(), n in 4usize..120) {
            let mut rng = RngStream::root(seed).rng();
            let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2) as u8).collect();
            labels[0] = 1;
            labels[1] = 0;
            let scores: Vec<f64> = (0..n).map(|_| (rng.random_range(0.0f64..1.0) * 4.0).round() / 4.0).collect();
            let (_, auc) = roc_auc(&scores, &labels).unwrap();
            prop_assert!((0.0..=1.0).contains(&auc));
            prop_assert!((auc - pair_count_auc(&scores, &labels)).abs() < 1e-9);
            // Negation flips the AUC.
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            let (_, auc_neg) = roc_auc(&neg, &labels).unwrap();
            prop_assert!((auc + auc_neg - 1.0).abs() < 1e-9);
            // Strictly increasing transforms leave it unchanged.
            let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp()).collect();
            let (_, auc_warped) = roc_auc(&warped, &labels).unwrap();
            prop_assert!((auc - auc_warped).abs() < 1e-12);
        }
    }

    #[test]
    fn delong_identical_vectors_give_p_one() {
        let scores = [0.9, 0.7, 0.6, 0.4, 0.3, 0.1];
        let labels = [1, 1, 1, 0, 0, 0];
        let r = delong_test(&scores, &scores, &labels).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert!(r.degenerate);
        assert_eq!(r.auc_a, r.auc_b);
    }

    #[test]
    fn delong_aucs_match_roc_auc_exactly() {
        let mut rng = RngStream::root(17).rng();
        let labels: Vec<u8> = (0..40).map(|i| (i % 2) as u8).collect();
        let a: Vec<f64> = (0..40).map(|_| rng.random_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..40).map(|_| rng.random_range(0.0..1.0)).collect();
        let r = delong_test(&a, &b, &labels).unwrap();
        assert_eq!(r.auc_a, roc_auc(&a, &labels).unwrap().1);
        assert_eq!(r.auc_b, roc_auc(&b, &labels).unwrap().1);
    }

    #[test]
    fn delong_is_symmetric() {
        let mut rng = RngStream::root(19).rng();
        let labels: Vec<u8> = (0..30).map(|i| (i % 3 == 0) as u8).collect();
        let a: Vec<f64> = (0..30)
            .map(|i| labels[i] as f64 * 0.3 + rng.random_range(0.0..1.0))
            .collect();
        let b: Vec<f64> = (0..30).map(|_| rng.random_range(0.0..1.0)).collect();
        let ab = delong_test(&a, &b, &labels).unwrap();
        let ba = delong_test(&b, &a, &labels).unwrap();
        assert!((ab.p_value - ba.p_value).abs() < 1e-12);
        assert_eq!(ab.auc_a, ba.auc_b);
    }

    #[test]
    fn delong_detects_perfect_vs_random() {
        let mut rng = RngStream::root(23).rng();
        let labels: Vec<u8> = (0..100).map(|i| (i < 50) as u8).collect();
        let a: Vec<f64> = labels
            .iter()
            .map(|&y| y as f64 + rng.random_range(0.0..0.5))
            .collect();
        // Interleave so AUC(b) is near one half.
        let b: Vec<f64> = (0..100).map(|i| (i % 10) as f64 / 10.0).collect();
        let r = delong_test(&a, &b, &labels).unwrap();
        assert!(r.auc_a == 1.0);
        assert!((r.auc_b - 0.5).abs() < 0.1);
        assert!(r.p_value < 0.001, "p {}", r.p_value);
    }

    #[test]
    fn kfold_exact_stratification() {
        let labels: Vec<u8> = (0..100).map(|i| (i < 10) as u8).collect();
        let folds = stratified_kfold(&labels, 10, 7).unwrap();
        assert_eq!(folds.len(), 10);
        let mut seen = vec![false; 100];
        for (train, test) in &folds {
            assert_eq!(test.len(), 10);
            let pos = test.iter().filter(|&&i| labels[i] != 0).count();
            assert_eq!(pos, 1);
            assert_eq!(train.len(), 90);
            for &i in test {
                assert!(!seen[i], "index {i} appears in two test folds");
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&b| b));
    }

    #[test]
    fn kfold_is_deterministic_and_seed_sensitive() {
        let labels: Vec<u8> = (0..40).map(|i| (i % 4 == 0) as u8).collect();
        let a = stratified_kfold(&labels, 5, 3).unwrap();
        let b = stratified_kfold(&labels, 5, 3).unwrap();
        assert_eq!(a, b);
        let c = stratified_kfold(&labels, 5, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn kfold_rejects_oversized_k() {
        let labels: Vec<u8> = (0..20).map(|i| (i < 3) as u8).collect();
        assert!(stratified_kfold(&labels, 4, 0).is_err());
        assert!(stratified_kfold(&labels, 3, 0).is_ok());
    }

    #[test]
    fn laplacian_of_constant_frame_is_zero() {
        let seq = CineSequence::new("c", Array3::from_elem((3, 8, 8), 0.7f32));
        assert_eq!(variance_of_laplacian(&seq), 0.0);
    }

    #[test]
    fn blur_reduces_laplacian_variance() {
        let h = 16usize;
        let sharp = Array3::from_shape_fn((1, h, h), |(_, y, x)| ((y + x) % 2) as f32);
        let mut blurred = Array3::zeros((1, h, h));
        for y in 0..h {
            for x in 0..h {
                let mut acc = 0.0;
                for dy in 0..2usize {
                    for dx in 0..2usize {
                        acc += sharp[[0, (y + dy).min(h - 1), (x + dx).min(h - 1)]];
                    }
                }
                blurred[[0, y, x]] = acc / 4.0;
            }
        }
        let s = variance_of_laplacian(&CineSequence::new("s", sharp));
        let b = variance_of_laplacian(&CineSequence::new("b", blurred));
        assert!(s > b, "sharp {s} vs blurred {b}");
    }

    #[test]
    fn evaluate_scores_builds_report() {
        let mut rng = RngStream::root(29).rng();
        let labels: Vec<u8> = (0..60).map(|i| (i % 3 == 0) as u8).collect();
        let scores: Vec<f64> = labels
            .iter()
            .map(|&y| 0.5 * y as f64 + rng.random_range(0.0..0.5))
            .collect();
        let report = evaluate_scores(&scores, &labels, 5, 2, 11, 0.5).unwrap();
        assert_eq!(report.folds.len(), 10);
        assert_eq!(report.schema, 1);
        assert_eq!(report.confusion.total(), 60);
        for f in &report.folds {
            for v in [f.acc, f.prec, f.rec, f.ba] {
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
