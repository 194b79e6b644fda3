//! Prediction rules and classification metrics at bag and instance level.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::milmodel::BagForward;

/// 1 iff `prob >= threshold`.
pub fn predict_bag(prob: f64, threshold: f64) -> u8 {
    u8::from(prob >= threshold)
}

/// Instance predictions from attention weights.
///
/// A bag predicted negative has all instances negative. Otherwise instance
/// `i` is positive iff `s_i > 1/N` (strict, so uniform attention selects
/// nothing).
pub fn predict_instances(fwd: &BagForward, bag_prediction: u8) -> Result<Vec<u8>> {
    if !fwd.has_attention() {
        return Err(Error::NoAttention("non-attention"));
    }
    Ok(instance_rule(&fwd.s, bag_prediction))
}

pub(crate) fn instance_rule(s: &[f64], bag_prediction: u8) -> Vec<u8> {
    let threshold = 1.0 / s.len() as f64;
    if bag_prediction == 0 {
        return vec![0; s.len()];
    }
    s.iter().map(|&w| u8::from(w > threshold)).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub acc: f64,
    pub pre: f64,
    pub rec: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy, precision, recall and F1. Any ratio with a zero denominator is 0.
pub fn binary_metrics(pred: &[u8], truth: &[u8]) -> Result<BinaryMetrics> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::shape("metrics", &[pred.len()], &[truth.len()]));
    }
    let (mut tp, mut fp, mut fneg, mut tn) = (0, 0, 0, 0);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (1, 1) => tp += 1,
            (1, _) => fp += 1,
            (_, 1) => fneg += 1,
            _ => tn += 1,
        }
    }
    let pre = ratio(tp, tp + fp);
    let rec = ratio(tp, tp + fneg);
    let f1 = if pre + rec == 0.0 {
        0.0
    } else {
        2.0 * pre * rec / (pre + rec)
    };
    Ok(BinaryMetrics {
        acc: ratio(tp + tn, pred.len()),
        pre,
        rec,
        f1,
    })
}

/// ROC AUC as the Mann–Whitney statistic; tied scores count one half.
pub fn auc(scores: &[f64], truth: &[u8]) -> Result<f64> {
    if scores.len() != truth.len() || scores.is_empty() {
        return Err(Error::shape("auc", &[scores.len()], &[truth.len()]));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::Domain {
            op: "auc",
            index: i,
            value: f64::NAN,
        });
    }
    let n_pos = truth.iter().filter(|&&t| t == 1).count();
    let n_neg = truth.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass(u8::from(n_pos > 0)));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Average ranks (1-based) over tie groups.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if truth[k] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// `Σ |f_{i+1} − f_i|`.
pub fn total_variation(f: &[f64]) -> f64 {
    f.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;
    use proptest::prelude::*;

    fn fwd(s: Vec<f64>) -> BagForward {
        BagForward {
            z: Tensor::zeros(&[s.len(), 1]),
            f: vec![0.0; s.len()],
            s,
            bag_embedding: vec![0.0],
            prob: 0.9,
        }
    }

    #[test]
    fn bag_threshold() {
        assert_eq!(predict_bag(0.7, 0.5), 1);
        assert_eq!(predict_bag(0.5, 0.5), 1);
        assert_eq!(predict_bag(0.49, 0.5), 0);
    }

    #[test]
    fn instance_rule_cases() {
        let f = fwd(vec![0.4, 0.3, 0.2, 0.1]);
        assert_eq!(predict_instances(&f, 0).unwrap(), vec![0; 4]);
        assert_eq!(predict_instances(&f, 1).unwrap(), vec![1, 1, 0, 0]);
        let uniform = fwd(vec![0.25; 4]);
        assert_eq!(predict_instances(&uniform, 1).unwrap(), vec![0; 4]);
        let mut none = fwd(vec![]);
        none.f.clear();
        assert!(matches!(
            predict_instances(&none, 1),
            Err(Error::NoAttention(_))
        ));
    }

    #[test]
    fn perfect_metrics() {
        let m = binary_metrics(&[1, 0, 1], &[1, 0, 1]).unwrap();
        assert_eq!(
            m,
            BinaryMetrics {
                acc: 1.0,
                pre: 1.0,
                rec: 1.0,
                f1: 1.0
            }
        );
    }

    #[test]
    fn zero_denominators() {
        let m = binary_metrics(&[0, 0], &[0, 0]).unwrap();
        assert_eq!((m.acc, m.pre, m.rec, m.f1), (1.0, 0.0, 0.0, 0.0));
        let m = binary_metrics(&[1, 0, 0, 1], &[1, 1, 0, 0]).unwrap();
        assert_eq!((m.acc, m.pre, m.rec, m.f1), (0.5, 0.5, 0.5, 0.5));
    }

    #[test]
    fn auc_cases() {
        assert_eq!(auc(&[0.9, 0.8, 0.3, 0.1], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.5, 0.5], &[1, 0]).unwrap(), 0.5);
        assert_eq!(auc(&[0.1, 0.9], &[1, 0]).unwrap(), 0.0);
        assert!(matches!(
            auc(&[0.1, 0.2], &[1, 1]),
            Err(Error::SingleClass(1))
        ));
    }

    /// Pairwise count, quadratic in the input size.
    fn auc_pairs(scores: &[f64], truth: &[u8]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if truth[i] == 1 && truth[j] == 0 {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn tv() {
        assert_eq!(total_variation(&[0.0, 1.0, 0.0, 2.0]), 4.0);
        assert_eq!(total_variation(&[3.0]), 0.0);
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise_and_is_rank_invariant(
            data in prop::collection::vec((0u8..4, 0u8..2), 2..40)
        ) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| *s as f64 / 4.0).collect();
            let mut truth: Vec<u8> = data.iter().map(|(_, t)| *t).collect();
            truth[0] = 1;
            truth[1] = 0;
            let a = auc(&scores, &truth).unwrap();
            prop_assert!((a - auc_pairs(&scores, &truth)).abs() < 1e-12);
            let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
            prop_assert!((a - auc(&warped, &truth).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn negative_bag_means_negative_instances(
            s in prop::collection::vec(0.01f64..1.0, 1..30)
        ) {
            let total: f64 = s.iter().sum();
            let s: Vec<f64> = s.iter().map(|x| x / total).collect();
            prop_assert!(instance_rule(&s, 0).iter().all(|&y| y == 0));
        }
    }
}
