use serde::{Deserialize, Serialize};

use super::metrics::{auc, binary_metrics, instance_rule, predict_bag, total_variation};
use crate::dataio::Bag;
use crate::error::{Error, Result};
use crate::milmodel::{forward, ModelConfig, ModelParams};

/// Metrics at one granularity. `auc` is `None` when only one class is present.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LevelMetrics {
    pub acc: f64,
    pub pre: f64,
    pub rec: f64,
    pub f1: f64,
    pub auc: Option<f64>,
}

/// Attention values and weights of one evaluated bag.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    pub bag_id: String,
    pub prob: f64,
    pub bag_prediction: u8,
    pub f: Vec<f64>,
    pub s: Vec<f64>,
    pub instance_predictions: Vec<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_truth: Option<Vec<u8>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub scan: LevelMetrics,
    /// Present only for attention pooling on bags carrying instance labels.
    pub slice: Option<LevelMetrics>,
    /// Mean within-bag total variation of the attention values.
    pub mean_tv: Option<f64>,
    pub traces: Vec<AttentionTrace>,
}

fn level(pred: &[u8], truth: &[u8], scores: &[f64]) -> Result<LevelMetrics> {
    let m = binary_metrics(pred, truth)?;
    let auc = match auc(scores, truth) {
        Ok(a) => Some(a),
        Err(Error::SingleClass(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(LevelMetrics {
        acc: m.acc,
        pre: m.pre,
        rec: m.rec,
        f1: m.f1,
        auc,
    })
}

/// Runs the model over `bags` and scores both levels.
///
/// Slice-level AUC ranks instances by `prob · N · s_i`, the bag probability
/// times the attention weight relative to uniform.
pub fn evaluate(
    bags: &[Bag],
    params: &ModelParams,
    cfg: &ModelConfig,
    threshold: f64,
) -> Result<Evaluation> {
    if bags.is_empty() {
        return Err(Error::config(
            "data",
            "cannot evaluate an empty set of bags",
        ));
    }
    let mut bag_pred = Vec::with_capacity(bags.len());
    let mut bag_truth = Vec::with_capacity(bags.len());
    let mut bag_scores = Vec::with_capacity(bags.len());
    let mut traces = Vec::new();
    let mut slice_pred = Vec::new();
    let mut slice_truth = Vec::new();
    let mut slice_scores = Vec::new();
    let mut all_labeled = true;
    let mut tv_sum = 0.0;

    for bag in bags {
        let out = forward(bag, params, cfg)?;
        let pred = predict_bag(out.prob, threshold);
        bag_pred.push(pred);
        bag_truth.push(bag.bag_label);
        bag_scores.push(out.prob);
        if !out.has_attention() {
            continue;
        }
        let inst = instance_rule(&out.s, pred);
        tv_sum += total_variation(&out.f);
        match &bag.instance_labels {
            Some(y) => {
                let n = out.s.len() as f64;
                slice_pred.extend_from_slice(&inst);
                slice_truth.extend_from_slice(y);
                slice_scores.extend(out.s.iter().map(|s| out.prob * n * s));
            }
            None => all_labeled = false,
        }
        traces.push(AttentionTrace {
            bag_id: bag.id.clone(),
            prob: out.prob,
            bag_prediction: pred,
            f: out.f,
            s: out.s,
            instance_predictions: inst,
            instance_truth: bag.instance_labels.clone(),
        });
    }

    let slice = if !traces.is_empty() && all_labeled {
        Some(level(&slice_pred, &slice_truth, &slice_scores)?)
    } else {
        None
    };
    let mean_tv = (!traces.is_empty()).then(|| tv_sum / traces.len() as f64);
    Ok(Evaluation {
        scan: level(&bag_pred, &bag_truth, &bag_scores)?,
        slice,
        mean_tv,
        traces,
    })
}
