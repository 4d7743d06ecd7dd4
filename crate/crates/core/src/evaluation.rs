//! Ranking metrics and the evaluation protocol.

use serde::{Deserialize, Serialize};

use crate::config::WeightScaling;
use crate::dataset::{LabeledInstance, Session};
use crate::error::{Error, Result};
use crate::model::{score_session, ModelParams, NeighborCache};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub k: usize,
    pub p_at_k: f64,
    pub mrr_at_k: f64,
    pub num_instances: usize,
}

/// 1-based rank of `target`: one plus the number of items scoring at least
/// as high, so ties count against the target.
pub fn rank_of_target(scores: &[f64], target: usize) -> Result<usize> {
    let Some(&t) = scores.get(target) else {
        return Err(Error::Data(format!("target {target} outside {} scores", scores.len())));
    };
    if let Some((i, s)) = scores.iter().enumerate().find(|(_, s)| !s.is_finite()) {
        return Err(Error::Data(format!("non-finite score {s} for item {i}")));
    }
    let ahead = scores
        .iter()
        .enumerate()
        .filter(|&(i, &s)| i != target && s >= t)
        .count();
    Ok(1 + ahead)
}

pub fn metrics_at_k(ranks: &[usize], k: usize) -> Result<MetricResult> {
    if ranks.is_empty() {
        return Err(Error::Data("no ranks to evaluate".into()));
    }
    if k == 0 {
        return Err(Error::Config("k must be positive".into()));
    }
    if ranks.contains(&0) {
        return Err(Error::Data("ranks are 1-based".into()));
    }
    let (mut hits, mut rr) = (0usize, 0.0);
    for &r in ranks {
        if r <= k {
            hits += 1;
            rr += 1.0 / r as f64;
        }
    }
    let n = ranks.len() as f64;
    Ok(MetricResult { k, p_at_k: hits as f64 / n, mrr_at_k: rr / n, num_instances: ranks.len() })
}

/// Ranks of every instance's label under the model, dropout off.
pub fn model_ranks(
    params: &ModelParams,
    instances: &[LabeledInstance],
    cache: &NeighborCache,
    layers: usize,
    scaling: WeightScaling,
) -> Result<Vec<usize>> {
    instances
        .iter()
        .map(|inst| {
            let scores = score_session(params, &inst.prefix, cache, layers, scaling)?;
            rank_of_target(&scores, inst.label)
        })
        .collect()
}

pub fn evaluate(
    params: &ModelParams,
    instances: &[LabeledInstance],
    cache: &NeighborCache,
    layers: usize,
    scaling: WeightScaling,
    k: usize,
) -> Result<MetricResult> {
    metrics_at_k(&model_ranks(params, instances, cache, layers, scaling)?, k)
}

/// Item click counts over the training sessions.
pub fn popularity_scores(sessions: &[Session], num_items: usize) -> Vec<f64> {
    let mut counts = vec![0.0; num_items];
    for s in sessions {
        for &i in &s.items {
            if let Some(c) = counts.get_mut(i) {
                *c += 1.0;
            }
        }
    }
    counts
}

/// Session-independent baseline ranking every item by training popularity.
pub fn evaluate_popularity(
    train_sessions: &[Session],
    num_items: usize,
    instances: &[LabeledInstance],
    k: usize,
) -> Result<MetricResult> {
    let scores = popularity_scores(train_sessions, num_items);
    let ranks = instances
        .iter()
        .map(|inst| rank_of_target(&scores, inst.label))
        .collect::<Result<Vec<_>>>()?;
    metrics_at_k(&ranks, k)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub k: usize,
    pub p_at_k: f64,
    pub mrr_at_k: f64,
    pub n: usize,
    pub checkpoint_hash: String,
}

impl MetricsFile {
    pub fn new(m: &MetricResult, checkpoint_hash: String) -> Self {
        MetricsFile { k: m.k, p_at_k: m.p_at_k, mrr_at_k: m.mrr_at_k, n: m.num_instances, checkpoint_hash }
    }
}
