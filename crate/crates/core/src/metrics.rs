//! Prediction and graph-recovery metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Area under the ROC curve: the probability that a random positive scores
/// above a random negative, ties counting one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Metric(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric(
            "AUC needs both positive and negative examples".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of midranks of positives (Mann-Whitney U).
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] {
                rank_sum += mid;
            }
        }
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// AUC of off-diagonal edge scores against a binary ground-truth graph.
pub fn graph_auc(edge_scores: &Tensor, truth: &Tensor) -> Result<f64> {
    let p = edge_scores.shape().first().copied().unwrap_or(0);
    if edge_scores.shape() != [p, p] || truth.shape() != [p, p] {
        return Err(Error::shape("graph_auc", edge_scores.shape(), truth.shape()));
    }
    let mut scores = Vec::with_capacity(p * p);
    let mut labels = Vec::with_capacity(p * p);
    for i in 0..p {
        for j in 0..p {
            if i != j {
                scores.push(edge_scores.at2(i, j));
                labels.push(truth.at2(i, j) != 0.0);
            }
        }
    }
    roc_auc(&scores, &labels).map_err(|_| {
        Error::Metric("graph AUC needs a truth graph with both edges and non-edges".into())
    })
}

/// Mean graph AUC over paired score/truth matrices.
pub fn mean_graph_auc(pairs: &[(Tensor, Tensor)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Metric("no graphs to evaluate".into()));
    }
    let mut total = 0.0;
    for (s, t) in pairs {
        total += graph_auc(s, t)?;
    }
    Ok(total / pairs.len() as f64)
}

pub fn rmse(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    if y_true.is_empty() {
        return Err(Error::Metric("RMSE of empty input".into()));
    }
    if y_true.len() != y_pred.len() {
        return Err(Error::Metric(format!(
            "{} targets but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mse = y_true
        .iter()
        .zip(y_pred)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / y_true.len() as f64;
    Ok(mse.sqrt())
}

pub fn accuracy(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    if y_true.is_empty() || y_true.len() != y_pred.len() {
        return Err(Error::Metric("accuracy needs equal, non-empty inputs".into()));
    }
    let hits = y_true.iter().zip(y_pred).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / y_true.len() as f64)
}

/// `max(s[i][j], s[j][i])` for every pair.
pub fn symmetrize_max(scores: &Tensor) -> Tensor {
    let p = scores.shape()[0];
    let mut out = scores.clone();
    for i in 0..p {
        for j in 0..p {
            out.set2(i, j, scores.at2(i, j).max(scores.at2(j, i)));
        }
    }
    out
}

/// One metric value, optionally aggregated over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub split: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub per_seed: Vec<f64>,
}

impl MetricReport {
    pub fn single(metric: &str, split: &str, value: f64, seed: u64) -> Self {
        Self {
            metric: metric.into(),
            split: split.into(),
            value,
            seed: Some(seed),
            std: None,
            per_seed: Vec::new(),
        }
    }

    /// Mean over seeds; the sample standard deviation is reported only for
    /// two or more values.
    pub fn aggregate(metric: &str, split: &str, values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Metric("nothing to aggregate".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.len() >= 2).then(|| {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        });
        Ok(Self {
            metric: metric.into(),
            split: split.into(),
            value: mean,
            seed: None,
            std,
            per_seed: values.to_vec(),
        })
    }
}
