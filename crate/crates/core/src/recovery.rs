//! Graph-recovery scoring of a trained model against simulated truth.

use crate::error::{Error, Result};
use crate::metrics::{graph_auc, symmetrize_max};
use crate::model::Model;
use crate::simulator::PrecisionPair;
use crate::tensor::Tensor;

fn leading_block(t: &Tensor, p: usize) -> Tensor {
    let q = t.shape()[0];
    let data = (0..p).flat_map(|i| (0..p).map(move |j| t.data()[i * q + j])).collect();
    Tensor::from_parts(vec![p, p], data)
}

/// Graph AUC of the learned feature graph(s). A class-specific model is
/// scored per class against that class's truth and averaged; a single
/// graph is scored against the union of both class supports. Scores are
/// symmetrized by `max` first. Features beyond the truth's size (appended
/// noise columns) are ignored.
pub fn model_graph_auc(model: &Model, truth: &PrecisionPair) -> Result<f64> {
    let p = truth.omega_a.shape()[0];
    let probs = model.feature_edge_probabilities();
    if probs[0].shape()[0] < p {
        return Err(Error::shape("model_graph_auc", probs[0].shape(), &[p, p]));
    }
    let scores: Vec<Tensor> = probs.iter().map(|e| symmetrize_max(&leading_block(e, p))).collect();
    if scores.len() == 2 {
        let [a, b] = truth.class_graphs();
        Ok((graph_auc(&scores[0], a)? + graph_auc(&scores[1], b)?) / 2.0)
    } else {
        graph_auc(&scores[0], &truth.union_graph())
    }
}

/// Mean over graphs of `max(σ(γ_jy), σ(γ_yj))` between each feature `j`
/// and the label node `y`; `None` without a label node.
pub fn label_edge_strengths(model: &Model) -> Option<Vec<f64>> {
    if !model.config().label_node {
        return None;
    }
    let probs = model.edge_probabilities();
    let q = probs[0].shape()[0];
    let y = q - 1;
    Some(
        (0..y)
            .map(|j| probs.iter().map(|e| e.at2(j, y).max(e.at2(y, j))).sum::<f64>() / probs.len() as f64)
            .collect(),
    )
}

/// Mean edge probability over true edges and over true non-edges of each
/// class graph (or of the union for a single graph).
pub fn edge_means(model: &Model, truth: &PrecisionPair) -> Vec<(f64, f64)> {
    let p = truth.omega_a.shape()[0];
    let truths: Vec<Tensor> = if model.graph_count() == 2 {
        truth.class_graphs().map(Tensor::clone).to_vec()
    } else {
        vec![truth.union_graph()]
    };
    model
        .feature_edge_probabilities()
        .iter()
        .zip(&truths)
        .map(|(e, t)| {
            let (mut on, mut n_on, mut off, mut n_off) = (0.0, 0usize, 0.0, 0usize);
            for i in 0..p {
                for j in (0..p).filter(|&j| j != i) {
                    if t.at2(i, j) != 0.0 {
                        on += e.at2(i, j);
                        n_on += 1;
                    } else {
                        off += e.at2(i, j);
                        n_off += 1;
                    }
                }
            }
            (on / n_on.max(1) as f64, off / n_off.max(1) as f64)
        })
        .collect()
}
