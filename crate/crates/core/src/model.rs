//! A complete predictor: one structure learner (or one per class) and the
//! graph-attention task learner that consumes its graphs.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::metrics::symmetrize_max;
use crate::parallel;
use crate::params::{Bound, ParamId, ParamStore};
use crate::rng::SeededRng;
use crate::structure::{edge_probabilities, FeatureKind, FeatureSpec, GraphLearner};
use crate::taskgat::{GatConfig, NodeEmbedConfig, OutputKind, Targets, TaskLearner};
use crate::tensor::Tensor;

/// Rows per independently evaluated chunk at prediction time.
pub const EVAL_CHUNK: usize = 512;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub spec: FeatureSpec,
    pub output: OutputKind,
    /// One graph per class, fused in the task learner.
    pub multi_graph: bool,
    /// Adds the label as an extra node of the structure graph.
    pub label_node: bool,
    pub struct_hidden: usize,
    pub struct_layers: usize,
    pub embed: NodeEmbedConfig,
    pub gat: GatConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    config: ModelConfig,
    struct_spec: FeatureSpec,
    params: ParamStore,
    learners: Vec<GraphLearner>,
    task: TaskLearner,
}

impl Model {
    pub fn new(config: ModelConfig, rng: &mut SeededRng) -> Result<Self> {
        let graphs = match (config.multi_graph, config.output) {
            (false, _) => 1,
            (true, OutputKind::Classes(c)) => c,
            (true, OutputKind::Regression) => {
                return Err(Error::Config("class-specific graphs need a classification target".into()))
            }
        };
        let struct_spec = if config.label_node {
            config.spec.with_extra(match config.output {
                OutputKind::Classes(c) => FeatureKind::Categorical(c),
                OutputKind::Regression => FeatureKind::Real,
            })?
        } else {
            config.spec.clone()
        };
        let mut params = ParamStore::new();
        let learners = (0..graphs)
            .map(|c| {
                GraphLearner::new(
                    &mut params,
                    &format!("struct.g{c}"),
                    &struct_spec,
                    config.struct_hidden,
                    config.struct_layers,
                    rng,
                )
            })
            .collect();
        let task = TaskLearner::new(
            &mut params,
            &config.spec,
            config.embed,
            config.gat,
            config.output,
            graphs,
            config.multi_graph,
            rng,
        )?;
        Ok(Self {
            config,
            struct_spec,
            params,
            learners,
            task,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Spec of the structure learner's nodes (features, then the label
    /// node if enabled).
    pub fn struct_spec(&self) -> &FeatureSpec {
        &self.struct_spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn learners(&self) -> &[GraphLearner] {
        &self.learners
    }

    pub fn task(&self) -> &TaskLearner {
        &self.task
    }

    pub fn graph_count(&self) -> usize {
        self.learners.len()
    }

    pub fn gamma_ids(&self) -> Vec<ParamId> {
        self.learners.iter().map(|l| l.gamma).collect()
    }

    /// Structure-learner input: the features, followed by the encoded label
    /// when the label node is enabled.
    pub fn structure_input(&self, x: &Tensor, targets: Targets<'_>) -> Result<Tensor> {
        if !self.config.label_node {
            return Ok(x.clone());
        }
        let (n, w) = (x.shape()[0], x.shape()[1]);
        let extra = self.struct_spec.width() - w;
        let mut data = Vec::with_capacity(n * (w + extra));
        for r in 0..n {
            data.extend_from_slice(&x.data()[r * w..(r + 1) * w]);
            match targets {
                Targets::Classes(y) => {
                    let mut block = vec![0.0; extra];
                    let c = *y.get(r).ok_or_else(|| Error::shape("structure_input", &[n], &[y.len()]))?;
                    *block
                        .get_mut(c)
                        .ok_or_else(|| Error::Data(format!("label {c} out of range for {extra} classes")))? = 1.0;
                    data.extend(block);
                }
                Targets::Values(y) => data.push(*y.get(r).ok_or_else(|| Error::shape("structure_input", &[n], &[y.len()]))?),
            }
        }
        Tensor::new(vec![n, w + extra], data)
    }

    /// Edge probabilities of every graph over the structure nodes.
    pub fn edge_probabilities(&self) -> Vec<Tensor> {
        self.learners.iter().map(|l| edge_probabilities(self.params.get(l.gamma))).collect()
    }

    /// Edge probabilities restricted to feature nodes.
    pub fn feature_edge_probabilities(&self) -> Vec<Tensor> {
        let p = self.config.spec.len();
        self.edge_probabilities()
            .into_iter()
            .map(|e| {
                let q = e.shape()[0];
                let data = (0..p).flat_map(|i| (0..p).map(move |j| (i, j))).map(|(i, j)| e.data()[i * q + j]).collect();
                Tensor::from_parts(vec![p, p], data)
            })
            .collect()
    }

    /// Undirected interaction strength `max(σ(γ_ij), σ(γ_ji))` per graph.
    pub fn interaction_strengths(&self) -> Vec<Tensor> {
        self.edge_probabilities().iter().map(symmetrize_max).collect()
    }

    /// Graphs thresholded at probability 0.5.
    pub fn hard_graphs(&self) -> Vec<Tensor> {
        self.edge_probabilities()
            .into_iter()
            .map(|mut e| {
                for v in e.data_mut() {
                    *v = if *v > 0.5 { 1.0 } else { 0.0 };
                }
                e
            })
            .collect()
    }

    /// Task output for `x` on the given fixed graphs with all weights
    /// constant: class log-probabilities or regression values.
    pub fn predict_with_graphs(&self, x: &Tensor, graphs: &[Tensor]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, |_| true);
        let xv = tape.constant(x.clone());
        let gv: Vec<Var> = graphs.iter().map(|g| tape.constant(g.clone())).collect();
        let out = self.task.predict::<SeededRng>(&mut tape, &bound, xv, &gv, None)?;
        Ok(tape.value(out).clone())
    }

    /// Evaluation-mode predictions on the thresholded graphs, computed in
    /// independent row chunks.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let graphs = self.hard_graphs();
        let (n, w) = (x.shape()[0], x.shape()[1]);
        if w != self.config.spec.width() {
            return Err(Error::shape("predict", x.shape(), &[n, self.config.spec.width()]));
        }
        let chunks: Vec<(usize, usize)> = (0..n.div_ceil(EVAL_CHUNK))
            .map(|c| (c * EVAL_CHUNK, ((c + 1) * EVAL_CHUNK).min(n)))
            .collect();
        let parts = parallel::map_items(chunks, |(a, b)| {
            let xc = Tensor::from_parts(vec![b - a, w], x.data()[a * w..b * w].to_vec());
            self.predict_with_graphs(&xc, &graphs)
        });
        let width = self.config.output.width();
        let mut data = Vec::with_capacity(n * width);
        for p in parts {
            data.extend(p?.into_data());
        }
        Tensor::new(vec![n, width], data)
    }

    /// Copies every parameter value from `other`.
    pub fn load_params(&mut self, other: &ParamStore) -> Result<()> {
        self.params.load_from(other)
    }

    /// Binds parameters to `tape`, freezing the edge logits when asked.
    pub fn bind(&self, tape: &mut Tape, freeze_gamma: bool) -> Bound {
        let gammas = self.gamma_ids();
        self.params.bind(tape, |id| freeze_gamma && gammas.contains(&id))
    }

}

/// Probability of class 1 from log-probabilities `[n, 2]`.
pub fn positive_scores(log_probs: &Tensor) -> Vec<f64> {
    let c = log_probs.shape()[1];
    log_probs.data().chunks(c).map(|r| r[1.min(c - 1)].exp()).collect()
}

/// Most probable class per row.
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    let c = t.shape()[1];
    t.data()
        .chunks(c)
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn config(multi: bool, label_node: bool) -> ModelConfig {
        ModelConfig {
            spec: FeatureSpec::all_real(3),
            output: OutputKind::Classes(2),
            multi_graph: multi,
            label_node,
            struct_hidden: 4,
            struct_layers: 1,
            embed: NodeEmbedConfig {
                d_pos: 2,
                include_full_x: true,
            },
            gat: GatConfig {
                hidden: 4,
                heads: 2,
                layers: 1,
            },
        }
    }

    #[test]
    fn label_node_extends_the_structure_graph_only() {
        let m = Model::new(config(false, true), &mut seeded(0)).unwrap();
        assert_eq!(m.struct_spec().len(), 4);
        assert_eq!(m.edge_probabilities()[0].shape(), &[4, 4]);
        assert_eq!(m.feature_edge_probabilities()[0].shape(), &[3, 3]);
        let x = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let s = m.structure_input(&x, Targets::Classes(&[1, 0])).unwrap();
        assert_eq!(s.data(), &[1.0, 2.0, 3.0, 0.0, 1.0, 4.0, 5.0, 6.0, 1.0, 0.0]);
    }

    #[test]
    fn one_graph_per_class_when_multi_graph() {
        let m = Model::new(config(true, false), &mut seeded(0)).unwrap();
        assert_eq!(m.graph_count(), 2);
        let mut reg = config(true, false);
        reg.output = OutputKind::Regression;
        assert!(matches!(Model::new(reg, &mut seeded(0)), Err(Error::Config(_))));
    }

    #[test]
    fn chunked_prediction_matches_a_single_pass() {
        let m = Model::new(config(false, false), &mut seeded(1)).unwrap();
        let n = EVAL_CHUNK + 37;
        let x = Tensor::new(vec![n, 3], (0..n * 3).map(|k| ((k * 7) % 11) as f64 / 5.0 - 1.0).collect()).unwrap();
        let whole = m.predict_with_graphs(&x, &m.hard_graphs()).unwrap();
        let chunked = m.predict(&x).unwrap();
        assert_eq!(whole.shape(), chunked.shape());
        for (a, b) in whole.data().iter().zip(chunked.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fresh_logits_threshold_to_an_empty_graph() {
        let m = Model::new(config(false, false), &mut seeded(0)).unwrap();
        assert!(m.hard_graphs()[0].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn argmax_and_scores() {
        let t = Tensor::new(vec![2, 2], vec![0.2f64.ln(), 0.8f64.ln(), 0.9f64.ln(), 0.1f64.ln()]).unwrap();
        assert_eq!(argmax_rows(&t), vec![1, 0]);
        let s = positive_scores(&t);
        assert!((s[0] - 0.8).abs() < 1e-12 && (s[1] - 0.1).abs() < 1e-12);
    }
}
