//! Loss composition, fully-connected pretraining and the joint training
//! loop over edge logits, reconstruction nets and the task learner.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::dataio::{Dataset, Labels, Schema, Standardizer};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, rmse, roc_auc};
use crate::model::{argmax_rows, positive_scores, Model, ModelConfig};
use crate::optim::{clip_global_norm, AdamState};
use crate::params::{Bound, ParamStore};
use crate::rng::{derive, SeededRng};
use crate::structure::{
    class_struct_loss, dag_penalty, off_diagonal, reconstruct, sample_graph, sparsity_loss, struct_loss, Dropout,
};
use crate::taskgat::{task_loss, GatConfig, NodeEmbedConfig, OutputKind, Targets};
use crate::tensor::Tensor;

/// Which parameter snapshot a finished run keeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    /// The epoch with the best validation metric.
    Best,
    /// The final epoch.
    Last,
}

impl std::str::FromStr for Selection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "best" => Ok(Selection::Best),
            "last" => Ok(Selection::Last),
            _ => Err(Error::Param(format!("selection must be 'best' or 'last', got '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    pub lambda_struct: f64,
    pub lambda_sparse: f64,
    pub lambda_dag: f64,
    pub tau: f64,
    pub lr: f64,
    pub epochs: usize,
    pub pretrain_epochs: usize,
    pub batch_size: usize,
    pub struct_hidden: usize,
    pub struct_layers: usize,
    /// Dropout on reconstruction-net activations during pretraining.
    pub struct_dropout: f64,
    pub task_hidden: usize,
    pub task_layers: usize,
    pub d_pos: usize,
    pub heads: usize,
    pub task_dropout: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub multi_graph: bool,
    pub label_node: bool,
    pub include_full_x: bool,
    pub selection: Selection,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            lambda_struct: 1.0,
            lambda_sparse: 0.005,
            lambda_dag: 0.0,
            tau: 0.5,
            lr: 0.001,
            epochs: 30,
            pretrain_epochs: 2,
            batch_size: 128,
            struct_hidden: 16,
            struct_layers: 1,
            struct_dropout: 0.3,
            task_hidden: 32,
            task_layers: 2,
            d_pos: 16,
            heads: 4,
            task_dropout: 0.0,
            clip_norm: 5.0,
            seed: 0,
            multi_graph: false,
            label_node: false,
            include_full_x: true,
            selection: Selection::Best,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let lambdas = [
            ("lambda_struct", self.lambda_struct),
            ("lambda_sparse", self.lambda_sparse),
            ("lambda_dag", self.lambda_dag),
        ];
        for (name, v) in lambdas {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Param(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Param(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Param(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Param("batch_size must be >= 1".into()));
        }
        for (name, v) in [("struct_dropout", self.struct_dropout), ("task_dropout", self.task_dropout)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Param(format!("{name} must be in [0, 1), got {v}")));
            }
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Param(format!("clip_norm must be > 0, got {}", self.clip_norm)));
        }
        if self.heads == 0 || !self.task_hidden.is_multiple_of(self.heads) {
            return Err(Error::Param(format!(
                "task_hidden {} must be a positive multiple of heads {}",
                self.task_hidden, self.heads
            )));
        }
        Ok(())
    }

    pub fn model_config(&self, ds: &Dataset) -> ModelConfig {
        ModelConfig {
            spec: ds.spec.clone(),
            output: ds.y.output_kind(),
            multi_graph: self.multi_graph,
            label_node: self.label_node,
            struct_hidden: self.struct_hidden,
            struct_layers: self.struct_layers,
            embed: NodeEmbedConfig {
                d_pos: self.d_pos,
                include_full_x: self.include_full_x,
            },
            gat: GatConfig {
                hidden: self.task_hidden,
                heads: self.heads,
                layers: self.task_layers,
            },
        }
    }
}

/// Raw (unweighted) loss components and the weighted total.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossParts<T> {
    pub task: T,
    pub structure: T,
    pub sparsity: T,
    pub dag: T,
    pub total: T,
}

pub type LossBreakdown = LossParts<f64>;

impl LossParts<Var> {
    pub fn values(&self, tape: &Tape) -> LossBreakdown {
        LossParts {
            task: tape.value(self.task).item(),
            structure: tape.value(self.structure).item(),
            sparsity: tape.value(self.sparsity).item(),
            dag: tape.value(self.dag).item(),
            total: tape.value(self.total).item(),
        }
    }
}

impl LossBreakdown {
    fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("task", self.task),
            ("structure", self.structure),
            ("sparsity", self.sparsity),
            ("dag", self.dag),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Fully connected constant graph; edge logits frozen, no logit
    /// penalties, reconstruction dropout on.
    Pretrain,
    /// Sampled graphs; everything trains.
    Joint,
}

/// Loss of one batch recorded on `tape`, given `bound` parameters.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    tape: &mut Tape,
    bound: &Bound,
    model: &Model,
    x: &Tensor,
    targets: Targets<'_>,
    hp: &HyperParams,
    phase: Phase,
    gumbel_rng: &mut SeededRng,
    dropout_rng: &mut SeededRng,
) -> Result<LossParts<Var>> {
    if x.shape()[0] == 0 {
        return Err(Error::Contract("empty batch".into()));
    }
    let xs = tape.constant(model.structure_input(x, targets)?);
    let xt = tape.constant(x.clone());
    let q = model.struct_spec().len();
    let gammas: Vec<Var> = model.gamma_ids().iter().map(|&g| bound.var(g)).collect();
    let graphs: Vec<Var> = match phase {
        Phase::Pretrain => gammas.iter().map(|_| tape.constant(off_diagonal(q))).collect(),
        Phase::Joint => gammas
            .iter()
            .map(|&g| sample_graph(tape, g, hp.tau, gumbel_rng))
            .collect::<Result<_>>()?,
    };

    let task_dropout = (hp.task_dropout > 0.0).then_some((hp.task_dropout, &mut *dropout_rng));
    let pred = model.task().predict(tape, bound, xt, &graphs, task_dropout)?;
    let task = task_loss(tape, pred, targets)?;

    let struct_dropout = (phase == Phase::Pretrain && hp.struct_dropout > 0.0).then_some(Dropout {
        rate: hp.struct_dropout,
        rng: &mut *dropout_rng,
    });
    let structure = if model.graph_count() > 1 {
        let Targets::Classes(labels) = targets else {
            return Err(Error::Config("class-specific graphs need class labels".into()));
        };
        class_struct_loss(tape, bound, xs, labels, model.learners(), &graphs, struct_dropout)?
    } else {
        let recon = reconstruct(tape, bound, xs, graphs[0], &model.learners()[0].nets, struct_dropout)?;
        struct_loss(tape, xs, &recon, model.struct_spec())?
    };

    let (sparsity, dag) = match phase {
        Phase::Pretrain => (tape.constant(Tensor::scalar(0.0)), tape.constant(Tensor::scalar(0.0))),
        Phase::Joint => {
            let mut sp = sparsity_loss(tape, gammas[0])?;
            let mut dg = dag_penalty(tape, gammas[0])?;
            for &g in &gammas[1..] {
                let s = sparsity_loss(tape, g)?;
                sp = tape.add(sp, s)?;
                let d = dag_penalty(tape, g)?;
                dg = tape.add(dg, d)?;
            }
            (sp, dg)
        }
    };

    let mut total = task;
    for (w, term) in [(hp.lambda_struct, structure), (hp.lambda_sparse, sparsity), (hp.lambda_dag, dag)] {
        if w > 0.0 {
            let t = tape.scalar_mul(term, w);
            total = tape.add(total, t)?;
        }
    }
    Ok(LossParts {
        task,
        structure,
        sparsity,
        dag,
        total,
    })
}

/// Validation metric used for model selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Auc,
    Accuracy,
    Rmse,
}

impl MetricKind {
    pub fn for_output(output: OutputKind) -> Self {
        match output {
            OutputKind::Classes(2) => MetricKind::Auc,
            OutputKind::Classes(_) => MetricKind::Accuracy,
            OutputKind::Regression => MetricKind::Rmse,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Auc => "auc",
            MetricKind::Accuracy => "accuracy",
            MetricKind::Rmse => "rmse",
        }
    }

    /// Whether `a` is strictly better than `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            MetricKind::Rmse => a < b,
            _ => a > b,
        }
    }

    /// Metric of model outputs against labels.
    pub fn score(self, output: &Tensor, y: &Labels) -> Result<f64> {
        match (self, y) {
            (MetricKind::Auc, Labels::Classes { values, .. }) => {
                let labels: Vec<bool> = values.iter().map(|&v| v == 1).collect();
                roc_auc(&positive_scores(output), &labels)
            }
            (MetricKind::Accuracy, Labels::Classes { values, .. }) => accuracy(values, &argmax_rows(output)),
            (MetricKind::Rmse, Labels::Values { values }) => rmse(values, output.data()),
            _ => Err(Error::Metric(format!("{} does not apply to these labels", self.name()))),
        }
    }
}

/// Metric of `model` (evaluation mode) on `ds`.
pub fn evaluate(model: &Model, ds: &Dataset, metric: MetricKind) -> Result<f64> {
    let out = model.predict(&ds.x)?;
    metric.score(&out, &ds.y)
}

/// Progress of a joint training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub epoch: usize,
    pub metric: MetricKind,
    pub best_metric: Option<f64>,
    pub best_epoch: Option<usize>,
    #[serde(skip)]
    pub best_params: Option<ParamStore>,
    pub pretrain_history: Vec<LossBreakdown>,
    /// One entry per joint-training batch.
    pub history: Vec<LossBreakdown>,
    pub valid_history: Vec<f64>,
    /// Edge probabilities of every graph after each epoch.
    pub edge_history: Vec<Vec<Tensor>>,
}

impl TrainState {
    fn new(metric: MetricKind) -> Self {
        Self {
            epoch: 0,
            metric,
            best_metric: None,
            best_epoch: None,
            best_params: None,
            pretrain_history: Vec::new(),
            history: Vec::new(),
            valid_history: Vec::new(),
            edge_history: Vec::new(),
        }
    }

    /// Records a validation result; keeps a snapshot when it improves.
    pub fn offer(&mut self, metric: f64, params: &ParamStore) {
        self.valid_history.push(metric);
        let improves = match self.best_metric {
            None => true,
            Some(b) => self.metric.better(metric, b),
        };
        if improves {
            self.best_metric = Some(metric);
            self.best_epoch = Some(self.epoch);
            self.best_params = Some(params.clone());
        }
    }
}

fn batch_rows(ds: &Dataset, rows: &[usize]) -> (Tensor, Labels) {
    let b = ds.select(rows);
    (b.x, b.y)
}

/// One optimizer step on a batch; returns the loss breakdown.
#[allow(clippy::too_many_arguments)]
fn step(
    model: &mut Model,
    adam: &mut AdamState,
    x: &Tensor,
    y: &Labels,
    hp: &HyperParams,
    phase: Phase,
    gumbel_rng: &mut SeededRng,
    dropout_rng: &mut SeededRng,
) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, phase == Phase::Pretrain);
    let parts = total_loss(&mut tape, &bound, model, x, y.targets(), hp, phase, gumbel_rng, dropout_rng)?;
    let values = parts.values(&tape);
    if let Some(name) = values.first_non_finite() {
        return Err(Error::Diverged(format!("{name} loss became non-finite ({values:?})")));
    }
    let mut grads = tape.backward(parts.total)?;
    let mut grads = model.params().collect_grads(&bound, &mut grads);
    if let Some(k) = grads.iter().position(|g| !g.all_finite()) {
        return Err(Error::Diverged(format!(
            "gradient of {} became non-finite",
            model.params().name(crate::params::ParamId(k))
        )));
    }
    clip_global_norm(&mut grads, hp.clip_norm);
    let grads: Vec<Option<Tensor>> = grads.into_iter().map(Some).collect();
    adam.step(model.params_mut().values_mut(), &grads)?;
    Ok(values)
}

fn run_epoch(
    model: &mut Model,
    adam: &mut AdamState,
    train: &Dataset,
    hp: &HyperParams,
    phase: Phase,
    rngs: &mut [SeededRng; 3],
    epoch: usize,
) -> Result<Vec<LossBreakdown>> {
    let mut order: Vec<usize> = (0..train.n_rows()).collect();
    order.shuffle(&mut rngs[0]);
    let mut out = Vec::with_capacity(order.len().div_ceil(hp.batch_size));
    let [_, gumbel, dropout] = rngs;
    for (b, rows) in order.chunks(hp.batch_size).enumerate() {
        let (x, y) = batch_rows(train, rows);
        let loss = step(model, adam, &x, &y, hp, phase, gumbel, dropout).map_err(|e| match e {
            Error::Diverged(msg) => Error::Diverged(format!("epoch {epoch}, batch {b}: {msg}")),
            other => other,
        })?;
        out.push(loss);
    }
    Ok(out)
}

fn check_data(train: &Dataset, model: &Model) -> Result<()> {
    if train.n_rows() == 0 {
        return Err(Error::Data("empty training set".into()));
    }
    if train.spec != model.config().spec {
        return Err(Error::Data("dataset features do not match the model".into()));
    }
    Ok(())
}

/// Trains reconstruction nets and the task learner on a fully connected
/// graph with frozen edge logits.
pub fn pretrain(model: &mut Model, train: &Dataset, hp: &HyperParams) -> Result<Vec<LossBreakdown>> {
    hp.validate()?;
    check_data(train, model)?;
    let mut adam = AdamState::new(hp.lr);
    let mut rngs = [derive(hp.seed, 11), derive(hp.seed, 12), derive(hp.seed, 13)];
    let mut history = Vec::new();
    for epoch in 0..hp.pretrain_epochs {
        history.extend(run_epoch(model, &mut adam, train, hp, Phase::Pretrain, &mut rngs, epoch)?);
    }
    Ok(history)
}

/// Joint training of all parameters. With [`Selection::Best`] the model is
/// left at the best-validation snapshot.
pub fn train(model: &mut Model, train: &Dataset, valid: &Dataset, hp: &HyperParams) -> Result<TrainState> {
    hp.validate()?;
    check_data(train, model)?;
    if valid.n_rows() == 0 {
        return Err(Error::Data("empty validation set".into()));
    }
    let metric = MetricKind::for_output(model.config().output);
    let mut state = TrainState::new(metric);
    let mut adam = AdamState::new(hp.lr);
    let mut rngs = [derive(hp.seed, 2), derive(hp.seed, 3), derive(hp.seed, 4)];
    for epoch in 0..hp.epochs {
        state.epoch = epoch;
        let losses = run_epoch(model, &mut adam, train, hp, Phase::Joint, &mut rngs, epoch)?;
        state.history.extend(losses);
        state.edge_history.push(model.edge_probabilities());
        let m = evaluate(model, valid, metric)?;
        log::debug!(
            "epoch {epoch}: loss {:.5} valid {} {m:.5}",
            state.history.last().map_or(f64::NAN, |l| l.total),
            metric.name()
        );
        state.offer(m, model.params());
    }
    state.epoch = hp.epochs;
    if hp.selection == Selection::Best {
        if let Some(best) = &state.best_params {
            model.load_params(best)?;
        }
    }
    Ok(state)
}

/// Builds a model for `train`, pretrains it, then trains it jointly.
pub fn fit(train_ds: &Dataset, valid: &Dataset, hp: &HyperParams) -> Result<(Model, TrainState)> {
    hp.validate()?;
    let mut model = Model::new(hp.model_config(train_ds), &mut derive(hp.seed, 1))?;
    let pre = pretrain(&mut model, train_ds, hp)?;
    let mut state = train(&mut model, train_ds, valid, hp)?;
    state.pretrain_history = pre;
    Ok((model, state))
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to reuse a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub hp: HyperParams,
    pub epoch: usize,
    pub model: Model,
    pub feature_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardizer: Option<Standardizer>,
    /// Input schema with level orders fixed at training time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<Schema>,
}

impl Checkpoint {
    pub fn new(hp: &HyperParams, epoch: usize, model: Model, feature_names: Vec<String>) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            hp: hp.clone(),
            epoch,
            model,
            feature_names,
            standardizer: None,
            schema: None,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::Split;
    use crate::rng::seeded;
    use rand::Rng;

    fn toy(n: usize, seed: u64) -> Dataset {
        let mut rng = seeded(seed);
        let mut x = Vec::with_capacity(n * 3);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let a: f64 = rng.random_range(-1.0..1.0);
            let b: f64 = rng.random_range(-1.0..1.0);
            x.extend([a, b, a + 0.1 * rng.random_range(-1.0..1.0)]);
            y.push(usize::from(a * b > 0.0));
        }
        Dataset::from_real(
            Tensor::new(vec![n, 3], x).unwrap(),
            Labels::Classes {
                values: y,
                levels: vec!["0".into(), "1".into()],
            },
            vec!["a".into(), "b".into(), "c".into()],
            vec![Split::Train; n],
        )
        .unwrap()
    }

    fn small_hp() -> HyperParams {
        HyperParams {
            epochs: 2,
            pretrain_epochs: 1,
            batch_size: 16,
            struct_hidden: 4,
            task_hidden: 8,
            task_layers: 1,
            d_pos: 2,
            heads: 2,
            ..HyperParams::default()
        }
    }

    fn loss_on(model: &Model, ds: &Dataset, hp: &HyperParams, phase: Phase) -> LossBreakdown {
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, phase == Phase::Pretrain);
        let parts = total_loss(
            &mut tape,
            &bound,
            model,
            &ds.x,
            ds.y.targets(),
            hp,
            phase,
            &mut seeded(5),
            &mut seeded(6),
        )
        .unwrap();
        parts.values(&tape)
    }

    #[test]
    fn total_is_the_weighted_sum_of_components() {
        let ds = toy(20, 1);
        let hp = HyperParams {
            lambda_struct: 0.7,
            lambda_sparse: 0.03,
            lambda_dag: 0.2,
            ..small_hp()
        };
        let model = Model::new(hp.model_config(&ds), &mut seeded(2)).unwrap();
        let l = loss_on(&model, &ds, &hp, Phase::Joint);
        let hand = l.task + 0.7 * l.structure + 0.03 * l.sparsity + 0.2 * l.dag;
        assert!((l.total - hand).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_leave_only_the_task_loss() {
        let ds = toy(20, 1);
        let hp = HyperParams {
            lambda_struct: 0.0,
            lambda_sparse: 0.0,
            lambda_dag: 0.0,
            ..small_hp()
        };
        let model = Model::new(hp.model_config(&ds), &mut seeded(2)).unwrap();
        let l = loss_on(&model, &ds, &hp, Phase::Joint);
        assert_eq!(l.total, l.task);
    }

    #[test]
    fn pretraining_leaves_logits_untouched() {
        let ds = toy(64, 3);
        let hp = small_hp();
        let mut model = Model::new(hp.model_config(&ds), &mut seeded(2)).unwrap();
        let before = model.clone();
        pretrain(&mut model, &ds, &HyperParams { pretrain_epochs: 0, ..hp.clone() }).unwrap();
        assert_eq!(model, before);
        let hist = pretrain(&mut model, &ds, &hp).unwrap();
        assert_eq!(hist.len(), 4);
        assert!(hist.iter().all(|l| l.sparsity == 0.0 && l.dag == 0.0));
        for g in model.gamma_ids() {
            assert_eq!(model.params().get(g), before.params().get(g));
        }
        assert_ne!(model.params(), before.params());
    }

    #[test]
    fn history_length_and_determinism() {
        let ds = toy(50, 4);
        let valid = toy(30, 5);
        let hp = small_hp();
        let (m1, s1) = fit(&ds, &valid, &hp).unwrap();
        let (m2, s2) = fit(&ds, &valid, &hp).unwrap();
        assert_eq!(s1.history.len(), hp.epochs * 50usize.div_ceil(hp.batch_size));
        assert_eq!(s1.history, s2.history);
        assert_eq!(m1.params(), m2.params());
        assert_eq!(s1.edge_history.len(), hp.epochs);
    }

    #[test]
    fn best_snapshot_is_never_replaced_by_a_worse_one() {
        let store = ParamStore::new();
        let mut s = TrainState::new(MetricKind::Auc);
        s.offer(0.6, &store);
        s.epoch = 1;
        s.offer(0.7, &store);
        s.epoch = 2;
        s.offer(0.65, &store);
        assert_eq!((s.best_metric, s.best_epoch), (Some(0.7), Some(1)));
        let mut r = TrainState::new(MetricKind::Rmse);
        r.offer(1.0, &store);
        r.epoch = 1;
        r.offer(2.0, &store);
        assert_eq!(r.best_epoch, Some(0));
    }

    #[test]
    fn invalid_hyperparameters_are_rejected() {
        for hp in [
            HyperParams { tau: 0.0, ..HyperParams::default() },
            HyperParams { lambda_sparse: -1.0, ..HyperParams::default() },
            HyperParams { batch_size: 0, ..HyperParams::default() },
            HyperParams { task_hidden: 30, heads: 4, ..HyperParams::default() },
        ] {
            assert!(matches!(hp.validate(), Err(Error::Param(_))));
        }
    }

    #[test]
    fn divergence_names_the_component() {
        let mut ds = toy(16, 1);
        ds.x.data_mut()[0] = 1e300;
        let hp = small_hp();
        let mut model = Model::new(hp.model_config(&ds), &mut seeded(2)).unwrap();
        match pretrain(&mut model, &ds, &hp) {
            Err(Error::Diverged(msg)) => assert!(msg.contains("loss") || msg.contains("gradient"), "{msg}"),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn checkpoint_round_trips_exactly() {
        let ds = toy(20, 1);
        let hp = small_hp();
        let model = Model::new(hp.model_config(&ds), &mut seeded(2)).unwrap();
        let ck = Checkpoint::new(&hp, 3, model, ds.names.clone());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    }
}
