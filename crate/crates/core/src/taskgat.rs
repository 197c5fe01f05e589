//! Task learner: position-aware node embeddings, masked multi-head graph
//! attention over a (relaxed) feature graph, and CLS-node pooling.
//!
//! Node `i < p` is feature `i`; node `p` is the CLS node. Node `i` attends
//! to itself, and to feature `j` with weight `z[j][i]` folded into the
//! attention logits as `log(z[j][i] + ε)`. The CLS node attends to every
//! node; feature nodes never attend to CLS.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::structure::{dropout_mask, FeatureSpec};
use crate::tensor::Tensor;

/// Additive floor inside `log(z + ε)` for relaxed edges.
pub const MASK_EPS: f64 = 1e-8;
/// Logit added where attention is structurally disallowed.
const BLOCKED: f64 = -1e30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputKind {
    Classes(usize),
    Regression,
}

impl OutputKind {
    pub fn width(self) -> usize {
        match self {
            OutputKind::Classes(c) => c,
            OutputKind::Regression => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeEmbedConfig {
    pub d_pos: usize,
    pub include_full_x: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatConfig {
    /// Width of each layer's output (all heads concatenated).
    pub hidden: usize,
    pub heads: usize,
    pub layers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub w: ParamId,
    pub a_src: ParamId,
    pub a_dst: ParamId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatLayer {
    pub heads: Vec<Head>,
}

/// Embedding plus attention stack over one graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatNetwork {
    spec: FeatureSpec,
    embed: NodeEmbedConfig,
    w_pos: Option<ParamId>,
    cls: ParamId,
    layers: Vec<GatLayer>,
}

impl GatNetwork {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        spec: &FeatureSpec,
        embed: NodeEmbedConfig,
        gat: GatConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if gat.heads == 0 || !gat.hidden.is_multiple_of(gat.heads) {
            return Err(Error::Config(format!(
                "hidden width {} must be a positive multiple of the head count {}",
                gat.hidden, gat.heads
            )));
        }
        let p = spec.len();
        let w_pos = (embed.d_pos > 0).then(|| store.add_glorot(format!("{prefix}.w_pos"), p, embed.d_pos, rng));
        let width0 = node_width(spec, embed);
        let cls = {
            let t = store.add_glorot(format!("{prefix}.cls"), 1, width0, rng);
            let v = store.get(t).clone().reshaped(vec![width0])?;
            *store.get_mut(t) = v;
            t
        };
        let head_width = gat.hidden / gat.heads;
        let mut layers = Vec::with_capacity(gat.layers);
        let mut d_in = width0;
        for l in 0..gat.layers {
            let heads = (0..gat.heads)
                .map(|k| Head {
                    w: store.add_glorot(format!("{prefix}.l{l}.h{k}.w"), d_in, head_width, rng),
                    a_src: store.add_glorot(format!("{prefix}.l{l}.h{k}.a_src"), head_width, 1, rng),
                    a_dst: store.add_glorot(format!("{prefix}.l{l}.h{k}.a_dst"), head_width, 1, rng),
                })
                .collect();
            layers.push(GatLayer { heads });
            d_in = gat.hidden;
        }
        Ok(Self {
            spec: spec.clone(),
            embed,
            w_pos,
            cls,
            layers,
        })
    }

    pub fn output_width(&self, store: &ParamStore) -> usize {
        match self.layers.last() {
            Some(l) => l.heads.len() * store.get(l.heads[0].w).shape()[1],
            None => node_width(&self.spec, self.embed),
        }
    }

    pub fn layers(&self) -> &[GatLayer] {
        &self.layers
    }
}

/// Width of an initial node embedding `[x_i ∥ W_pos_i ∥ x]`; categorical
/// values are padded to the widest block.
pub fn node_width(spec: &FeatureSpec, embed: NodeEmbedConfig) -> usize {
    spec.max_block() + embed.d_pos + if embed.include_full_x { spec.width() } else { 0 }
}

/// Initial embeddings for the `p` feature nodes followed by the CLS node:
/// `[batch, p + 1, width]`.
pub fn embed_nodes(tape: &mut Tape, bound: &Bound, x: Var, net: &GatNetwork) -> Result<Var> {
    let spec = &net.spec;
    let xs = tape.shape(x).to_vec();
    if xs.len() != 2 || xs[1] != spec.width() {
        return Err(Error::shape("embed_nodes", &xs, &[spec.width()]));
    }
    let (batch, width, p) = (xs[0], spec.width(), spec.len());
    let vw = spec.max_block();
    let mut idx = Vec::with_capacity(batch * p * vw);
    for b in 0..batch {
        for i in 0..p {
            let blk = spec.block(i);
            for l in 0..vw {
                idx.push((l < blk.len()).then(|| b * width + blk.start + l));
            }
        }
    }
    let mut parts = vec![tape.gather(x, idx, &[batch, p, vw])?];
    if let Some(w_pos) = net.w_pos {
        let d = net.embed.d_pos;
        let idx = (0..batch * p * d).map(|k| Some(k % (p * d))).collect();
        parts.push(tape.gather(bound.var(w_pos), idx, &[batch, p, d])?);
    }
    if net.embed.include_full_x {
        let idx = (0..batch)
            .flat_map(|b| (0..p).flat_map(move |_| (0..width).map(move |c| Some(b * width + c))))
            .collect();
        parts.push(tape.gather(x, idx, &[batch, p, width])?);
    }
    let nodes = if parts.len() == 1 {
        parts[0]
    } else {
        tape.concat(&parts, 2)?
    };
    let w0 = tape.shape(nodes)[2];
    let idx = (0..batch * w0).map(|k| Some(k % w0)).collect();
    let cls = tape.gather(bound.var(net.cls), idx, &[batch, 1, w0])?;
    tape.concat(&[nodes, cls], 1)
}

/// Additive attention mask `[1, p + 1, p + 1]` from a graph whose top-left
/// `p × p` block covers the feature nodes.
pub fn attention_mask(tape: &mut Tape, graph: Var, p: usize) -> Result<Var> {
    let gs = tape.shape(graph).to_vec();
    if gs.len() != 2 || gs[0] != gs[1] || gs[0] < p {
        return Err(Error::shape("attention_mask", &gs, &[p, p]));
    }
    let pg = gs[0];
    let n = p + 1;
    let mut idx = Vec::with_capacity(n * n);
    let mut offset = Vec::with_capacity(n * n);
    let mut bias = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let feature_pair = i < p && j < p && i != j;
            idx.push(feature_pair.then_some(j * pg + i));
            offset.push(if feature_pair { MASK_EPS } else { 1.0 });
            bias.push(if i < p && j == p { BLOCKED } else { 0.0 });
        }
    }
    let z = tape.gather(graph, idx, &[1, n, n])?;
    let offset = tape.constant(Tensor::from_parts(vec![1, n, n], offset));
    let shifted = tape.add(z, offset)?;
    let logz = tape.log(shifted);
    let bias = tape.constant(Tensor::from_parts(vec![1, n, n], bias));
    tape.add(logz, bias)
}

/// Attention weights `[batch, n, n]` for one head, plus the projected
/// node features `[batch, n, head_width]`.
pub fn attention_scores(
    tape: &mut Tape,
    bound: &Bound,
    h: Var,
    mask: Var,
    head: &Head,
) -> Result<(Var, Var)> {
    let wh = tape.matmul(h, bound.var(head.w))?;
    let s_src = tape.matmul(wh, bound.var(head.a_src))?;
    let s_dst = tape.matmul(wh, bound.var(head.a_dst))?;
    let shape = tape.shape(s_dst).to_vec();
    let s_dst = tape.reshape(s_dst, &[shape[0], 1, shape[1]])?;
    let e = tape.add(s_src, s_dst)?;
    let e = tape.leaky_relu(e);
    let e = tape.add(e, mask)?;
    let alpha = tape.softmax(e, 2)?;
    Ok((alpha, wh))
}

/// One multi-head layer: per head `ELU(Σ_j α_ij W h_j)`, heads concatenated.
pub fn gat_layer(tape: &mut Tape, bound: &Bound, h: Var, mask: Var, layer: &GatLayer) -> Result<Var> {
    let mut outs = Vec::with_capacity(layer.heads.len());
    for head in &layer.heads {
        let (alpha, wh) = attention_scores(tape, bound, h, mask, head)?;
        let agg = tape.matmul(alpha, wh)?;
        outs.push(tape.elu(agg));
    }
    if outs.len() == 1 {
        Ok(outs[0])
    } else {
        tape.concat(&outs, 2)
    }
}

/// Runs embedding and all layers; returns the CLS node's final embedding
/// `[batch, d]`.
pub fn cls_embedding<R: Rng>(
    tape: &mut Tape,
    bound: &Bound,
    x: Var,
    graph: Var,
    net: &GatNetwork,
    mut dropout: Option<(f64, &mut R)>,
) -> Result<Var> {
    let p = net.spec.len();
    let mask = attention_mask(tape, graph, p)?;
    let mut h = embed_nodes(tape, bound, x, net)?;
    for layer in &net.layers {
        if let Some((rate, rng)) = dropout.as_mut() {
            if *rate > 0.0 {
                let m = dropout_mask(tape.shape(h), *rate, *rng);
                let m = tape.constant(m);
                h = tape.mul(h, m)?;
            }
        }
        h = gat_layer(tape, bound, h, mask, layer)?;
    }
    let s = tape.shape(h).to_vec();
    let (batch, n, d) = (s[0], s[1], s[2]);
    let idx = (0..batch)
        .flat_map(|b| (0..d).map(move |k| Some((b * n + p) * d + k)))
        .collect();
    tape.gather(h, idx, &[batch, d])
}

/// Graph-attention predictor over one graph, or one graph per class fused
/// through a context vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskLearner {
    nets: Vec<GatNetwork>,
    context: Option<ParamId>,
    out_w: ParamId,
    out_b: ParamId,
    output: OutputKind,
}

impl TaskLearner {
    /// `graphs` networks; `fuse` adds the context-vector fusion head
    /// (required when `graphs > 1`).
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        spec: &FeatureSpec,
        embed: NodeEmbedConfig,
        gat: GatConfig,
        output: OutputKind,
        graphs: usize,
        fuse: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if graphs > 1 && !fuse {
            return Err(Error::Config("several graphs need the fusion head".into()));
        }
        if graphs == 0 {
            return Err(Error::Config("task learner needs at least one graph".into()));
        }
        let nets = (0..graphs)
            .map(|c| GatNetwork::new(store, &format!("task.g{c}"), spec, embed, gat, rng))
            .collect::<Result<Vec<_>>>()?;
        let d = nets[0].output_width(store);
        let context = fuse.then(|| store.add_glorot("task.context", d, 1, rng));
        let out_w = store.add_glorot("task.out.w", d, output.width(), rng);
        let out_b = store.add("task.out.b", Tensor::zeros(&[output.width()]));
        Ok(Self {
            nets,
            context,
            out_w,
            out_b,
            output,
        })
    }

    pub fn output(&self) -> OutputKind {
        self.output
    }

    pub fn graph_count(&self) -> usize {
        self.nets.len()
    }

    pub fn networks(&self) -> &[GatNetwork] {
        &self.nets
    }

    /// Fused CLS representation and, with several graphs, the fusion
    /// weights `β` (`[batch, C]`).
    pub fn pooled<R: Rng>(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x: Var,
        graphs: &[Var],
        mut dropout: Option<(f64, &mut R)>,
    ) -> Result<(Var, Option<Var>)> {
        if graphs.len() != self.nets.len() {
            return Err(Error::shape("predict", &[graphs.len()], &[self.nets.len()]));
        }
        let mut cls = Vec::with_capacity(graphs.len());
        for (net, &g) in self.nets.iter().zip(graphs) {
            let d = dropout.as_mut().map(|(r, rng)| (*r, &mut **rng));
            cls.push(cls_embedding(tape, bound, x, g, net, d)?);
        }
        match self.context {
            None => Ok((cls[0], None)),
            Some(v) => {
                let v = bound.var(v);
                let scores = cls
                    .iter()
                    .map(|&h| tape.matmul(h, v))
                    .collect::<Result<Vec<_>>>()?;
                let scores = tape.concat(&scores, 1)?;
                let beta = tape.softmax(scores, 1)?;
                let batch = tape.shape(beta)[0];
                let c_count = cls.len();
                let mut fused = None;
                for (c, &h) in cls.iter().enumerate() {
                    let idx = (0..batch).map(|b| Some(b * c_count + c)).collect();
                    let bc = tape.gather(beta, idx, &[batch, 1])?;
                    let term = tape.mul(h, bc)?;
                    fused = Some(match fused {
                        None => term,
                        Some(acc) => tape.add(acc, term)?,
                    });
                }
                Ok((fused.expect("at least one graph"), Some(beta)))
            }
        }
    }

    /// Class log-probabilities `[batch, C]` or regression output `[batch, 1]`.
    pub fn predict<R: Rng>(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x: Var,
        graphs: &[Var],
        dropout: Option<(f64, &mut R)>,
    ) -> Result<Var> {
        let (h, _) = self.pooled(tape, bound, x, graphs, dropout)?;
        let y = tape.matmul(h, bound.var(self.out_w))?;
        let width = self.output.width();
        let b = tape.reshape(bound.var(self.out_b), &[1, width])?;
        let y = tape.add(y, b)?;
        match self.output {
            OutputKind::Classes(_) => tape.log_softmax(y, 1),
            OutputKind::Regression => Ok(y),
        }
    }
}

/// Targets for a batch.
#[derive(Clone, Copy, Debug)]
pub enum Targets<'a> {
    Classes(&'a [usize]),
    Values(&'a [f64]),
}

/// Mean negative log-likelihood (classification) or mean squared error
/// (regression).
pub fn task_loss(tape: &mut Tape, pred: Var, targets: Targets<'_>) -> Result<Var> {
    let shape = tape.shape(pred).to_vec();
    let batch = shape[0];
    match targets {
        Targets::Classes(y) => {
            let c = shape[1];
            if y.len() != batch {
                return Err(Error::shape("task_loss", &shape, &[y.len()]));
            }
            if let Some(&bad) = y.iter().find(|&&v| v >= c) {
                return Err(Error::Data(format!("label {bad} out of range for {c} classes")));
            }
            let idx = y.iter().enumerate().map(|(b, &v)| Some(b * c + v)).collect();
            let picked = tape.gather(pred, idx, &[batch])?;
            let m = tape.mean(picked);
            Ok(tape.scalar_mul(m, -1.0))
        }
        Targets::Values(y) => {
            if y.len() != batch || shape[1] != 1 {
                return Err(Error::shape("task_loss", &shape, &[y.len(), 1]));
            }
            let t = tape.constant(Tensor::from_parts(vec![batch, 1], y.to_vec()));
            let d = tape.sub(pred, t)?;
            let sq = tape.mul(d, d)?;
            Ok(tape.mean(sq))
        }
    }
}
