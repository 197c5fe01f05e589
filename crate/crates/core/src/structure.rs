//! Structure learner: edge logits, relaxed graph sampling, and masked
//! reconstruction of each feature from its sampled neighbours.
//!
//! Graph convention: `z[j][i]` is the edge from feature `j` into feature
//! `i`, so column `i` of a graph selects the inputs used to reconstruct
//! feature `i`.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "levels")]
pub enum FeatureKind {
    Real,
    Categorical(usize),
}

impl FeatureKind {
    pub fn width(self) -> usize {
        match self {
            FeatureKind::Real => 1,
            FeatureKind::Categorical(l) => l,
        }
    }
}

/// Per-feature kinds and their column blocks in the encoded vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<FeatureKind>", into = "Vec<FeatureKind>")]
pub struct FeatureSpec {
    kinds: Vec<FeatureKind>,
    offsets: Vec<usize>,
    width: usize,
}

impl TryFrom<Vec<FeatureKind>> for FeatureSpec {
    type Error = Error;
    fn try_from(kinds: Vec<FeatureKind>) -> Result<Self> {
        Self::new(kinds)
    }
}

impl From<FeatureSpec> for Vec<FeatureKind> {
    fn from(spec: FeatureSpec) -> Self {
        spec.kinds
    }
}

impl FeatureSpec {
    pub fn new(kinds: Vec<FeatureKind>) -> Result<Self> {
        let mut offsets = Vec::with_capacity(kinds.len());
        let mut width = 0;
        for (i, k) in kinds.iter().enumerate() {
            if let FeatureKind::Categorical(l) = k {
                if *l < 2 {
                    return Err(Error::Data(format!(
                        "categorical feature {i} has {l} levels; need at least 2"
                    )));
                }
            }
            offsets.push(width);
            width += k.width();
        }
        Ok(Self {
            kinds,
            offsets,
            width,
        })
    }

    pub fn all_real(p: usize) -> Self {
        Self::new(vec![FeatureKind::Real; p]).expect("real features are always valid")
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    /// Width of the encoded (one-hot expanded) vector.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn kind(&self, i: usize) -> FeatureKind {
        self.kinds[i]
    }

    pub fn kinds(&self) -> &[FeatureKind] {
        &self.kinds
    }

    pub fn block(&self, i: usize) -> Range<usize> {
        self.offsets[i]..self.offsets[i] + self.kinds[i].width()
    }

    /// Widest single feature block.
    pub fn max_block(&self) -> usize {
        self.kinds.iter().map(|k| k.width()).max().unwrap_or(0)
    }

    /// Feature index that owns each encoded column.
    pub fn column_owner(&self) -> Vec<usize> {
        let mut owner = Vec::with_capacity(self.width);
        for (i, k) in self.kinds.iter().enumerate() {
            owner.extend(std::iter::repeat_n(i, k.width()));
        }
        owner
    }

    /// Spec with one more feature appended.
    pub fn with_extra(&self, kind: FeatureKind) -> Result<Self> {
        let mut kinds = self.kinds.clone();
        kinds.push(kind);
        Self::new(kinds)
    }
}

// ------------------------------------------------------------------ edges

/// Sigmoid of the logits with the diagonal forced to zero.
pub fn edge_probabilities(gamma: &Tensor) -> Tensor {
    let p = gamma.shape()[0];
    let mut out = Tensor::zeros(&[p, p]);
    for i in 0..p {
        for j in 0..p {
            if i != j {
                out.set2(i, j, sigmoid(gamma.at2(i, j)));
            }
        }
    }
    out
}

/// Off-diagonal indicator matrix.
pub fn off_diagonal(p: usize) -> Tensor {
    let mut t = Tensor::ones(&[p, p]);
    for i in 0..p {
        t.set2(i, i, 0.0);
    }
    t
}

/// Taped [`edge_probabilities`].
pub fn edge_probabilities_var(tape: &mut Tape, gamma: Var) -> Result<Var> {
    let p = tape.shape(gamma)[0];
    let s = tape.sigmoid(gamma);
    let mask = tape.constant(off_diagonal(p));
    tape.mul(s, mask)
}

/// Binary-concrete relaxation of one Bernoulli(σ(logit)) draw.
///
/// `log σ(γ) − log(1 − σ(γ))` equals `γ` exactly, so the logit enters
/// directly and stays finite even when σ saturates.
pub fn binary_concrete(logit: f64, tau: f64, g1: f64, g2: f64) -> f64 {
    sigmoid((logit + g1 - g2) / tau)
}

/// Logistic noise `g1 − g2` for every off-diagonal entry of a `p × p` graph.
pub fn sample_noise(p: usize, rng: &mut impl Rng) -> Tensor {
    let mut t = Tensor::zeros(&[p, p]);
    for i in 0..p {
        for j in 0..p {
            if i != j {
                t.set2(i, j, rng::gumbel(rng) - rng::gumbel(rng));
            }
        }
    }
    t
}

/// Relaxed graph sample `z = σ((γ + g1 − g2) / τ)` with zero diagonal,
/// differentiable with respect to `gamma`.
pub fn sample_graph(tape: &mut Tape, gamma: Var, tau: f64, rng: &mut impl Rng) -> Result<Var> {
    check_tau(tau)?;
    let noise = sample_noise(tape.shape(gamma)[0], rng);
    sample_graph_with_noise(tape, gamma, tau, noise)
}

/// [`sample_graph`] with caller-supplied logistic noise.
pub fn sample_graph_with_noise(tape: &mut Tape, gamma: Var, tau: f64, noise: Tensor) -> Result<Var> {
    check_tau(tau)?;
    let p = tape.shape(gamma)[0];
    let noise = tape.constant(noise);
    let shifted = tape.add(gamma, noise)?;
    let scaled = tape.scalar_mul(shifted, 1.0 / tau);
    let z = tape.sigmoid(scaled);
    let mask = tape.constant(off_diagonal(p));
    tape.mul(z, mask)
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Param(format!("temperature must be > 0, got {tau}")));
    }
    Ok(())
}

/// Sum of off-diagonal edge probabilities.
pub fn sparsity_loss(tape: &mut Tape, gamma: Var) -> Result<Var> {
    let probs = edge_probabilities_var(tape, gamma)?;
    Ok(tape.sum(probs))
}

/// `Σ_{i≠j} cosh(σ(γ_ij) σ(γ_ji))`, penalising two-cycles.
pub fn dag_penalty(tape: &mut Tape, gamma: Var) -> Result<Var> {
    let p = tape.shape(gamma)[0];
    let probs = edge_probabilities_var(tape, gamma)?;
    let transpose_idx = (0..p * p).map(|k| Some((k % p) * p + k / p)).collect();
    let probs_t = tape.gather(probs, transpose_idx, &[p, p])?;
    let prod = tape.mul(probs, probs_t)?;
    let c = tape.cosh(prod);
    let mask = tape.constant(off_diagonal(p));
    let c = tape.mul(c, mask)?;
    Ok(tape.sum(c))
}

// --------------------------------------------------------- reconstruction

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct FeatureNet {
    layers: Vec<(ParamId, ParamId)>,
}

/// One MLP per feature, reconstructing it from the masked other features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconNets {
    spec: FeatureSpec,
    hidden: usize,
    nets: Vec<FeatureNet>,
}

impl ReconNets {
    /// `hidden_layers` hidden layers of width `hidden`, ELU activations.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        spec: &FeatureSpec,
        hidden: usize,
        hidden_layers: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let nets = (0..spec.len())
            .map(|i| {
                let mut widths = vec![spec.width()];
                widths.extend(std::iter::repeat_n(hidden, hidden_layers));
                widths.push(spec.kind(i).width());
                let layers = widths
                    .windows(2)
                    .enumerate()
                    .map(|(l, w)| {
                        let wid = store.add_glorot(format!("{prefix}.f{i}.w{l}"), w[0], w[1], rng);
                        let bid = store.add(format!("{prefix}.f{i}.b{l}"), Tensor::zeros(&[w[1]]));
                        (wid, bid)
                    })
                    .collect();
                FeatureNet { layers }
            })
            .collect();
        Self {
            spec: spec.clone(),
            hidden,
            nets,
        }
    }

    pub fn spec(&self) -> &FeatureSpec {
        &self.spec
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.nets
            .iter()
            .flat_map(|n| n.layers.iter().flat_map(|&(w, b)| [w, b]))
    }
}

/// Dropout applied to hidden activations during reconstruction.
pub struct Dropout<'a, R: Rng> {
    pub rate: f64,
    pub rng: &'a mut R,
}

/// Inverted-dropout mask of `shape`.
pub fn dropout_mask(shape: &[usize], rate: f64, rng: &mut impl Rng) -> Tensor {
    let keep = 1.0 - rate;
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    Tensor::from_parts(shape.to_vec(), data)
}

/// Reconstructs every feature of the batch `x` (`[batch, width]`) from the
/// inputs selected by its graph column. Real features yield `[batch, 1]`,
/// categorical ones `[batch, L]` log-probabilities.
pub fn reconstruct<R: Rng>(
    tape: &mut Tape,
    bound: &Bound,
    x: Var,
    graph: Var,
    nets: &ReconNets,
    mut dropout: Option<Dropout<'_, R>>,
) -> Result<Vec<Var>> {
    let spec = &nets.spec;
    let xs = tape.shape(x).to_vec();
    let gs = tape.shape(graph).to_vec();
    if xs.len() != 2 || xs[1] != spec.width() {
        return Err(Error::shape("reconstruct", &xs, &[spec.width()]));
    }
    if gs != [spec.len(), spec.len()] {
        return Err(Error::shape("reconstruct", &gs, &[spec.len(), spec.len()]));
    }
    let p = spec.len();
    let owner = spec.column_owner();
    let mut outputs = Vec::with_capacity(p);
    for (i, net) in nets.nets.iter().enumerate() {
        let idx = owner
            .iter()
            .map(|&j| (j != i).then_some(j * p + i))
            .collect();
        let mask = tape.gather(graph, idx, &[1, spec.width()])?;
        let mut h = tape.mul(x, mask)?;
        let last = net.layers.len() - 1;
        for (l, &(w, b)) in net.layers.iter().enumerate() {
            let wv = bound.var(w);
            let bv = bound.var(b);
            h = tape.matmul(h, wv)?;
            let width = tape.shape(bv)[0];
            let bias = tape.reshape(bv, &[1, width])?;
            h = tape.add(h, bias)?;
            if l < last {
                h = tape.elu(h);
                if let Some(d) = dropout.as_mut() {
                    if d.rate > 0.0 {
                        let m = dropout_mask(tape.shape(h), d.rate, d.rng);
                        let m = tape.constant(m);
                        h = tape.mul(h, m)?;
                    }
                }
            }
        }
        if let FeatureKind::Categorical(_) = spec.kind(i) {
            h = tape.log_softmax(h, 1)?;
        }
        outputs.push(h);
    }
    Ok(outputs)
}

/// Level index of a one-hot block, validated.
pub(crate) fn one_hot_level(block: &[f64]) -> Option<usize> {
    let mut level = None;
    for (l, &v) in block.iter().enumerate() {
        if v == 1.0 {
            if level.is_some() {
                return None;
            }
            level = Some(l);
        } else if v != 0.0 {
            return None;
        }
    }
    level
}

/// Reconstruction loss summed over features and over the batch:
/// squared error for real features, negative log-likelihood of the true
/// level for categorical ones.
pub fn struct_loss_sum(tape: &mut Tape, x: Var, recon: &[Var], spec: &FeatureSpec) -> Result<Var> {
    if recon.len() != spec.len() {
        return Err(Error::shape("struct_loss", &[recon.len()], &[spec.len()]));
    }
    let xv = tape.value(x).clone();
    let batch = xv.shape()[0];
    let width = spec.width();
    let mut terms = Vec::with_capacity(spec.len());
    for (i, &r) in recon.iter().enumerate() {
        let block = spec.block(i);
        let term = match spec.kind(i) {
            FeatureKind::Real => {
                let idx = (0..batch).map(|b| Some(b * width + block.start)).collect();
                let target = tape.gather(x, idx, &[batch, 1])?;
                let d = tape.sub(r, target)?;
                let sq = tape.mul(d, d)?;
                tape.sum(sq)
            }
            FeatureKind::Categorical(l) => {
                let mut idx = Vec::with_capacity(batch);
                for b in 0..batch {
                    let row = &xv.data()[b * width + block.start..b * width + block.end];
                    let level = one_hot_level(row).ok_or_else(|| {
                        Error::Data(format!(
                            "feature {i}, row {b}: categorical value is not a level in [0, {l})"
                        ))
                    })?;
                    idx.push(Some(b * l + level));
                }
                let picked = tape.gather(r, idx, &[batch])?;
                let s = tape.sum(picked);
                tape.scalar_mul(s, -1.0)
            }
        };
        terms.push(term);
    }
    let mut flat = Vec::with_capacity(terms.len());
    for t in terms {
        flat.push(tape.reshape(t, &[1])?);
    }
    let stacked = tape.concat(&flat, 0)?;
    Ok(tape.sum(stacked))
}

/// Batch-mean reconstruction loss.
pub fn struct_loss(tape: &mut Tape, x: Var, recon: &[Var], spec: &FeatureSpec) -> Result<Var> {
    let batch = tape.shape(x)[0].max(1);
    let s = struct_loss_sum(tape, x, recon, spec)?;
    Ok(tape.scalar_mul(s, 1.0 / batch as f64))
}

/// Learnable logits plus reconstruction nets for one graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphLearner {
    pub gamma: ParamId,
    pub nets: ReconNets,
}

impl GraphLearner {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        spec: &FeatureSpec,
        hidden: usize,
        hidden_layers: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let p = spec.len();
        let gamma = store.add(format!("{prefix}.gamma"), Tensor::zeros(&[p, p]));
        let nets = ReconNets::new(store, prefix, spec, hidden, hidden_layers, rng);
        Self { gamma, nets }
    }
}

/// Class-conditional reconstruction loss: each sample is reconstructed only
/// through the graph and nets of its own class. Returns the batch mean.
///
/// `graphs[c]` is the (sampled) graph for class `c`.
pub fn class_struct_loss<R: Rng>(
    tape: &mut Tape,
    bound: &Bound,
    x: Var,
    labels: &[usize],
    learners: &[GraphLearner],
    graphs: &[Var],
    mut dropout: Option<Dropout<'_, R>>,
) -> Result<Var> {
    let xs = tape.shape(x).to_vec();
    let (batch, width) = (xs[0], xs[1]);
    if labels.len() != batch {
        return Err(Error::shape("class_struct_loss", &xs, &[labels.len()]));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= learners.len()) {
        return Err(Error::Data(format!(
            "label {bad} out of range for {} class graphs",
            learners.len()
        )));
    }
    let mut parts = Vec::new();
    for (c, learner) in learners.iter().enumerate() {
        let rows: Vec<usize> = (0..batch).filter(|&b| labels[b] == c).collect();
        if rows.is_empty() {
            continue;
        }
        let idx = rows
            .iter()
            .flat_map(|&b| (0..width).map(move |k| Some(b * width + k)))
            .collect();
        let xc = tape.gather(x, idx, &[rows.len(), width])?;
        let d = dropout.as_mut().map(|d| Dropout {
            rate: d.rate,
            rng: &mut *d.rng,
        });
        let recon = reconstruct(tape, bound, xc, graphs[c], &learner.nets, d)?;
        let s = struct_loss_sum(tape, xc, &recon, learner.nets.spec())?;
        parts.push(tape.reshape(s, &[1])?);
    }
    let all = tape.concat(&parts, 0)?;
    let total = tape.sum(all);
    Ok(tape.scalar_mul(total, 1.0 / batch.max(1) as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn zero_logits_give_half_off_diagonal() {
        let p = edge_probabilities(&Tensor::zeros(&[3, 3]));
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 0.0 } else { 0.5 };
                assert_eq!(p.at2(i, j), expect);
            }
        }
    }

    #[test]
    fn saturated_and_unit_logits() {
        let mut g = Tensor::zeros(&[2, 2]);
        g.set2(0, 1, 20.0);
        g.set2(1, 0, 1.0);
        let p = edge_probabilities(&g);
        assert!((p.at2(0, 1) - 1.0).abs() < 1e-8);
        assert!((p.at2(1, 0) - 0.731_058_578_630_004_9).abs() < 1e-12);
    }

    #[test]
    fn symmetric_noise_gives_half() {
        for tau in [0.1, 0.5, 1.0, 7.0] {
            assert_eq!(binary_concrete(0.0, tau, 0.3, 0.3), 0.5);
        }
    }

    #[test]
    fn nonpositive_temperature_is_rejected() {
        let mut tape = Tape::new();
        let g = tape.param(Tensor::zeros(&[2, 2]));
        let mut rng = seeded(0);
        assert!(matches!(
            sample_graph(&mut tape, g, 0.0, &mut rng),
            Err(Error::Param(_))
        ));
        assert!(sample_graph(&mut tape, g, -1.0, &mut rng).is_err());
    }

    #[test]
    fn sample_is_in_unit_interval_with_zero_diagonal() {
        let mut tape = Tape::new();
        let g = tape.param(Tensor::new(vec![3, 3], vec![0.0, 5.0, -5.0, 1.0, 0.0, 2.0, -3.0, 0.5, 0.0]).unwrap());
        let mut rng = seeded(3);
        let z = sample_graph(&mut tape, g, 0.5, &mut rng).unwrap();
        let zv = tape.value(z);
        for i in 0..3 {
            assert_eq!(zv.at2(i, i), 0.0);
        }
        assert!(zv.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn sparsity_examples() {
        let mut tape = Tape::new();
        let g = tape.param(Tensor::zeros(&[5, 5]));
        let s = sparsity_loss(&mut tape, g).unwrap();
        assert_eq!(tape.value(s).item(), 10.0);

        let mut gamma = Tensor::full(&[5, 5], -20.0);
        gamma.set2(1, 3, 20.0);
        let g = tape.param(gamma);
        let s = sparsity_loss(&mut tape, g).unwrap();
        assert!((tape.value(s).item() - 1.0).abs() < 1e-7);

        let mut gamma = Tensor::ones(&[3, 3]);
        for i in 0..3 {
            gamma.set2(i, i, 0.0);
        }
        let g = tape.param(gamma);
        let s = sparsity_loss(&mut tape, g).unwrap();
        assert!((tape.value(s).item() - 6.0 * 0.731_058_578_630_004_9).abs() < 1e-12);
    }

    #[test]
    fn dag_penalty_examples() {
        let mut tape = Tape::new();
        let g = tape.param(Tensor::full(&[2, 2], -1e3));
        let d = dag_penalty(&mut tape, g).unwrap();
        assert_eq!(tape.value(d).item(), 2.0);
        let g = tape.param(Tensor::zeros(&[2, 2]));
        let d = dag_penalty(&mut tape, g).unwrap();
        assert!((tape.value(d).item() - 2.0 * 0.25f64.cosh()).abs() < 1e-12);
    }

    #[test]
    fn dag_penalty_increases_with_both_directions() {
        let mut prev = 0.0;
        for step in 0..6 {
            let v = -2.0 + step as f64;
            let mut tape = Tape::new();
            let mut gamma = Tensor::zeros(&[2, 2]);
            gamma.set2(0, 1, v);
            gamma.set2(1, 0, v);
            let g = tape.param(gamma);
            let d = dag_penalty(&mut tape, g).unwrap();
            let val = tape.value(d).item();
            assert!(val > prev);
            prev = val;
        }
    }

    #[test]
    fn feature_spec_offsets_partition_width() {
        let spec = FeatureSpec::new(vec![
            FeatureKind::Real,
            FeatureKind::Categorical(3),
            FeatureKind::Real,
        ])
        .unwrap();
        assert_eq!(spec.width(), 5);
        assert_eq!(spec.block(1), 1..4);
        assert_eq!(spec.column_owner(), vec![0, 1, 1, 1, 2]);
        assert!(FeatureSpec::new(vec![FeatureKind::Categorical(1)]).is_err());
    }

    fn build_nets(spec: &FeatureSpec, seed: u64) -> (ParamStore, ReconNets) {
        let mut store = ParamStore::new();
        let mut rng = seeded(seed);
        let nets = ReconNets::new(&mut store, "s", spec, 8, 1, &mut rng);
        (store, nets)
    }

    #[test]
    fn empty_graph_gives_constant_reconstruction() {
        let spec = FeatureSpec::all_real(3);
        let (store, nets) = build_nets(&spec, 1);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, |_| false);
        let x = tape.constant(Tensor::new(vec![2, 3], vec![1.0, -2.0, 0.5, 3.0, 0.1, -1.0]).unwrap());
        let g = tape.constant(Tensor::zeros(&[3, 3]));
        let out = reconstruct::<rand_chacha::ChaCha8Rng>(&mut tape, &bound, x, g, &nets, None).unwrap();
        for o in out {
            let v = tape.value(o).data();
            assert_eq!(v[0], v[1]);
        }
    }

    #[test]
    fn mask_controls_dependence() {
        let spec = FeatureSpec::all_real(2);
        let (store, nets) = build_nets(&spec, 2);
        let run = |edge: f64, x0: f64| {
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape, |_| false);
            let x = tape.constant(Tensor::new(vec![1, 2], vec![x0, 0.7]).unwrap());
            let g = tape.constant(Tensor::new(vec![2, 2], vec![0.0, edge, 1.0, 0.0]).unwrap());
            let out = reconstruct::<rand_chacha::ChaCha8Rng>(&mut tape, &bound, x, g, &nets, None).unwrap();
            tape.value(out[1]).item()
        };
        assert_ne!(run(1.0, 0.3), run(1.0, 2.3));
        assert_eq!(run(0.0, 0.3), run(0.0, 2.3));
    }

    #[test]
    fn struct_loss_examples() {
        let spec = FeatureSpec::new(vec![FeatureKind::Real, FeatureKind::Categorical(4)]).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, 5], vec![1.0, 0.0, 0.0, 1.0, 0.0]).unwrap());
        let r0 = tape.constant(Tensor::zeros(&[1, 1]));
        let r1 = tape.constant(Tensor::full(&[1, 4], (0.25f64).ln()));
        let l = struct_loss(&mut tape, x, &[r0, r1], &spec).unwrap();
        assert!((tape.value(l).item() - (1.0 + 4f64.ln())).abs() < 1e-12);

        // Perfect reconstruction of real features.
        let spec = FeatureSpec::all_real(2);
        let x = tape.constant(Tensor::new(vec![2, 2], vec![0.3, -1.0, 2.0, 0.5]).unwrap());
        let r0 = tape.constant(Tensor::new(vec![2, 1], vec![0.3, 2.0]).unwrap());
        let r1 = tape.constant(Tensor::new(vec![2, 1], vec![-1.0, 0.5]).unwrap());
        let l = struct_loss(&mut tape, x, &[r0, r1], &spec).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);
    }

    #[test]
    fn invalid_categorical_target_is_a_data_error() {
        let spec = FeatureSpec::new(vec![FeatureKind::Categorical(2)]).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap());
        let r = tape.constant(Tensor::zeros(&[1, 2]));
        assert!(matches!(
            struct_loss(&mut tape, x, &[r], &spec),
            Err(Error::Data(_))
        ));
    }
}
