//! Reference predictors: quadratic discriminant analysis and a plain MLP.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::dataio::{Dataset, Labels};
use crate::error::{Error, Result};
use crate::optim::{clip_global_norm, AdamState};
use crate::params::{Bound, ParamId, ParamStore};
use crate::rng::derive;
use crate::structure::dropout_mask;
use crate::taskgat::{task_loss, OutputKind};
use crate::tensor::Tensor;
use crate::trainer::MetricKind;

const RIDGE_START: f64 = 1e-6;
const RIDGE_TRIES: usize = 12;

/// One Gaussian class of a QDA model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QdaClass {
    pub mean: Vec<f64>,
    pub covariance: Tensor,
    pub precision: Tensor,
    pub log_det: f64,
    pub log_prior: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QdaModel {
    pub classes: Vec<QdaClass>,
}

fn rows_of(x: &Tensor, rows: &[usize]) -> DMatrix<f64> {
    let p = x.shape()[1];
    DMatrix::from_fn(rows.len(), p, |r, c| x.data()[rows[r] * p + c])
}

fn to_tensor(m: &DMatrix<f64>) -> Tensor {
    let (r, c) = m.shape();
    Tensor::new(vec![r, c], (0..r * c).map(|k| m[(k / c, k % c)]).collect()).expect("shape matches")
}

impl QdaModel {
    /// Class means, unbiased covariances (plus a ridge of `1e-6·I`, grown
    /// tenfold until positive definite) and empirical priors.
    pub fn fit(x: &Tensor, y: &[usize], n_classes: usize) -> Result<Self> {
        let p = x.shape()[1];
        let mut classes = Vec::with_capacity(n_classes);
        for c in 0..n_classes {
            let rows: Vec<usize> = (0..y.len()).filter(|&r| y[r] == c).collect();
            if rows.len() < 2 {
                return Err(Error::Data(format!("QDA needs at least 2 samples of class {c}, got {}", rows.len())));
            }
            let m = rows_of(x, &rows);
            let n = rows.len() as f64;
            let mean: DVector<f64> = m.row_mean().transpose();
            let centered = DMatrix::from_fn(m.nrows(), p, |r, k| m[(r, k)] - mean[k]);
            let cov = (centered.transpose() * &centered) / (n - 1.0);
            let mut ridge = RIDGE_START;
            let chol = loop {
                let reg = &cov + DMatrix::identity(p, p) * ridge;
                if let Some(ch) = reg.clone().cholesky() {
                    break (reg, ch);
                }
                ridge *= 10.0;
                if ridge > RIDGE_START * 10f64.powi(RIDGE_TRIES as i32) {
                    return Err(Error::Numeric(format!("class {c} covariance is singular even after ridge")));
                }
            };
            let (reg, ch) = chol;
            let log_det = 2.0 * ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            classes.push(QdaClass {
                mean: mean.iter().copied().collect(),
                covariance: to_tensor(&reg),
                precision: to_tensor(&ch.inverse()),
                log_det,
                log_prior: (n / y.len() as f64).ln(),
            });
        }
        Ok(Self { classes })
    }

    /// `−½ log|Σ| − ½ (x−μ)ᵀ Σ⁻¹ (x−μ) + log π` for one class.
    pub fn class_score(&self, c: usize, x: &[f64]) -> f64 {
        let k = &self.classes[c];
        let p = x.len();
        let d: Vec<f64> = x.iter().zip(&k.mean).map(|(a, m)| a - m).collect();
        let mut quad = 0.0;
        for i in 0..p {
            for j in 0..p {
                quad += d[i] * k.precision.data()[i * p + j] * d[j];
            }
        }
        -0.5 * k.log_det - 0.5 * quad + k.log_prior
    }

    /// Posterior class probabilities `[n, C]`.
    pub fn predict_proba(&self, x: &Tensor) -> Tensor {
        let (n, p) = (x.shape()[0], x.shape()[1]);
        let c = self.classes.len();
        let mut out = Vec::with_capacity(n * c);
        for r in 0..n {
            let row = &x.data()[r * p..(r + 1) * p];
            let s: Vec<f64> = (0..c).map(|k| self.class_score(k, row)).collect();
            let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = s.iter().map(|v| (v - m).exp()).sum();
            out.extend(s.iter().map(|v| (v - m).exp() / z));
        }
        Tensor::new(vec![n, c], out).expect("shape matches")
    }
}

/// Fits QDA on `train` and returns the class-1 posterior on `test`.
pub fn qda_fit_predict(train: &Dataset, test: &Dataset) -> Result<Vec<f64>> {
    let Labels::Classes { values, levels } = &train.y else {
        return Err(Error::Data("QDA needs class labels".into()));
    };
    let model = QdaModel::fit(&train.x, values, levels.len())?;
    let proba = model.predict_proba(&test.x);
    let c = levels.len();
    Ok(proba.data().chunks(c).map(|r| r[1.min(c - 1)]).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpParams {
    pub hidden: usize,
    pub layers: usize,
    pub dropout: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self {
            hidden: 32,
            layers: 2,
            dropout: 0.0,
            lr: 0.001,
            epochs: 30,
            batch_size: 128,
            clip_norm: 5.0,
            seed: 0,
        }
    }
}

/// Fully connected ELU network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    params: ParamStore,
    layers: Vec<(ParamId, ParamId)>,
    output: OutputKind,
}

impl Mlp {
    pub fn new(inputs: usize, output: OutputKind, hp: &MlpParams) -> Self {
        let mut rng = derive(hp.seed, 1);
        let mut params = ParamStore::new();
        let mut widths = vec![inputs];
        widths.extend(std::iter::repeat_n(hp.hidden, hp.layers));
        widths.push(output.width());
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                (
                    params.add_glorot(format!("mlp.w{l}"), w[0], w[1], &mut rng),
                    params.add(format!("mlp.b{l}"), Tensor::zeros(&[w[1]])),
                )
            })
            .collect();
        Self { params, layers, output }
    }

    fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var, mut dropout: Option<(f64, &mut crate::rng::SeededRng)>) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            h = tape.matmul(h, bound.var(w))?;
            let width = tape.shape(h)[1];
            let bias = tape.reshape(bound.var(b), &[1, width])?;
            h = tape.add(h, bias)?;
            if l < last {
                h = tape.elu(h);
                if let Some((rate, rng)) = dropout.as_mut() {
                    if *rate > 0.0 {
                        let m = tape.constant(dropout_mask(tape.shape(h), *rate, *rng));
                        h = tape.mul(h, m)?;
                    }
                }
            }
        }
        match self.output {
            OutputKind::Classes(_) => tape.log_softmax(h, 1),
            OutputKind::Regression => Ok(h),
        }
    }

    /// Log-probabilities or regression values for `x`.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, |_| true);
        let xv = tape.constant(x.clone());
        let out = self.forward(&mut tape, &bound, xv, None)?;
        Ok(tape.value(out).clone())
    }

    /// Trains with Adam and keeps the best-validation snapshot.
    pub fn fit(train: &Dataset, valid: &Dataset, hp: &MlpParams) -> Result<(Self, Vec<f64>)> {
        if train.n_rows() == 0 || valid.n_rows() == 0 || hp.batch_size == 0 {
            return Err(Error::Data("MLP needs non-empty splits and batches".into()));
        }
        let output = train.y.output_kind();
        let metric = MetricKind::for_output(output);
        let mut mlp = Self::new(train.spec.width(), output, hp);
        let mut adam = AdamState::new(hp.lr);
        let mut shuffle = derive(hp.seed, 2);
        let mut drop_rng = derive(hp.seed, 3);
        let mut best: Option<(f64, ParamStore)> = None;
        let mut history = Vec::with_capacity(hp.epochs);
        for epoch in 0..hp.epochs {
            let mut order: Vec<usize> = (0..train.n_rows()).collect();
            order.shuffle(&mut shuffle);
            for rows in order.chunks(hp.batch_size) {
                let batch = train.select(rows);
                let mut tape = Tape::new();
                let bound = mlp.params.bind(&mut tape, |_| false);
                let xv = tape.constant(batch.x);
                let out = mlp.forward(&mut tape, &bound, xv, Some((hp.dropout, &mut drop_rng)))?;
                let loss = task_loss(&mut tape, out, batch.y.targets())?;
                let lv = tape.value(loss).item();
                if !lv.is_finite() {
                    return Err(Error::Diverged(format!("MLP loss became non-finite in epoch {epoch}")));
                }
                let mut g = tape.backward(loss)?;
                let mut grads = mlp.params.collect_grads(&bound, &mut g);
                clip_global_norm(&mut grads, hp.clip_norm);
                let grads: Vec<Option<Tensor>> = grads.into_iter().map(Some).collect();
                adam.step(mlp.params.values_mut(), &grads)?;
            }
            let m = metric.score(&mlp.predict(&valid.x)?, &valid.y)?;
            history.push(m);
            if best.as_ref().is_none_or(|(b, _)| metric.better(m, *b)) {
                best = Some((m, mlp.params.clone()));
            }
        }
        if let Some((_, p)) = best {
            mlp.params.load_from(&p)?;
        }
        Ok((mlp, history))
    }
}

/// Trains an MLP and returns its test outputs.
pub fn mlp_baseline(train: &Dataset, valid: &Dataset, test: &Dataset, hp: &MlpParams) -> Result<Tensor> {
    let (mlp, _) = Mlp::fit(train, valid, hp)?;
    mlp.predict(&test.x)
}
