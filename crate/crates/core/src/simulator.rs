//! Two-class Gaussian Markov random field data with known precision
//! matrices: class A has precision `Δ + R + δI`, class B `R + δI`, where
//! `Δ` and `R` are sparse symmetric edge matrices.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, Labels, Split};
use crate::error::{Error, Result};
use crate::parallel;
use crate::rng::derive;
use crate::tensor::Tensor;

/// Rows drawn per independently seeded chunk.
const SAMPLE_CHUNK: usize = 1024;

/// Weighted undirected edge `(i, j, weight)`.
pub type Edge = (usize, usize, f64);

/// Where the edge matrices come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum GraphSource {
    /// Erdős–Rényi draws with the given edge probabilities.
    Random { p_d: f64, p_i: f64 },
    /// Explicit edge lists for `Δ` and `R`.
    Fixed { delta: Vec<Edge>, shared: Vec<Edge> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub p: usize,
    pub graphs: GraphSource,
    /// Weight of every sampled Erdős–Rényi edge.
    pub edge_weight: f64,
    /// Diagonal shift; chosen automatically when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_d: Option<f64>,
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    /// Standard-normal features appended after the `p` modelled ones.
    #[serde(default)]
    pub noise_features: usize,
    pub seed: u64,
}

impl SimConfig {
    /// Named presets: `p5`, `p10`, `p20` and `2d`.
    pub fn preset(name: &str) -> Result<Self> {
        let base = |p, graphs| SimConfig {
            p,
            graphs,
            edge_weight: 0.5,
            delta_d: None,
            n_train: 40_000,
            n_valid: 8_000,
            n_test: 8_000,
            noise_features: 0,
            seed: 0,
        };
        Ok(match name {
            "p5" => base(
                5,
                GraphSource::Fixed {
                    delta: vec![(1, 2, 0.5), (3, 4, 0.5), (0, 4, 0.5)],
                    shared: vec![(0, 1, 0.5), (2, 3, 0.5)],
                },
            ),
            "p10" => base(10, GraphSource::Random { p_d: 0.3, p_i: 0.2 }),
            "p20" => base(20, GraphSource::Random { p_d: 0.3, p_i: 0.1 }),
            "2d" => SimConfig {
                delta_d: Some(1.0),
                ..base(
                    2,
                    GraphSource::Fixed {
                        delta: vec![(0, 1, -1.98)],
                        shared: vec![(0, 1, 0.99)],
                    },
                )
            },
            other => return Err(Error::Config(format!("unknown preset '{other}' (p5, p10, p20, 2d)"))),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 2 {
            return Err(Error::Config("need at least 2 features".into()));
        }
        match &self.graphs {
            GraphSource::Random { p_d, p_i } => {
                for (n, v) in [("p_d", p_d), ("p_i", p_i)] {
                    if !(0.0..=1.0).contains(v) {
                        return Err(Error::Config(format!("{n} = {v} is not a probability")));
                    }
                }
            }
            GraphSource::Fixed { delta, shared } => {
                for &(i, j, w) in delta.iter().chain(shared) {
                    if i == j || i >= self.p || j >= self.p || !w.is_finite() {
                        return Err(Error::Config(format!("invalid edge ({i}, {j}, {w}) for p = {}", self.p)));
                    }
                }
            }
        }
        if [self.n_train, self.n_valid, self.n_test].contains(&0) {
            return Err(Error::Config("every split needs at least one row".into()));
        }
        Ok(())
    }
}

/// Symmetric zero-diagonal matrix including each unordered pair with
/// probability `prob`, set to `weight`.
pub fn sample_er_matrix(p: usize, prob: f64, weight: f64, rng: &mut impl Rng) -> Tensor {
    let mut m = Tensor::zeros(&[p, p]);
    for i in 0..p {
        for j in i + 1..p {
            if rng.random::<f64>() < prob {
                m.set2(i, j, weight);
                m.set2(j, i, weight);
            }
        }
    }
    m
}

/// Symmetric matrix with the listed edges; repeated pairs add up.
pub fn edge_matrix(p: usize, edges: &[Edge]) -> Tensor {
    let mut m = Tensor::zeros(&[p, p]);
    for &(i, j, w) in edges {
        m.set2(i, j, m.at2(i, j) + w);
        m.set2(j, i, m.at2(j, i) + w);
    }
    m
}

fn to_na(t: &Tensor) -> DMatrix<f64> {
    let s = t.shape();
    DMatrix::from_row_slice(s[0], s[1], t.data())
}

fn from_na(m: &DMatrix<f64>) -> Tensor {
    let (r, c) = m.shape();
    let data = (0..r).flat_map(|i| (0..c).map(move |j| (i, j))).map(|(i, j)| m[(i, j)]).collect();
    Tensor::from_parts(vec![r, c], data)
}

pub fn min_eigenvalue(t: &Tensor) -> f64 {
    to_na(t).symmetric_eigenvalues().min()
}

/// Shift that makes both `Δ + R + δI` and `R + δI` positive definite with
/// a margin of 0.1.
pub fn default_delta_d(delta: &Tensor, shared: &Tensor) -> Result<f64> {
    let mut sum = delta.clone();
    sum.add_assign(shared);
    let lo = min_eigenvalue(&sum).min(min_eigenvalue(shared)).min(0.0);
    Ok(0.1 + lo.abs())
}

/// Class precision matrices with their off-diagonal supports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecisionPair {
    pub omega_a: Tensor,
    pub omega_b: Tensor,
    pub true_graph_a: Tensor,
    pub true_graph_b: Tensor,
    pub delta_d: f64,
}

impl PrecisionPair {
    /// Edges present in either class.
    pub fn union_graph(&self) -> Tensor {
        let mut u = self.true_graph_a.clone();
        for (v, &b) in u.data_mut().iter_mut().zip(self.true_graph_b.data()) {
            *v = v.max(b);
        }
        u
    }

    /// Truth graphs in class-label order (A = 0, B = 1).
    pub fn class_graphs(&self) -> [&Tensor; 2] {
        [&self.true_graph_a, &self.true_graph_b]
    }
}

fn support(omega: &Tensor) -> Tensor {
    let p = omega.shape()[0];
    let mut g = Tensor::zeros(&[p, p]);
    for i in 0..p {
        for j in 0..p {
            if i != j && omega.at2(i, j) != 0.0 {
                g.set2(i, j, 1.0);
            }
        }
    }
    g
}

fn lower_cholesky(omega: &Tensor, what: &str) -> Result<DMatrix<f64>> {
    to_na(omega).cholesky().map(|c| c.l()).ok_or_else(|| {
        Error::NotPositiveDefinite(format!(
            "{what} is not positive definite (smallest eigenvalue {:.4}); use a larger delta_d",
            min_eigenvalue(omega)
        ))
    })
}

/// `Ω_A = Δ + R + δI` and `Ω_B = R + δI`, both checked by Cholesky.
pub fn build_precisions(delta: &Tensor, shared: &Tensor, delta_d: f64) -> Result<PrecisionPair> {
    let p = delta.shape()[0];
    for (name, m) in [("delta", delta), ("shared", shared)] {
        if m.shape() != [p, p] {
            return Err(Error::shape("build_precisions", m.shape(), &[p, p]));
        }
        for i in 0..p {
            if m.at2(i, i) != 0.0 {
                return Err(Error::Contract(format!("{name} matrix has a nonzero diagonal")));
            }
            for j in 0..p {
                if m.at2(i, j) != m.at2(j, i) {
                    return Err(Error::Contract(format!("{name} matrix is not symmetric")));
                }
            }
        }
    }
    let mut omega_b = shared.clone();
    for i in 0..p {
        omega_b.set2(i, i, delta_d);
    }
    let mut omega_a = omega_b.clone();
    omega_a.add_assign(delta);
    lower_cholesky(&omega_a, "class A precision")?;
    lower_cholesky(&omega_b, "class B precision")?;
    Ok(PrecisionPair {
        true_graph_a: support(&omega_a),
        true_graph_b: support(&omega_b),
        omega_a,
        omega_b,
        delta_d,
    })
}

/// `n` draws from `N(0, Ω⁻¹)`: with `Ω = L Lᵀ`, solve `Lᵀ x = z` for
/// standard-normal `z`. Rows are generated in independently seeded chunks,
/// so the result depends only on `seed`.
pub fn sample_gaussian(omega: &Tensor, n: usize, seed: u64) -> Result<Tensor> {
    let p = omega.shape()[0];
    let l = lower_cholesky(omega, "precision matrix")?;
    let lt = l.transpose();
    let chunks = n.div_ceil(SAMPLE_CHUNK);
    let parts = parallel::map_range(chunks, |c| {
        let rows = SAMPLE_CHUNK.min(n - c * SAMPLE_CHUNK);
        let mut rng = derive(seed, c as u64);
        let mut out = Vec::with_capacity(rows * p);
        for _ in 0..rows {
            let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
            let x = lt
                .solve_upper_triangular(&z)
                .expect("Cholesky factor has a positive diagonal");
            out.extend(x.iter());
        }
        out
    });
    Ok(Tensor::from_parts(vec![n, p], parts.concat()))
}

/// Generated dataset with its ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimData {
    pub config: SimConfig,
    pub truth: PrecisionPair,
    pub dataset: Dataset,
}

/// Draws the edge matrices, builds both precisions and samples balanced,
/// shuffled train/valid/test splits (label 0 = class A, 1 = class B).
pub fn make_dataset(cfg: &SimConfig) -> Result<SimData> {
    cfg.validate()?;
    let p = cfg.p;
    let mut graph_rng = derive(cfg.seed, 100);
    let (delta, shared) = match &cfg.graphs {
        GraphSource::Random { p_d, p_i } => (
            sample_er_matrix(p, *p_d, cfg.edge_weight, &mut graph_rng),
            sample_er_matrix(p, *p_i, cfg.edge_weight, &mut graph_rng),
        ),
        GraphSource::Fixed { delta, shared } => (edge_matrix(p, delta), edge_matrix(p, shared)),
    };
    let delta_d = match cfg.delta_d {
        Some(d) => d,
        None => default_delta_d(&delta, &shared)?,
    };
    let truth = build_precisions(&delta, &shared, delta_d)?;

    let q = p + cfg.noise_features;
    let mut x = Vec::with_capacity((cfg.n_train + cfg.n_valid + cfg.n_test) * q);
    let mut y = Vec::new();
    let mut split = Vec::new();
    let mut shuffle_rng = derive(cfg.seed, 101);
    let splits = [(Split::Train, cfg.n_train), (Split::Valid, cfg.n_valid), (Split::Test, cfg.n_test)];
    for (k, &(tag, n)) in splits.iter().enumerate() {
        let n_a = n.div_ceil(2);
        let base = 1000 + 10 * k as u64;
        let xa = sample_gaussian(&truth.omega_a, n_a, cfg.seed.wrapping_mul(7919).wrapping_add(base))?;
        let xb = sample_gaussian(&truth.omega_b, n - n_a, cfg.seed.wrapping_mul(7919).wrapping_add(base + 1))?;
        let noise = if cfg.noise_features > 0 {
            sample_gaussian(
                &Tensor::identity(cfg.noise_features),
                n,
                cfg.seed.wrapping_mul(7919).wrapping_add(base + 2),
            )?
        } else {
            Tensor::zeros(&[n, 0])
        };
        let mut rows: Vec<(usize, usize)> = (0..n_a).map(|r| (0, r)).chain((0..n - n_a).map(|r| (1, r))).collect();
        rows.shuffle(&mut shuffle_rng);
        for (i, &(label, r)) in rows.iter().enumerate() {
            let src = if label == 0 { &xa } else { &xb };
            x.extend_from_slice(&src.data()[r * p..(r + 1) * p]);
            let nw = noise.shape()[1];
            x.extend_from_slice(&noise.data()[i * nw..i * nw + cfg.noise_features]);
            y.push(label);
            split.push(tag);
        }
    }
    let n = y.len();
    let mut names: Vec<String> = (0..p).map(|i| format!("x{i}")).collect();
    names.extend((0..cfg.noise_features).map(|i| format!("noise{i}")));
    let dataset = Dataset::from_real(
        Tensor::new(vec![n, q], x)?,
        Labels::Classes {
            values: y,
            levels: vec!["A".into(), "B".into()],
        },
        names,
        split,
    )?;
    Ok(SimData {
        config: cfg.clone(),
        truth,
        dataset,
    })
}

/// JSON sidecar stored next to a simulated CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthSidecar {
    pub config: SimConfig,
    pub truth: PrecisionPair,
    pub feature_names: Vec<String>,
}

impl SimData {
    /// Writes `<stem>.csv`, `<stem>.schema.json` and `<stem>.truth.json`
    /// into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        self.dataset
            .write_csv(dir.join(format!("{stem}.csv")), dir.join(format!("{stem}.schema.json")), "label")?;
        let side = TruthSidecar {
            config: self.config.clone(),
            truth: self.truth.clone(),
            feature_names: self.dataset.names.clone(),
        };
        let path = dir.join(format!("{stem}.truth.json"));
        std::fs::write(&path, serde_json::to_string_pretty(&side)?).map_err(|e| Error::file(&path, e))
    }
}

impl TruthSidecar {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Sample covariance `[p, p]` of the rows of `x` (divisor `n`, zero mean
/// assumed known).
pub fn covariance_zero_mean(x: &Tensor) -> Tensor {
    let (n, p) = (x.shape()[0], x.shape()[1]);
    let m = DMatrix::from_row_slice(n, p, x.data());
    from_na(&((m.transpose() * &m) / n as f64))
}

/// Matrix inverse via nalgebra.
pub fn inverse(t: &Tensor) -> Result<Tensor> {
    to_na(t)
        .try_inverse()
        .map(|m| from_na(&m))
        .ok_or_else(|| Error::Numeric("matrix is singular".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn er_extremes() {
        let mut rng = seeded(0);
        assert!(sample_er_matrix(4, 0.0, 0.5, &mut rng).data().iter().all(|&v| v == 0.0));
        let full = sample_er_matrix(3, 1.0, 0.5, &mut rng);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(full.at2(i, j), if i == j { 0.0 } else { 0.5 });
            }
        }
    }

    #[test]
    fn identity_precisions_have_empty_graphs() {
        let z = Tensor::zeros(&[3, 3]);
        let pair = build_precisions(&z, &z, 1.0).unwrap();
        assert_eq!(pair.omega_a, Tensor::identity(3));
        assert_eq!(pair.omega_b, Tensor::identity(3));
        assert!(pair.true_graph_a.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_by_two_eigenvalues() {
        let shared = edge_matrix(2, &[(0, 1, 0.5)]);
        let pair = build_precisions(&Tensor::zeros(&[2, 2]), &shared, 1.0).unwrap();
        let mut ev: Vec<f64> = to_na(&pair.omega_b).symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        assert!((ev[0] - 0.5).abs() < 1e-12 && (ev[1] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn indefinite_precision_is_reported() {
        let shared = edge_matrix(2, &[(0, 1, 2.0)]);
        assert!(matches!(
            build_precisions(&Tensor::zeros(&[2, 2]), &shared, 1.0),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn class_b_support_is_inside_class_a_support() {
        let mut rng = seeded(4);
        let d = sample_er_matrix(8, 0.3, 0.5, &mut rng);
        let r = sample_er_matrix(8, 0.3, 0.5, &mut rng);
        let pair = build_precisions(&d, &r, default_delta_d(&d, &r).unwrap()).unwrap();
        for (a, b) in pair.true_graph_a.data().iter().zip(pair.true_graph_b.data()) {
            assert!(*b <= *a);
        }
    }

    #[test]
    fn cancelled_edges_are_not_edges() {
        let d = edge_matrix(3, &[(0, 1, -0.5)]);
        let r = edge_matrix(3, &[(0, 1, 0.5)]);
        let pair = build_precisions(&d, &r, 1.0).unwrap();
        assert_eq!(pair.true_graph_a.at2(0, 1), 0.0);
        assert_eq!(pair.true_graph_b.at2(0, 1), 1.0);
    }

    #[test]
    fn diagonal_precision_variance() {
        let omega = Tensor::new(vec![2, 2], vec![4.0, 0.0, 0.0, 1.0]).unwrap();
        let x = sample_gaussian(&omega, 10_000, 3).unwrap();
        let cov = covariance_zero_mean(&x);
        assert!((cov.at2(0, 0) - 0.25).abs() < 0.02);
        assert!((cov.at2(1, 1) - 1.0).abs() < 0.05);
    }

    #[test]
    fn datasets_are_balanced_and_reproducible() {
        let cfg = SimConfig {
            n_train: 200,
            n_valid: 50,
            n_test: 50,
            ..SimConfig::preset("p5").unwrap()
        };
        let a = make_dataset(&cfg).unwrap();
        let b = make_dataset(&cfg).unwrap();
        assert_eq!(a, b);
        let train = a.dataset.subset(Split::Train);
        let Labels::Classes { values, .. } = &train.y else { panic!() };
        assert_eq!(values.len(), 200);
        assert_eq!(values.iter().filter(|&&v| v == 0).count(), 100);
    }

    #[test]
    fn paper_split_sizes() {
        let cfg = SimConfig::preset("p10").unwrap();
        assert_eq!((cfg.n_train, cfg.n_valid, cfg.n_test), (40_000, 8_000, 8_000));
    }

    #[test]
    fn noise_features_are_appended() {
        let cfg = SimConfig {
            n_train: 20,
            n_valid: 10,
            n_test: 10,
            noise_features: 5,
            ..SimConfig::preset("p5").unwrap()
        };
        let d = make_dataset(&cfg).unwrap();
        assert_eq!(d.dataset.spec.len(), 10);
        assert_eq!(d.dataset.names[9], "noise4");
        assert_eq!(d.truth.true_graph_a.shape(), &[5, 5]);
    }
}
