//! Config-driven runs: load a CSV, split and standardize it, train one model
//! per seed (or fit a baseline), and report metrics.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{Mlp, MlpParams, QdaModel};
use crate::dataio::{assign_splits, load_csv, ColumnKind, Dataset, Labels, Schema, Split, SplitPlan, Standardizer};
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::model::Model;
use crate::parallel;
use crate::recovery::model_graph_auc;
use crate::simulator::TruthSidecar;
use crate::trainer::{evaluate, fit, Checkpoint, HyperParams, MetricKind, TrainState};

fn yes() -> bool {
    true
}

fn one() -> usize {
    1
}

/// Declarative description of a training or baseline run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// CSV file with features, target and optionally a `split` column.
    pub data: PathBuf,
    /// Column schema; defaults to `<data stem>.schema.json`.
    #[serde(default)]
    pub schema: Option<PathBuf>,
    /// Ground-truth sidecar of a simulated dataset, for graph AUC.
    #[serde(default)]
    pub truth: Option<PathBuf>,
    #[serde(default)]
    pub hp: HyperParams,
    #[serde(default)]
    pub mlp: MlpParams,
    /// Re-split the rows; without it the file's split column is used.
    #[serde(default)]
    pub split: Option<SplitPlan>,
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default = "yes")]
    pub standardize: bool,
    /// Number of consecutive seeds starting at `hp.seed`.
    #[serde(default = "one")]
    pub seeds: usize,
}

impl RunConfig {
    pub fn new(data: impl Into<PathBuf>) -> Self {
        Self {
            data: data.into(),
            schema: None,
            truth: None,
            hp: HyperParams::default(),
            mlp: MlpParams::default(),
            split: None,
            split_seed: 0,
            standardize: true,
            seeds: 1,
        }
    }

    /// Reads a JSON config; relative paths are taken relative to its
    /// directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.data);
        cfg.schema.as_mut().map(fix);
        cfg.truth.as_mut().map(fix);
        Ok(cfg)
    }

    pub fn schema_path(&self) -> PathBuf {
        self.schema.clone().unwrap_or_else(|| self.data.with_extension("schema.json"))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds == 0 {
            return Err(Error::Config("seeds must be at least 1".into()));
        }
        self.hp.validate()
    }
}

/// Train/valid/test partitions ready for fitting.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
    /// Schema with level orders fixed to the loaded data.
    pub schema: Schema,
    pub standardizer: Option<Standardizer>,
    pub truth: Option<TruthSidecar>,
}

pub fn prepare(cfg: &RunConfig) -> Result<PreparedData> {
    let schema = Schema::load(cfg.schema_path())?;
    let ds = load_csv(&cfg.data, &schema)?;
    let ds = match cfg.split {
        Some(plan) => assign_splits(&ds, plan, cfg.split_seed)?,
        None if schema.columns.iter().any(|c| c.kind == ColumnKind::Split) => ds,
        None => {
            return Err(Error::Config(format!(
                "{} has no split column; set `split` in the config",
                cfg.data.display()
            )))
        }
    };
    let standardizer = if cfg.standardize { Some(Standardizer::fit(&ds)?) } else { None };
    let ds = match &standardizer {
        Some(st) => st.apply(&ds)?,
        None => ds,
    };
    let truth = cfg.truth.as_ref().map(TruthSidecar::load).transpose()?;
    if let Some(t) = &truth {
        if ds.names.len() < t.truth.omega_a.shape()[0] {
            return Err(Error::Data("truth sidecar has more features than the dataset".into()));
        }
    }
    Ok(PreparedData {
        train: ds.subset(Split::Train),
        valid: ds.subset(Split::Valid),
        test: ds.subset(Split::Test),
        schema: schema.frozen_to(&ds),
        standardizer,
        truth,
    })
}

/// One trained seed.
#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub model: Model,
    pub state: TrainState,
    pub valid_metric: f64,
    pub test_metric: f64,
    pub graph_auc: Option<f64>,
}

/// Metric reports of a run plus the trained models.
#[derive(Clone, Debug)]
pub struct TrainRun {
    pub reports: Vec<MetricReport>,
    pub seeds: Vec<SeedRun>,
}

fn report(metric: &str, split: &str, seeds: &[u64], values: &[f64]) -> Result<MetricReport> {
    if let [seed] = seeds {
        Ok(MetricReport::single(metric, split, values[0], *seed))
    } else {
        let mut r = MetricReport::aggregate(metric, split, values)?;
        r.per_seed = values.to_vec();
        Ok(r)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::file(path, e))
}

/// Trains one model per seed on prepared data (seeds run in parallel).
pub fn train_seeds(data: &PreparedData, hp: &HyperParams, seeds: usize) -> Result<TrainRun> {
    let seed_list: Vec<u64> = (0..seeds as u64).map(|k| hp.seed + k).collect();
    let metric = MetricKind::for_output(data.train.y.output_kind());
    let runs = parallel::map_items(seed_list.clone(), |seed| -> Result<SeedRun> {
        let hp = HyperParams { seed, ..hp.clone() };
        let (model, state) = fit(&data.train, &data.valid, &hp)?;
        let valid_metric = evaluate(&model, &data.valid, metric)?;
        let test_metric = evaluate(&model, &data.test, metric)?;
        let graph_auc = data.truth.as_ref().map(|t| model_graph_auc(&model, &t.truth)).transpose()?;
        log::info!("seed {seed}: valid {} {valid_metric:.5}, test {test_metric:.5}", metric.name());
        Ok(SeedRun {
            seed,
            model,
            state,
            valid_metric,
            test_metric,
            graph_auc,
        })
    });
    let runs: Vec<SeedRun> = runs.into_iter().collect::<Result<_>>()?;
    let valid: Vec<f64> = runs.iter().map(|r| r.valid_metric).collect();
    let test: Vec<f64> = runs.iter().map(|r| r.test_metric).collect();
    let mut reports = vec![
        report(metric.name(), "valid", &seed_list, &valid)?,
        report(metric.name(), "test", &seed_list, &test)?,
    ];
    let graph: Option<Vec<f64>> = runs.iter().map(|r| r.graph_auc).collect();
    if let Some(g) = graph {
        reports.push(report("graph_auc", "truth", &seed_list, &g)?);
    }
    Ok(TrainRun { reports, seeds: runs })
}

/// The `train` workflow: prepare, train every seed, and when `out_dir` is
/// given write `checkpoint_seed<k>.json`, `train_log_seed<k>.json` and
/// `metrics.json` into it.
pub fn run_train(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<TrainRun> {
    cfg.validate()?;
    let data = prepare(cfg)?;
    let run = train_seeds(&data, &cfg.hp, cfg.seeds)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        for r in &run.seeds {
            let hp = HyperParams { seed: r.seed, ..cfg.hp.clone() };
            let mut ck = Checkpoint::new(&hp, r.state.epoch, r.model.clone(), data.train.names.clone());
            ck.standardizer = data.standardizer.clone();
            ck.schema = Some(data.schema.clone());
            ck.save(dir.join(format!("checkpoint_seed{}.json", r.seed)))?;
            write_json(&dir.join(format!("train_log_seed{}.json", r.seed)), &r.state)?;
        }
        write_json(&dir.join("metrics.json"), &run.reports)?;
    }
    Ok(run)
}

/// Reference predictor for the `baseline` workflow.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Qda,
    Mlp,
}

/// Fits a baseline and reports its validation and test metrics. QDA is
/// deterministic and fitted once; the MLP runs once per seed.
pub fn run_baseline(cfg: &RunConfig, kind: BaselineKind) -> Result<Vec<MetricReport>> {
    cfg.validate()?;
    let data = prepare(cfg)?;
    let metric = MetricKind::for_output(data.train.y.output_kind());
    match kind {
        BaselineKind::Qda => {
            let Labels::Classes { values, levels } = &data.train.y else {
                return Err(Error::Data("QDA needs a classification target".into()));
            };
            let model = QdaModel::fit(&data.train.x, values, levels.len())?;
            let log_proba = |ds: &Dataset| {
                let mut p = model.predict_proba(&ds.x);
                p.data_mut().iter_mut().for_each(|v| *v = v.ln());
                p
            };
            Ok(vec![
                MetricReport {
                    seed: None,
                    ..MetricReport::single(metric.name(), "valid", metric.score(&log_proba(&data.valid), &data.valid.y)?, 0)
                },
                MetricReport {
                    seed: None,
                    ..MetricReport::single(metric.name(), "test", metric.score(&log_proba(&data.test), &data.test.y)?, 0)
                },
            ])
        }
        BaselineKind::Mlp => {
            let seed_list: Vec<u64> = (0..cfg.seeds as u64).map(|k| cfg.mlp.seed + k).collect();
            let scores = parallel::map_items(seed_list.clone(), |seed| -> Result<(f64, f64)> {
                let hp = MlpParams { seed, ..cfg.mlp.clone() };
                let (mlp, _) = Mlp::fit(&data.train, &data.valid, &hp)?;
                Ok((
                    metric.score(&mlp.predict(&data.valid.x)?, &data.valid.y)?,
                    metric.score(&mlp.predict(&data.test.x)?, &data.test.y)?,
                ))
            });
            let scores: Vec<(f64, f64)> = scores.into_iter().collect::<Result<_>>()?;
            let valid: Vec<f64> = scores.iter().map(|s| s.0).collect();
            let test: Vec<f64> = scores.iter().map(|s| s.1).collect();
            Ok(vec![
                report(metric.name(), "valid", &seed_list, &valid)?,
                report(metric.name(), "test", &seed_list, &test)?,
            ])
        }
    }
}

/// Scores a checkpoint on one split of a CSV file encoded with the
/// checkpoint's schema and standardization. `None` scores every row.
pub fn evaluate_checkpoint(
    ck: &Checkpoint,
    data: &Path,
    schema: Option<&Schema>,
    split: Option<Split>,
    truth: Option<&TruthSidecar>,
) -> Result<Vec<MetricReport>> {
    let schema = schema
        .or(ck.schema.as_ref())
        .ok_or_else(|| Error::Config("checkpoint has no schema; pass one explicitly".into()))?;
    let mut ds = load_csv(data, schema)?;
    if let Some(st) = &ck.standardizer {
        ds = st.apply(&ds)?;
    }
    if ds.names != ck.feature_names {
        return Err(Error::Data(format!(
            "dataset features {:?} do not match the checkpoint's {:?}",
            ds.names, ck.feature_names
        )));
    }
    let (ds, split_name) = match split {
        Some(s) => (ds.subset(s), s.as_str()),
        None => (ds, "all"),
    };
    if ds.n_rows() == 0 {
        return Err(Error::Data(format!("no rows in split '{split_name}'")));
    }
    let metric = MetricKind::for_output(ck.model.config().output);
    let mut out = vec![MetricReport::single(
        metric.name(),
        split_name,
        evaluate(&ck.model, &ds, metric)?,
        ck.hp.seed,
    )];
    if let Some(t) = truth {
        out.push(MetricReport::single(
            "graph_auc",
            "truth",
            model_graph_auc(&ck.model, &t.truth)?,
            ck.hp.seed,
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{make_dataset, SimConfig};

    fn small_sim(dir: &Path) -> RunConfig {
        let cfg = SimConfig {
            n_train: 300,
            n_valid: 100,
            n_test: 100,
            ..SimConfig::preset("p5").unwrap()
        };
        make_dataset(&cfg).unwrap().write(dir, "sim").unwrap();
        let mut rc = RunConfig::new(dir.join("sim.csv"));
        rc.truth = Some(dir.join("sim.truth.json"));
        rc.hp.epochs = 2;
        rc.hp.pretrain_epochs = 1;
        rc.hp.task_hidden = 8;
        rc.hp.heads = 2;
        rc.hp.d_pos = 4;
        rc.mlp.epochs = 2;
        rc
    }

    #[test]
    fn train_writes_artifacts_and_reports_each_metric() {
        let dir = tempfile::tempdir().unwrap();
        let rc = small_sim(dir.path());
        let out = dir.path().join("out");
        let run = run_train(&rc, Some(&out)).unwrap();
        let names: Vec<(&str, &str)> = run.reports.iter().map(|r| (r.metric.as_str(), r.split.as_str())).collect();
        assert_eq!(names, vec![("auc", "valid"), ("auc", "test"), ("graph_auc", "truth")]);
        assert!(out.join("checkpoint_seed0.json").exists());
        assert!(out.join("train_log_seed0.json").exists());
        let written: Vec<MetricReport> =
            serde_json::from_str(&std::fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
        assert_eq!(written, run.reports);

        let ck = Checkpoint::load(out.join("checkpoint_seed0.json")).unwrap();
        let truth = TruthSidecar::load(dir.path().join("sim.truth.json")).unwrap();
        let eval = evaluate_checkpoint(&ck, &rc.data, None, Some(Split::Test), Some(&truth)).unwrap();
        assert!((eval[0].value - run.reports[1].value).abs() < 1e-12);
        assert!((eval[1].value - run.reports[2].value).abs() < 1e-12);
    }

    #[test]
    fn several_seeds_are_aggregated() {
        let dir = tempfile::tempdir().unwrap();
        let mut rc = small_sim(dir.path());
        rc.seeds = 2;
        rc.hp.seed = 5;
        let run = run_train(&rc, None).unwrap();
        assert_eq!(run.seeds.iter().map(|s| s.seed).collect::<Vec<_>>(), vec![5, 6]);
        let test = &run.reports[1];
        assert_eq!(test.per_seed.len(), 2);
        assert!(test.std.is_some() && test.seed.is_none());
    }

    #[test]
    fn baselines_report_valid_and_test() {
        let dir = tempfile::tempdir().unwrap();
        let rc = small_sim(dir.path());
        for kind in [BaselineKind::Qda, BaselineKind::Mlp] {
            let r = run_baseline(&rc, kind).unwrap();
            assert_eq!(r.len(), 2);
            assert!(r.iter().all(|m| (0.0..=1.0).contains(&m.value)));
        }
    }

    #[test]
    fn missing_split_column_needs_a_plan() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("d.csv"), "a,y\n1,0\n2,1\n3,0\n4,1\n5,0\n6,1\n").unwrap();
        std::fs::write(
            dir.path().join("d.schema.json"),
            r#"{"task":"classification","columns":[{"name":"a","kind":"real"},{"name":"y","kind":"target"}]}"#,
        )
        .unwrap();
        let mut rc = RunConfig::new(dir.path().join("d.csv"));
        assert!(matches!(prepare(&rc), Err(Error::Config(_))));
        rc.split = Some(SplitPlan::Counts([4, 1, 1]));
        let d = prepare(&rc).unwrap();
        assert_eq!((d.train.n_rows(), d.valid.n_rows(), d.test.n_rows()), (4, 1, 1));
    }

    #[test]
    fn config_paths_resolve_against_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"data": "d.csv", "hp": {"epochs": 3}}"#).unwrap();
        let rc = RunConfig::load(&path).unwrap();
        assert_eq!(rc.data, dir.path().join("d.csv"));
        assert_eq!(rc.schema_path(), dir.path().join("d.schema.json"));
        assert_eq!(rc.hp.epochs, 3);
        assert!(rc.standardize && rc.seeds == 1);
        std::fs::write(&path, r#"{"data": "d.csv", "epochs": 3}"#).unwrap();
        assert!(matches!(RunConfig::load(&path), Err(Error::Config(_))));
    }
}
