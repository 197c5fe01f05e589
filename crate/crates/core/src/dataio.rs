//! Tabular datasets: CSV ingestion against a JSON schema, one-hot encoding,
//! seeded splitting and train-only standardization.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::structure::{FeatureKind, FeatureSpec};
use crate::taskgat::{OutputKind, Targets};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Some(Split::Train),
            "valid" | "validation" | "val" => Some(Split::Valid),
            "test" => Some(Split::Test),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Labels {
    Classes { values: Vec<usize>, levels: Vec<String> },
    Values { values: Vec<f64> },
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Classes { values, .. } => values.len(),
            Labels::Values { values } => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn output_kind(&self) -> OutputKind {
        match self {
            Labels::Classes { levels, .. } => OutputKind::Classes(levels.len()),
            Labels::Values { .. } => OutputKind::Regression,
        }
    }

    pub fn targets(&self) -> Targets<'_> {
        match self {
            Labels::Classes { values, .. } => Targets::Classes(values),
            Labels::Values { values } => Targets::Values(values),
        }
    }

    fn select(&self, rows: &[usize]) -> Labels {
        match self {
            Labels::Classes { values, levels } => Labels::Classes {
                values: rows.iter().map(|&r| values[r]).collect(),
                levels: levels.clone(),
            },
            Labels::Values { values } => Labels::Values {
                values: rows.iter().map(|&r| values[r]).collect(),
            },
        }
    }
}

/// Encoded feature matrix `[n, width]` with labels and split tags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub x: Tensor,
    pub y: Labels,
    pub spec: FeatureSpec,
    pub names: Vec<String>,
    /// Level names of each categorical feature (empty for real features).
    pub levels: Vec<Vec<String>>,
    pub split: Vec<Split>,
}

impl Dataset {
    /// All-real dataset with every row tagged `split`.
    pub fn from_real(x: Tensor, y: Labels, names: Vec<String>, split: Vec<Split>) -> Result<Self> {
        let p = names.len();
        let ds = Self {
            x,
            y,
            spec: FeatureSpec::all_real(p),
            names,
            levels: vec![Vec::new(); p],
            split,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.y.len();
        if self.x.shape() != [n, self.spec.width()] {
            return Err(Error::shape("dataset", self.x.shape(), &[n, self.spec.width()]));
        }
        if self.split.len() != n || self.names.len() != self.spec.len() || self.levels.len() != self.spec.len() {
            return Err(Error::Data("dataset fields disagree in length".into()));
        }
        if let Labels::Classes { values, levels } = &self.y {
            if let Some(&bad) = values.iter().find(|&&v| v >= levels.len()) {
                return Err(Error::Data(format!("label {bad} out of range for {} classes", levels.len())));
            }
        }
        if !self.x.all_finite() {
            return Err(Error::Data("non-finite feature value".into()));
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn rows_in(&self, split: Split) -> Vec<usize> {
        (0..self.n_rows()).filter(|&r| self.split[r] == split).collect()
    }

    /// The given rows, in order.
    pub fn select(&self, rows: &[usize]) -> Dataset {
        let w = self.spec.width();
        let mut data = Vec::with_capacity(rows.len() * w);
        for &r in rows {
            data.extend_from_slice(&self.x.data()[r * w..(r + 1) * w]);
        }
        Dataset {
            x: Tensor::from_parts(vec![rows.len(), w], data),
            y: self.y.select(rows),
            spec: self.spec.clone(),
            names: self.names.clone(),
            levels: self.levels.clone(),
            split: rows.iter().map(|&r| self.split[r]).collect(),
        }
    }

    pub fn subset(&self, split: Split) -> Dataset {
        self.select(&self.rows_in(split))
    }

    /// Appends all-real columns, e.g. pure-noise features.
    pub fn with_extra_real(&self, extra: &Tensor, names: Vec<String>) -> Result<Dataset> {
        let n = self.n_rows();
        let k = names.len();
        if extra.shape() != [n, k] {
            return Err(Error::shape("with_extra_real", extra.shape(), &[n, k]));
        }
        let w = self.spec.width();
        let mut data = Vec::with_capacity(n * (w + k));
        for r in 0..n {
            data.extend_from_slice(&self.x.data()[r * w..(r + 1) * w]);
            data.extend_from_slice(&extra.data()[r * k..(r + 1) * k]);
        }
        let mut kinds = self.spec.kinds().to_vec();
        kinds.extend(std::iter::repeat_n(FeatureKind::Real, k));
        let mut all_names = self.names.clone();
        all_names.extend(names);
        let mut levels = self.levels.clone();
        levels.extend(std::iter::repeat_n(Vec::new(), k));
        Ok(Dataset {
            x: Tensor::from_parts(vec![n, w + k], data),
            y: self.y.clone(),
            spec: FeatureSpec::new(kinds)?,
            names: all_names,
            levels,
            split: self.split.clone(),
        })
    }

    /// Writes the dataset as CSV (categoricals decoded to level names) plus
    /// a schema that reloads it exactly.
    pub fn write_csv(&self, csv_path: impl AsRef<Path>, schema_path: impl AsRef<Path>, target: &str) -> Result<()> {
        let csv_path = csv_path.as_ref();
        let mut w = csv::Writer::from_path(csv_path)?;
        let mut header: Vec<String> = self.names.clone();
        header.push(target.to_string());
        header.push(SPLIT_COLUMN.to_string());
        w.write_record(&header)?;
        let width = self.spec.width();
        for r in 0..self.n_rows() {
            let row = &self.x.data()[r * width..(r + 1) * width];
            let mut rec = Vec::with_capacity(header.len());
            for i in 0..self.spec.len() {
                let blk = self.spec.block(i);
                match self.spec.kind(i) {
                    FeatureKind::Real => rec.push(format!("{}", row[blk.start])),
                    FeatureKind::Categorical(_) => {
                        let l = crate::structure::one_hot_level(&row[blk])
                            .ok_or_else(|| Error::Data(format!("row {r}: invalid one-hot in '{}'", self.names[i])))?;
                        rec.push(self.levels[i][l].clone());
                    }
                }
            }
            rec.push(match &self.y {
                Labels::Classes { values, levels } => levels[values[r]].clone(),
                Labels::Values { values } => format!("{}", values[r]),
            });
            rec.push(self.split[r].as_str().to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::file(csv_path, e))?;
        let mut columns: Vec<ColumnSpec> = (0..self.spec.len())
            .map(|i| match self.spec.kind(i) {
                FeatureKind::Real => ColumnSpec::new(&self.names[i], ColumnKind::Real),
                FeatureKind::Categorical(_) => ColumnSpec {
                    levels: Some(self.levels[i].clone()),
                    ..ColumnSpec::new(&self.names[i], ColumnKind::Categorical)
                },
            })
            .collect();
        columns.push(ColumnSpec {
            levels: match &self.y {
                Labels::Classes { levels, .. } => Some(levels.clone()),
                Labels::Values { .. } => None,
            },
            ..ColumnSpec::new(target, ColumnKind::Target)
        });
        columns.push(ColumnSpec::new(SPLIT_COLUMN, ColumnKind::Split));
        let schema = Schema {
            task: match self.y {
                Labels::Classes { .. } => TaskKind::Classification,
                Labels::Values { .. } => TaskKind::Regression,
            },
            columns,
        };
        schema.save(schema_path)
    }
}

const SPLIT_COLUMN: &str = "split";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Real,
    Categorical,
    Target,
    Split,
    Ignore,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    /// Fixed level order for categorical and class-target columns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<String>>,
}

impl ColumnSpec {
    pub fn new(name: &str, kind: ColumnKind) -> Self {
        Self {
            name: name.into(),
            kind,
            levels: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Classification,
    Regression,
}

/// Per-column kinds of a CSV file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub task: TaskKind,
    pub columns: Vec<ColumnSpec>,
}

impl Schema {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::file(path, e))
    }

    /// Same schema with every level list fixed to those of `ds`, so that
    /// later files are encoded identically.
    pub fn frozen_to(&self, ds: &Dataset) -> Schema {
        let mut out = self.clone();
        let mut feature = 0;
        for col in &mut out.columns {
            match col.kind {
                ColumnKind::Real => feature += 1,
                ColumnKind::Categorical => {
                    col.levels = Some(ds.levels[feature].clone());
                    feature += 1;
                }
                ColumnKind::Target => {
                    if let Labels::Classes { levels, .. } = &ds.y {
                        col.levels = Some(levels.clone());
                    }
                }
                _ => {}
            }
        }
        out
    }
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim(), "" | "?" | "NA" | "NaN" | "nan" | "null")
}

fn parse_real(cell: &str, row: usize, col: &str) -> Result<f64> {
    cell.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Data(format!("row {row}, column '{col}': cannot parse '{cell}' as a number")))
}

/// Level order for a column: the fixed list if given, else sorted
/// numerically when every level is a number (for targets), else first seen.
fn level_order(seen: Vec<String>, numeric_sort: bool) -> Vec<String> {
    if numeric_sort {
        let nums: Option<Vec<f64>> = seen.iter().map(|s| s.trim().parse::<f64>().ok()).collect();
        if let Some(nums) = nums {
            let mut pairs: Vec<(f64, String)> = nums.into_iter().zip(seen).collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            return pairs.into_iter().map(|(_, s)| s).collect();
        }
    }
    seen
}

/// Loads `path` according to `schema`. Rows with a missing value are
/// dropped (and counted in the log). When a column lists its levels, any
/// other value is an error.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let by_name: HashMap<&str, &ColumnSpec> = schema.columns.iter().map(|c| (c.name.as_str(), c)).collect();
    for h in &header {
        if !by_name.contains_key(h.as_str()) {
            return Err(Error::Data(format!("column '{h}' is not described by the schema")));
        }
    }
    let position: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h.as_str(), i)).collect();
    for c in &schema.columns {
        if !position.contains_key(c.name.as_str()) {
            return Err(Error::Data(format!("schema column '{}' missing from {}", c.name, path.display())));
        }
    }
    let features: Vec<&ColumnSpec> = schema
        .columns
        .iter()
        .filter(|c| matches!(c.kind, ColumnKind::Real | ColumnKind::Categorical))
        .collect();
    let targets: Vec<&ColumnSpec> = schema.columns.iter().filter(|c| c.kind == ColumnKind::Target).collect();
    if targets.len() != 1 {
        return Err(Error::Data(format!("schema needs exactly one target column, found {}", targets.len())));
    }
    let target = targets[0];
    let split_col = schema.columns.iter().find(|c| c.kind == ColumnKind::Split);
    if features.is_empty() {
        return Err(Error::Data("schema has no feature columns".into()));
    }

    let mut kept: Vec<Vec<String>> = Vec::new();
    let mut dropped = 0usize;
    for rec in reader.records() {
        let rec = rec?;
        let used = features.iter().copied().chain([target]).chain(split_col);
        if used.clone().any(|c| is_missing(&rec[position[c.name.as_str()]])) {
            dropped += 1;
            continue;
        }
        kept.push(rec.iter().map(str::to_string).collect());
    }
    if dropped > 0 {
        log::info!("{}: dropped {dropped} rows with missing values", path.display());
    }
    let n = kept.len();
    // The data row number reported in errors is 1-based below the header.
    let row_no = |r: usize| r + 1;

    let mut kinds = Vec::with_capacity(features.len());
    let mut levels_all = Vec::with_capacity(features.len());
    let mut codes: Vec<Vec<f64>> = Vec::with_capacity(features.len());
    for c in &features {
        let col = position[c.name.as_str()];
        match c.kind {
            ColumnKind::Real => {
                let vals = kept
                    .iter()
                    .enumerate()
                    .map(|(r, row)| parse_real(&row[col], row_no(r), &c.name))
                    .collect::<Result<Vec<_>>>()?;
                kinds.push(FeatureKind::Real);
                levels_all.push(Vec::new());
                codes.push(vals);
            }
            _ => {
                let levels = match &c.levels {
                    Some(l) => l.clone(),
                    None => {
                        let mut seen: Vec<String> = Vec::new();
                        for row in &kept {
                            if !seen.contains(&row[col]) {
                                seen.push(row[col].clone());
                            }
                        }
                        level_order(seen, false)
                    }
                };
                if levels.len() < 2 {
                    return Err(Error::Data(format!("categorical column '{}' needs at least 2 levels", c.name)));
                }
                let idx: HashMap<&str, usize> = levels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
                let vals = kept
                    .iter()
                    .enumerate()
                    .map(|(r, row)| {
                        idx.get(row[col].as_str()).map(|&i| i as f64).ok_or_else(|| {
                            Error::Data(format!(
                                "row {}, column '{}': unknown category '{}'",
                                row_no(r),
                                c.name,
                                row[col]
                            ))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                kinds.push(FeatureKind::Categorical(levels.len()));
                levels_all.push(levels);
                codes.push(vals);
            }
        }
    }
    let spec = FeatureSpec::new(kinds)?;
    let width = spec.width();
    let mut x = vec![0.0; n * width];
    for (i, col) in codes.iter().enumerate() {
        let blk = spec.block(i);
        for r in 0..n {
            match spec.kind(i) {
                FeatureKind::Real => x[r * width + blk.start] = col[r],
                FeatureKind::Categorical(_) => x[r * width + blk.start + col[r] as usize] = 1.0,
            }
        }
    }

    let tcol = position[target.name.as_str()];
    let y = match schema.task {
        TaskKind::Regression => Labels::Values {
            values: kept
                .iter()
                .enumerate()
                .map(|(r, row)| parse_real(&row[tcol], row_no(r), &target.name))
                .collect::<Result<_>>()?,
        },
        TaskKind::Classification => {
            let levels = match &target.levels {
                Some(l) => l.clone(),
                None => {
                    let mut seen: Vec<String> = Vec::new();
                    for row in &kept {
                        if !seen.contains(&row[tcol]) {
                            seen.push(row[tcol].clone());
                        }
                    }
                    level_order(seen, true)
                }
            };
            let idx: HashMap<&str, usize> = levels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
            let values = kept
                .iter()
                .enumerate()
                .map(|(r, row)| {
                    idx.get(row[tcol].as_str()).copied().ok_or_else(|| {
                        Error::Data(format!(
                            "row {}, column '{}': unknown class '{}'",
                            row_no(r),
                            target.name,
                            row[tcol]
                        ))
                    })
                })
                .collect::<Result<_>>()?;
            Labels::Classes { values, levels }
        }
    };

    let split = match split_col {
        Some(c) => {
            let col = position[c.name.as_str()];
            kept.iter()
                .enumerate()
                .map(|(r, row)| {
                    Split::parse(&row[col]).ok_or_else(|| {
                        Error::Data(format!("row {}, column '{}': unknown split '{}'", row_no(r), c.name, row[col]))
                    })
                })
                .collect::<Result<_>>()?
        }
        None => vec![Split::Train; n],
    };

    let ds = Dataset {
        x: Tensor::new(vec![n, width], x)?,
        y,
        spec,
        names: features.iter().map(|c| c.name.clone()).collect(),
        levels: levels_all,
        split,
    };
    ds.validate()?;
    Ok(ds)
}

/// How rows are divided between train, valid and test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitPlan {
    /// Fractions summing to 1; valid and test sizes are floored and the
    /// remainder goes to train.
    Fractions([f64; 3]),
    /// Exact counts summing to the row count.
    Counts([usize; 3]),
}

impl SplitPlan {
    pub fn sizes(self, n: usize) -> Result<[usize; 3]> {
        let sizes = match self {
            SplitPlan::Fractions(f) => {
                if f.iter().any(|&v| !(0.0..=1.0).contains(&v)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return Err(Error::Config(format!("split fractions {f:?} must be in [0,1] and sum to 1")));
                }
                let valid = (n as f64 * f[1]).floor() as usize;
                let test = (n as f64 * f[2]).floor() as usize;
                [n - valid - test, valid, test]
            }
            SplitPlan::Counts(c) => {
                if c.iter().sum::<usize>() != n {
                    return Err(Error::Config(format!("split counts {c:?} do not sum to {n} rows")));
                }
                c
            }
        };
        if let Some(i) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::Config(format!("{} split would be empty", ["train", "valid", "test"][i])));
        }
        Ok(sizes)
    }
}

/// Column-wise affine standardization of real features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    /// `(mean, std)` per encoded column; one-hot columns keep `(0, 1)`.
    pub columns: Vec<(f64, f64)>,
}

impl Standardizer {
    /// Statistics of the real columns over the training rows only.
    pub fn fit(ds: &Dataset) -> Result<Self> {
        let rows = ds.rows_in(Split::Train);
        if rows.is_empty() {
            return Err(Error::Config("no training rows to standardize on".into()));
        }
        let w = ds.spec.width();
        let mut columns = vec![(0.0, 1.0); w];
        for i in 0..ds.spec.len() {
            if ds.spec.kind(i) != FeatureKind::Real {
                continue;
            }
            let c = ds.spec.block(i).start;
            let n = rows.len() as f64;
            let mean = rows.iter().map(|&r| ds.x.data()[r * w + c]).sum::<f64>() / n;
            let var = rows.iter().map(|&r| (ds.x.data()[r * w + c] - mean).powi(2)).sum::<f64>() / n;
            let std = if var > 0.0 { var.sqrt() } else { 1.0 };
            columns[c] = (mean, std);
        }
        Ok(Self { columns })
    }

    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        let w = ds.spec.width();
        if self.columns.len() != w {
            return Err(Error::shape("standardize", &[self.columns.len()], &[w]));
        }
        let mut out = ds.clone();
        for (k, v) in out.x.data_mut().iter_mut().enumerate() {
            let (m, s) = self.columns[k % w];
            *v = (*v - m) / s;
        }
        Ok(out)
    }
}

/// Seeded shuffle of the rows into train/valid/test.
pub fn assign_splits(ds: &Dataset, plan: SplitPlan, seed: u64) -> Result<Dataset> {
    let n = ds.n_rows();
    let [n_train, n_valid, _] = plan.sizes(n)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(seed));
    let mut tagged = ds.clone();
    for (k, &r) in order.iter().enumerate() {
        tagged.split[r] = if k < n_train {
            Split::Train
        } else if k < n_train + n_valid {
            Split::Valid
        } else {
            Split::Test
        };
    }
    Ok(tagged)
}

/// [`assign_splits`], then standardization fitted on the training rows.
pub fn split_standardize(ds: &Dataset, plan: SplitPlan, seed: u64) -> Result<(Dataset, Standardizer)> {
    let tagged = assign_splits(ds, plan, seed)?;
    let st = Standardizer::fit(&tagged)?;
    Ok((st.apply(&tagged)?, st))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::File::create(&p).unwrap().write_all(text.as_bytes()).unwrap();
        p
    }

    fn schema(cols: &[(&str, ColumnKind)], task: TaskKind) -> Schema {
        Schema {
            task,
            columns: cols.iter().map(|(n, k)| ColumnSpec::new(n, *k)).collect(),
        }
    }

    #[test]
    fn two_real_features_and_binary_target() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "d.csv", "a,b,y\n1,2,0\n3,4,1\n5,6,0\n");
        let s = schema(
            &[("a", ColumnKind::Real), ("b", ColumnKind::Real), ("y", ColumnKind::Target)],
            TaskKind::Classification,
        );
        let ds = load_csv(&p, &s).unwrap();
        assert_eq!(ds.x.shape(), &[3, 2]);
        assert_eq!(ds.y.len(), 3);
        assert_eq!(ds.x.data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn categorical_levels_become_one_hot_in_first_seen_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "d.csv", "c,y\nb,1\na,0\nc,1\nb,0\n");
        let s = schema(&[("c", ColumnKind::Categorical), ("y", ColumnKind::Target)], TaskKind::Classification);
        let ds = load_csv(&p, &s).unwrap();
        assert_eq!(ds.spec.kind(0), FeatureKind::Categorical(3));
        assert_eq!(ds.levels[0], vec!["b", "a", "c"]);
        assert_eq!(&ds.x.data()[..6], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        // Numeric class labels are ordered numerically.
        assert_eq!(
            ds.y,
            Labels::Classes {
                values: vec![1, 0, 1, 0],
                levels: vec!["0".into(), "1".into()]
            }
        );
    }

    #[test]
    fn unparseable_cell_names_row_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "d.csv", "a,y\n1,0\nx1,1\n");
        let s = schema(&[("a", ColumnKind::Real), ("y", ColumnKind::Target)], TaskKind::Classification);
        match load_csv(&p, &s) {
            Err(Error::Data(msg)) => assert!(msg.contains("row 2") && msg.contains("'a'"), "{msg}"),
            other => panic!("expected data error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_category_with_fixed_levels_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "d.csv", "c,y\na,0\nz,1\n");
        let mut s = schema(&[("c", ColumnKind::Categorical), ("y", ColumnKind::Target)], TaskKind::Classification);
        s.columns[0].levels = Some(vec!["a".into(), "b".into()]);
        assert!(matches!(load_csv(&p, &s), Err(Error::Data(m)) if m.contains("unknown category")));
    }

    #[test]
    fn rows_with_missing_values_are_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "d.csv", "a,y\n1,0\n?,1\n,1\n4,1\n");
        let s = schema(&[("a", ColumnKind::Real), ("y", ColumnKind::Target)], TaskKind::Classification);
        assert_eq!(load_csv(&p, &s).unwrap().n_rows(), 2);
    }

    #[test]
    fn schema_must_cover_every_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "d.csv", "a,b,y\n1,2,0\n");
        let s = schema(&[("a", ColumnKind::Real), ("y", ColumnKind::Target)], TaskKind::Classification);
        assert!(matches!(load_csv(&p, &s), Err(Error::Data(_))));
    }

    #[test]
    fn split_sizes_floor_with_remainder_to_train() {
        assert_eq!(SplitPlan::Fractions([0.8, 0.1, 0.1]).sizes(20640).unwrap(), [16512, 2064, 2064]);
        assert_eq!(SplitPlan::Fractions([0.8, 0.1, 0.1]).sizes(298).unwrap(), [240, 29, 29]);
        assert_eq!(SplitPlan::Counts([16718, 1858, 2064]).sizes(20640).unwrap(), [16718, 1858, 2064]);
        assert!(matches!(SplitPlan::Fractions([1.0, 0.0, 0.0]).sizes(10), Err(Error::Config(_))));
        assert!(matches!(SplitPlan::Fractions([0.5, 0.3, 0.3]).sizes(10), Err(Error::Config(_))));
    }

    fn toy(n: usize) -> Dataset {
        let x: Vec<f64> = (0..n * 2).map(|k| (k * k % 17) as f64 + 3.0).collect();
        Dataset::from_real(
            Tensor::new(vec![n, 2], x).unwrap(),
            Labels::Values { values: (0..n).map(|k| k as f64).collect() },
            vec!["a".into(), "b".into()],
            vec![Split::Train; n],
        )
        .unwrap()
    }

    #[test]
    fn standardization_uses_training_rows_only() {
        let (ds, st) = split_standardize(&toy(100), SplitPlan::Fractions([0.8, 0.1, 0.1]), 3).unwrap();
        let train = ds.subset(Split::Train);
        for c in 0..2 {
            let col: Vec<f64> = (0..train.n_rows()).map(|r| train.x.at2(r, c)).collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-6);
        }
        // Refitting on the training rows of the raw data gives the same statistics.
        let raw = toy(100);
        let train_rows = ds.rows_in(Split::Train);
        let mut tagged = raw.clone();
        tagged.split = ds.split.clone();
        assert_eq!(Standardizer::fit(&tagged).unwrap(), st);
        assert_eq!(train_rows.len(), 80);
    }

    #[test]
    fn same_seed_same_membership() {
        let a = split_standardize(&toy(50), SplitPlan::Fractions([0.6, 0.2, 0.2]), 9).unwrap().0;
        let b = split_standardize(&toy(50), SplitPlan::Fractions([0.6, 0.2, 0.2]), 9).unwrap().0;
        let c = split_standardize(&toy(50), SplitPlan::Fractions([0.6, 0.2, 0.2]), 10).unwrap().0;
        assert_eq!(a.split, b.split);
        assert_ne!(a.split, c.split);
    }
}
