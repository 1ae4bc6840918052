//! Datasets: the Swiss-roll generator, the on-disk directory format, and
//! split and scaling helpers.
//!
//! A dataset directory holds five UTF-8 text files; blank lines and lines
//! starting with `#` are ignored everywhere except inside JSON.
//!
//! | file | contents |
//! |------|----------|
//! | `edges.tsv` | `src<TAB>dst[<TAB>weight]`, 0-based ids, weight defaults to 1 |
//! | `features.csv` | one comma-separated row per node |
//! | `labels.txt` | one label per node: class id or real value |
//! | `splits.json` | `{"train": [..], "validation": [..], "test": [..]}` |
//! | `meta.json` | `{"task": "classification", "class_count": 5, "name": ".."}` |
//!
//! Edges are read as a directed adjacency and symmetrized as `½(A + Aᵀ)`,
//! so undirected graphs should list both directions.

use std::collections::{BTreeSet, HashMap};
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::one_hot;
use crate::graph::{build_knn_graph, normalized_laplacian, spectral_decompose, symmetrize_adjacency, Graph, SpectralDecomposition};

/// Swiss-roll regenerations allowed before giving up on connectivity.
pub const MAX_REGENERATIONS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Labels {
    Regression(Vec<f64>),
    Classification { classes: Vec<usize>, class_count: usize },
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Regression(v) => v.len(),
            Labels::Classification { classes, .. } => classes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    #[serde(default)]
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// `original = standardized * std + mean`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub mean: f64,
    pub std: f64,
}

impl Scaling {
    pub fn restore(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    /// `n x m`, one row per node.
    pub features: DMatrix<f64>,
    pub labels: Labels,
    pub graph: Graph,
    pub splits: Splits,
    /// Set when regression labels were standardized.
    pub target_scaling: Option<Scaling>,
    /// Per-column transform applied by [`standardize_features`].
    pub feature_scaling: Option<Vec<Scaling>>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    task: Task,
    #[serde(default)]
    class_count: Option<usize>,
    #[serde(default)]
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target_scaling: Option<Scaling>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feature_scaling: Option<Vec<Scaling>>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn task(&self) -> Task {
        match self.labels {
            Labels::Regression(_) => Task::Regression,
            Labels::Classification { .. } => Task::Classification,
        }
    }

    pub fn class_count(&self) -> Option<usize> {
        match self.labels {
            Labels::Classification { class_count, .. } => Some(class_count),
            Labels::Regression(_) => None,
        }
    }

    /// Checks shapes, split disjointness and label ranges.
    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.graph.n() != n || self.labels.len() != n {
            return Err(Error::Parameter(format!(
                "{} feature rows, {} graph nodes, {} labels",
                n,
                self.graph.n(),
                self.labels.len()
            )));
        }
        let mut seen = vec![false; n];
        for (part, idx) in [("train", &self.splits.train), ("validation", &self.splits.validation), ("test", &self.splits.test)] {
            for &i in idx {
                if i >= n {
                    return Err(Error::Parameter(format!("{part} index {i} out of range for {n} nodes")));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::Parameter(format!("node {i} appears twice across splits")));
                }
            }
        }
        if let Labels::Classification { classes, class_count } = &self.labels {
            if let Some(bad) = classes.iter().find(|&&c| c >= *class_count) {
                return Err(Error::Parameter(format!("class {bad} out of range for {class_count} classes")));
            }
        }
        Ok(())
    }

    pub fn spectrum(&self) -> Result<SpectralDecomposition> {
        spectral_decompose(&normalized_laplacian(&self.graph))
    }

    /// Training targets at `idx`: a column for regression, one-hot rows for
    /// classification.
    pub fn targets(&self, idx: &[usize]) -> Result<DMatrix<f64>> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.n()) {
            return Err(Error::Parameter(format!("index {bad} out of range for {} nodes", self.n())));
        }
        match &self.labels {
            Labels::Regression(y) => Ok(DMatrix::from_iterator(idx.len(), 1, idx.iter().map(|&i| y[i]))),
            Labels::Classification { classes, class_count } => {
                let picked: Vec<usize> = idx.iter().map(|&i| classes[i]).collect();
                one_hot(&picked, *class_count)
            }
        }
    }
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Samples a Swiss roll with `y = t` standardized and a kNN graph over the
/// coordinates, redrawing until the graph is connected.
pub fn generate_swiss_roll(n: usize, k: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n < 10 {
        return Err(Error::Parameter(format!("swiss roll needs at least 10 points, got {n}")));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Parameter(format!("noise must be nonnegative, got {noise}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, noise).map_err(|e| Error::Parameter(e.to_string()))?;
    for _ in 0..=MAX_REGENERATIONS {
        let mut t = Vec::with_capacity(n);
        let mut x = DMatrix::zeros(n, 3);
        for i in 0..n {
            let ti = rng.random_range(1.5 * PI..=4.5 * PI);
            let hi = rng.random_range(0.0..=21.0);
            let pos = [ti * ti.cos(), hi, ti * ti.sin()];
            for (d, p) in pos.into_iter().enumerate() {
                x[(i, d)] = if noise > 0.0 { p + jitter.sample(&mut rng) } else { p };
            }
            t.push(ti);
        }
        let graph = build_knn_graph(&x, k)?;
        if !graph.is_connected() {
            log::debug!("swiss roll draw with k={k} is disconnected; redrawing");
            continue;
        }
        let (mean, std) = mean_std(t.iter().copied());
        let y = t.iter().map(|v| (v - mean) / std).collect();
        return Ok(Dataset {
            name: format!("swiss_roll_n{n}_k{k}"),
            features: x,
            labels: Labels::Regression(y),
            graph,
            splits: Splits {
                train: Vec::new(),
                validation: Vec::new(),
                test: (0..n).collect(),
            },
            target_scaling: Some(Scaling { mean, std }),
            feature_scaling: None,
        });
    }
    Err(Error::Generation(format!(
        "no connected {k}-NN graph after {MAX_REGENERATIONS} regenerations of {n} points"
    )))
}

/// Random training set of `n_train` nodes; every other node is test and the
/// validation set is cleared.
pub fn sample_training_split(ds: &Dataset, n_train: usize, seed: u64) -> Result<Dataset> {
    let n = ds.n();
    if n_train == 0 || n_train >= n {
        return Err(Error::Parameter(format!("n_train must be in 1..{n}, got {n_train}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = index::sample(&mut rng, n, n_train).into_vec();
    train.sort_unstable();
    let mut is_train = vec![false; n];
    for &i in &train {
        is_train[i] = true;
    }
    let test = (0..n).filter(|&i| !is_train[i]).collect();
    let mut out = ds.clone();
    out.splits = Splits {
        train,
        validation: Vec::new(),
        test,
    };
    Ok(out)
}

/// Moves the validation nodes into the training set.
pub fn merge_validation_into_train(ds: &Dataset) -> Dataset {
    let mut out = ds.clone();
    let validation = std::mem::take(&mut out.splits.validation);
    out.splits.train.extend(validation);
    out
}

/// Zero mean, unit variance per feature column over all nodes; constant
/// columns become zero.
pub fn standardize_features(ds: &Dataset) -> Dataset {
    let mut out = ds.clone();
    let mut scaling = Vec::with_capacity(out.features.ncols());
    for mut col in out.features.column_iter_mut() {
        let values: Vec<f64> = col.iter().copied().collect();
        let (mean, std) = mean_std(values.iter().copied());
        if std > 0.0 && std.is_finite() {
            col.apply(|v| *v = (*v - mean) / std);
            scaling.push(Scaling { mean, std });
        } else {
            col.fill(0.0);
            scaling.push(Scaling { mean, std: 1.0 });
        }
    }
    out.feature_scaling = Some(scaling);
    out
}

fn read_file(dir: &Path, name: &str) -> Result<(PathBuf, String)> {
    let path = dir.join(name);
    if !path.is_file() {
        return Err(Error::MissingFile(path));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok((path, text))
}

/// Non-blank, non-comment lines with 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_real(path: &Path, line: usize, field: &str) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::parse(path, line, format!("not a number: {field:?}")))?;
    if !v.is_finite() {
        return Err(Error::parse(path, line, format!("non-finite value {field:?}")));
    }
    Ok(v)
}

fn parse_features(path: &Path, text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, content) in content_lines(text) {
        let row = content
            .split(',')
            .map(|f| parse_real(path, line, f))
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::parse(
                    path,
                    line,
                    format!("expected {} columns, found {}", first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::parse(path, 0, "no feature rows"));
    }
    let m = rows[0].len();
    Ok(DMatrix::from_fn(rows.len(), m, |i, j| rows[i][j]))
}

fn parse_labels(path: &Path, text: &str, n: usize, meta: &Meta) -> Result<Labels> {
    let lines: Vec<(usize, &str)> = content_lines(text).collect();
    if lines.len() != n {
        let last = lines.last().map_or(0, |l| l.0);
        return Err(Error::parse(path, last, format!("{} labels for {n} nodes", lines.len())));
    }
    match meta.task {
        Task::Regression => Ok(Labels::Regression(
            lines.iter().map(|&(line, f)| parse_real(path, line, f)).collect::<Result<_>>()?,
        )),
        Task::Classification => {
            let class_count = meta
                .class_count
                .ok_or_else(|| Error::parse(path.with_file_name("meta.json"), 0, "classification needs class_count"))?;
            let classes = lines
                .iter()
                .map(|&(line, f)| {
                    let c: usize = f.parse().map_err(|_| Error::parse(path, line, format!("not a class id: {f:?}")))?;
                    if c >= class_count {
                        return Err(Error::parse(path, line, format!("class {c} out of range for {class_count} classes")));
                    }
                    Ok(c)
                })
                .collect::<Result<_>>()?;
            Ok(Labels::Classification { classes, class_count })
        }
    }
}

fn parse_edges(path: &Path, text: &str, n: usize) -> Result<DMatrix<f64>> {
    let mut a = DMatrix::zeros(n, n);
    let mut seen: HashMap<(usize, usize), f64> = HashMap::new();
    for (line, content) in content_lines(text) {
        let fields: Vec<&str> = content.split('\t').collect();
        if !(2..=3).contains(&fields.len()) {
            return Err(Error::parse(path, line, format!("expected 2 or 3 tab-separated fields, found {}", fields.len())));
        }
        let node = |f: &str| -> Result<usize> {
            let id: usize = f.trim().parse().map_err(|_| Error::parse(path, line, format!("not a node id: {f:?}")))?;
            if id >= n {
                return Err(Error::parse(path, line, format!("node id {id} out of range for {n} nodes")));
            }
            Ok(id)
        };
        let (src, dst) = (node(fields[0])?, node(fields[1])?);
        let w = match fields.get(2) {
            Some(f) => parse_real(path, line, f)?,
            None => 1.0,
        };
        if w < 0.0 {
            return Err(Error::parse(path, line, format!("negative edge weight {w}")));
        }
        if let Some(&prev) = seen.get(&(src, dst)) {
            if prev != w {
                return Err(Error::parse(
                    path,
                    line,
                    format!("edge {src}->{dst} repeated with weight {w}, earlier {prev}"),
                ));
            }
            continue;
        }
        seen.insert((src, dst), w);
        a[(src, dst)] = w;
    }
    Ok(a)
}

fn parse_splits(path: &Path, text: &str, n: usize) -> Result<Splits> {
    let splits: Splits = serde_json::from_str(text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
    let mut owner: HashMap<usize, &str> = HashMap::new();
    for (part, idx) in [("train", &splits.train), ("validation", &splits.validation), ("test", &splits.test)] {
        for &i in idx {
            if i >= n {
                return Err(Error::parse(path, 0, format!("{part} index {i} out of range for {n} nodes")));
            }
            if let Some(other) = owner.insert(i, part) {
                return Err(Error::parse(path, 0, format!("node {i} is in both {other} and {part}")));
            }
        }
    }
    Ok(splits)
}

/// Reads a dataset directory.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let (meta_path, meta_text) = read_file(dir, "meta.json")?;
    let meta: Meta = serde_json::from_str(&meta_text).map_err(|e| Error::parse(&meta_path, e.line(), e.to_string()))?;
    let (path, text) = read_file(dir, "features.csv")?;
    let features = parse_features(&path, &text)?;
    let n = features.nrows();
    let (path, text) = read_file(dir, "labels.txt")?;
    let labels = parse_labels(&path, &text, n, &meta)?;
    let (path, text) = read_file(dir, "edges.tsv")?;
    let adjacency = symmetrize_adjacency(&parse_edges(&path, &text, n)?)?;
    let graph = Graph::from_adjacency(adjacency)?;
    let (path, text) = read_file(dir, "splits.json")?;
    let splits = parse_splits(&path, &text, n)?;
    let name = if meta.name.is_empty() {
        dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    } else {
        meta.name
    };
    Ok(Dataset {
        name,
        features,
        labels,
        graph,
        splits,
        target_scaling: meta.target_scaling,
        feature_scaling: meta.feature_scaling,
    })
}

/// Writes `ds` in the directory format. Reals use the shortest exact
/// representation, so loading gives back the same values; each undirected
/// edge is written in both directions.
pub fn save_dataset(ds: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, text: String| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    };

    let meta = Meta {
        task: ds.task(),
        class_count: ds.class_count(),
        name: ds.name.clone(),
        target_scaling: ds.target_scaling,
        feature_scaling: ds.feature_scaling.clone(),
    };
    write("meta.json", serde_json::to_string_pretty(&meta).expect("meta serializes"))?;

    let mut text = String::new();
    for row in ds.features.row_iter() {
        let fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(text, "{}", fields.join(",")).unwrap();
    }
    write("features.csv", text)?;

    let mut text = String::new();
    match &ds.labels {
        Labels::Regression(y) => y.iter().for_each(|v| writeln!(text, "{v}").unwrap()),
        Labels::Classification { classes, .. } => classes.iter().for_each(|c| writeln!(text, "{c}").unwrap()),
    }
    write("labels.txt", text)?;

    let mut text = String::from("# src\tdst\tweight\n");
    let a = ds.graph.adjacency();
    for i in 0..ds.n() {
        for j in 0..ds.n() {
            if a[(i, j)] != 0.0 {
                writeln!(text, "{i}\t{j}\t{}", a[(i, j)]).unwrap();
            }
        }
    }
    write("edges.tsv", text)?;

    write("splits.json", serde_json::to_string(&ds.splits).expect("splits serialize"))
}

/// Class ids present in `idx`, ascending.
pub fn classes_in(ds: &Dataset, idx: &[usize]) -> BTreeSet<usize> {
    match &ds.labels {
        Labels::Classification { classes, .. } => idx.iter().map(|&i| classes[i]).collect(),
        Labels::Regression(_) => BTreeSet::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        Dataset {
            name: "tiny".into(),
            features: DMatrix::from_column_slice(2, 1, &[0.25, -1.5]),
            labels: Labels::Classification {
                classes: vec![0, 1],
                class_count: 2,
            },
            graph: Graph::from_edges(2, &[(0, 1, 1.0)]).unwrap(),
            splits: Splits {
                train: vec![0],
                validation: vec![],
                test: vec![1],
            },
            target_scaling: None,
            feature_scaling: None,
        }
    }

    #[test]
    fn swiss_roll_is_deterministic_and_connected() {
        let a = generate_swiss_roll(60, 4, 0.0, 3).unwrap();
        let b = generate_swiss_roll(60, 4, 0.0, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.graph.is_connected());
        assert_eq!(a.n(), 60);
        a.validate().unwrap();
    }

    #[test]
    fn swiss_roll_rejects_tiny_n() {
        assert!(matches!(generate_swiss_roll(9, 4, 0.0, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn split_sizes() {
        let ds = generate_swiss_roll(30, 4, 0.0, 1).unwrap();
        let s = sample_training_split(&ds, 29, 5).unwrap();
        assert_eq!(s.splits.train.len(), 29);
        assert_eq!(s.splits.test.len(), 1);
        assert_eq!(s, sample_training_split(&ds, 29, 5).unwrap());
        assert!(sample_training_split(&ds, 30, 5).is_err());
    }

    #[test]
    fn merge_validation() {
        let mut ds = tiny();
        assert_eq!(merge_validation_into_train(&ds), ds);
        ds.splits.train.clear();
        ds.splits.validation = vec![0];
        let merged = merge_validation_into_train(&ds);
        assert_eq!(merged.splits.train, vec![0]);
        assert!(merged.splits.validation.is_empty());
    }

    #[test]
    fn constant_feature_column_becomes_zero() {
        let mut ds = tiny();
        ds.features = DMatrix::from_column_slice(2, 1, &[4.0, 4.0]);
        let out = standardize_features(&ds);
        assert!(out.features.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn targets_by_task() {
        let ds = tiny();
        assert_eq!(ds.targets(&[1]).unwrap(), DMatrix::from_row_slice(1, 2, &[0.0, 1.0]));
        assert!(ds.targets(&[2]).is_err());
    }

    #[test]
    fn round_trip_tiny_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny();
        save_dataset(&ds, dir.path()).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), ds);
    }

    #[test]
    fn parse_errors_name_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&tiny(), dir.path()).unwrap();
        fs::write(dir.path().join("edges.tsv"), "# comment\n0\t1\n0\t5\n").unwrap();
        match load_dataset(dir.path()) {
            Err(Error::Parse { path, line, .. }) => {
                assert!(path.ends_with("edges.tsv"));
                assert_eq!(line, 3);
            }
            other => panic!("unexpected {other:?}"),
        }
        fs::write(dir.path().join("edges.tsv"), "0\t1\t1\n0\t1\t2\n").unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Parse { line: 2, .. })));
        fs::remove_file(dir.path().join("labels.txt")).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::MissingFile(_))));
    }
}
