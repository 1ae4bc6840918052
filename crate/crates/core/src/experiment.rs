//! Config-driven experiments: single runs over several seeds, training-size
//! sweeps and side-by-side model comparisons, with JSON/CSV outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, Labels, Scaling, Task};
use crate::error::{Error, Result};
use crate::gp::{classify, posterior};
use crate::graph::SpectralDecomposition;
use crate::hyperopt::{default_hyperparams, optimize_problem, OptConfig, ParamLayout, StepRule, TrainingProblem};
use crate::kernels::{label_propagation, BaseKernel, KernelSpec, Regularizer};

/// Default training-set sizes for sweeps.
pub const DEFAULT_SWEEP_SIZES: [usize; 5] = [10, 25, 50, 100, 200];

const SPLIT_SALT: u64 = 0x5EED_5A17_0000_0001;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelName {
    /// Feature-only GP.
    Gp,
    /// Graph-only kernel.
    GraphOnly,
    /// Transductive kernel combining features and graph.
    Tggp,
    /// Label propagation (classification only).
    Lp,
}

impl ModelName {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelName::Gp => "gp",
            ModelName::GraphOnly => "graph_only",
            ModelName::Tggp => "tggp",
            ModelName::Lp => "lp",
        }
    }
}

impl FromStr for ModelName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "gp" => Ok(ModelName::Gp),
            "graph_only" => Ok(ModelName::GraphOnly),
            "tggp" => Ok(ModelName::Tggp),
            "lp" => Ok(ModelName::Lp),
            other => Err(Error::Config(format!("unknown model {other:?} (expected gp, graph_only, tggp or lp)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    SwissRoll {
        #[serde(default = "default_n")]
        n: usize,
        #[serde(default = "default_k")]
        k: usize,
        #[serde(default)]
        noise: f64,
    },
    Path {
        path: PathBuf,
    },
}

fn default_n() -> usize {
    1000
}

fn default_k() -> usize {
    4
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::SwissRoll {
            n: default_n(),
            k: default_k(),
            noise: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub name: ModelName,
    pub base: BaseKernel,
    /// Graph regularizer of the transductive model.
    pub regularizer: String,
    /// Graph regularizer of the graph-only model.
    pub graph_only_regularizer: String,
    /// Softplus polynomial degree.
    pub degree: usize,
    /// Steps of the p-step random-walk regularizer.
    pub p_steps: u32,
    /// Label propagation `α` in (0, 1).
    pub lp_alpha: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            name: ModelName::Tggp,
            base: BaseKernel::Rbf,
            regularizer: "softplus_polynomial".into(),
            graph_only_regularizer: "regularized_laplacian".into(),
            degree: 4,
            p_steps: 2,
            lp_alpha: 0.9,
        }
    }
}

impl ModelConfig {
    /// Kernel spec for the model, `None` for label propagation.
    pub fn kernel_spec(&self) -> Result<Option<KernelSpec>> {
        let parse = |name: &str| Regularizer::parse(name, self.degree).map_err(|e| Error::Config(e.to_string()));
        Ok(match self.name {
            ModelName::Gp => Some(KernelSpec::feature_only(self.base)),
            ModelName::GraphOnly => Some(KernelSpec::graph_only(parse(&self.graph_only_regularizer)?)),
            ModelName::Tggp => Some(KernelSpec::transductive(self.base, parse(&self.regularizer)?)),
            ModelName::Lp => None,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Draw this many training nodes at random per seed.
    pub n_train: Option<usize>,
    /// Use the dataset's own train/validation/test split.
    pub use_public_split: Option<bool>,
    /// Add the validation nodes to the training set.
    pub merge_validation: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunOptConfig {
    pub restarts: usize,
    pub max_iters: usize,
    /// First seed; run `i` uses `seed + i`.
    pub seed: u64,
    pub num_seeds: usize,
    pub step_rule: StepRule,
}

impl Default for RunOptConfig {
    fn default() -> Self {
        let opt = OptConfig::default();
        RunOptConfig {
            restarts: opt.restarts,
            max_iters: opt.max_iters,
            seed: 0,
            num_seeds: 1,
            step_rule: opt.step_rule,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub sizes: Vec<usize>,
    pub models: Vec<ModelName>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            sizes: DEFAULT_SWEEP_SIZES.to_vec(),
            models: vec![ModelName::Gp, ModelName::GraphOnly, ModelName::Tggp],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub opt: RunOptConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let public = self.train.use_public_split == Some(true);
        match (self.train.n_train, public) {
            (Some(_), true) => return Err(Error::Config("set only one of train.n_train and train.use_public_split".into())),
            (None, false) => return Err(Error::Config("set train.n_train or train.use_public_split = true".into())),
            (Some(0), _) => return Err(Error::Config("train.n_train must be positive".into())),
            _ => {}
        }
        if public && matches!(self.dataset, DatasetConfig::SwissRoll { .. }) {
            return Err(Error::Config("the swiss roll generator has no public split; use train.n_train".into()));
        }
        if self.opt.restarts == 0 {
            return Err(Error::Config("opt.restarts must be at least 1".into()));
        }
        if self.opt.num_seeds == 0 {
            return Err(Error::Config("opt.num_seeds must be at least 1".into()));
        }
        if !(self.model.lp_alpha > 0.0 && self.model.lp_alpha < 1.0) {
            return Err(Error::Config("model.lp_alpha must lie in (0, 1)".into()));
        }
        if self.model.p_steps == 0 {
            return Err(Error::Config("model.p_steps must be at least 1".into()));
        }
        if let DatasetConfig::SwissRoll { noise, .. } = self.dataset {
            if !(noise >= 0.0 && noise.is_finite()) {
                return Err(Error::Config("dataset.noise must be nonnegative".into()));
            }
        }
        self.model.kernel_spec()?;
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.opt.num_seeds as u64).map(|i| self.opt.seed + i).collect()
    }

    fn opt_config(&self, seed: u64) -> OptConfig {
        OptConfig {
            restarts: self.opt.restarts,
            max_iters: self.opt.max_iters,
            seed,
            step_rule: self.opt.step_rule.clone(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub data_secs: f64,
    pub spectrum_secs: f64,
    pub optimize_secs: f64,
    pub predict_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub split_hash: String,
    pub n_train: usize,
    pub n_test: usize,
    /// MAE in label units (regression) or accuracy (classification).
    pub metric: Option<f64>,
    pub mae_standardized: Option<f64>,
    /// `confusion[true][predicted]` counts over the test set.
    pub confusion: Option<Vec<Vec<usize>>>,
    pub fitted_params: BTreeMap<String, f64>,
    pub sigma_ratio: Option<f64>,
    pub lml: Option<f64>,
    pub error: Option<String>,
    pub timing: Timing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub model: ModelName,
    pub dataset: String,
    pub task: Task,
    pub metric_name: String,
    /// Mean of `per_seed`.
    pub metric: f64,
    pub stderr: f64,
    pub per_seed: Vec<f64>,
    pub failed_seeds: usize,
    pub seeds: Vec<SeedResult>,
    pub total_secs: f64,
}

/// 64-bit FNV-1a over the train and test index sequences.
pub fn split_hash(train: &[usize], test: &[usize]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    for &i in train {
        feed(&(i as u64).to_le_bytes());
    }
    feed(&u64::MAX.to_le_bytes());
    for &i in test {
        feed(&(i as u64).to_le_bytes());
    }
    format!("{h:016x}")
}

pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let k = values.len();
    if k == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / k as f64;
    if k == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1) as f64;
    (mean, (var / k as f64).sqrt())
}

/// Test-set score of a set of predictions.
#[derive(Clone, Debug, PartialEq)]
pub struct Score {
    pub metric: f64,
    pub mae_standardized: Option<f64>,
    pub confusion: Option<Vec<Vec<usize>>>,
    /// Per-test-node prediction in the dataset's stored label units.
    pub predicted: Vec<f64>,
}

/// Scores `scores` (`|test| x c`) against the labels at `test`.
pub fn score_predictions(ds: &Dataset, test: &[usize], scores: &DMatrix<f64>) -> Result<Score> {
    if scores.nrows() != test.len() {
        return Err(Error::Parameter(format!("{} predictions for {} test nodes", scores.nrows(), test.len())));
    }
    if test.is_empty() {
        return Err(Error::Parameter("empty test set".into()));
    }
    match &ds.labels {
        Labels::Regression(y) => {
            let predicted: Vec<f64> = scores.column(0).iter().copied().collect();
            let err: f64 = test.iter().zip(&predicted).map(|(&i, p)| (p - y[i]).abs()).sum::<f64>() / test.len() as f64;
            let scale = ds.target_scaling.map_or(1.0, |s: Scaling| s.std);
            Ok(Score {
                metric: err * scale,
                mae_standardized: Some(err),
                confusion: None,
                predicted,
            })
        }
        Labels::Classification { classes, class_count } => {
            let predicted = classify(scores);
            let mut confusion = vec![vec![0usize; *class_count]; *class_count];
            let mut hits = 0usize;
            for (&i, &p) in test.iter().zip(&predicted) {
                confusion[classes[i]][p] += 1;
                hits += usize::from(classes[i] == p);
            }
            Ok(Score {
                metric: hits as f64 / test.len() as f64,
                mae_standardized: None,
                confusion: Some(confusion),
                predicted: predicted.into_iter().map(|c| c as f64).collect(),
            })
        }
    }
}

/// A fitted model's test-set predictions.
#[derive(Clone, Debug)]
pub struct ModelFit {
    /// `|test| x c` scores.
    pub scores: DMatrix<f64>,
    pub fitted_params: BTreeMap<String, f64>,
    pub sigma_ratio: Option<f64>,
    pub lml: Option<f64>,
    pub optimize_secs: f64,
    pub predict_secs: f64,
}

/// Fits `model` on the training split of `ds` and predicts its test split.
/// `spectrum` is filled in on first use so callers can share it.
pub fn fit_model(
    model: &ModelConfig,
    ds: &Dataset,
    spectrum: &mut Option<Arc<SpectralDecomposition>>,
    opt: &OptConfig,
) -> Result<ModelFit> {
    let train = &ds.splits.train;
    let test = &ds.splits.test;
    let spec = model.kernel_spec()?;
    let needs_graph = spec.is_none_or(|s| s.regularizer().is_some());
    if needs_graph && spectrum.is_none() {
        *spectrum = Some(Arc::new(ds.spectrum()?));
    }
    let Some(spec) = spec else {
        let t0 = Instant::now();
        let Labels::Classification { class_count, .. } = ds.labels else {
            return Err(Error::Config("label propagation needs a classification dataset".into()));
        };
        let mut y = DMatrix::zeros(ds.n(), class_count);
        let targets = ds.targets(train)?;
        for (r, &i) in train.iter().enumerate() {
            y.set_row(i, &targets.row(r));
        }
        let full = label_propagation(spectrum.as_ref().unwrap(), model.lp_alpha, &y)?;
        let scores = full.select_rows(test.iter());
        return Ok(ModelFit {
            scores,
            fitted_params: BTreeMap::from([("alpha".to_string(), model.lp_alpha)]),
            sigma_ratio: None,
            lml: None,
            optimize_secs: 0.0,
            predict_secs: t0.elapsed().as_secs_f64(),
        });
    };

    let t0 = Instant::now();
    let base = default_hyperparams(&spec, &ds.features).with_p_steps(model.p_steps);
    let layout = Arc::new(ParamLayout::new(&spec, base.clone()));
    let sd = if needs_graph { spectrum.clone() } else { None };
    let mut problem = TrainingProblem::for_dataset(spec, layout, ds, sd, train)?;
    let fit = optimize_problem(&mut problem, &base, opt)?;
    let optimize_secs = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let hp = fit.best_params.unpack();
    let k = problem.full_kernel(&hp)?;
    let post = posterior(&k, train, test, problem.targets(), hp.noise_sq())?;
    let predict_secs = t1.elapsed().as_secs_f64();

    let fitted_params: BTreeMap<String, f64> = fit.best_params.named_values().into_iter().collect();
    let sigma_ratio = (spec.base().is_some() && spec.regularizer().is_some()).then(|| hp.sigma1_sq() / hp.sigma2_sq());
    Ok(ModelFit {
        scores: post.mean,
        fitted_params,
        sigma_ratio,
        lml: Some(fit.best_lml),
        optimize_secs,
        predict_secs,
    })
}

/// Source dataset of an experiment; loaded datasets are read once.
enum Source {
    SwissRoll { n: usize, k: usize, noise: f64 },
    Loaded(Box<Dataset>),
}

impl Source {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(match &cfg.dataset {
            DatasetConfig::SwissRoll { n, k, noise } => Source::SwissRoll {
                n: *n,
                k: *k,
                noise: *noise,
            },
            DatasetConfig::Path { path } => {
                let mut ds = data::load_dataset(path)?;
                if let Labels::Regression(_) = ds.labels {
                    ds = standardize_targets(&ds);
                }
                Source::Loaded(Box::new(ds))
            }
        })
    }

    fn draw(&self, seed: u64) -> Result<Dataset> {
        match self {
            Source::SwissRoll { n, k, noise } => data::generate_swiss_roll(*n, *k, *noise, seed),
            Source::Loaded(ds) => Ok((**ds).clone()),
        }
    }

    /// Whether every seed sees the same graph (so one spectrum serves all).
    fn is_fixed(&self) -> bool {
        matches!(self, Source::Loaded(_))
    }
}

/// Standardizes regression labels over all nodes (no-op when already done).
pub fn standardize_targets(ds: &Dataset) -> Dataset {
    let mut out = ds.clone();
    if let (Labels::Regression(y), None) = (&mut out.labels, out.target_scaling) {
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let std = (y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        let std = if std > 0.0 { std } else { 1.0 };
        y.iter_mut().for_each(|v| *v = (*v - mean) / std);
        out.target_scaling = Some(Scaling { mean, std });
    }
    out
}

/// Applies the configured split to a freshly drawn dataset.
fn apply_split(train: &TrainConfig, ds: &Dataset, seed: u64, n_train: Option<usize>) -> Result<Dataset> {
    let mut out = match n_train.or(train.n_train) {
        Some(size) => data::sample_training_split(ds, size, seed ^ SPLIT_SALT)?,
        None => {
            if ds.splits.train.is_empty() && !(train.merge_validation && !ds.splits.validation.is_empty()) {
                return Err(Error::Parameter(format!("dataset {} has an empty public training split", ds.name)));
            }
            ds.clone()
        }
    };
    if train.merge_validation {
        out = data::merge_validation_into_train(&out);
    }
    out.validate()?;
    Ok(out)
}

/// Everything from one seed that other outputs may need.
struct SeedRun {
    result: SeedResult,
    /// The split dataset (raw features) and scores for plotting.
    plot: Option<(Dataset, Score)>,
    failure: Option<Error>,
}

fn run_seed(
    cfg: &ExperimentConfig,
    model: &ModelConfig,
    drawn: &Dataset,
    spectrum: &mut Option<Arc<SpectralDecomposition>>,
    seed: u64,
    n_train: Option<usize>,
    data_secs: f64,
) -> SeedRun {
    let mut result = SeedResult {
        seed,
        split_hash: String::new(),
        n_train: 0,
        n_test: 0,
        metric: None,
        mae_standardized: None,
        confusion: None,
        fitted_params: BTreeMap::new(),
        sigma_ratio: None,
        lml: None,
        error: None,
        timing: Timing {
            data_secs,
            ..Default::default()
        },
    };
    let outcome = (|| -> Result<(Dataset, Score)> {
        let split = apply_split(&cfg.train, drawn, seed, n_train)?;
        result.split_hash = split_hash(&split.splits.train, &split.splits.test);
        result.n_train = split.splits.train.len();
        result.n_test = split.splits.test.len();
        let prepared = data::standardize_features(&split);
        let t0 = Instant::now();
        let had_spectrum = spectrum.is_some();
        let fit = fit_model(model, &prepared, spectrum, &cfg.opt_config(seed))?;
        if !had_spectrum && spectrum.is_some() {
            result.timing.spectrum_secs = (t0.elapsed().as_secs_f64() - fit.optimize_secs - fit.predict_secs).max(0.0);
        }
        result.timing.optimize_secs = fit.optimize_secs;
        result.timing.predict_secs = fit.predict_secs;
        let score = score_predictions(&split, &split.splits.test, &fit.scores)?;
        result.metric = Some(score.metric);
        result.mae_standardized = score.mae_standardized;
        result.confusion = score.confusion.clone();
        result.fitted_params = fit.fitted_params;
        result.sigma_ratio = fit.sigma_ratio;
        result.lml = fit.lml;
        Ok((split, score))
    })();
    match outcome {
        Ok(plot) => SeedRun {
            result,
            plot: Some(plot),
            failure: None,
        },
        Err(e) => {
            log::warn!("seed {seed} failed: {e}");
            result.error = Some(e.to_string());
            SeedRun {
                result,
                plot: None,
                failure: Some(e),
            }
        }
    }
}

fn assemble_report(model: ModelName, dataset: String, task: Task, seeds: Vec<SeedResult>, total_secs: f64) -> RunReport {
    let per_seed: Vec<f64> = seeds.iter().filter_map(|s| s.metric).collect();
    let (metric, stderr) = mean_and_stderr(&per_seed);
    RunReport {
        model,
        dataset,
        task,
        metric_name: match task {
            Task::Regression => "mae".into(),
            Task::Classification => "accuracy".into(),
        },
        metric,
        stderr,
        failed_seeds: seeds.len() - per_seed.len(),
        per_seed,
        seeds,
        total_secs,
    }
}

/// Result of [`run_experiment`] before anything is written to disk.
pub struct RunOutcome {
    pub report: RunReport,
    /// Split dataset and scores of the first successful seed.
    pub first: Option<(Dataset, Score)>,
}

/// Runs the configured model over every seed without writing files.
pub fn run_experiment_in_memory(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let source = Source::new(cfg)?;
    let mut shared: Option<Arc<SpectralDecomposition>> = None;
    let mut seeds = Vec::new();
    let mut first = None;
    let mut first_error = None;
    let mut name = String::new();
    let mut task = Task::Regression;
    for seed in cfg.seeds() {
        let t0 = Instant::now();
        let drawn = match source.draw(seed) {
            Ok(ds) => ds,
            Err(e) if source.is_fixed() => return Err(e),
            Err(e) => {
                first_error.get_or_insert(e);
                continue;
            }
        };
        name.clone_from(&drawn.name);
        task = drawn.task();
        let data_secs = t0.elapsed().as_secs_f64();
        let mut local = None;
        let spectrum = if source.is_fixed() { &mut shared } else { &mut local };
        let run = run_seed(cfg, &cfg.model, &drawn, spectrum, seed, None, data_secs);
        if first.is_none() {
            first = run.plot;
        }
        if let Some(e) = run.failure {
            first_error.get_or_insert(e);
        }
        seeds.push(run.result);
    }
    let report = assemble_report(cfg.model.name, name, task, seeds, start.elapsed().as_secs_f64());
    if report.per_seed.is_empty() {
        return Err(first_error.unwrap_or_else(|| Error::Config("no seeds ran".into())));
    }
    Ok(RunOutcome { report, first })
}

fn create_output_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs the experiment and writes `report.json` (and `points.csv` for
/// regression) into the configured output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    let outcome = run_experiment_in_memory(cfg)?;
    create_output_dir(&cfg.output)?;
    write_text(
        &cfg.output.join("report.json"),
        &serde_json::to_string_pretty(&outcome.report).expect("report serializes"),
    )?;
    if let Some((ds, score)) = &outcome.first {
        if ds.task() == Task::Regression {
            let predictions = predictions_by_node(ds, score);
            if let Some(warning) = emit_plot_data(&cfg.output.join("points.csv"), ds, &predictions)? {
                log::warn!("{warning}");
            }
        }
    }
    Ok(outcome.report)
}

/// Per-node predictions for plotting: true labels on training nodes, model
/// output on test nodes, `None` elsewhere.
pub fn predictions_by_node(ds: &Dataset, score: &Score) -> Vec<Option<f64>> {
    let mut out = vec![None; ds.n()];
    if let Labels::Regression(y) = &ds.labels {
        for &i in &ds.splits.train {
            out[i] = Some(y[i]);
        }
    }
    for (&i, &p) in ds.splits.test.iter().zip(&score.predicted) {
        out[i] = Some(p);
    }
    out
}

/// Writes `points.csv` with columns `x,y,z,true_label,predicted_label,is_train`.
/// Labels are in the dataset's stored units. Returns a warning when the
/// features are not 3-d, in which case the coordinate columns are empty.
pub fn emit_plot_data(path: &Path, ds: &Dataset, predictions: &[Option<f64>]) -> Result<Option<String>> {
    if predictions.len() != ds.n() {
        return Err(Error::Parameter(format!("{} predictions for {} nodes", predictions.len(), ds.n())));
    }
    let three_d = ds.features.ncols() == 3;
    let mut is_train = vec![false; ds.n()];
    for &i in &ds.splits.train {
        is_train[i] = true;
    }
    let mut text = String::from("x,y,z,true_label,predicted_label,is_train\n");
    for i in 0..ds.n() {
        if three_d {
            let r = ds.features.row(i);
            write!(text, "{},{},{},", r[0], r[1], r[2]).unwrap();
        } else {
            text.push_str(",,,");
        }
        match &ds.labels {
            Labels::Regression(y) => write!(text, "{}", y[i]).unwrap(),
            Labels::Classification { classes, .. } => write!(text, "{}", classes[i]).unwrap(),
        }
        text.push(',');
        if let Some(p) = predictions[i] {
            write!(text, "{p}").unwrap();
        }
        writeln!(text, ",{}", u8::from(is_train[i])).unwrap();
    }
    write_text(path, &text)?;
    Ok((!three_d).then(|| format!("features are {}-d; points.csv written without coordinates", ds.features.ncols())))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub model: ModelName,
    pub size: usize,
    pub seed: u64,
    pub split_hash: String,
    pub metric: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub model: ModelName,
    pub size: usize,
    pub count: usize,
    pub mean: f64,
    pub stderr: f64,
    /// Mean of `ln(metric)` over seeds.
    pub mean_log: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SweepSummary>,
}

impl SweepTable {
    pub fn summary_for(&self, model: ModelName, size: usize) -> Option<&SweepSummary> {
        self.summary.iter().find(|s| s.model == model && s.size == size)
    }

    pub fn rows_csv(&self) -> String {
        let mut text = String::from("model,size,seed,split_hash,metric\n");
        for r in &self.rows {
            let metric = r.metric.map(|m| m.to_string()).unwrap_or_default();
            writeln!(text, "{},{},{},{},{}", r.model.as_str(), r.size, r.seed, r.split_hash, metric).unwrap();
        }
        text
    }

    pub fn summary_csv(&self) -> String {
        let mut text = String::from("model,size,count,mean,stderr,mean_log\n");
        for s in &self.summary {
            writeln!(
                text,
                "{},{},{},{},{},{}",
                s.model.as_str(),
                s.size,
                s.count,
                s.mean,
                s.stderr,
                s.mean_log
            )
            .unwrap();
        }
        text
    }
}

/// Metric for every `(model, size, seed)`; failed cells have no metric.
/// Every model sees the same dataset draw and split for a given size and
/// seed.
pub fn sweep_train_sizes(cfg: &ExperimentConfig, sizes: &[usize], seeds: &[u64], models: &[ModelName]) -> Result<SweepTable> {
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("sweep sizes must be strictly ascending".into()));
    }
    if sizes.is_empty() || seeds.is_empty() || models.is_empty() {
        return Err(Error::Config("sweep needs at least one size, seed and model".into()));
    }
    let mut cfg = cfg.clone();
    if cfg.train.n_train.is_none() {
        cfg.train.n_train = sizes.first().copied();
        cfg.train.use_public_split = None;
    }
    cfg.validate()?;
    let source = Source::new(&cfg)?;
    let mut shared = None;
    let mut cells: BTreeMap<(usize, usize, usize), SweepRow> = BTreeMap::new();
    for (si, &seed) in seeds.iter().enumerate() {
        let drawn = match source.draw(seed) {
            Ok(ds) => Some(ds),
            Err(e) if source.is_fixed() => return Err(e),
            Err(e) => {
                log::warn!("seed {seed}: {e}");
                None
            }
        };
        let mut local = None;
        for (zi, &size) in sizes.iter().enumerate() {
            for (mi, &model) in models.iter().enumerate() {
                let (metric, hash) = match &drawn {
                    Some(ds) => {
                        let spectrum = if source.is_fixed() { &mut shared } else { &mut local };
                        let mc = ModelConfig {
                            name: model,
                            ..cfg.model.clone()
                        };
                        let run = run_seed(&cfg, &mc, ds, spectrum, seed, Some(size), 0.0);
                        (run.result.metric, run.result.split_hash)
                    }
                    None => (None, String::new()),
                };
                cells.insert(
                    (mi, zi, si),
                    SweepRow {
                        model,
                        size,
                        seed,
                        split_hash: hash,
                        metric,
                    },
                );
            }
        }
    }
    let rows: Vec<SweepRow> = cells.into_values().collect();
    let mut summary = Vec::new();
    for &model in models {
        for &size in sizes {
            let values: Vec<f64> = rows
                .iter()
                .filter(|r| r.model == model && r.size == size)
                .filter_map(|r| r.metric)
                .collect();
            let (mean, stderr) = mean_and_stderr(&values);
            let logs: Vec<f64> = values.iter().map(|v| v.ln()).collect();
            summary.push(SweepSummary {
                model,
                size,
                count: values.len(),
                mean,
                stderr,
                mean_log: mean_and_stderr(&logs).0,
            });
        }
    }
    Ok(SweepTable { rows, summary })
}

/// Runs the sweep and writes `table.csv`, `summary.csv` and `report.json`.
pub fn run_sweep(cfg: &ExperimentConfig, sizes: &[usize], seeds: &[u64], models: &[ModelName]) -> Result<SweepTable> {
    let table = sweep_train_sizes(cfg, sizes, seeds, models)?;
    create_output_dir(&cfg.output)?;
    write_text(&cfg.output.join("table.csv"), &table.rows_csv())?;
    write_text(&cfg.output.join("summary.csv"), &table.summary_csv())?;
    write_text(
        &cfg.output.join("report.json"),
        &serde_json::to_string_pretty(&table).expect("sweep serializes"),
    )?;
    Ok(table)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: ModelName,
    pub seed: u64,
    pub split_hash: String,
    pub metric: Option<f64>,
    pub sigma1_sq: Option<f64>,
    pub sigma2_sq: Option<f64>,
    pub sigma_ratio: Option<f64>,
    pub lml: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub reports: Vec<RunReport>,
}

impl Comparison {
    pub fn csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut text = String::from("model,seed,split_hash,metric,sigma1_sq,sigma2_sq,sigma_ratio,lml\n");
        for r in &self.rows {
            writeln!(
                text,
                "{},{},{},{},{},{},{},{}",
                r.model.as_str(),
                r.seed,
                r.split_hash,
                opt(r.metric),
                opt(r.sigma1_sq),
                opt(r.sigma2_sq),
                opt(r.sigma_ratio),
                opt(r.lml)
            )
            .unwrap();
        }
        text
    }
}

/// Runs each listed model (duplicates included) on identical data draws and
/// splits.
pub fn compare_models(cfg: &ExperimentConfig, models: &[ModelName]) -> Result<Comparison> {
    if models.len() < 2 {
        return Err(Error::Config("compare needs at least two models".into()));
    }
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for &model in models {
        let mut c = cfg.clone();
        c.model.name = model;
        let report = run_experiment_in_memory(&c)?.report;
        for s in &report.seeds {
            rows.push(ComparisonRow {
                model,
                seed: s.seed,
                split_hash: s.split_hash.clone(),
                metric: s.metric,
                sigma1_sq: s.fitted_params.get("sigma1_sq").copied(),
                sigma2_sq: s.fitted_params.get("sigma2_sq").copied(),
                sigma_ratio: s.sigma_ratio,
                lml: s.lml,
            });
        }
        reports.push(report);
    }
    Ok(Comparison { rows, reports })
}

/// Runs the comparison and writes `table.csv` and `report.json`.
pub fn run_compare(cfg: &ExperimentConfig, models: &[ModelName]) -> Result<Comparison> {
    let cmp = compare_models(cfg, models)?;
    create_output_dir(&cfg.output)?;
    write_text(&cfg.output.join("table.csv"), &cmp.csv())?;
    write_text(
        &cfg.output.join("report.json"),
        &serde_json::to_string_pretty(&cmp).expect("comparison serializes"),
    )?;
    Ok(cmp)
}
