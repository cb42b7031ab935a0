//! Experiment grids: task × feature kind × metric, under one of three
//! methodologies (single metric, feature fusion, metric fusion).

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::classify::{evaluate_matrix_cv, AccuracyTable, ConfusionMatrix, SvmParams, DEFAULT_C};
use crate::config::{config_hash, parse_bool, KvFile};
use crate::dataset::{
    load_class_order, load_label_table, make_folds, select_task_subset, stratified_ids, FeatureKind, FeatureSet,
    LabelTable, SplitPlan, TableFormat, Task, TaskSubset,
};
use crate::error::{Error, Result};
use crate::fusion::{feature_fusion, metric_fusion, FusionOptions};
use crate::learners::{Learner, LearnerConfig};
use crate::metric::MahalanobisMetric;
use crate::pca::{fit_pca, PcaOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Methodology {
    Single,
    FeatureFusion,
    MetricFusion,
}

impl Methodology {
    pub fn as_str(self) -> &'static str {
        match self {
            Methodology::Single => "single",
            Methodology::FeatureFusion => "feature-fusion",
            Methodology::MetricFusion => "metric-fusion",
        }
    }
}

impl FromStr for Methodology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Methodology::Single),
            "feature-fusion" => Ok(Methodology::FeatureFusion),
            "metric-fusion" => Ok(Methodology::MetricFusion),
            other => Err(Error::Config(format!(
                "unknown methodology `{other}` (expected single, feature-fusion or metric-fusion)"
            ))),
        }
    }
}

/// A table row: raw features or a learned metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MetricChoice {
    Baseline,
    Learned(Learner),
}

impl MetricChoice {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricChoice::Baseline => "baseline",
            MetricChoice::Learned(l) => l.as_str(),
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            MetricChoice::Baseline => "Baseline",
            MetricChoice::Learned(l) => l.display_name(),
        }
    }
}

impl fmt::Display for MetricChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("baseline") {
            Ok(MetricChoice::Baseline)
        } else {
            s.parse().map(MetricChoice::Learned)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub tasks: Vec<Task>,
    pub features: Vec<(FeatureKind, PathBuf)>,
    pub labels: PathBuf,
    pub class_orders: Vec<(Task, PathBuf)>,
    /// Sorted: baseline first, then learners.
    pub metrics: Vec<MetricChoice>,
    pub methodology: Methodology,
    /// `None` keeps the input dimension.
    pub pca_dim: Option<usize>,
    pub svm_c: f64,
    pub folds: usize,
    pub seed: u64,
    /// Size of the stratified sample reserved for metric learning.
    pub metric_sample: usize,
    pub min_count: usize,
    pub learner: LearnerConfig,
    pub normalize_blocks: bool,
    pub output: PathBuf,
    /// Hash of the canonical spec text.
    pub hash: String,
}

const SPEC_KEYS: &[&str] = &[
    "task",
    "feature",
    "labels",
    "class_order.",
    "metric",
    "methodology",
    "pca_dim",
    "svm_c",
    "folds",
    "seed",
    "metric_sample",
    "min_count",
    "learner.",
    "normalize_blocks",
    "output",
];

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl ExperimentSpec {
    /// Relative paths resolve against `base`. `seed_fallback` applies when
    /// the file sets no seed.
    pub fn from_kv(kv: &KvFile, base: &Path, seed_fallback: Option<u64>) -> Result<Self> {
        kv.check_keys(SPEC_KEYS)?;
        let need = |key: &str| -> Result<&str> {
            kv.get(key)?
                .ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
        };
        let tasks = kv
            .get_all("task")
            .iter()
            .map(|t| t.parse())
            .collect::<Result<Vec<Task>>>()?;
        if tasks.is_empty() {
            return Err(Error::Config("missing required key `task`".into()));
        }
        let mut features = Vec::new();
        for f in kv.get_all("feature") {
            let (kind, path) = f
                .split_once('=')
                .or_else(|| f.split_once(':'))
                .ok_or_else(|| Error::Config(format!("feature entry `{f}` must be kind:path")))?;
            features.push((kind.trim().parse()?, resolve(base, path.trim())));
        }
        if features.is_empty() {
            return Err(Error::Config("missing required key `feature`".into()));
        }
        let mut class_orders = Vec::new();
        for (task, path) in kv.with_prefix("class_order.") {
            class_orders.push((task.parse()?, resolve(base, path)));
        }
        let mut metrics = kv
            .get_all("metric")
            .iter()
            .map(|m| m.parse())
            .collect::<Result<Vec<MetricChoice>>>()?;
        if metrics.is_empty() {
            metrics.push(MetricChoice::Baseline);
        }
        metrics.sort();
        metrics.dedup();
        let mut learner = LearnerConfig::default();
        for (k, v) in kv.with_prefix("learner.") {
            learner.set(k, v)?;
        }
        let seed = match kv.parsed("seed")? {
            Some(s) => s,
            None => seed_fallback.unwrap_or(0),
        };
        learner.seed = seed;
        learner.validate()?;
        let pca_dim = match kv.parsed::<usize>("pca_dim")? {
            None | Some(0) => None,
            Some(k) => Some(k),
        };
        let spec = ExperimentSpec {
            tasks,
            features,
            labels: resolve(base, need("labels")?),
            class_orders,
            metrics,
            methodology: kv.parsed("methodology")?.unwrap_or(Methodology::Single),
            pca_dim,
            svm_c: kv.parsed("svm_c")?.unwrap_or(DEFAULT_C),
            folds: kv.parsed("folds")?.unwrap_or(3),
            seed,
            metric_sample: need("metric_sample")?
                .parse()
                .map_err(|_| Error::Config("`metric_sample`: expected a count".into()))?,
            min_count: kv.parsed("min_count")?.unwrap_or(1),
            learner,
            normalize_blocks: kv
                .get("normalize_blocks")?
                .map(|v| parse_bool("normalize_blocks", v))
                .transpose()?
                .unwrap_or(false),
            output: resolve(base, kv.get("output")?.unwrap_or("results")),
            hash: config_hash(&format!("{}seed={seed}\n", kv.canonical())),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>, seed_fallback: Option<u64>) -> Result<Self> {
        let path = path.as_ref();
        let kv = KvFile::load(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        ExperimentSpec::from_kv(&kv, base, seed_fallback)
    }

    pub fn learned(&self) -> Vec<Learner> {
        self.metrics
            .iter()
            .filter_map(|m| match m {
                MetricChoice::Learned(l) => Some(*l),
                MetricChoice::Baseline => None,
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.svm_c > 0.0) {
            return Err(Error::Config("svm_c must be positive".into()));
        }
        if self.folds < 2 {
            return Err(Error::Config("folds must be at least 2".into()));
        }
        if self.metric_sample == 0 && !self.learned().is_empty() {
            return Err(Error::Config("metric_sample must be positive when learning metrics".into()));
        }
        match self.methodology {
            Methodology::FeatureFusion if self.features.len() < 2 => Err(Error::Config(
                "feature-fusion needs at least 2 feature kinds".into(),
            )),
            Methodology::MetricFusion if self.learned().len() < 2 => Err(Error::Config(
                "metric-fusion needs at least 2 learned metrics".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Files an experiment produced, as `(file name, contents)` in write order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentOutput {
    pub tables: Vec<(Task, AccuracyTable)>,
    pub files: Vec<(String, String)>,
}

impl ExperimentOutput {
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::with_capacity(self.files.len());
        for (name, text) in &self.files {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
        Ok(written)
    }
}

struct Prepared {
    sets: Vec<FeatureSet>,
    labels: LabelTable,
}

fn prepare(spec: &ExperimentSpec) -> Result<Prepared> {
    let labels = load_label_table(&spec.labels)?;
    let sets = spec
        .features
        .par_iter()
        .map(|(kind, path)| {
            let raw = FeatureSet::load(path, TableFormat::from_path(path))?;
            let raw = FeatureSet::new(kind.clone(), raw.ids().to_vec(), raw.matrix().clone())?;
            match spec.pca_dim {
                None => Ok(raw),
                Some(k) => fit_pca(&raw, k, PcaOptions::default())?.project_set(&raw),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Prepared { sets, labels })
}

struct TaskSplit {
    subset: TaskSubset,
    held: Vec<String>,
    rest: TaskSubset,
    plan: SplitPlan,
}

fn split_task(spec: &ExperimentSpec, prep: &Prepared, task: Task) -> Result<TaskSplit> {
    let subset = select_task_subset(&prep.labels, task, spec.min_count)?;
    for set in &prep.sets {
        if let Some(id) = subset.member_ids.iter().find(|id| set.row_of(id).is_none()) {
            return Err(Error::invalid(format!(
                "image `{id}` is labelled for {} but missing from the {} features",
                task.as_str(),
                set.kind()
            )));
        }
    }
    let held = if spec.learned().is_empty() {
        Vec::new()
    } else {
        stratified_ids(&subset, spec.metric_sample, spec.seed)?
    };
    let rest = subset.without(&held);
    let plan = make_folds(&rest, spec.folds, spec.seed)?;
    Ok(TaskSplit { subset, held, rest, plan })
}

fn train_metrics(
    spec: &ExperimentSpec,
    prep: &Prepared,
    split: &TaskSplit,
    task: Task,
) -> Result<Vec<Vec<MahalanobisMetric>>> {
    let learners = spec.learned();
    let y: Vec<usize> = split.held.iter().map(|id| split.subset.class_index[id]).collect();
    let jobs: Vec<(usize, Learner)> = (0..prep.sets.len())
        .flat_map(|k| learners.iter().map(move |&l| (k, l)))
        .collect();
    let fitted = jobs
        .par_iter()
        .map(|&(k, learner)| {
            let set = &prep.sets[k];
            let x = set.rows_for(&split.held)?;
            let report = learner.fit(&x, &y, &spec.learner)?;
            Ok(report
                .metric
                .with_provenance("task", task.as_str())
                .with_provenance("feature", set.kind().as_str())
                .with_provenance("learner", learner.as_str())
                .with_provenance("seed", spec.seed)
                .with_provenance("config_hash", &spec.hash))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut per_kind = vec![Vec::new(); prep.sets.len()];
    for ((k, _), m) in jobs.iter().zip(fitted) {
        per_kind[*k].push(m);
    }
    Ok(per_kind)
}

/// One table cell to evaluate.
struct Cell {
    row: String,
    column: String,
    file_stem: String,
    x: DMatrix<f64>,
}

fn eval_rows(set: &FeatureSet, plan: &SplitPlan, metric: Option<&MahalanobisMetric>) -> Result<FeatureSet> {
    let x = set.rows_for(&plan.ids)?;
    let x = match metric {
        Some(m) => m.project(&x)?,
        None => x,
    };
    FeatureSet::new(set.kind().clone(), plan.ids.clone(), x)
}

fn build_cells(
    spec: &ExperimentSpec,
    prep: &Prepared,
    split: &TaskSplit,
    metrics: &[Vec<MahalanobisMetric>],
    task: Task,
) -> Result<(Vec<String>, Vec<Cell>)> {
    let learned = spec.learned();
    let metric_for = |k: usize, choice: MetricChoice| -> Option<&MahalanobisMetric> {
        match choice {
            MetricChoice::Baseline => None,
            MetricChoice::Learned(l) => learned.iter().position(|&x| x == l).map(|p| &metrics[k][p]),
        }
    };
    let opts = FusionOptions { normalize_blocks: spec.normalize_blocks };
    let t = task.as_str();
    let mut cells = Vec::new();
    let columns: Vec<String>;
    match spec.methodology {
        Methodology::Single => {
            columns = prep.sets.iter().map(|s| s.kind().display_name()).collect();
            for &choice in &spec.metrics {
                for (k, set) in prep.sets.iter().enumerate() {
                    let x = eval_rows(set, &split.plan, metric_for(k, choice))?;
                    cells.push(Cell {
                        row: choice.display_name().to_string(),
                        column: columns[k].clone(),
                        file_stem: format!("{t}_{}_{}", set.kind(), choice),
                        x: x.matrix().clone(),
                    });
                }
            }
        }
        Methodology::FeatureFusion => {
            columns = vec!["Feature fusion".to_string()];
            for &choice in &spec.metrics {
                let blocks = prep
                    .sets
                    .iter()
                    .enumerate()
                    .map(|(k, set)| Ok((eval_rows(set, &split.plan, metric_for(k, choice))?, choice.to_string())))
                    .collect::<Result<Vec<_>>>()?;
                let fused = feature_fusion(&blocks, opts)?;
                cells.push(Cell {
                    row: choice.display_name().to_string(),
                    column: columns[0].clone(),
                    file_stem: format!("{t}_feature-fusion_{choice}"),
                    x: fused.features.matrix().clone(),
                });
            }
        }
        Methodology::MetricFusion => {
            columns = prep.sets.iter().map(|s| s.kind().display_name()).collect();
            for (k, set) in prep.sets.iter().enumerate() {
                let base = eval_rows(set, &split.plan, None)?;
                if spec.metrics.contains(&MetricChoice::Baseline) {
                    cells.push(Cell {
                        row: "Baseline".to_string(),
                        column: columns[k].clone(),
                        file_stem: format!("{t}_{}_baseline", set.kind()),
                        x: base.matrix().clone(),
                    });
                }
                let fused = metric_fusion(&base, &metrics[k], opts)?;
                cells.push(Cell {
                    row: "Metric fusion".to_string(),
                    column: columns[k].clone(),
                    file_stem: format!("{t}_{}_metric-fusion", set.kind()),
                    x: fused.features.matrix().clone(),
                });
            }
            // Baseline rows first, then fusion rows, regardless of feature order.
            cells.sort_by_key(|c| c.row != "Baseline");
        }
    }
    Ok((columns, cells))
}

fn provenance(spec: &ExperimentSpec, task: Task) -> Vec<(String, String)> {
    vec![
        ("task".into(), task.as_str().into()),
        ("methodology".into(), spec.methodology.as_str().into()),
        ("seed".into(), spec.seed.to_string()),
        ("folds".into(), spec.folds.to_string()),
        ("svm_c".into(), spec.svm_c.to_string()),
        ("pca_dim".into(), spec.pca_dim.map_or("none".into(), |k| k.to_string())),
        ("metric_sample".into(), spec.metric_sample.to_string()),
        ("config_hash".into(), spec.hash.clone()),
    ]
}

/// Runs every task of `spec` inside a pool of `jobs` threads (all cores when
/// `None`). Output depends only on the experiment spec and its input files.
pub fn run_experiment(spec: &ExperimentSpec, jobs: Option<usize>) -> Result<ExperimentOutput> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        builder = builder.num_threads(j.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    pool.install(|| run_inner(spec))
}

fn run_inner(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    let prep = prepare(spec)?;
    let params = SvmParams { c: spec.svm_c, seed: spec.seed, ..Default::default() };
    let mut out = ExperimentOutput::default();
    for &task in &spec.tasks {
        let split = split_task(spec, &prep, task)?;
        let metrics = train_metrics(spec, &prep, &split, task)?;
        let (columns, cells) = build_cells(spec, &prep, &split, &metrics, task)?;
        let y: Vec<usize> = split.plan.ids.iter().map(|id| split.rest.class_index[id]).collect();
        let results = cells
            .par_iter()
            .map(|c| evaluate_matrix_cv(&c.x, &y, &split.rest.classes, &split.plan, &params))
            .collect::<Result<Vec<_>>>()?;
        let order = match spec.class_orders.iter().find(|(t, _)| *t == task) {
            Some((_, p)) => Some(load_class_order(p)?),
            None => None,
        };
        let prov = provenance(spec, task);
        let mut table = AccuracyTable::new(columns);
        table.provenance = prov.clone();
        let mut confusions: Vec<(String, String)> = Vec::new();
        for (cell, (report, confusion, _)) in cells.iter().zip(&results) {
            table.set(&cell.row, &cell.column, report.mean, report.dim)?;
            confusions.push((
                format!("{}_confusion.csv", cell.file_stem),
                confusion_csv(confusion, order.as_deref(), &prov, report.mean),
            ));
        }
        out.files.push((format!("{}_accuracy.csv", task.as_str()), table.to_csv()));
        out.files.extend(confusions);
        out.tables.push((task, table));
    }
    Ok(out)
}

fn confusion_csv(cm: &ConfusionMatrix, order: Option<&[String]>, prov: &[(String, String)], mean: f64) -> String {
    let mut p = prov.to_vec();
    p.push(("mean_fold_accuracy".into(), format!("{:.6}", mean)));
    cm.to_csv(order, &p)
}
