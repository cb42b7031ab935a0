//! Command-line driver. Every subcommand is a pure function of its input
//! files, flags and seed.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::classify::{train_one_vs_all, SvmParams, DEFAULT_C};
use crate::config::{config_hash, KvFile};
use crate::dataset::{
    generate_views, load_label_table, select_task_subset, stratified_ids, FeatureKind, FeatureSet, LabelTable,
    SyntheticSpec, TableFormat, Task,
};
use crate::error::{Error, Result};
use crate::experiment::{run_experiment, ExperimentSpec};
use crate::fusion::{feature_fusion, metric_fusion, FusedFeatureSet, FusionOptions};
use crate::learners::{Learner, LearnerConfig};
use crate::metric::MahalanobisMetric;
use crate::pca::{fit_pca, PcaModel, PcaOptions, DEFAULT_PCA_DIM};
use crate::retrieval::{build_index, results_csv, Hit};

#[derive(Debug, Parser)]
#[command(name = "metricforge", version, about = "Metric learning, classification, fusion and search over image features")]
pub struct Cli {
    /// Global seed; falls back to METRICFORGE_SEED, then 0.
    #[arg(long, global = true, env = "METRICFORGE_SEED")]
    pub seed: Option<u64>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit PCA on a feature table and write the reduced table.
    Pca(PcaArgs),
    /// Learn a task metric from labelled features.
    TrainMetric(TrainMetricArgs),
    /// Project a feature table by a metric or a PCA model.
    Project(ProjectArgs),
    /// Train a one-vs-all linear SVM on (optionally projected) features.
    TrainClassifier(TrainClassifierArgs),
    /// Run an experiment grid described by a key=value spec file.
    Evaluate(EvaluateArgs),
    /// Concatenate projected blocks (feature or metric fusion).
    Fuse(FuseArgs),
    /// Exact nearest-neighbour search.
    Search(SearchArgs),
    /// Generate a seeded synthetic corpus.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct PcaArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = DEFAULT_PCA_DIM)]
    pub k: usize,
    /// Reduced feature table.
    #[arg(long)]
    pub out: PathBuf,
    /// Where to save the model (default: `<out>.pca`).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Scale rows to unit L2 norm before centering.
    #[arg(long)]
    pub l2: bool,
}

#[derive(Debug, Args)]
pub struct TrainMetricArgs {
    /// One of: boost, itml, lmnn, mlkr, nca.
    #[arg(long)]
    pub learner: Learner,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub task: Task,
    /// Stratified sample size to train on (default: every labelled image).
    #[arg(long)]
    pub sample: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub min_count: usize,
    /// key=value file of learner settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Learner setting override, `key=value`; repeatable.
    #[arg(long = "set")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, conflicts_with = "pca", required_unless_present = "pca")]
    pub metric: Option<PathBuf>,
    #[arg(long)]
    pub pca: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainClassifierArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub task: Task,
    /// Project features by this metric first.
    #[arg(long)]
    pub metric: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_C)]
    pub c: f64,
    #[arg(long, default_value_t = 1)]
    pub min_count: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Experiment spec file.
    #[arg(long)]
    pub spec: PathBuf,
    /// Overrides the output directory named in the experiment file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FuseMode {
    Feature,
    Metric,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[arg(long, value_enum)]
    pub mode: FuseMode,
    /// Feature mode: `features[:metric]`, one per kind; repeatable.
    #[arg(long = "block")]
    pub blocks: Vec<String>,
    /// Metric mode: the feature table.
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    /// Metric mode: metrics to project by, in block order; repeatable.
    #[arg(long = "metric")]
    pub metrics: Vec<PathBuf>,
    /// Scale each block to unit total variance.
    #[arg(long)]
    pub normalize: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    /// Feature table (or fused set) to search.
    #[arg(long)]
    pub index: PathBuf,
    /// Project the index by this metric first.
    #[arg(long)]
    pub metric: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Query image id; repeatable.
    #[arg(long = "query")]
    pub queries: Vec<String>,
    /// File with one query id per line.
    #[arg(long)]
    pub query_file: Option<PathBuf>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: u64,
    /// Only return images whose label for this task differs from the query's.
    #[arg(long)]
    pub exclude_same: Option<Task>,
    /// Task whose label fills the `hit_label` column.
    #[arg(long)]
    pub label_task: Option<Task>,
    /// Results CSV (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub classes: usize,
    #[arg(long, default_value_t = 60)]
    pub per_class: usize,
    #[arg(long, default_value_t = 60)]
    pub dim: usize,
    #[arg(long, default_value_t = 3)]
    pub intrinsic_dim: usize,
    #[arg(long, default_value_t = 3.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 4.0)]
    pub nuisance_scale: f64,
    /// Comma-separated feature kinds, one file each.
    #[arg(long, value_delimiter = ',', default_value = "gist,classemes,cnn")]
    pub kinds: Vec<FeatureKind>,
    /// Write CSV tables instead of the binary container.
    #[arg(long)]
    pub csv: bool,
}

/// Parses `args` (program name first) and runs the command, writing
/// summaries to `stdout`.
pub fn run_from<I, T>(args: I, stdout: &mut dyn std::io::Write) -> std::result::Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(CliError::Usage)?;
    run(cli, stdout).map_err(CliError::Run)
}

#[derive(Debug)]
pub enum CliError {
    Usage(clap::Error),
    Run(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(e) if !e.use_stderr() => 0,
            CliError::Usage(_) => 2,
            CliError::Run(_) => 1,
        }
    }

    /// One line for errors; help and version text verbatim.
    pub fn render(&self) -> String {
        match self {
            CliError::Usage(e) if !e.use_stderr() => e.to_string(),
            CliError::Usage(e) => {
                let text = e.to_string();
                let first = text.lines().next().unwrap_or("error: invalid usage").trim();
                if first.starts_with("error:") {
                    first.to_string()
                } else {
                    format!("error: {first}")
                }
            }
            CliError::Run(e) => format!("error: {}", e.to_string().replace('\n', " ")),
        }
    }
}

pub fn run(cli: Cli, stdout: &mut dyn std::io::Write) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    let jobs = cli.jobs.map(|j| j as usize);
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        pool = pool.num_threads(j);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    let summary = pool.install(|| match cli.command {
        Command::Pca(a) => cmd_pca(a),
        Command::TrainMetric(a) => cmd_train_metric(a, seed),
        Command::Project(a) => cmd_project(a),
        Command::TrainClassifier(a) => cmd_train_classifier(a, seed),
        Command::Evaluate(a) => cmd_evaluate(a, cli.seed, jobs),
        Command::Fuse(a) => cmd_fuse(a),
        Command::Search(a) => cmd_search(a),
        Command::Synth(a) => cmd_synth(a, seed),
    })?;
    stdout
        .write_all(summary.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

fn load_features(path: &Path) -> Result<FeatureSet> {
    FeatureSet::load(path, TableFormat::from_path(path))
}

fn save_features(set: &FeatureSet, path: &Path) -> Result<()> {
    set.save(path, TableFormat::from_path(path))
}

fn cmd_pca(a: PcaArgs) -> Result<String> {
    let set = load_features(&a.input)?;
    if a.k > set.dim() {
        return Err(Error::invalid(format!(
            "k = {} exceeds the feature dimension D = {} of {}",
            a.k,
            set.dim(),
            a.input.display()
        )));
    }
    let model = fit_pca(&set, a.k, PcaOptions { l2_normalize: a.l2 })?;
    let projected = model.project_set(&set)?;
    let model_path = a.model.unwrap_or_else(|| with_suffix(&a.out, ".pca"));
    model.save(&model_path)?;
    save_features(&projected, &a.out)?;
    Ok(format!(
        "pca: D = {} -> k = {}, explained fraction {:.4}\nwrote {}\nwrote {}\n",
        model.source_dim(),
        model.k(),
        model.retained_variance(),
        a.out.display(),
        model_path.display()
    ))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn learner_config(config: Option<&Path>, overrides: &[String], seed: u64) -> Result<LearnerConfig> {
    let mut cfg = LearnerConfig { seed, ..Default::default() };
    if let Some(path) = config {
        for (k, v) in &KvFile::load(path)?.entries {
            cfg.set(k.strip_prefix("learner.").unwrap_or(k), v)?;
        }
    }
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("override `{o}` must be key=value")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train_metric(a: TrainMetricArgs, seed: u64) -> Result<String> {
    let learner = a.learner;
    let cfg = learner_config(a.config.as_deref(), &a.overrides, seed)?;
    let set = load_features(&a.features)?;
    let labels = load_label_table(&a.labels)?;
    let subset = select_task_subset(&labels.restrict(set.ids()), a.task, a.min_count)?;
    let ids = match a.sample {
        Some(n) => stratified_ids(&subset, n, cfg.seed)?,
        None => subset.member_ids.clone(),
    };
    let x = set.rows_for(&ids)?;
    let y: Vec<usize> = ids.iter().map(|id| subset.class_index[id]).collect();
    let report = learner.fit(&x, &y, &cfg)?;
    let hash = config_hash(&format!(
        "{}\ntask={}\nsample={:?}\nmin_count={}\n",
        cfg.canonical(),
        a.task,
        a.sample,
        a.min_count
    ));
    let metric = report
        .metric
        .with_provenance("task", a.task.as_str())
        .with_provenance("feature", set.kind().as_str())
        .with_provenance("learner", learner.as_str())
        .with_provenance("seed", cfg.seed)
        .with_provenance("config_hash", &hash);
    metric.save(&a.out)?;
    let mut s = format!(
        "{}: {} images, {} classes, D = {} -> rank {}, {} iterations{}\n",
        learner.as_str(),
        ids.len(),
        subset.num_classes(),
        metric.dim(),
        metric.rank(),
        report.iterations,
        if report.converged { "" } else { " (not converged)" }
    );
    for w in &report.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    let _ = writeln!(s, "wrote {}", a.out.display());
    Ok(s)
}

fn cmd_project(a: ProjectArgs) -> Result<String> {
    let set = load_features(&a.input)?;
    let out = match (&a.metric, &a.pca) {
        (Some(m), _) => MahalanobisMetric::load(m)?.project_set(&set)?,
        (None, Some(p)) => PcaModel::load(p)?.project_set(&set)?,
        (None, None) => return Err(Error::invalid("one of --metric or --pca is required")),
    };
    save_features(&out, &a.out)?;
    Ok(format!("projected {} rows to {} dims\nwrote {}\n", out.len(), out.dim(), a.out.display()))
}

fn cmd_train_classifier(a: TrainClassifierArgs, seed: u64) -> Result<String> {
    let set = load_features(&a.features)?;
    let labels = load_label_table(&a.labels)?;
    let subset = select_task_subset(&labels.restrict(set.ids()), a.task, a.min_count)?;
    let mut x = set.rows_for(&subset.member_ids)?;
    let mut learner = "baseline".to_string();
    if let Some(path) = &a.metric {
        let m = MahalanobisMetric::load(path)?;
        learner = m.provenance_value("learner").unwrap_or("custom").to_string();
        x = m.project(&x)?;
    }
    let params = SvmParams { c: a.c, seed, ..Default::default() };
    let model = train_one_vs_all(&x, &subset.labels(), &subset.classes, &params)?
        .with_provenance("task", a.task.as_str())
        .with_provenance("feature", set.kind().as_str())
        .with_provenance("learner", &learner)
        .with_provenance("seed", seed)
        .with_provenance(
            "config_hash",
            config_hash(&format!("task={}\nc={:e}\nmin_count={}\nlearner={learner}\n", a.task, a.c, a.min_count)),
        );
    model.save(&a.out)?;
    Ok(format!(
        "one-vs-all: {} classes over {} images, dim {}\nwrote {}\n",
        subset.num_classes(),
        subset.len(),
        model.dim(),
        a.out.display()
    ))
}

fn cmd_evaluate(a: EvaluateArgs, seed: Option<u64>, jobs: Option<usize>) -> Result<String> {
    let mut spec = ExperimentSpec::load(&a.spec, seed)?;
    if let Some(out) = a.out {
        spec.output = out;
    }
    let output = run_experiment(&spec, jobs)?;
    let written = output.write(&spec.output)?;
    let mut s = String::new();
    for (task, table) in &output.tables {
        let _ = writeln!(s, "== {task} ==");
        s.push_str(&table.to_csv());
    }
    for p in written {
        let _ = writeln!(s, "wrote {}", p.display());
    }
    Ok(s)
}

fn cmd_fuse(a: FuseArgs) -> Result<String> {
    let opts = FusionOptions { normalize_blocks: a.normalize };
    let fused: FusedFeatureSet = match a.mode {
        FuseMode::Feature => {
            if a.blocks.is_empty() {
                return Err(Error::invalid("feature fusion needs at least one --block"));
            }
            let mut blocks = Vec::with_capacity(a.blocks.len());
            for spec in &a.blocks {
                let (feat, metric) = match spec.split_once(':') {
                    Some((f, m)) => (PathBuf::from(f), Some(PathBuf::from(m))),
                    None => (PathBuf::from(spec), None),
                };
                let set = load_features(&feat)?;
                blocks.push(match metric {
                    Some(m) => {
                        let m = MahalanobisMetric::load(&m)?;
                        let tag = m.provenance_value("learner").unwrap_or("custom").to_string();
                        (m.project_set(&set)?, tag)
                    }
                    None => (set, "none".to_string()),
                });
            }
            // Align every block to the first block's row order.
            let ids = blocks[0].0.ids().to_vec();
            for (set, _) in blocks.iter_mut().skip(1) {
                if set.ids() != ids.as_slice() {
                    *set = FeatureSet::new(set.kind().clone(), ids.clone(), set.rows_for(&ids)?)?;
                }
            }
            feature_fusion(&blocks, opts)?
        }
        FuseMode::Metric => {
            let input = a
                .input
                .as_ref()
                .ok_or_else(|| Error::invalid("metric fusion needs --in"))?;
            if a.metrics.is_empty() {
                return Err(Error::invalid("metric fusion needs at least one --metric"));
            }
            let set = load_features(input)?;
            let metrics = a
                .metrics
                .iter()
                .map(MahalanobisMetric::load)
                .collect::<Result<Vec<_>>>()?;
            metric_fusion(&set, &metrics, opts)?
        }
    };
    fused.save(&a.out)?;
    let mut s = format!("fused {} rows into {} columns\n", fused.features.len(), fused.dim());
    for b in &fused.blocks {
        let _ = writeln!(s, "  {}/{}: {} columns at {}", b.feature, b.metric, b.dim, b.offset);
    }
    let _ = writeln!(s, "wrote {}", a.out.display());
    Ok(s)
}

/// Feature tables and fused sets share the container; both load as rows.
fn load_index_rows(path: &Path) -> Result<FeatureSet> {
    if TableFormat::from_path(path) == TableFormat::Binary {
        Ok(FusedFeatureSet::load(path)?.features)
    } else {
        load_features(path)
    }
}

fn read_queries(a: &SearchArgs) -> Result<Vec<String>> {
    let mut q = a.queries.clone();
    if let Some(path) = &a.query_file {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        q.extend(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string));
    }
    if q.is_empty() {
        return Err(Error::invalid("no query ids (use --query or --query-file)"));
    }
    Ok(q)
}

fn cmd_search(a: SearchArgs) -> Result<String> {
    let queries = read_queries(&a)?;
    let mut set = load_index_rows(&a.index)?;
    if let Some(m) = &a.metric {
        set = MahalanobisMetric::load(m)?.project_set(&set)?;
    }
    let labels: Option<LabelTable> = a.labels.as_ref().map(load_label_table).transpose()?;
    if a.exclude_same.is_some() && labels.is_none() {
        return Err(Error::invalid("--exclude-same needs --labels"));
    }
    let index = build_index(set.matrix().clone(), set.ids().to_vec(), labels)?;
    let k = a.k as usize;
    let mut results: Vec<(String, Vec<Hit>)> = Vec::with_capacity(queries.len());
    for q in queries {
        let hits = match a.exclude_same {
            Some(task) => index.nearest_excluding(&q, task, k)?,
            None => index.nearest(&index.vector(&q)?, k)?,
        };
        results.push((q, hits));
    }
    let csv = results_csv(&index, &results, a.label_task.or(a.exclude_same));
    match &a.out {
        Some(path) => {
            std::fs::write(path, &csv).map_err(|e| Error::io(path, e))?;
            Ok(format!("{} queries\nwrote {}\n", results.len(), path.display()))
        }
        None => Ok(csv),
    }
}

fn cmd_synth(a: SynthArgs, seed: u64) -> Result<String> {
    let spec = SyntheticSpec {
        classes: a.classes,
        per_class: a.per_class,
        ambient_dim: a.dim,
        intrinsic_dim: a.intrinsic_dim,
        separation: a.separation,
        noise: a.noise,
        nuisance_scale: a.nuisance_scale,
        seed,
    };
    let (views, labels, _) = generate_views(&spec, &a.kinds)?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    let ext = if a.csv { "csv" } else { "bin" };
    let mut s = String::new();
    for v in &views {
        let path = a.out_dir.join(format!("{}.{ext}", v.kind()));
        save_features(v, &path)?;
        let _ = writeln!(s, "wrote {}", path.display());
    }
    let path = a.out_dir.join("labels.csv");
    labels.save(&path)?;
    let _ = writeln!(s, "wrote {}", path.display());
    Ok(s)
}

/// Process entry point: returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let mut stdout = std::io::stdout().lock();
    match run_from(args, &mut stdout) {
        Ok(()) => 0,
        Err(e) => {
            let code = e.exit_code();
            if code == 0 {
                let _ = write!(stdout, "{}", e.render());
            } else {
                eprintln!("{}", e.render());
            }
            code
        }
    }
}
