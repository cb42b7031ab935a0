//! The five supervised metric learners.
//!
//! Every learner maps `(X, y, config)` to a [`MahalanobisMetric`] whose
//! factor has a fixed output dimension: the class count for NCA,
//! `min(100, D)` for LMNN and `D` for the others, unless `rank` overrides it.
//!
//! Labels are class ordinals `0..C`.

mod boost;
mod itml;
mod lmnn;
mod mlkr;
mod nca;

pub use boost::{boost_triplets, fit_boostmetric, WeakLearner};
pub use itml::{fit_itml, itml_constraints, itml_objective, itml_pairs, ItmlConstraint, ItmlRun};
pub use lmnn::{fit_lmnn, lmnn_objective};
pub use mlkr::{fit_mlkr, mlkr_loss_and_grad, one_hot};
pub use nca::{fit_nca, nca_objective_and_grad, nca_probabilities};

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::pairwise_sq_dists_exact;
use crate::metric::MahalanobisMetric;

/// Output dimension LMNN reduces to by default.
pub const LMNN_DEFAULT_RANK: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Learner {
    Boost,
    Itml,
    Lmnn,
    Mlkr,
    Nca,
}

impl Learner {
    pub const ALL: [Learner; 5] = [
        Learner::Boost,
        Learner::Itml,
        Learner::Lmnn,
        Learner::Mlkr,
        Learner::Nca,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Learner::Boost => "boost",
            Learner::Itml => "itml",
            Learner::Lmnn => "lmnn",
            Learner::Mlkr => "mlkr",
            Learner::Nca => "nca",
        }
    }

    /// Row label used in accuracy tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Learner::Boost => "Boost",
            Learner::Itml => "ITML",
            Learner::Lmnn => "LMNN",
            Learner::Mlkr => "MLKR",
            Learner::Nca => "NCA",
        }
    }

    /// Output dimension under default config.
    pub fn default_rank(self, dim: usize, num_classes: usize) -> usize {
        match self {
            Learner::Nca => num_classes.min(dim),
            Learner::Lmnn => LMNN_DEFAULT_RANK.min(dim),
            _ => dim,
        }
    }

    fn default_max_iter(self) -> usize {
        match self {
            Learner::Itml => 1000,
            Learner::Boost => 500,
            _ => 200,
        }
    }

    pub fn fit(self, x: &DMatrix<f64>, y: &[usize], cfg: &LearnerConfig) -> Result<FitReport> {
        let report = match self {
            Learner::Nca => fit_nca(x, y, cfg),
            Learner::Lmnn => fit_lmnn(x, y, cfg),
            Learner::Boost => fit_boostmetric(x, y, cfg),
            Learner::Itml => fit_itml(x, y, cfg),
            Learner::Mlkr => fit_mlkr(x, y, cfg),
        }?;
        for w in &report.warnings {
            log::warn!("{}: {w}", self.as_str());
        }
        Ok(report)
    }
}

impl fmt::Display for Learner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Learner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "boost" | "boostmetric" => Ok(Learner::Boost),
            "itml" => Ok(Learner::Itml),
            "lmnn" => Ok(Learner::Lmnn),
            "mlkr" => Ok(Learner::Mlkr),
            "nca" => Ok(Learner::Nca),
            other => Err(Error::invalid(format!(
                "unknown learner `{other}` (expected one of: boost, itml, lmnn, mlkr, nca)"
            ))),
        }
    }
}

/// Hyper-parameters for all learners. Fields a learner does not use are
/// ignored by it.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerConfig {
    /// LMNN push/pull trade-off.
    pub mu: f64,
    /// ITML slack weight.
    pub gamma: f64,
    /// ITML upper bound on similar-pair squared distances.
    pub u: Option<f64>,
    /// ITML lower bound on dissimilar-pair squared distances.
    pub v: Option<f64>,
    /// Output dimension override.
    pub rank: Option<usize>,
    /// Target neighbors (LMNN, Boost) per point.
    pub k_neighbors: usize,
    /// Cap on ITML similar/dissimilar pairs; `None` means `10·N` each.
    pub pair_cap: Option<usize>,
    /// Iteration cap override (outer iterations, sweeps or weak learners).
    pub max_iter: Option<usize>,
    /// Relative objective change (NCA, MLKR, LMNN), relative λ change
    /// (ITML) or edge (Boost) below which the learner stops. `None` means
    /// `1e-3` for ITML and `1e-6` for the others.
    pub tol: Option<f64>,
    pub seed: u64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            mu: 0.5,
            gamma: 1.0,
            u: None,
            v: None,
            rank: None,
            k_neighbors: 3,
            pair_cap: None,
            max_iter: None,
            tol: None,
            seed: 0,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tol.is_some_and(|t| !(t > 0.0)) {
            return Err(Error::invalid("tol must be positive"));
        }
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(Error::invalid("mu must lie in [0, 1]"));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::invalid("gamma must be positive"));
        }
        if let (Some(u), Some(v)) = (self.u, self.v) {
            if u > v {
                return Err(Error::invalid(format!("u = {u} must not exceed v = {v}")));
            }
        }
        if self.k_neighbors == 0 {
            return Err(Error::invalid("k_neighbors must be at least 1"));
        }
        if self.rank == Some(0) {
            return Err(Error::invalid("rank must be at least 1"));
        }
        Ok(())
    }

    pub fn max_iter_for(&self, learner: Learner) -> usize {
        self.max_iter.unwrap_or_else(|| learner.default_max_iter())
    }

    pub fn tol_for(&self, learner: Learner) -> f64 {
        self.tol.unwrap_or(match learner {
            Learner::Itml => 1e-3,
            _ => 1e-6,
        })
    }

    pub fn rank_for(&self, learner: Learner, dim: usize, num_classes: usize) -> usize {
        self.rank
            .unwrap_or_else(|| learner.default_rank(dim, num_classes))
            .min(dim)
    }

    /// Applies one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
        }
        match key {
            "mu" => self.mu = num(key, value)?,
            "gamma" => self.gamma = num(key, value)?,
            "u" => self.u = Some(num(key, value)?),
            "v" => self.v = Some(num(key, value)?),
            "rank" => self.rank = Some(num(key, value)?),
            "k" | "k_neighbors" => self.k_neighbors = num(key, value)?,
            "pair_cap" => self.pair_cap = Some(num(key, value)?),
            "max_iter" => self.max_iter = Some(num(key, value)?),
            "tol" => self.tol = Some(num(key, value)?),
            "seed" => self.seed = num(key, value)?,
            other => return Err(Error::Config(format!("unknown learner key `{other}`"))),
        }
        Ok(())
    }

    /// Canonical `key=value` rendering, used for provenance hashing.
    pub fn canonical(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("auto".to_string(), |x| format!("{x:e}"));
        let opt_u = |v: Option<usize>| v.map_or("auto".to_string(), |x| x.to_string());
        format!(
            "mu={:e};gamma={:e};u={};v={};rank={};k={};pair_cap={};max_iter={};tol={};seed={}",
            self.mu,
            self.gamma,
            opt(self.u),
            opt(self.v),
            opt_u(self.rank),
            self.k_neighbors,
            opt_u(self.pair_cap),
            opt_u(self.max_iter),
            opt(self.tol),
            self.seed
        )
    }
}

/// Result of a fit: the metric plus the optimization trace.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub metric: MahalanobisMetric,
    /// Objective after initialization and after every accepted step.
    pub objective: Vec<f64>,
    /// Boost only: violated-triplet count after each round (index 0 is the
    /// initial metric).
    pub violations: Vec<usize>,
    /// Boost only: the weak learners in order.
    pub weak_learners: Vec<WeakLearner>,
    pub iterations: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl FitReport {
    fn new(metric: MahalanobisMetric) -> Self {
        FitReport {
            metric,
            objective: Vec::new(),
            violations: Vec::new(),
            weak_learners: Vec::new(),
            iterations: 0,
            converged: false,
            warnings: Vec::new(),
        }
    }
}

pub(crate) fn check_inputs(x: &DMatrix<f64>, y: &[usize]) -> Result<usize> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            actual: y.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training features".into()));
    }
    let classes: BTreeSet<usize> = y.iter().copied().collect();
    if classes.len() < 2 {
        return Err(Error::invalid("metric learning needs at least 2 classes"));
    }
    Ok(classes.len())
}

pub(crate) fn relative_change(old: f64, new: f64) -> f64 {
    (new - old).abs() / old.abs().max(new.abs()).max(1e-12)
}

/// Leave-one-out 1-NN accuracy of `x` under Euclidean distance.
pub fn loo_1nn_accuracy(x: &DMatrix<f64>, y: &[usize]) -> f64 {
    let n = x.nrows();
    if n < 2 {
        return 0.0;
    }
    let d = pairwise_sq_dists_exact(x);
    let correct = (0..n)
        .filter(|&i| {
            let mut best = (f64::INFINITY, usize::MAX);
            for j in 0..n {
                if j != i && (d[(i, j)] < best.0 || (d[(i, j)] == best.0 && j < best.1)) {
                    best = (d[(i, j)], j);
                }
            }
            y[best.1] == y[i]
        })
        .count();
    correct as f64 / n as f64
}

/// Picks the config whose metric gives the best leave-one-out 1-NN accuracy
/// on the training data (first one wins ties).
pub fn grid_search(
    learner: Learner,
    x: &DMatrix<f64>,
    y: &[usize],
    candidates: &[LearnerConfig],
) -> Result<(LearnerConfig, f64)> {
    let mut best: Option<(LearnerConfig, f64)> = None;
    for cfg in candidates {
        let report = learner.fit(x, y, cfg)?;
        let acc = loo_1nn_accuracy(&report.metric.project(x)?, y);
        if best.as_ref().is_none_or(|(_, b)| acc > *b) {
            best = Some((cfg.clone(), acc));
        }
    }
    best.ok_or_else(|| Error::invalid("empty grid"))
}
