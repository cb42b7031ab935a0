//! Information-theoretic metric learning: cyclic Bregman projections onto
//! pairwise distance constraints with slack, starting from the identity and
//! regularized by the LogDet divergence to it.

use nalgebra::{DMatrix, DVector};

use super::{check_inputs, FitReport, Learner, LearnerConfig};
use crate::error::{Error, Result};
use crate::linalg::{pairwise_sq_dists_exact, percentile, symmetrized};
use crate::metric::{build_constraints, ConstraintConfig, MahalanobisMetric};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ItmlConstraint {
    pub i: usize,
    pub j: usize,
    /// `true`: `d² ≤ u`; `false`: `d² ≥ v`.
    pub similar: bool,
}

/// `t − ln t − 1`, the scalar LogDet divergence of `t` from one.
fn scalar_logdet(t: f64) -> f64 {
    t - t.ln() - 1.0
}

fn pair_sq_dist(a: &DMatrix<f64>, x: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    let v: DVector<f64> = (x.row(i) - x.row(j)).transpose();
    (v.transpose() * a * &v)[(0, 0)]
}

/// `tr A − ln det A − D` plus `γ` times the scalar divergence between each
/// constraint's required slack and its bound. Infinite when `A` is singular.
pub fn itml_objective(
    a: &DMatrix<f64>,
    x: &DMatrix<f64>,
    constraints: &[ItmlConstraint],
    u: f64,
    v: f64,
    gamma: f64,
) -> f64 {
    let d = a.nrows() as f64;
    let logdet = match a.clone().cholesky() {
        Some(c) => 2.0 * c.l().diagonal().iter().map(|x| x.ln()).sum::<f64>(),
        None => return f64::INFINITY,
    };
    let mut slack = 0.0;
    for c in constraints {
        let d2 = pair_sq_dist(a, x, c.i, c.j);
        if c.similar && d2 > u {
            slack += scalar_logdet(d2 / u);
        } else if !c.similar && d2 < v {
            slack += scalar_logdet(d2.max(f64::MIN_POSITIVE) / v);
        }
    }
    a.trace() - logdet - d + gamma * slack
}

/// Default bounds: 5th and 95th percentiles of squared Euclidean distances
/// over all pairs of distinct points.
fn default_bounds(x: &DMatrix<f64>) -> (f64, f64) {
    let d2 = pairwise_sq_dists_exact(x);
    let n = x.nrows();
    let mut all = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            if d2[(i, j)] > 0.0 {
                all.push(d2[(i, j)]);
            }
        }
    }
    if all.is_empty() {
        return (1.0, 1.0);
    }
    (percentile(&all, 5.0), percentile(&all, 95.0))
}

/// Result of a run on an explicit constraint list.
#[derive(Debug, Clone)]
pub struct ItmlRun {
    pub matrix: DMatrix<f64>,
    /// Final slack-adjusted bound `ξ_c` per constraint.
    pub slack_bounds: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

/// Bregman projections for the given constraints, starting from `I`.
pub fn itml_pairs(
    x: &DMatrix<f64>,
    constraints: &[ItmlConstraint],
    u: f64,
    v: f64,
    gamma: f64,
    max_sweeps: usize,
    tol: f64,
) -> Result<ItmlRun> {
    if !(gamma > 0.0) {
        return Err(Error::invalid("gamma must be positive"));
    }
    if !(u > 0.0 && v > 0.0) || u > v {
        return Err(Error::invalid(format!("need 0 < u ≤ v, got u = {u}, v = {v}")));
    }
    let d = x.ncols();
    let mut a = DMatrix::identity(d, d);
    let gamma_proj = gamma / (gamma + 1.0);
    let mut lambda = vec![0.0_f64; constraints.len()];
    let mut inv_xi: Vec<f64> = constraints
        .iter()
        .map(|c| 1.0 / if c.similar { u } else { v })
        .collect();
    let mut sweeps = 0;
    let mut converged = constraints.is_empty();
    while !converged && sweeps < max_sweeps {
        sweeps += 1;
        let old = lambda.clone();
        for (k, c) in constraints.iter().enumerate() {
            let diff: DVector<f64> = (x.row(c.i) - x.row(c.j)).transpose();
            let av = &a * &diff;
            let p = diff.dot(&av);
            if p <= 0.0 {
                continue;
            }
            let delta = if c.similar { 1.0 } else { -1.0 };
            let alpha = lambda[k].min(delta * gamma_proj * (1.0 / p - inv_xi[k]));
            let beta = delta * alpha / (1.0 - delta * alpha * p);
            inv_xi[k] += delta * alpha / gamma;
            lambda[k] -= alpha;
            a += &av * av.transpose() * beta;
        }
        a = symmetrized(&a);
        let change: f64 = lambda.iter().zip(&old).map(|(n, o)| (n - o).abs()).sum();
        let norm: f64 = lambda.iter().map(|v| v.abs()).sum::<f64>() + old.iter().map(|v| v.abs()).sum::<f64>();
        if norm == 0.0 || change / norm < tol {
            converged = true;
        }
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("ITML matrix".into()));
    }
    Ok(ItmlRun {
        matrix: a,
        slack_bounds: inv_xi.iter().map(|v| 1.0 / v).collect(),
        sweeps,
        converged,
    })
}

/// Similar and dissimilar label pairs (capped), as ITML constraints.
pub fn itml_constraints(x: &DMatrix<f64>, y: &[usize], cfg: &LearnerConfig) -> Result<Vec<ItmlConstraint>> {
    let set = build_constraints(
        x,
        y,
        &ConstraintConfig {
            k_neighbors: 1,
            pair_cap: cfg.pair_cap,
            triplet_cap: Some(0),
            seed: cfg.seed,
            ..Default::default()
        },
    )?;
    let mut out: Vec<ItmlConstraint> = set
        .similar
        .iter()
        .map(|&(i, j)| ItmlConstraint { i, j, similar: true })
        .collect();
    out.extend(set.dissimilar.iter().map(|&(i, j)| ItmlConstraint { i, j, similar: false }));
    Ok(out)
}

pub fn fit_itml(x: &DMatrix<f64>, y: &[usize], cfg: &LearnerConfig) -> Result<FitReport> {
    cfg.validate()?;
    let classes = check_inputs(x, y)?;
    let out_dim = cfg.rank_for(Learner::Itml, x.ncols(), classes);
    let constraints = itml_constraints(x, y, cfg)?;
    let (du, dv) = default_bounds(x);
    let u = cfg.u.unwrap_or(du);
    let v = cfg.v.unwrap_or(dv);
    let run = itml_pairs(x, &constraints, u, v, cfg.gamma, cfg.max_iter_for(Learner::Itml), cfg.tol_for(Learner::Itml))?;
    let start = itml_objective(&DMatrix::identity(x.ncols(), x.ncols()), x, &constraints, u, v, cfg.gamma);
    let end = itml_objective(&run.matrix, x, &constraints, u, v, cfg.gamma);
    let mut report = FitReport::new(MahalanobisMetric::from_psd_with_dim(&run.matrix, out_dim)?);
    report.objective = vec![start, end];
    report.iterations = run.sweeps;
    report.converged = run.converged;
    if !run.converged {
        report
            .warnings
            .push(format!("not converged after {} sweeps", run.sweeps));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_constraints_is_identity() {
        let x = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let run = itml_pairs(&x, &[], 1.0, 2.0, 1.0, 50, 1e-6).unwrap();
        assert_eq!(run.matrix, DMatrix::identity(2, 2));
        assert_eq!(itml_objective(&run.matrix, &x, &[], 1.0, 2.0, 1.0), 0.0);
    }

    #[test]
    fn single_similar_pair_closed_form() {
        let x = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 3.0, 4.0]);
        let c = [ItmlConstraint { i: 0, j: 1, similar: true }];
        for gamma in [0.5, 1.0, 10.0] {
            let u = 4.0;
            let run = itml_pairs(&x, &c, u, 100.0, gamma, 50, 1e-9).unwrap();
            let d2 = pair_sq_dist(&run.matrix, &x, 0, 1);
            let want = (1.0 + gamma) / (1.0 / 25.0 + gamma / u);
            assert!((d2 - want).abs() < 1e-9 * want, "{d2} vs {want}");
            assert!(d2 <= run.slack_bounds[0] * (1.0 + 1e-12));
            assert!(run.converged);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let x = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        assert!(itml_pairs(&x, &[], 1.0, 2.0, 0.0, 5, 1e-6).is_err());
        assert!(itml_pairs(&x, &[], 3.0, 2.0, 1.0, 5, 1e-6).is_err());
    }

    #[test]
    fn stays_positive_definite() {
        let x = DMatrix::from_fn(20, 3, |i, j| ((i * 3 + j * 7) % 9) as f64 + if i < 10 { 0.0 } else { 3.0 * j as f64 });
        let y: Vec<usize> = (0..20).map(|i| usize::from(i >= 10)).collect();
        let r = fit_itml(&x, &y, &LearnerConfig::default()).unwrap();
        r.metric.validate().unwrap();
        assert!(r.objective[1] <= r.objective[0]);
    }
}
