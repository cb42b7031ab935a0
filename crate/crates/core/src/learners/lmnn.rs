//! Large-margin nearest neighbour: projected subgradient descent on
//! `(1−μ)·Σ d²(i,j) + μ·Σ max(0, 1 + d²(i,j) − d²(i,l))` over target pairs
//! `(i, j)` and differently-labelled `l`, with `M` kept PSD and of bounded rank.

use nalgebra::DMatrix;

use super::{check_inputs, relative_change, FitReport, Learner, LearnerConfig};
use crate::error::Result;
use crate::linalg::{pairwise_sq_dists_exact, sym_eigen_desc, symmetrized, weighted_scatter};
use crate::metric::{target_neighbors, MahalanobisMetric};

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 30;

/// Squared distances `d²_M(x_i, x_j)` for all rows of `x`.
fn metric_sq_dists(m: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let q = x * m * x.transpose();
    let n = x.nrows();
    DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { (q[(i, i)] + q[(j, j)] - 2.0 * q[(i, j)]).max(0.0) })
}

/// Objective value and the pair weights whose scatter is its subgradient.
fn objective_and_weights(
    d2: &DMatrix<f64>,
    y: &[usize],
    targets: &[Vec<usize>],
    mu: f64,
) -> (f64, DMatrix<f64>) {
    let n = y.len();
    let mut w = DMatrix::zeros(n, n);
    let mut pull = 0.0;
    let mut push = 0.0;
    for i in 0..n {
        for &j in &targets[i] {
            pull += d2[(i, j)];
            w[(i, j)] += 1.0 - mu;
            for l in 0..n {
                if y[l] == y[i] {
                    continue;
                }
                let h = 1.0 + d2[(i, j)] - d2[(i, l)];
                if h > 0.0 {
                    push += h;
                    w[(i, j)] += mu;
                    w[(i, l)] -= mu;
                }
            }
        }
    }
    ((1.0 - mu) * pull + mu * push, w)
}

/// Objective at PSD matrix `m` (`D × D`), with target neighbours taken as
/// the `k` Euclidean-nearest same-class points.
pub fn lmnn_objective(m: &DMatrix<f64>, x: &DMatrix<f64>, y: &[usize], k: usize, mu: f64) -> Result<f64> {
    let targets = target_neighbors(&pairwise_sq_dists_exact(x), y, k)?;
    Ok(objective_and_weights(&metric_sq_dists(m, x), y, &targets, mu).0)
}

/// Nearest PSD matrix of rank at most `rank`.
fn project_psd(m: &DMatrix<f64>, rank: usize) -> DMatrix<f64> {
    let (values, vectors) = sym_eigen_desc(&symmetrized(m));
    let d = m.nrows();
    let mut out = DMatrix::zeros(d, d);
    for (i, &lambda) in values.iter().enumerate().take(rank) {
        if lambda <= 0.0 {
            break;
        }
        let v = vectors.column(i);
        out += v * v.transpose() * lambda;
    }
    symmetrized(&out)
}

/// Identity, or the projector onto the leading principal subspace when the
/// rank is capped below `D`.
fn initial_matrix(x: &DMatrix<f64>, rank: usize) -> DMatrix<f64> {
    let d = x.ncols();
    if rank >= d {
        return DMatrix::identity(d, d);
    }
    let mut xc = x.clone();
    let mean = x.row_mean();
    for mut r in xc.row_iter_mut() {
        r -= &mean;
    }
    let (_, vecs) = sym_eigen_desc(&(xc.transpose() * &xc));
    let v = vecs.columns(0, rank);
    v * v.transpose()
}

pub fn fit_lmnn(x: &DMatrix<f64>, y: &[usize], cfg: &LearnerConfig) -> Result<FitReport> {
    cfg.validate()?;
    let classes = check_inputs(x, y)?;
    let d = x.ncols();
    let rank = cfg.rank_for(Learner::Lmnn, d, classes);
    let targets = target_neighbors(&pairwise_sq_dists_exact(x), y, cfg.k_neighbors)?;
    let mu = cfg.mu;

    let mut m = initial_matrix(x, rank);
    let (mut f, mut w) = objective_and_weights(&metric_sq_dists(&m, x), y, &targets, mu);
    let mut trace = vec![f];
    let mut warnings = Vec::new();
    if f == 0.0 {
        warnings.push("no impostors and zero pull term; returning identity".to_string());
        let mut report = FitReport::new(MahalanobisMetric::from_psd_with_dim(&m, rank)?);
        report.objective = trace;
        report.converged = true;
        report.warnings = warnings;
        return Ok(report);
    }

    let mut grad = symmetrized(&weighted_scatter(x, &w, x));
    let mut step = m.norm() / grad.norm().max(1e-300);
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..cfg.max_iter_for(Learner::Lmnn) {
        iterations += 1;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand = project_psd(&(&m - &grad * step), rank);
            let moved = (&cand - &m).norm_squared();
            let (fc, wc) = objective_and_weights(&metric_sq_dists(&cand, x), y, &targets, mu);
            if fc <= f - ARMIJO / step * moved && fc < f {
                accepted = Some((cand, fc, wc));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, fc, wc)) = accepted else {
            converged = true;
            break;
        };
        let change = relative_change(f, fc);
        m = cand;
        f = fc;
        w = wc;
        trace.push(f);
        step *= 1.5;
        if change < cfg.tol_for(Learner::Lmnn) {
            converged = true;
            break;
        }
        grad = symmetrized(&weighted_scatter(x, &w, x));
    }
    let mut report = FitReport::new(MahalanobisMetric::from_psd_with_dim(&m, rank)?);
    report.objective = trace;
    report.iterations = iterations;
    report.converged = converged;
    report.warnings = warnings;
    Ok(report)
}
