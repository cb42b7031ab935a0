//! Metric learning for kernel regression: gradient descent on the
//! leave-one-out squared error of Gaussian-kernel regression onto one-hot
//! class targets. The kernel bandwidth is absorbed into the scale of the
//! learned projection.

use nalgebra::DMatrix;

use super::{check_inputs, relative_change, FitReport, Learner, LearnerConfig};
use crate::error::{Error, Result};
use crate::linalg::{pairwise_sq_dists_exact, sym_eigen_desc, weighted_scatter};
use crate::metric::MahalanobisMetric;

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 40;

/// `N × C` one-hot encoding of class ordinals.
pub fn one_hot(y: &[usize], classes: usize) -> DMatrix<f64> {
    let mut t = DMatrix::zeros(y.len(), classes);
    for (i, &c) in y.iter().enumerate() {
        t[(i, c)] = 1.0;
    }
    t
}

/// Leave-one-out loss `Σ_i ‖ŷ_i − t_i‖²` and its gradient with respect to
/// `a`. Returns `None` when some point's kernel sum underflows to zero.
pub fn mlkr_loss_and_grad(
    a: &DMatrix<f64>,
    x: &DMatrix<f64>,
    targets: &DMatrix<f64>,
) -> Option<(f64, DMatrix<f64>)> {
    let proj = x * a.transpose();
    let d2 = pairwise_sq_dists_exact(&proj);
    let n = x.nrows();
    let mut k = DMatrix::zeros(n, n);
    let mut sums = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            if j != i {
                let v = (-d2[(i, j)]).exp();
                k[(i, j)] = v;
                sums[i] += v;
            }
        }
        if !(sums[i] > 0.0) || !sums[i].is_finite() {
            return None;
        }
    }
    let yhat = DMatrix::from_fn(n, targets.ncols(), |i, c| {
        (0..n).map(|j| k[(i, j)] * targets[(j, c)]).sum::<f64>() / sums[i]
    });
    let err = &yhat - targets;
    let loss = err.norm_squared();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if j != i && k[(i, j)] != 0.0 {
                let dot: f64 = (0..targets.ncols())
                    .map(|c| err[(i, c)] * (targets[(j, c)] - yhat[(i, c)]))
                    .sum();
                w[(i, j)] = k[(i, j)] / sums[i] * dot;
            }
        }
    }
    let grad = weighted_scatter(&proj, &w, x) * -4.0;
    Some((loss, grad))
}

fn loss_only(a: &DMatrix<f64>, x: &DMatrix<f64>, targets: &DMatrix<f64>) -> Option<f64> {
    mlkr_loss_and_grad(a, x, targets).map(|(l, _)| l)
}

/// Leading principal directions (identity when `rank = D`), scaled so the
/// median pairwise squared distance is one.
fn initial_projection(x: &DMatrix<f64>, rank: usize) -> DMatrix<f64> {
    let d = x.ncols();
    let mut a = if rank == d {
        DMatrix::identity(d, d)
    } else {
        let mut xc = x.clone();
        let mean = x.row_mean();
        for mut r in xc.row_iter_mut() {
            r -= &mean;
        }
        let (_, vecs) = sym_eigen_desc(&(xc.transpose() * &xc));
        vecs.columns(0, rank).transpose()
    };
    let d2 = pairwise_sq_dists_exact(&(x * a.transpose()));
    let mut off: Vec<f64> = Vec::new();
    for i in 0..d2.nrows() {
        for j in (i + 1)..d2.ncols() {
            if d2[(i, j)] > 0.0 {
                off.push(d2[(i, j)]);
            }
        }
    }
    if !off.is_empty() {
        let med = crate::linalg::percentile(&off, 50.0);
        a /= med.sqrt();
    }
    a
}

/// Shrinks `a` until every point's nearest neighbour sits at squared
/// distance at most one.
fn rescale_for_underflow(a: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let d2 = pairwise_sq_dists_exact(&(x * a.transpose()));
    let n = x.nrows();
    let worst = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| d2[(i, j)])
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max);
    if worst > 1.0 && worst.is_finite() {
        a / worst.sqrt()
    } else {
        a.clone()
    }
}

pub fn fit_mlkr(x: &DMatrix<f64>, y: &[usize], cfg: &LearnerConfig) -> Result<FitReport> {
    cfg.validate()?;
    let classes = check_inputs(x, y)?;
    let rank = cfg.rank_for(Learner::Mlkr, x.ncols(), classes);
    let num_labels = y.iter().copied().max().unwrap_or(0) + 1;
    let targets = one_hot(y, num_labels);

    let mut a = initial_projection(x, rank);
    let mut warnings = Vec::new();
    let (mut f, mut g) = match mlkr_loss_and_grad(&a, x, &targets) {
        Some(v) => v,
        None => {
            warnings.push("kernel sums underflowed at init; rescaled once".to_string());
            a = rescale_for_underflow(&a, x);
            mlkr_loss_and_grad(&a, x, &targets).ok_or_else(|| {
                Error::NonFinite("MLKR kernel sums underflow even after rescaling; points too spread".into())
            })?
        }
    };
    let mut trace = vec![f];
    let mut step = 1.0 / g.norm().max(1e-12);
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..cfg.max_iter_for(Learner::Mlkr) {
        iterations += 1;
        let gnorm2 = g.norm_squared();
        if gnorm2 == 0.0 {
            converged = true;
            break;
        }
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand = &a - &g * step;
            match loss_only(&cand, x, &targets) {
                Some(fc) if fc <= f - ARMIJO * step * gnorm2 => {
                    accepted = Some((cand, fc));
                    break;
                }
                _ => step *= 0.5,
            }
        }
        let Some((cand, fc)) = accepted else {
            converged = true;
            break;
        };
        let change = relative_change(f, fc);
        a = cand;
        f = fc;
        trace.push(f);
        step *= 2.0;
        if change < cfg.tol_for(Learner::Mlkr) || f == 0.0 {
            converged = true;
            break;
        }
        g = mlkr_loss_and_grad(&a, x, &targets)
            .expect("accepted iterate has finite kernel sums")
            .1;
    }
    let metric = MahalanobisMetric::from_factor(a)?;
    let mut report = FitReport::new(metric);
    report.objective = trace;
    report.iterations = iterations;
    report.converged = converged;
    report.warnings = warnings;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_drive_loss_to_zero() {
        let x = DMatrix::from_row_slice(6, 2, &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 3.0, 1.0, 3.0, 1.0, 3.0, 1.0]);
        let y = vec![0, 0, 0, 1, 1, 1];
        let r = fit_mlkr(&x, &y, &LearnerConfig::default()).unwrap();
        assert!(*r.objective.last().unwrap() < 1e-6, "{:?}", r.objective.last());
    }

    #[test]
    fn zero_factor_gives_loo_mean() {
        let x = DMatrix::from_row_slice(4, 1, &[0.0, 1.0, 2.0, 3.0]);
        let y = vec![0, 0, 1, 1];
        let t = one_hot(&y, 2);
        let (loss, _) = mlkr_loss_and_grad(&DMatrix::zeros(1, 1), &x, &t).unwrap();
        // Each point's LOO mean over the other three: one same-class, two other.
        // ŷ = (1/3, 2/3) for a class-0 point → error (−2/3, 2/3).
        let want = 4.0 * (2.0 * (2.0f64 / 3.0).powi(2));
        assert!((loss - want).abs() < 1e-12);
    }

    #[test]
    fn loss_is_monotone() {
        let x = DMatrix::from_fn(12, 3, |i, j| ((i * 5 + j * 11) % 7) as f64 * 0.3 + (i % 2) as f64);
        let y: Vec<usize> = (0..12).map(|i| i % 2).collect();
        let r = fit_mlkr(&x, &y, &LearnerConfig { max_iter: Some(30), ..Default::default() }).unwrap();
        for w in r.objective.windows(2) {
            assert!(w[1] <= w[0]);
        }
        assert_eq!(r.metric.rank(), 3);
    }

    #[test]
    fn isolated_outlier_triggers_rescale() {
        let x = DMatrix::from_row_slice(7, 1, &[0.0, 0.001, 0.002, 0.003, 0.004, 0.005, 100.0]);
        let y = vec![0, 1, 0, 1, 0, 1, 0];
        let r = fit_mlkr(&x, &y, &LearnerConfig { max_iter: Some(3), ..Default::default() }).unwrap();
        assert!(!r.warnings.is_empty());
    }
}
