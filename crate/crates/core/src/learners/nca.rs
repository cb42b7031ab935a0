//! Neighbourhood components analysis: gradient ascent on the expected
//! number of points correctly classified by a stochastic nearest neighbour
//! in the projected space.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{check_inputs, relative_change, FitReport, Learner, LearnerConfig};
use crate::error::{Error, Result};
use crate::linalg::{pairwise_sq_dists_exact, weighted_scatter};
use crate::metric::MahalanobisMetric;

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 40;
const INIT_NN_SQ: f64 = 1e-6;

/// Softmax neighbour probabilities `P_ij` (zero diagonal) for projection
/// `a` (`r × D`), and per-point correct-classification probability `P_i`.
pub fn nca_probabilities(a: &DMatrix<f64>, x: &DMatrix<f64>, y: &[usize]) -> (DMatrix<f64>, Vec<f64>) {
    let proj = x * a.transpose();
    let d2 = pairwise_sq_dists_exact(&proj);
    let n = x.nrows();
    let mut p = DMatrix::zeros(n, n);
    let mut p_i = vec![0.0; n];
    for i in 0..n {
        let min = (0..n)
            .filter(|&j| j != i)
            .map(|j| d2[(i, j)])
            .fold(f64::INFINITY, f64::min);
        let mut z = 0.0;
        for j in 0..n {
            if j != i {
                let e = (min - d2[(i, j)]).exp();
                p[(i, j)] = e;
                z += e;
            }
        }
        for j in 0..n {
            p[(i, j)] /= z;
            if j != i && y[j] == y[i] {
                p_i[i] += p[(i, j)];
            }
        }
    }
    (p, p_i)
}

/// Objective `Σ_i P_i` and its gradient with respect to `a`.
pub fn nca_objective_and_grad(a: &DMatrix<f64>, x: &DMatrix<f64>, y: &[usize]) -> (f64, DMatrix<f64>) {
    let (p, p_i) = nca_probabilities(a, x, y);
    let n = x.nrows();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if j != i {
                let same = if y[j] == y[i] { 1.0 } else { 0.0 };
                w[(i, j)] = p[(i, j)] * (p_i[i] - same);
            }
        }
    }
    let proj = x * a.transpose();
    let grad = weighted_scatter(&proj, &w, x) * 2.0;
    (p_i.iter().sum(), grad)
}

fn objective(a: &DMatrix<f64>, x: &DMatrix<f64>, y: &[usize]) -> f64 {
    nca_probabilities(a, x, y).1.iter().sum()
}

/// Random Gaussian init scaled so the mean projected squared distance to a
/// point's nearest neighbour is `INIT_NN_SQ`. Neighbour probabilities then
/// start close to uniform and random nuisance components stay negligible.
fn initial_projection(x: &DMatrix<f64>, rank: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = x.ncols();
    let a = DMatrix::from_fn(rank, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let d2 = pairwise_sq_dists_exact(&(x * a.transpose()));
    let n = x.nrows();
    let nn: f64 = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| d2[(i, j)])
                .fold(f64::INFINITY, f64::min)
        })
        .sum::<f64>()
        / n as f64;
    if nn > 0.0 && nn.is_finite() {
        a * (INIT_NN_SQ / nn).sqrt()
    } else {
        a
    }
}

pub fn fit_nca(x: &DMatrix<f64>, y: &[usize], cfg: &LearnerConfig) -> Result<FitReport> {
    cfg.validate()?;
    let classes = check_inputs(x, y)?;
    let rank = cfg.rank_for(Learner::Nca, x.ncols(), classes);
    let mut warnings = Vec::new();
    if rank < cfg.rank.unwrap_or(classes) {
        warnings.push(format!("rank clipped to input dimension {rank}"));
    }
    let mut a = initial_projection(x, rank, cfg.seed);
    let (mut f, mut g) = nca_objective_and_grad(&a, x, y);
    if !f.is_finite() {
        return Err(Error::NonFinite("NCA objective at initialization".into()));
    }
    let mut trace = vec![f];
    let mut step = 1.0 / g.norm().max(1e-12);
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..cfg.max_iter_for(Learner::Nca) {
        iterations += 1;
        let gnorm2 = g.norm_squared();
        if gnorm2 == 0.0 {
            converged = true;
            break;
        }
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand = &a + &g * step;
            let fc = objective(&cand, x, y);
            if !fc.is_finite() {
                if cand.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "NCA projection diverged (step {step:e})"
                    )));
                }
                step *= 0.5;
                continue;
            }
            if fc >= f + ARMIJO * step * gnorm2 {
                accepted = Some((cand, fc));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, fc)) = accepted else {
            converged = true;
            break;
        };
        let change = relative_change(f, fc);
        a = cand;
        f = fc;
        trace.push(f);
        step *= 1.25;
        if change < cfg.tol_for(Learner::Nca) {
            converged = true;
            break;
        }
        g = nca_objective_and_grad(&a, x, y).1;
    }
    let metric = MahalanobisMetric::from_factor(a)?;
    let mut report = FitReport::new(metric);
    report.objective = trace;
    report.iterations = iterations;
    report.converged = converged;
    report.warnings = warnings;
    Ok(report)
}
