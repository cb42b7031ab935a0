//! Boosted metric learning: `M = Σ_t w_t z_t z_tᵀ` built one trace-one
//! rank-one weak learner at a time. Each round picks the leading eigenvector
//! of the margin-weighted constraint matrix and weights it with the
//! exponential-loss step for edges in `[−1, 1]`.

use nalgebra::{DMatrix, DVector};

use super::{check_inputs, FitReport, Learner, LearnerConfig};
use crate::error::{Error, Result};
use crate::linalg::{fix_sign, pairwise_sq_dists_exact, sym_eigen_desc, symmetrized, weighted_scatter};
use crate::metric::{target_neighbors, MahalanobisMetric};

const MAX_HALVINGS: usize = 30;
const EDGE_CAP: f64 = 1.0 - 1e-12;
/// Eigenvectors tried per round when the leading one cannot keep the
/// violation count from growing.
const CANDIDATES: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct WeakLearner {
    /// Unit vector; the weak metric is `z zᵀ`.
    pub z: DVector<f64>,
    pub weight: f64,
    /// Weighted margin of `z zᵀ` scaled into `[−1, 1]`.
    pub edge: f64,
}

impl WeakLearner {
    pub fn matrix(&self) -> DMatrix<f64> {
        &self.z * self.z.transpose()
    }
}

/// `(i, j, l)` for each of the `k` nearest same-class targets `j` and the
/// `k` nearest differently-labelled points `l` of every `i`.
pub fn boost_triplets(x: &DMatrix<f64>, y: &[usize], k: usize) -> Result<Vec<(usize, usize, usize)>> {
    let d2 = pairwise_sq_dists_exact(x);
    let targets = target_neighbors(&d2, y, k)?;
    let n = y.len();
    let mut out = Vec::new();
    for i in 0..n {
        let mut others: Vec<usize> = (0..n).filter(|&l| y[l] != y[i]).collect();
        others.sort_by(|&a, &b| d2[(i, a)].total_cmp(&d2[(i, b)]).then(a.cmp(&b)));
        others.truncate(k);
        for &j in &targets[i] {
            for &l in &others {
                out.push((i, j, l));
            }
        }
    }
    Ok(out)
}

/// `(zᵀ(x_i−x_l))² − (zᵀ(x_i−x_j))²` for every triplet.
fn margins(proj: &DVector<f64>, triplets: &[(usize, usize, usize)]) -> Vec<f64> {
    triplets
        .iter()
        .map(|&(i, j, l)| (proj[i] - proj[l]).powi(2) - (proj[i] - proj[j]).powi(2))
        .collect()
}

/// Exponential-loss step for the normalized weak learner `h / scale`,
/// halved until the violation count does not grow. Returns the weight on
/// `z zᵀ` and the updated margins.
fn monotone_step(rho: &[f64], h: &[f64], scale: f64, edge: f64, before: usize) -> Option<(f64, Vec<f64>)> {
    let e = edge.min(EDGE_CAP);
    let mut weight = 0.5 * ((1.0 + e) / (1.0 - e)).ln() / scale;
    for _ in 0..=MAX_HALVINGS {
        let next: Vec<f64> = rho.iter().zip(h).map(|(r, hc)| r + weight * hc).collect();
        if count_violations(&next) <= before {
            return Some((weight, next));
        }
        weight *= 0.5;
    }
    None
}

fn count_violations(rho: &[f64]) -> usize {
    rho.iter().filter(|&&r| r <= 0.0).count()
}

/// Normalized weights `exp(−ρ)/Σ exp(−ρ)` and the log of `Σ exp(−ρ)`.
fn constraint_weights(rho: &[f64]) -> (Vec<f64>, f64) {
    let min = rho.iter().copied().fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = rho.iter().map(|r| (min - r).exp()).collect();
    let z: f64 = raw.iter().sum();
    (raw.iter().map(|r| r / z).collect(), z.ln() - min)
}

pub fn fit_boostmetric(x: &DMatrix<f64>, y: &[usize], cfg: &LearnerConfig) -> Result<FitReport> {
    cfg.validate()?;
    let classes = check_inputs(x, y)?;
    let d = x.ncols();
    let n = x.nrows();
    let out_dim = cfg.rank_for(Learner::Boost, d, classes);
    let triplets = boost_triplets(x, y, cfg.k_neighbors)?;
    if triplets.is_empty() {
        return Err(Error::invalid("boost needs a nonempty triplet set"));
    }
    let mut rho = vec![0.0; triplets.len()];
    let mut m = DMatrix::zeros(d, d);
    let mut learners: Vec<WeakLearner> = Vec::new();
    let mut violations = vec![count_violations(&rho)];
    let mut objective = vec![constraint_weights(&rho).1];
    let mut warnings = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for round in 0..cfg.max_iter_for(Learner::Boost) {
        iterations += 1;
        let (u, _) = constraint_weights(&rho);
        let mut w = DMatrix::zeros(n, n);
        for (&(i, j, l), &uc) in triplets.iter().zip(&u) {
            w[(i, l)] += uc;
            w[(i, j)] -= uc;
        }
        let a = symmetrized(&weighted_scatter(x, &w, x));
        let (values, vectors) = sym_eigen_desc(&a);
        let mut accepted = None;
        let mut any_edge = false;
        for (rank, &lambda) in values.iter().enumerate().take(CANDIDATES) {
            let mut z: DVector<f64> = vectors.column(rank).into_owned();
            z /= z.norm();
            fix_sign(&mut z);
            let h = margins(&(x * &z), &triplets);
            let scale = h.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            if scale == 0.0 {
                continue;
            }
            let edge = lambda / scale;
            if edge <= cfg.tol_for(Learner::Boost) {
                break;
            }
            any_edge = true;
            if let Some((step, next)) = monotone_step(&rho, &h, scale, edge, violations[violations.len() - 1]) {
                accepted = Some((z, step, edge, next));
                break;
            }
        }
        if !any_edge && round == 0 {
            warnings.push("no weak learner with positive edge; returning identity".to_string());
            let mut report = FitReport::new(MahalanobisMetric::identity(d));
            report.objective = objective;
            report.violations = violations;
            report.iterations = iterations;
            report.converged = true;
            report.warnings = warnings;
            return Ok(report);
        }
        let Some((z, weight, edge, next)) = accepted else {
            converged = true;
            break;
        };
        rho = next;
        m += &z * z.transpose() * weight;
        violations.push(count_violations(&rho));
        objective.push(constraint_weights(&rho).1);
        learners.push(WeakLearner { z, weight, edge });
    }

    let metric = MahalanobisMetric::from_psd_with_dim(&symmetrized(&m), out_dim)?;
    let mut report = FitReport::new(metric);
    report.objective = objective;
    report.violations = violations;
    report.weak_learners = learners;
    report.iterations = iterations;
    report.converged = converged;
    report.warnings = warnings;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs() -> (DMatrix<f64>, Vec<usize>) {
        let x = DMatrix::from_fn(18, 3, |i, j| {
            let c = i / 6;
            let base = if j == c { 2.0 } else { 0.0 };
            base + ((i * 7 + j * 13) % 11) as f64 * 0.15
        });
        (x, (0..18).map(|i| i / 6).collect())
    }

    #[test]
    fn weak_learners_are_trace_one_rank_one() {
        let (x, y) = blobs();
        let r = fit_boostmetric(&x, &y, &LearnerConfig { max_iter: Some(10), ..Default::default() }).unwrap();
        assert!(!r.weak_learners.is_empty());
        let mut sum = DMatrix::zeros(3, 3);
        for wl in &r.weak_learners {
            let z = wl.matrix();
            assert!((z.trace() - 1.0).abs() < 1e-10);
            let (ev, _) = sym_eigen_desc(&z);
            assert!(ev[1].abs() < 1e-10);
            assert!(wl.weight >= 0.0);
            sum += z * wl.weight;
        }
        assert!((r.metric.matrix() - sum).abs().max() < 1e-9);
    }

    #[test]
    fn one_round_in_one_dim() {
        let x = DMatrix::from_row_slice(6, 1, &[0.0, 0.2, 0.4, 1.0, 1.2, 1.4]);
        let y = vec![0, 0, 0, 1, 1, 1];
        let cfg = LearnerConfig { max_iter: Some(1), k_neighbors: 1, ..Default::default() };
        let r = fit_boostmetric(&x, &y, &cfg).unwrap();
        assert_eq!(r.weak_learners.len(), 1);
        let wl = &r.weak_learners[0];
        assert!((r.metric.matrix()[(0, 0)] - wl.weight).abs() < 1e-12);
    }

    #[test]
    fn violations_non_increasing() {
        let (x, y) = blobs();
        let r = fit_boostmetric(&x, &y, &LearnerConfig { max_iter: Some(40), ..Default::default() }).unwrap();
        for w in r.violations.windows(2) {
            assert!(w[1] <= w[0]);
        }
        for w in r.objective.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn no_positive_edge_gives_identity() {
        // Every impostor coincides with a target: all constraint matrices cancel.
        let x = DMatrix::from_row_slice(4, 1, &[0.0, 1.0, 0.0, 1.0]);
        let y = vec![0, 0, 1, 1];
        let cfg = LearnerConfig { k_neighbors: 1, ..Default::default() };
        let r = fit_boostmetric(&x, &y, &cfg).unwrap();
        assert_eq!(r.metric, MahalanobisMetric::identity(1));
        assert!(!r.warnings.is_empty());
    }
}
