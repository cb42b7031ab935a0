//! Generalized Mahalanobis metrics and the label-derived constraints the
//! learners consume.
//!
//! A metric is stored as its factor `G` (`r × D`) so that
//! `d(x, x')² = (x − x')ᵀ GᵀG (x − x') = ‖G(x − x')‖²`, and projecting by `G`
//! turns Mahalanobis distances into plain Euclidean ones.

mod constraints;

pub use constraints::{build_constraints, target_neighbors, ConstraintConfig, ConstraintSet};

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::container::{decode_strings, encode_strings, Container};
use crate::dataset::FeatureSet;
use crate::error::{Error, Result};
use crate::linalg::{sym_eigen_desc, symmetrized};

/// Relative tolerance for PSD clamping and rank decisions.
pub const PSD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct MahalanobisMetric {
    factor: DMatrix<f64>,
    provenance: Vec<(String, String)>,
}

impl MahalanobisMetric {
    pub fn identity(dim: usize) -> Self {
        MahalanobisMetric {
            factor: DMatrix::identity(dim, dim),
            provenance: Vec::new(),
        }
    }

    pub fn from_factor(factor: DMatrix<f64>) -> Result<Self> {
        if factor.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("metric factor".into()));
        }
        Ok(MahalanobisMetric {
            factor,
            provenance: Vec::new(),
        })
    }

    /// Factor of a PSD matrix with zero-eigenvalue rows dropped.
    pub fn from_psd(m: &DMatrix<f64>, tol: f64) -> Result<Self> {
        MahalanobisMetric::from_factor(factorize_metric(m, tol)?)
    }

    /// Factor with exactly `out_dim` rows: the leading eigen-directions of
    /// `m`, zero rows when `m` has lower rank.
    pub fn from_psd_with_dim(m: &DMatrix<f64>, out_dim: usize) -> Result<Self> {
        let d = m.nrows();
        if out_dim > d {
            return Err(Error::invalid(format!(
                "output dimension {out_dim} exceeds input dimension {d}"
            )));
        }
        let (values, vectors) = checked_eigen(m, PSD_TOL)?;
        let lmax = values.first().copied().unwrap_or(0.0).max(0.0);
        let mut g = DMatrix::zeros(out_dim, d);
        for i in 0..out_dim {
            let lambda = values[i];
            if lambda > PSD_TOL * lmax && lambda > 0.0 {
                g.set_row(i, &(vectors.column(i).transpose() * lambda.sqrt()));
            }
        }
        MahalanobisMetric::from_factor(g)
    }

    pub fn with_provenance(mut self, key: &str, value: impl ToString) -> Self {
        self.provenance.retain(|(k, _)| k != key);
        self.provenance.push((key.to_string(), value.to_string()));
        self
    }

    pub fn provenance(&self) -> &[(String, String)] {
        &self.provenance
    }

    pub fn provenance_value(&self, key: &str) -> Option<&str> {
        self.provenance
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Input dimension `D`.
    pub fn dim(&self) -> usize {
        self.factor.ncols()
    }

    /// Output dimension of the projection (rows of `G`).
    pub fn rank(&self) -> usize {
        self.factor.nrows()
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    /// `M = GᵀG`.
    pub fn matrix(&self) -> DMatrix<f64> {
        self.factor.transpose() * &self.factor
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        if n != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: n,
            });
        }
        Ok(())
    }

    pub fn sq_distance(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_dim(x.len())?;
        self.check_dim(y.len())?;
        let diff = DVector::from_iterator(x.len(), x.iter().zip(y).map(|(a, b)| a - b));
        Ok((&self.factor * diff).norm_squared())
    }

    pub fn distance(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.sq_distance(x, y).map(f64::sqrt)
    }

    /// Rows `G·x` for every row `x` of `x`.
    pub fn project(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(x.ncols())?;
        Ok(x * self.factor.transpose())
    }

    pub fn project_set(&self, set: &FeatureSet) -> Result<FeatureSet> {
        set.with_matrix(self.project(set.matrix())?)
    }

    /// Materializes `M` and checks it is symmetric PSD within
    /// `PSD_TOL · λ_max`.
    pub fn validate(&self) -> Result<()> {
        if self.factor.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("metric factor".into()));
        }
        checked_eigen(&self.matrix(), PSD_TOL).map(|_| ())
    }

    pub fn to_container(&self) -> Container {
        let prov: Vec<String> = self
            .provenance
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        Container::new("metric", self.factor.clone()).with_section("provenance", encode_strings(&prov))
    }

    pub fn from_container(c: Container, path: &Path) -> Result<Self> {
        let err = |message: String| Error::Format {
            path: path.to_path_buf(),
            message,
        };
        if c.kind != "metric" {
            return Err(err(format!("expected a metric, found `{}`", c.kind)));
        }
        let provenance = match c.section("provenance") {
            Some(p) => decode_strings(p)
                .map_err(err)?
                .into_iter()
                .map(|kv| match kv.split_once('=') {
                    Some((k, v)) => (k.to_string(), v.to_string()),
                    None => (kv, String::new()),
                })
                .collect(),
            None => Vec::new(),
        };
        let mut m = MahalanobisMetric::from_factor(c.matrix)?;
        m.provenance = provenance;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        MahalanobisMetric::from_container(Container::load(path)?, path)
    }
}

/// Eigen-decomposition (descending) of a matrix that must be symmetric and
/// PSD within `tol` relative to its largest-magnitude eigenvalue.
fn checked_eigen(m: &DMatrix<f64>, tol: f64) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if !m.is_square() {
        return Err(Error::invalid("metric matrix must be square"));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("metric matrix".into()));
    }
    let scale = m.abs().max().max(f64::MIN_POSITIVE);
    let asym = (m - m.transpose()).abs().max();
    if asym > tol * scale {
        return Err(Error::invalid(format!(
            "metric matrix not symmetric (max asymmetry {asym:e})"
        )));
    }
    let (values, vectors) = sym_eigen_desc(&symmetrized(m));
    let spread = values.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    if let Some(&low) = values.last() {
        if low < -tol * spread {
            return Err(Error::NotPsd {
                eigenvalue: low,
                tolerance: tol * spread,
            });
        }
    }
    Ok((values, vectors))
}

/// Factor `G` with `GᵀG = M`, one row `√λ·vᵀ` per eigenvalue above
/// `tol · λ_max`. Eigenvalues in `[−tol·λ_max, 0)` are clamped to zero and
/// dropped; anything more negative is rejected.
pub fn factorize_metric(m: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    if tol <= 0.0 {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let (values, vectors) = checked_eigen(m, tol)?;
    let lmax = values.first().copied().unwrap_or(0.0).max(0.0);
    let keep: Vec<usize> = (0..values.len())
        .filter(|&i| values[i] > 0.0 && values[i] > tol * lmax)
        .collect();
    let mut g = DMatrix::zeros(keep.len(), m.ncols());
    for (row, &i) in keep.iter().enumerate() {
        g.set_row(row, &(vectors.column(i).transpose() * values[i].sqrt()));
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_is_euclidean() {
        let m = MahalanobisMetric::identity(3);
        let d = m.distance(&[0.0, 3.0, 0.0], &[4.0, 0.0, 0.0]).unwrap();
        assert!((d - 5.0).abs() < 1e-15);
        assert_eq!(m.distance(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
    }

    #[test]
    fn distance_matches_quadratic_form() {
        let g = random(4, 6, 1);
        let metric = MahalanobisMetric::from_factor(g.clone()).unwrap();
        let m = g.transpose() * &g;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let x: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mut q = 0.0;
            for a in 0..6 {
                for b in 0..6 {
                    q += (x[a] - y[a]) * m[(a, b)] * (x[b] - y[b]);
                }
            }
            let d = metric.distance(&x, &y).unwrap();
            assert!((d - q.sqrt()).abs() <= 1e-10 * q.sqrt().max(1e-300));
        }
    }

    #[test]
    fn dimension_mismatch() {
        let m = MahalanobisMetric::identity(3);
        assert!(m.distance(&[0.0; 2], &[0.0; 3]).is_err());
        assert!(m.project(&DMatrix::zeros(2, 4)).is_err());
    }

    #[test]
    fn projection_cases() {
        let x = random(5, 3, 3);
        assert_eq!(MahalanobisMetric::identity(3).project(&x).unwrap(), x);
        let g = DMatrix::from_row_slice(1, 3, &[1.0, -2.0, 0.5]);
        let y = MahalanobisMetric::from_factor(g).unwrap().project(&x).unwrap();
        assert_eq!(y.ncols(), 1);
    }

    #[test]
    fn projected_distances_match_all_pairs() {
        let metric = MahalanobisMetric::from_factor(random(3, 5, 4)).unwrap();
        let x = random(50, 5, 5);
        let y = metric.project(&x).unwrap();
        for i in 0..50 {
            for j in 0..50 {
                let a: Vec<f64> = x.row(i).iter().copied().collect();
                let b: Vec<f64> = x.row(j).iter().copied().collect();
                let d = metric.distance(&a, &b).unwrap();
                let e = (y.row(i) - y.row(j)).norm();
                assert!((d - e).abs() <= 1e-8 * d.max(1e-12));
            }
        }
    }

    #[test]
    fn factorize_identity_and_diagonal() {
        let g = factorize_metric(&DMatrix::identity(3, 3), 1e-8).unwrap();
        assert!((g.transpose() * &g - DMatrix::identity(3, 3)).abs().max() < 1e-12);
        let g = factorize_metric(&DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 0.0]), 1e-8).unwrap();
        assert_eq!(g.nrows(), 1);
        assert!((g[(0, 0)].abs() - 2.0).abs() < 1e-12);
        assert!(g[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn factorize_round_trip() {
        let g = random(3, 6, 7);
        let m = g.transpose() * &g;
        let g2 = factorize_metric(&m, 1e-8).unwrap();
        assert_eq!(g2.nrows(), 3);
        assert!((g2.transpose() * &g2 - &m).abs().max() < 1e-8);
    }

    #[test]
    fn factorize_rejects_indefinite_and_clamps_roundoff() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        assert!(matches!(factorize_metric(&m, 1e-8), Err(Error::NotPsd { .. })));
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-12]);
        assert_eq!(factorize_metric(&m, 1e-8).unwrap().nrows(), 1);
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(factorize_metric(&asym, 1e-8).is_err());
    }

    #[test]
    fn fixed_output_dim_pads_with_zero_rows() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let metric = MahalanobisMetric::from_psd_with_dim(&m, 3).unwrap();
        assert_eq!(metric.rank(), 3);
        assert!((metric.matrix() - &m).abs().max() < 1e-12);
    }

    #[test]
    fn container_keeps_provenance() {
        let m = MahalanobisMetric::identity(2)
            .with_provenance("learner", "lmnn")
            .with_provenance("seed", 4);
        let back = MahalanobisMetric::from_container(m.to_container(), Path::new("mem")).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.provenance_value("seed"), Some("4"));
    }
}
