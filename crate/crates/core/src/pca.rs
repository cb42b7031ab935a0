//! Principal component reduction to a common feature dimension.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::container::{decode_f64s, encode_f64s, Container};
use crate::dataset::FeatureSet;
use crate::error::{Error, Result};
use crate::linalg::{fix_sign, sym_eigen_desc};

pub const DEFAULT_PCA_DIM: usize = 512;

const EIGEN_CLAMP: f64 = 1e-10;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PcaOptions {
    /// Scale every row to unit L2 norm before centering.
    pub l2_normalize: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: DVector<f64>,
    /// `k × D`, orthonormal rows, descending eigenvalue.
    pub components: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    /// Trace of the sample covariance (all `D` eigenvalues).
    pub total_variance: f64,
    pub l2_normalize: bool,
}

impl PcaModel {
    pub fn source_dim(&self) -> usize {
        self.components.ncols()
    }

    pub fn k(&self) -> usize {
        self.components.nrows()
    }

    /// `(x − mean) · componentsᵀ` for every row.
    pub fn project(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.source_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.source_dim(),
                actual: x.ncols(),
            });
        }
        let centered = self.prepare(x);
        Ok(centered * self.components.transpose())
    }

    pub fn project_set(&self, set: &FeatureSet) -> Result<FeatureSet> {
        set.with_matrix(self.project(set.matrix())?)
    }

    /// Maps projected rows back to the source space.
    pub fn reconstruct(&self, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if y.ncols() != self.k() {
            return Err(Error::DimensionMismatch {
                expected: self.k(),
                actual: y.ncols(),
            });
        }
        let mut x = y * &self.components;
        for mut row in x.row_iter_mut() {
            row += self.mean.transpose();
        }
        Ok(x)
    }

    /// Share of the computed eigenvalue mass carried by the first `k_prime`
    /// components. Totals are exact only when the model was fitted with
    /// `k` equal to the data rank; see [`PcaModel::retained_variance`].
    pub fn explained_fraction(&self, k_prime: usize) -> Result<f64> {
        if k_prime > self.k() {
            return Err(Error::invalid(format!(
                "k' = {k_prime} exceeds fitted component count {}",
                self.k()
            )));
        }
        let total: f64 = self.eigenvalues.iter().sum();
        if total <= 0.0 {
            return Ok(if k_prime == self.k() { 1.0 } else { 0.0 });
        }
        let head: f64 = self.eigenvalues[..k_prime].iter().sum();
        Ok((head / total).clamp(0.0, 1.0))
    }

    /// Share of the full covariance trace kept by the fitted components.
    pub fn retained_variance(&self) -> f64 {
        if self.total_variance <= 0.0 {
            return 1.0;
        }
        (self.eigenvalues.iter().sum::<f64>() / self.total_variance).clamp(0.0, 1.0)
    }

    fn prepare(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = x.clone();
        if self.l2_normalize {
            normalize_rows(&mut x);
        }
        for mut row in x.row_iter_mut() {
            row -= self.mean.transpose();
        }
        x
    }

    pub fn to_container(&self) -> Container {
        Container::new("pca", self.components.clone())
            .with_section("mean", encode_f64s(self.mean.as_slice()))
            .with_section("eigenvalues", encode_f64s(&self.eigenvalues))
            .with_section("total_variance", encode_f64s(&[self.total_variance]))
            .with_section("l2_normalize", vec![self.l2_normalize as u8])
    }

    pub fn from_container(c: Container, path: &Path) -> Result<Self> {
        let err = |message: String| Error::Format {
            path: path.to_path_buf(),
            message,
        };
        if c.kind != "pca" {
            return Err(err(format!("expected a pca model, found `{}`", c.kind)));
        }
        let section = |tag: &str| {
            c.section(tag)
                .ok_or_else(|| err(format!("missing `{tag}` section")))
                .and_then(|p| decode_f64s(p).map_err(err))
        };
        let mean = section("mean")?;
        let eigenvalues = section("eigenvalues")?;
        let total_variance = section("total_variance")?.first().copied().unwrap_or(0.0);
        let l2_normalize = c.section("l2_normalize").is_some_and(|p| p.first() == Some(&1));
        if mean.len() != c.matrix.ncols() || eigenvalues.len() != c.matrix.nrows() {
            return Err(err("pca sections disagree with component matrix".into()));
        }
        Ok(PcaModel {
            mean: DVector::from_vec(mean),
            components: c.matrix,
            eigenvalues,
            total_variance,
            l2_normalize,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        PcaModel::from_container(Container::load(path)?, path)
    }
}

fn normalize_rows(x: &mut DMatrix<f64>) {
    for mut row in x.row_iter_mut() {
        let n = row.norm();
        if n > 0.0 {
            row /= n;
        }
    }
}

pub fn fit_pca(x: &FeatureSet, k: usize, options: PcaOptions) -> Result<PcaModel> {
    fit_pca_matrix(x.matrix(), k, options)
}

/// Leading `k` eigenpairs of the sample covariance (divisor `N − 1`).
/// Component signs are fixed so each row's largest-magnitude entry is
/// positive.
pub fn fit_pca_matrix(x: &DMatrix<f64>, k: usize, options: PcaOptions) -> Result<PcaModel> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(Error::invalid("PCA needs at least 2 samples"));
    }
    if k == 0 || k > n.min(d) {
        return Err(Error::invalid(format!(
            "k = {k} out of range: must be in 1..={} (N = {n}, D = {d})",
            n.min(d)
        )));
    }
    let mut data = x.clone();
    if options.l2_normalize {
        normalize_rows(&mut data);
    }
    let mean = data.row_mean().transpose();
    for mut row in data.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = data.transpose() * &data / (n as f64 - 1.0);
    let total_variance = cov.trace();
    let (values, vectors) = sym_eigen_desc(&cov);
    let mut components = DMatrix::zeros(k, d);
    let mut eigenvalues = Vec::with_capacity(k);
    for i in 0..k {
        let mut v: DVector<f64> = vectors.column(i).into_owned();
        fix_sign(&mut v);
        components.set_row(i, &v.transpose());
        let lambda = values[i];
        eigenvalues.push(if lambda < EIGEN_CLAMP { lambda.max(0.0) } else { lambda });
    }
    Ok(PcaModel {
        mean,
        components,
        eigenvalues,
        total_variance,
        l2_normalize: options.l2_normalize,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::planted_spectrum;

    fn random(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn rank_one_line() {
        let x = DMatrix::from_fn(10, 2, |i, j| (i as f64) * if j == 0 { 1.0 } else { 2.0 });
        let m = fit_pca_matrix(&x, 2, PcaOptions::default()).unwrap();
        assert!(m.eigenvalues[0] > 0.0);
        assert!(m.eigenvalues[1].abs() < 1e-10);
    }

    #[test]
    fn full_rank_projection_is_isometry() {
        let x = random(30, 5, 1);
        let m = fit_pca_matrix(&x, 5, PcaOptions::default()).unwrap();
        let y = m.project(&x).unwrap();
        for i in 0..30 {
            for j in 0..30 {
                let a = (x.row(i) - x.row(j)).norm();
                let b = (y.row(i) - y.row(j)).norm();
                assert!((a - b).abs() < 1e-8);
            }
        }
        let gram = &m.components * m.components.transpose();
        assert!((gram - DMatrix::identity(5, 5)).abs().max() < 1e-8);
    }

    #[test]
    fn mean_projects_to_zero() {
        let x = random(20, 4, 2);
        let m = fit_pca_matrix(&x, 3, PcaOptions::default()).unwrap();
        let mean = DMatrix::from_row_slice(1, 4, m.mean.as_slice());
        assert!(m.project(&mean).unwrap().norm() < 1e-12);
    }

    #[test]
    fn rank_k_data_reconstructs() {
        let x = planted_spectrum(25, &[3.0, 2.0, 1.0, 0.0, 0.0, 0.0], 4).unwrap();
        let m = fit_pca_matrix(&x, 3, PcaOptions::default()).unwrap();
        let back = m.reconstruct(&m.project(&x).unwrap()).unwrap();
        assert!((back - &x).abs().max() < 1e-8);
    }

    #[test]
    fn explained_fraction_edges() {
        let x = random(40, 6, 3);
        let m = fit_pca_matrix(&x, 6, PcaOptions::default()).unwrap();
        assert!((m.explained_fraction(6).unwrap() - 1.0).abs() < 1e-12);
        assert!(m.explained_fraction(7).is_err());
        let mut prev = 0.0;
        for k in 0..=6 {
            let f = m.explained_fraction(k).unwrap();
            assert!(f >= prev - 1e-15);
            prev = f;
        }
    }

    #[test]
    fn isotropic_fraction_is_linear() {
        let x = planted_spectrum(50, &[1.0; 5], 9).unwrap();
        let m = fit_pca_matrix(&x, 5, PcaOptions::default()).unwrap();
        for k in 0..=5 {
            assert!((m.explained_fraction(k).unwrap() - k as f64 / 5.0).abs() < 1e-9);
        }
    }

    #[test]
    fn bad_k_rejected() {
        let x = random(5, 3, 0);
        assert!(fit_pca_matrix(&x, 4, PcaOptions::default()).is_err());
        assert!(fit_pca_matrix(&x, 0, PcaOptions::default()).is_err());
        assert!(fit_pca_matrix(&random(1, 3, 0), 1, PcaOptions::default()).is_err());
        let m = fit_pca_matrix(&x, 2, PcaOptions::default()).unwrap();
        assert!(m.project(&random(2, 4, 0)).is_err());
    }

    #[test]
    fn l2_flag_normalizes_rows() {
        let x = random(10, 3, 5);
        let m = fit_pca_matrix(&(&x * 7.0), 3, PcaOptions { l2_normalize: true }).unwrap();
        let m2 = fit_pca_matrix(&x, 3, PcaOptions { l2_normalize: true }).unwrap();
        assert!((m.project(&x).unwrap() - m2.project(&x).unwrap()).abs().max() < 1e-10);
    }

    #[test]
    fn container_round_trip() {
        let x = random(10, 4, 6);
        let m = fit_pca_matrix(&x, 2, PcaOptions::default()).unwrap();
        let back = PcaModel::from_container(m.to_container(), Path::new("mem")).unwrap();
        assert_eq!(back, m);
    }
}
