//! Seeded synthetic corpora standing in for real extracted features.
//!
//! Each class is a Gaussian cluster in a low-dimensional signal space.
//! The signal coordinates are padded with high-variance nuisance
//! coordinates and the whole vector is rotated by a random orthogonal
//! matrix, so classes overlap under the Euclidean metric in ambient space
//! while the first `intrinsic_dim` rows of the inverse rotation (the
//! returned ground-truth map) separate them.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::features::{FeatureKind, FeatureSet};
use super::labels::{LabelRow, LabelTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    pub ambient_dim: usize,
    pub intrinsic_dim: usize,
    /// Standard deviation of the class means in signal space.
    pub separation: f64,
    /// Within-class standard deviation in signal space.
    pub noise: f64,
    /// Nuisance standard deviation as a multiple of `noise`.
    pub nuisance_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: 3,
            per_class: 50,
            ambient_dim: 20,
            intrinsic_dim: 2,
            separation: 3.0,
            noise: 1.0,
            nuisance_scale: 4.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub features: FeatureSet,
    pub labels: LabelTable,
    /// Class ordinal per row.
    pub classes: Vec<usize>,
    /// `intrinsic_dim × ambient_dim` map recovering the signal coordinates.
    pub ground_truth: DMatrix<f64>,
}

pub fn class_name(prefix: &str, c: usize) -> String {
    format!("{prefix}_{c:02}")
}

fn validate(spec: &SyntheticSpec) -> Result<()> {
    if spec.classes == 0 || spec.per_class == 0 || spec.ambient_dim == 0 || spec.intrinsic_dim == 0 {
        return Err(Error::invalid("synthetic counts and dimensions must be positive"));
    }
    if spec.intrinsic_dim > spec.ambient_dim {
        return Err(Error::invalid(format!(
            "intrinsic dim {} exceeds ambient dim {}",
            spec.intrinsic_dim, spec.ambient_dim
        )));
    }
    if spec.noise < 0.0 || spec.nuisance_scale < 0.0 || spec.separation < 0.0 {
        return Err(Error::invalid("synthetic scales must be nonnegative"));
    }
    Ok(())
}

/// Labels for `classes × per_class` rows: every task carries the same
/// partition under task-specific class names.
fn synthetic_labels(spec: &SyntheticSpec) -> (Vec<String>, Vec<usize>, LabelTable) {
    let n = spec.classes * spec.per_class;
    let ids: Vec<String> = (0..n).map(|i| format!("img{i:05}")).collect();
    let classes: Vec<usize> = (0..n).map(|i| i / spec.per_class).collect();
    let rows = ids
        .iter()
        .zip(&classes)
        .map(|(id, &c)| LabelRow {
            id: id.clone(),
            style: Some(class_name("style", c)),
            genre: Some(class_name("genre", c)),
            artist: Some(class_name("artist", c)),
        })
        .collect();
    (ids, classes, LabelTable::new(rows).expect("generated ids are unique"))
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let q = gaussian_matrix(rng, n, n).qr().q();
    q
}

fn one_view(
    spec: &SyntheticSpec,
    kind: FeatureKind,
    ids: &[String],
    classes: &[usize],
    seed: u64,
) -> Result<(FeatureSet, DMatrix<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = spec.ambient_dim;
    let k = spec.intrinsic_dim;
    let means = gaussian_matrix(&mut rng, spec.classes, k) * spec.separation;
    let rotation = random_orthogonal(&mut rng, d);
    let n = ids.len();
    let mut latent = DMatrix::zeros(n, d);
    for (i, &c) in classes.iter().enumerate() {
        for j in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            latent[(i, j)] = if j < k {
                means[(c, j)] + spec.noise * z
            } else {
                spec.noise * spec.nuisance_scale * z
            };
        }
    }
    let x = latent * rotation.transpose();
    let ground_truth = rotation.columns(0, k).transpose();
    Ok((FeatureSet::new(kind, ids.to_vec(), x)?, ground_truth))
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    validate(spec)?;
    let (ids, classes, labels) = synthetic_labels(spec);
    let (features, ground_truth) = one_view(spec, FeatureKind::Synthetic, &ids, &classes, spec.seed)?;
    Ok(SyntheticCorpus {
        features,
        labels,
        classes,
        ground_truth,
    })
}

/// Several feature kinds over the same images and labels, each an
/// independently drawn view.
pub fn generate_views(
    spec: &SyntheticSpec,
    kinds: &[FeatureKind],
) -> Result<(Vec<FeatureSet>, LabelTable, Vec<DMatrix<f64>>)> {
    validate(spec)?;
    let (ids, classes, labels) = synthetic_labels(spec);
    let mut sets = Vec::with_capacity(kinds.len());
    let mut maps = Vec::with_capacity(kinds.len());
    for (v, kind) in kinds.iter().enumerate() {
        let seed = spec.seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(v as u64 + 1));
        let (fs, map) = one_view(spec, kind.clone(), &ids, &classes, seed)?;
        sets.push(fs);
        maps.push(map);
    }
    Ok((sets, labels, maps))
}

/// `n × eigenvalues.len()` data whose sample covariance (divisor `n − 1`)
/// has exactly the given spectrum, in a random orientation.
pub fn planted_spectrum(n: usize, eigenvalues: &[f64], seed: u64) -> Result<DMatrix<f64>> {
    let d = eigenvalues.len();
    if n <= d {
        return Err(Error::invalid("planted spectrum needs more samples than dimensions"));
    }
    if eigenvalues.iter().any(|&l| l < 0.0) {
        return Err(Error::invalid("planted eigenvalues must be nonnegative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = gaussian_matrix(&mut rng, n, d);
    for j in 0..d {
        let m = g.column(j).mean();
        g.column_mut(j).add_scalar_mut(-m);
    }
    let q = g.qr().q();
    let scale = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        d,
        eigenvalues.iter().map(|&l| (l * (n - 1) as f64).sqrt()),
    ));
    let v = random_orthogonal(&mut rng, d);
    Ok(q * scale * v.transpose())
}
