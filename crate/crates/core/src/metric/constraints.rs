use std::collections::HashSet;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::pairwise_sq_dists_exact;

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintConfig {
    /// Target neighbors per point.
    pub k_neighbors: usize,
    /// Cap on similar and on dissimilar pairs; `None` means `10·N`.
    pub pair_cap: Option<usize>,
    /// Cap on impostor triplets; `None` means `10·N`.
    pub triplet_cap: Option<usize>,
    /// Margin added to the target radius (squared-distance units).
    pub margin: f64,
    pub seed: u64,
}

impl Default for ConstraintConfig {
    fn default() -> Self {
        ConstraintConfig {
            k_neighbors: 3,
            pair_cap: None,
            triplet_cap: None,
            margin: 1.0,
            seed: 0,
        }
    }
}

/// Label-derived supervision. Indices refer to rows of the training matrix.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConstraintSet {
    pub similar: Vec<(usize, usize)>,
    pub dissimilar: Vec<(usize, usize)>,
    /// `(i, j, l)`: `j` a target neighbor of `i`, `l` an impostor.
    pub triplets: Vec<(usize, usize, usize)>,
    /// Target neighbors per point, nearest first.
    pub targets: Vec<Vec<usize>>,
}

/// The `k` Euclidean-nearest same-class points of every row (ties by index).
pub fn target_neighbors(sq_dists: &DMatrix<f64>, y: &[usize], k: usize) -> Result<Vec<Vec<usize>>> {
    let n = y.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut same: Vec<usize> = (0..n).filter(|&j| j != i && y[j] == y[i]).collect();
        if same.len() < k {
            return Err(Error::ClassTooSmall {
                class: y[i].to_string(),
                count: same.len() + 1,
                required: k + 1,
            });
        }
        same.sort_by(|&a, &b| {
            sq_dists[(i, a)]
                .partial_cmp(&sq_dists[(i, b)])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        same.truncate(k);
        out.push(same);
    }
    Ok(out)
}

pub fn build_constraints(x: &DMatrix<f64>, y: &[usize], cfg: &ConstraintConfig) -> Result<ConstraintSet> {
    let n = x.nrows();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: y.len(),
        });
    }
    let distinct: HashSet<usize> = y.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(Error::invalid("constraints need at least 2 classes"));
    }
    let d2 = pairwise_sq_dists_exact(x);
    let targets = target_neighbors(&d2, y, cfg.k_neighbors)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut triplets = Vec::new();
    for i in 0..n {
        for &j in &targets[i] {
            let radius = d2[(i, j)] + cfg.margin;
            for l in 0..n {
                if y[l] != y[i] && d2[(i, l)] < radius {
                    triplets.push((i, j, l));
                }
            }
        }
    }
    let triplet_cap = cfg.triplet_cap.unwrap_or(10 * n);
    if triplets.len() > triplet_cap {
        triplets.shuffle(&mut rng);
        triplets.truncate(triplet_cap);
        triplets.sort_unstable();
    }

    let pair_cap = cfg.pair_cap.unwrap_or(10 * n);
    let similar = sample_pairs(y, true, pair_cap, &mut rng);
    let dissimilar = sample_pairs(y, false, pair_cap, &mut rng);
    Ok(ConstraintSet {
        similar,
        dissimilar,
        triplets,
        targets,
    })
}

/// Up to `cap` distinct `(i < j)` pairs with equal (or differing) labels,
/// sorted.
fn sample_pairs(y: &[usize], same: bool, cap: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let n = y.len();
    let mut counts = std::collections::HashMap::<usize, usize>::new();
    for &c in y {
        *counts.entry(c).or_default() += 1;
    }
    let same_total: usize = counts.values().map(|&c| c * (c.saturating_sub(1)) / 2).sum();
    let total = if same { same_total } else { n * (n - 1) / 2 - same_total };

    let mut pairs = if total <= cap.saturating_mul(2) {
        let mut all = Vec::with_capacity(total);
        for i in 0..n {
            for j in (i + 1)..n {
                if (y[i] == y[j]) == same {
                    all.push((i, j));
                }
            }
        }
        if all.len() > cap {
            all.shuffle(rng);
            all.truncate(cap);
        }
        all
    } else {
        let mut seen = HashSet::with_capacity(cap);
        while seen.len() < cap {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if i != j && (y[i] == y[j]) == same {
                seen.insert((i.min(j), i.max(j)));
            }
        }
        seen.into_iter().collect()
    };
    pairs.sort_unstable();
    pairs
}
