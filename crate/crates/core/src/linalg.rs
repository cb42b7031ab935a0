//! Dense linear-algebra helpers shared by the learners.
//!
//! Data matrices are `N × D` with one sample per row.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// descending order. Eigenvectors are the columns of the returned matrix.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    if n == 0 {
        return (Vec::new(), DMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(symmetrized(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn symmetrized(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Flip the vector so its largest-magnitude entry is positive.
pub fn fix_sign(v: &mut DVector<f64>) {
    let mut best = 0.0_f64;
    let mut sign = 1.0;
    for &x in v.iter() {
        if x.abs() > best {
            best = x.abs();
            sign = x.signum();
        }
    }
    if sign < 0.0 {
        v.neg_mut();
    }
}

/// All pairwise squared Euclidean distances between the rows of `x`.
pub fn pairwise_sq_dists(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let norms: Vec<f64> = (0..n).map(|i| x.row(i).norm_squared()).collect();
    let gram = x * x.transpose();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            (norms[i] + norms[j] - 2.0 * gram[(i, j)]).max(0.0)
        }
    })
}

/// Exact (difference-based) squared distance between two rows.
pub fn row_sq_dist(x: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    let d = x.ncols();
    let mut s = 0.0;
    for c in 0..d {
        let t = x[(i, c)] - x[(j, c)];
        s += t * t;
    }
    s
}

/// Pairwise squared distances computed from explicit row differences.
/// Slower than [`pairwise_sq_dists`] but free of cancellation error.
pub fn pairwise_sq_dists_exact(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = row_sq_dist(x, i, j);
            out[(i, j)] = d;
            out[(j, i)] = d;
        }
    }
    out
}

/// Computes `Σ_ij W_ij (y_i − y_j)(x_i − x_j)ᵀ` as `Yᵀ L X` with the
/// Laplacian-like `L = diag(rowsum + colsum) − W − Wᵀ`.
pub fn weighted_scatter(y: &DMatrix<f64>, w: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let lap = scatter_laplacian(w);
    y.transpose() * (lap * x)
}

pub fn scatter_laplacian(w: &DMatrix<f64>) -> DMatrix<f64> {
    let n = w.nrows();
    let mut lap = -(w + w.transpose());
    for i in 0..n {
        let r: f64 = w.row(i).sum();
        let c: f64 = w.column(i).sum();
        lap[(i, i)] += r + c;
    }
    lap
}

/// Linear-interpolated percentile (`q` in `[0, 100]`) of `values`.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let pos = (q / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    v[lo] + (v[hi] - v[lo]) * frac
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_sorted_descending() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 3.0]);
        let (vals, vecs) = sym_eigen_desc(&m);
        assert_eq!(vals.len(), 3);
        assert!((vals[0] - 5.0).abs() < 1e-12);
        assert!((vals[1] - 3.0).abs() < 1e-12);
        assert!((vals[2] - 1.0).abs() < 1e-12);
        assert!((vecs[(1, 0)].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scatter_matches_explicit_sum() {
        let x = DMatrix::from_row_slice(3, 2, &[0.0, 1.0, 2.0, -1.0, 0.5, 0.5]);
        let w = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 2.0, 0.5, 0.0, 0.0, 1.5, 0.25, 0.0]);
        let got = weighted_scatter(&x, &w, &x);
        let mut want = DMatrix::zeros(2, 2);
        for i in 0..3 {
            for j in 0..3 {
                let d = (x.row(i) - x.row(j)).transpose();
                want += w[(i, j)] * &d * d.transpose();
            }
        }
        assert!((got - want).norm() < 1e-12);
    }

    #[test]
    fn percentile_interpolates() {
        let v = [4.0, 1.0, 3.0, 2.0, 5.0];
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 100.0), 5.0);
        assert_eq!(percentile(&v, 50.0), 3.0);
        assert!((percentile(&v, 5.0) - 1.2).abs() < 1e-12);
    }

    #[test]
    fn sign_fix_makes_largest_entry_positive() {
        let mut v = DVector::from_vec(vec![0.1, -0.9, 0.3]);
        fix_sign(&mut v);
        assert!(v[1] > 0.0);
    }
}
