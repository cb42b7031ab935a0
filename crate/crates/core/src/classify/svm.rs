use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Default SVM penalty.
pub const DEFAULT_C: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SvmParams {
    pub c: f64,
    /// Stop when the spread of projected dual gradients falls below this.
    pub eps: f64,
    pub max_epochs: usize,
    /// Seeds the per-epoch coordinate order.
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            c: DEFAULT_C,
            eps: 1e-4,
            max_epochs: 2000,
            seed: 0,
        }
    }
}

/// Binary linear SVM. The bias is learned as the weight of a constant
/// feature of value one, so it is regularized along with `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvm {
    pub w: DVector<f64>,
    pub b: f64,
    pub c: f64,
}

impl LinearSvm {
    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        self.w.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.b
    }

    /// Decision values for every row of `x`.
    pub fn decision_values(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let mut out = x * &self.w;
        out.add_scalar_mut(self.b);
        out
    }

    /// `½(‖w‖² + b²) + C·Σ max(0, 1 − y_i f(x_i))`.
    pub fn primal_objective(&self, x: &DMatrix<f64>, y: &[f64]) -> f64 {
        let f = self.decision_values(x);
        let hinge: f64 = f.iter().zip(y).map(|(f, y)| (1.0 - y * f).max(0.0)).sum();
        0.5 * (self.w.norm_squared() + self.b * self.b) + self.c * hinge
    }
}

/// Dual coordinate descent on the L1-hinge SVM. Labels are `±1`.
pub fn train_linear_svm(x: &DMatrix<f64>, y: &[f64], params: &SvmParams) -> Result<LinearSvm> {
    let n = x.nrows();
    let d = x.ncols();
    if y.len() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: y.len() });
    }
    if !(params.c > 0.0) {
        return Err(Error::invalid("SVM penalty C must be positive"));
    }
    if y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::invalid("SVM labels must be +1 or -1"));
    }
    if !y.contains(&1.0) || !y.contains(&-1.0) {
        return Err(Error::invalid("SVM training needs both positive and negative examples"));
    }
    let c = params.c;
    let qii: Vec<f64> = (0..n).map(|i| x.row(i).norm_squared() + 1.0).collect();
    let mut alpha = vec![0.0; n];
    let mut w = DVector::<f64>::zeros(d);
    let mut b = 0.0;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    for _ in 0..params.max_epochs {
        order.shuffle(&mut rng);
        let mut pg_max = f64::NEG_INFINITY;
        let mut pg_min = f64::INFINITY;
        for &i in &order {
            let row = x.row(i);
            let g = y[i] * (row.transpose().dot(&w) + b) - 1.0;
            let pg = if alpha[i] == 0.0 {
                g.min(0.0)
            } else if alpha[i] == c {
                g.max(0.0)
            } else {
                g
            };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg.abs() > 1e-12 {
                let old = alpha[i];
                alpha[i] = (old - g / qii[i]).clamp(0.0, c);
                let delta = (alpha[i] - old) * y[i];
                if delta != 0.0 {
                    w.axpy(delta, &row.transpose(), 1.0);
                    b += delta;
                }
            }
        }
        if pg_max - pg_min < params.eps {
            break;
        }
    }
    if w.iter().any(|v| !v.is_finite()) || !b.is_finite() {
        return Err(Error::NonFinite("SVM weights".into()));
    }
    Ok(LinearSvm { w, b, c })
}
