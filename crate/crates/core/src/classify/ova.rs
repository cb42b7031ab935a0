use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::svm::{train_linear_svm, LinearSvm, SvmParams};
use crate::container::{decode_f64s, decode_strings, encode_f64s, encode_strings, Container};
use crate::error::{Error, Result};

/// One binary SVM per class, predicting by maximum decision value.
#[derive(Debug, Clone, PartialEq)]
pub struct OneVsAllModel {
    pub classes: Vec<String>,
    pub svms: Vec<LinearSvm>,
    pub provenance: Vec<(String, String)>,
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Trains class-vs-rest SVMs for ordinals `0..classes.len()`.
pub fn train_one_vs_all(
    x: &DMatrix<f64>,
    y: &[usize],
    classes: &[String],
    params: &SvmParams,
) -> Result<OneVsAllModel> {
    if classes.len() < 2 {
        return Err(Error::invalid("one-vs-all needs at least 2 classes"));
    }
    if y.len() != x.nrows() {
        return Err(Error::DimensionMismatch { expected: x.nrows(), actual: y.len() });
    }
    let mut counts = vec![0usize; classes.len()];
    for &c in y {
        if c >= classes.len() {
            return Err(Error::invalid(format!("class ordinal {c} out of range")));
        }
        counts[c] += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::ClassTooSmall { class: classes[c].clone(), count: 0, required: 1 });
    }
    let svms = (0..classes.len())
        .into_par_iter()
        .map(|c| {
            let yc: Vec<f64> = y.iter().map(|&v| if v == c { 1.0 } else { -1.0 }).collect();
            train_linear_svm(x, &yc, params)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OneVsAllModel {
        classes: classes.to_vec(),
        svms,
        provenance: Vec::new(),
    })
}

impl OneVsAllModel {
    pub fn dim(&self) -> usize {
        self.svms.first().map_or(0, LinearSvm::dim)
    }

    /// `N × C` decision values.
    pub fn decision_matrix(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), actual: x.ncols() });
        }
        let mut out = DMatrix::zeros(x.nrows(), self.svms.len());
        for (c, svm) in self.svms.iter().enumerate() {
            out.set_column(c, &svm.decision_values(x));
        }
        Ok(out)
    }

    pub fn predict_row(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), actual: x.len() });
        }
        let values: Vec<f64> = self.svms.iter().map(|s| s.decision(x)).collect();
        Ok(argmax_lowest(&values))
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<usize>> {
        let f = self.decision_matrix(x)?;
        Ok((0..f.nrows())
            .map(|i| argmax_lowest(&f.row(i).iter().copied().collect::<Vec<_>>()))
            .collect())
    }

    pub fn with_provenance(mut self, key: &str, value: impl ToString) -> Self {
        self.provenance.retain(|(k, _)| k != key);
        self.provenance.push((key.to_string(), value.to_string()));
        self
    }

    /// Rows are classes; columns are the weights followed by the bias.
    pub fn to_container(&self) -> Container {
        let d = self.dim();
        let m = DMatrix::from_fn(self.svms.len(), d + 1, |c, j| {
            if j < d {
                self.svms[c].w[j]
            } else {
                self.svms[c].b
            }
        });
        let penalties: Vec<f64> = self.svms.iter().map(|s| s.c).collect();
        let prov: Vec<String> = self.provenance.iter().map(|(k, v)| format!("{k}={v}")).collect();
        Container::new("ova", m)
            .with_section("classes", encode_strings(&self.classes))
            .with_section("penalty", encode_f64s(&penalties))
            .with_section("provenance", encode_strings(&prov))
    }

    pub fn from_container(c: Container, path: &Path) -> Result<Self> {
        let err = |message: String| Error::Format { path: path.to_path_buf(), message };
        if c.kind != "ova" {
            return Err(err(format!("expected a classifier, found `{}`", c.kind)));
        }
        let classes = decode_strings(c.section("classes").ok_or_else(|| err("missing classes".into()))?).map_err(err)?;
        let penalties = decode_f64s(c.section("penalty").ok_or_else(|| err("missing penalty".into()))?).map_err(err)?;
        if classes.len() != c.matrix.nrows() || penalties.len() != classes.len() || c.matrix.ncols() == 0 {
            return Err(err("classifier sections disagree with weight matrix".into()));
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
        let d = c.matrix.ncols() - 1;
        let svms = (0..classes.len())
            .map(|k| LinearSvm {
                w: c.matrix.row(k).columns(0, d).transpose(),
                b: c.matrix[(k, d)],
                c: penalties[k],
            })
            .collect();
        Ok(OneVsAllModel { classes, svms, provenance })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        OneVsAllModel::from_container(Container::load(path)?, path)
    }
}
