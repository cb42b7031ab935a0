use std::fmt::Write as _;

use nalgebra::DMatrix;

use super::ova::train_one_vs_all;
use super::svm::SvmParams;
use crate::dataset::{FeatureSet, SplitPlan, TaskSubset};
use crate::error::{Error, Result};
use crate::metric::MahalanobisMetric;

/// Counts of (true class, predicted class).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    /// `counts[true][predicted]`.
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<String>) -> Self {
        let c = classes.len();
        ConfusionMatrix { classes, counts: vec![vec![0; c]; c] }
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::invalid("confusion matrices over different classes"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.classes.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// `trace / total`, or zero when empty.
    pub fn accuracy(&self) -> f64 {
        let t = self.total();
        if t == 0 {
            0.0
        } else {
            self.correct() as f64 / t as f64
        }
    }

    /// Rows scaled to sum to one; empty rows stay zero.
    pub fn row_normalized(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|r| {
                let s: u64 = r.iter().sum();
                r.iter().map(|&v| if s == 0 { 0.0 } else { v as f64 / s as f64 }).collect()
            })
            .collect()
    }

    /// Class positions for display: those named in `order` first, in that
    /// order, then the rest in stored order.
    fn display_order(&self, order: Option<&[String]>) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::new();
        if let Some(order) = order {
            for name in order {
                if let Some(p) = self.classes.iter().position(|c| c == name) {
                    if !out.contains(&p) {
                        out.push(p);
                    }
                }
            }
        }
        for p in 0..self.classes.len() {
            if !out.contains(&p) {
                out.push(p);
            }
        }
        out
    }

    /// CSV with class-name headers; rows are true classes.
    pub fn to_csv(&self, order: Option<&[String]>, provenance: &[(String, String)]) -> String {
        let idx = self.display_order(order);
        let mut s = String::new();
        for (k, v) in provenance {
            let _ = writeln!(s, "# {k}={v}");
        }
        s.push_str("true\\predicted");
        for &p in &idx {
            s.push(',');
            s.push_str(&csv_field(&self.classes[p]));
        }
        s.push('\n');
        for &r in &idx {
            s.push_str(&csv_field(&self.classes[r]));
            for &c in &idx {
                let _ = write!(s, ",{}", self.counts[r][c]);
            }
            s.push('\n');
        }
        s
    }
}

fn csv_field(v: &str) -> String {
    if v.contains([',', '"', '\n']) {
        format!("\"{}\"", v.replace('"', "\"\""))
    } else {
        v.to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    pub task: String,
    pub feature: String,
    pub metric: String,
    pub fold_accuracies: Vec<f64>,
    pub mean: f64,
    /// Dimension the classifier saw.
    pub dim: usize,
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub report: AccuracyReport,
    /// Pooled over folds.
    pub confusion: ConfusionMatrix,
    pub warnings: Vec<String>,
}

/// k-fold one-vs-all evaluation over the members of `plan`, optionally in
/// the space projected by `metric`. The metric must have been trained on
/// data disjoint from the plan.
pub fn evaluate_cv(
    features: &FeatureSet,
    subset: &TaskSubset,
    plan: &SplitPlan,
    metric: Option<&MahalanobisMetric>,
    params: &SvmParams,
) -> Result<CvOutcome> {
    let raw = features.rows_for(&plan.ids)?;
    let x = match metric {
        Some(m) => m.project(&raw)?,
        None => raw,
    };
    let y: Vec<usize> = plan
        .ids
        .iter()
        .map(|id| {
            subset
                .class_index
                .get(id)
                .copied()
                .ok_or_else(|| Error::UnknownId(id.clone()))
        })
        .collect::<Result<_>>()?;
    evaluate_matrix_cv(&x, &y, &subset.classes, plan, params).map(|(mut report, confusion, warnings)| {
        report.task = subset.task.as_str().to_string();
        report.feature = features.kind().as_str().to_string();
        report.metric = metric
            .and_then(|m| m.provenance_value("learner"))
            .unwrap_or("baseline")
            .to_string();
        CvOutcome { report, confusion, warnings }
    })
}

/// The matrix-level core of [`evaluate_cv`]: rows of `x` align with
/// `plan.ids`.
pub fn evaluate_matrix_cv(
    x: &DMatrix<f64>,
    y: &[usize],
    classes: &[String],
    plan: &SplitPlan,
    params: &SvmParams,
) -> Result<(AccuracyReport, ConfusionMatrix, Vec<String>)> {
    if x.nrows() != plan.ids.len() || y.len() != plan.ids.len() {
        return Err(Error::DimensionMismatch { expected: plan.ids.len(), actual: x.nrows() });
    }
    let mut pooled = ConfusionMatrix::new(classes.to_vec());
    let mut folds = Vec::with_capacity(plan.k);
    let mut warnings = Vec::new();
    for fold in 0..plan.k {
        let train = plan.train_positions(fold);
        let test = plan.test_positions(fold);
        let xt = x.select_rows(&train);
        let yt: Vec<usize> = train.iter().map(|&p| y[p]).collect();
        let model = train_one_vs_all(&xt, &yt, classes, params)?;
        let xs = x.select_rows(&test);
        let pred = model.predict(&xs)?;
        let mut cm = ConfusionMatrix::new(classes.to_vec());
        for (&p, &yp) in test.iter().zip(&pred) {
            cm.add(y[p], yp);
        }
        for (c, n) in cm.row_sums().iter().enumerate() {
            if *n == 0 {
                warnings.push(format!("fold {fold}: class `{}` absent from test split", classes[c]));
            }
        }
        folds.push(cm.accuracy());
        pooled.merge(&cm)?;
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let mean = folds.iter().sum::<f64>() / folds.len() as f64;
    Ok((
        AccuracyReport {
            task: String::new(),
            feature: String::new(),
            metric: String::new(),
            fold_accuracies: folds,
            mean,
            dim: x.ncols(),
        },
        pooled,
        warnings,
    ))
}

/// Accuracy grid: metric rows by feature-kind columns, plus a dimension
/// column.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AccuracyTable {
    pub columns: Vec<String>,
    pub rows: Vec<TableRow>,
    pub provenance: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub name: String,
    /// Mean accuracy in `[0, 1]` per column.
    pub cells: Vec<Option<f64>>,
    /// Per-column dimensions; equal values collapse to one.
    pub dims: Vec<Option<usize>>,
}

impl AccuracyTable {
    pub fn new(columns: Vec<String>) -> Self {
        AccuracyTable { columns, ..Default::default() }
    }

    pub fn set(&mut self, row: &str, column: &str, accuracy: f64, dim: usize) -> Result<()> {
        let c = self
            .columns
            .iter()
            .position(|x| x == column)
            .ok_or_else(|| Error::invalid(format!("unknown column `{column}`")))?;
        let width = self.columns.len();
        let r = match self.rows.iter().position(|r| r.name == row) {
            Some(r) => r,
            None => {
                self.rows.push(TableRow {
                    name: row.to_string(),
                    cells: vec![None; width],
                    dims: vec![None; width],
                });
                self.rows.len() - 1
            }
        };
        self.rows[r].cells[c] = Some(accuracy);
        self.rows[r].dims[c] = Some(dim);
        Ok(())
    }

    pub fn get(&self, row: &str, column: &str) -> Option<f64> {
        let c = self.columns.iter().position(|x| x == column)?;
        self.rows.iter().find(|r| r.name == row)?.cells[c]
    }

    /// Percentages with two decimals; `#` lines carry provenance.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.provenance {
            let _ = writeln!(s, "# {k}={v}");
        }
        s.push_str("Metric");
        for c in &self.columns {
            s.push(',');
            s.push_str(&csv_field(c));
        }
        s.push_str(",Dim\n");
        for r in &self.rows {
            s.push_str(&csv_field(&r.name));
            for cell in &r.cells {
                match cell {
                    Some(v) => {
                        let _ = write!(s, ",{:.2}", v * 100.0);
                    }
                    None => s.push(','),
                }
            }
            let mut dims: Vec<usize> = r.dims.iter().flatten().copied().collect();
            dims.dedup();
            let dim = dims.iter().map(usize::to_string).collect::<Vec<_>>().join("/");
            let _ = writeln!(s, ",{dim}");
        }
        s
    }
}
