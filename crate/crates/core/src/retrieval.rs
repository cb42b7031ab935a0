//! Exact nearest-neighbour search over projected feature rows.

use std::cmp::Ordering;
use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::dataset::{LabelTable, Task};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub id: String,
    pub distance: f64,
}

/// Immutable linear-scan index.
#[derive(Debug, Clone)]
pub struct SearchIndex {
    matrix: DMatrix<f64>,
    ids: Vec<String>,
    labels: Option<LabelTable>,
}

pub fn build_index(matrix: DMatrix<f64>, ids: Vec<String>, labels: Option<LabelTable>) -> Result<SearchIndex> {
    if ids.len() != matrix.nrows() {
        return Err(Error::DimensionMismatch { expected: matrix.nrows(), actual: ids.len() });
    }
    let mut seen = std::collections::HashSet::with_capacity(ids.len());
    for (row, id) in ids.iter().enumerate() {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateId { id: id.clone(), row: row + 1 });
        }
    }
    Ok(SearchIndex { matrix, ids, labels })
}

impl SearchIndex {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    pub fn vector(&self, id: &str) -> Result<Vec<f64>> {
        let row = self.row_of(id).ok_or_else(|| Error::UnknownId(id.to_string()))?;
        Ok(self.matrix.row(row).iter().copied().collect())
    }

    pub fn label(&self, id: &str, field: Task) -> Option<&str> {
        self.labels.as_ref()?.label(id, field)
    }

    /// Sorted hits over the rows accepted by `keep`, at most `k` of them.
    fn ranked(&self, query: &[f64], k: usize, keep: impl Fn(usize) -> bool) -> Result<Vec<Hit>> {
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if query.len() != self.dim() && !self.is_empty() {
            return Err(Error::DimensionMismatch { expected: self.dim(), actual: query.len() });
        }
        let mut scored: Vec<(f64, usize)> = (0..self.len())
            .filter(|&r| keep(r))
            .map(|r| {
                let d2: f64 = self
                    .matrix
                    .row(r)
                    .iter()
                    .zip(query)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                (d2.sqrt(), r)
            })
            .collect();
        if k > scored.len() {
            log::warn!("k = {k} exceeds the {} candidates; returning all", scored.len());
        }
        scored.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap_or(Ordering::Equal)
                .then_with(|| self.ids[a.1].cmp(&self.ids[b.1]))
        });
        scored.truncate(k);
        Ok(scored
            .into_iter()
            .map(|(distance, r)| Hit { id: self.ids[r].clone(), distance })
            .collect())
    }

    /// The `k` closest rows to `query`, ascending; ties by id.
    pub fn nearest(&self, query: &[f64], k: usize) -> Result<Vec<Hit>> {
        self.ranked(query, k, |_| true)
    }

    /// The `k` closest rows to the stored point `query_id` whose `field`
    /// label is present and differs from the query's. The query itself is
    /// never returned.
    pub fn nearest_excluding(&self, query_id: &str, field: Task, k: usize) -> Result<Vec<Hit>> {
        let row = self.row_of(query_id).ok_or_else(|| Error::UnknownId(query_id.to_string()))?;
        let own = self
            .label(query_id, field)
            .ok_or_else(|| Error::invalid(format!("query `{query_id}` has no {} label", field.as_str())))?
            .to_string();
        let keep = |r: usize| r != row && self.label(&self.ids[r], field).is_some_and(|l| l != own);
        if !(0..self.len()).any(keep) {
            return Err(Error::NoCandidates(format!(
                "no item with a {} label other than `{own}`",
                field.as_str()
            )));
        }
        let query: Vec<f64> = self.matrix.row(row).iter().copied().collect();
        self.ranked(&query, k, keep)
    }
}

/// Results CSV: `query_id,rank,hit_id,distance,hit_label`.
pub fn results_csv(index: &SearchIndex, results: &[(String, Vec<Hit>)], label_field: Option<Task>) -> String {
    let mut s = String::from("query_id,rank,hit_id,distance,hit_label\n");
    for (query, hits) in results {
        for (rank, h) in hits.iter().enumerate() {
            let label = label_field.and_then(|f| index.label(&h.id, f)).unwrap_or("");
            let _ = writeln!(s, "{query},{},{},{:.10e},{label}", rank + 1, h.id, h.distance);
        }
    }
    s
}
