use std::collections::{BTreeMap, HashMap, HashSet};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::features::FeatureSet;
use super::labels::{LabelTable, Task};
use crate::error::{Error, Result};

/// The images and classes that take part in one classification task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSubset {
    pub task: Task,
    pub classes: Vec<String>,
    pub member_ids: Vec<String>,
    pub class_index: HashMap<String, usize>,
}

impl TaskSubset {
    pub fn len(&self) -> usize {
        self.member_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member_ids.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Class ordinal of every member, aligned with `member_ids`.
    pub fn labels(&self) -> Vec<usize> {
        self.member_ids.iter().map(|id| self.class_index[id]).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for id in &self.member_ids {
            counts[self.class_index[id]] += 1;
        }
        counts
    }

    /// Members grouped by class ordinal, in member order.
    pub fn members_by_class(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.classes.len()];
        for (pos, id) in self.member_ids.iter().enumerate() {
            groups[self.class_index[id]].push(pos);
        }
        groups
    }

    /// The subset with `ids` removed. Classes are kept even if emptied.
    pub fn without<S: AsRef<str>>(&self, ids: &[S]) -> TaskSubset {
        let drop: HashSet<&str> = ids.iter().map(|s| s.as_ref()).collect();
        let member_ids: Vec<String> = self
            .member_ids
            .iter()
            .filter(|id| !drop.contains(id.as_str()))
            .cloned()
            .collect();
        let class_index = member_ids
            .iter()
            .map(|id| (id.clone(), self.class_index[id]))
            .collect();
        TaskSubset {
            task: self.task,
            classes: self.classes.clone(),
            member_ids,
            class_index,
        }
    }

    /// Reorders classes to follow `order`; classes missing from `order`
    /// keep their relative order after the listed ones.
    pub fn reorder_classes(&self, order: &[String]) -> TaskSubset {
        let mut classes: Vec<String> = order
            .iter()
            .filter(|c| self.classes.contains(c))
            .cloned()
            .collect();
        for c in &self.classes {
            if !classes.contains(c) {
                classes.push(c.clone());
            }
        }
        let remap: HashMap<usize, usize> = self
            .classes
            .iter()
            .enumerate()
            .map(|(old, name)| (old, classes.iter().position(|c| c == name).unwrap()))
            .collect();
        let class_index = self
            .class_index
            .iter()
            .map(|(id, &c)| (id.clone(), remap[&c]))
            .collect();
        TaskSubset {
            task: self.task,
            classes,
            member_ids: self.member_ids.clone(),
            class_index,
        }
    }
}

/// Keeps every class of `task` with at least `min_count` labeled images.
/// Classes are ordered lexicographically; members keep label-table order.
pub fn select_task_subset(labels: &LabelTable, task: Task, min_count: usize) -> Result<TaskSubset> {
    if min_count == 0 {
        return Err(Error::invalid("min_count must be at least 1"));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for row in labels.rows() {
        if let Some(l) = row.get(task) {
            *counts.entry(l).or_default() += 1;
        }
    }
    let classes: Vec<String> = counts
        .iter()
        .filter(|(_, &n)| n >= min_count)
        .map(|(c, _)| c.to_string())
        .collect();
    if classes.is_empty() {
        return Err(Error::NoQualifyingClasses { min_count });
    }
    let ordinal: HashMap<&str, usize> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let mut member_ids = Vec::new();
    let mut class_index = HashMap::new();
    for row in labels.rows() {
        if let Some(&c) = row.get(task).and_then(|l| ordinal.get(l)) {
            member_ids.push(row.id.clone());
            class_index.insert(row.id.clone(), c);
        }
    }
    Ok(TaskSubset {
        task,
        classes,
        member_ids,
        class_index,
    })
}

/// Per-class quotas summing to exactly `n`, proportional to `counts` with
/// largest-remainder rounding (ties go to the lower class ordinal).
pub fn largest_remainder(counts: &[usize], n: usize) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return vec![0; counts.len()];
    }
    let mut quotas: Vec<usize> = counts.iter().map(|&c| c * n / total).collect();
    let assigned: usize = quotas.iter().sum();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = counts[a] * n % total;
        let rb = counts[b] * n % total;
        rb.cmp(&ra).then(a.cmp(&b))
    });
    for &c in order.iter().take(n - assigned) {
        quotas[c] += 1;
    }
    quotas
}

/// A stratified sample held out for metric learning.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub ids: Vec<String>,
    pub rows: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub classes: Vec<String>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Draws `n` members with class proportions matching the subset. Returned
/// ids follow subset member order. Callers exclude them from evaluation
/// with [`TaskSubset::without`].
pub fn stratified_subsample(
    subset: &TaskSubset,
    features: &FeatureSet,
    n: usize,
    seed: u64,
) -> Result<SampleSet> {
    let ids = stratified_ids(subset, n, seed)?;
    let rows = features.rows_for(&ids)?;
    let labels = ids.iter().map(|id| subset.class_index[id]).collect();
    Ok(SampleSet {
        ids,
        rows,
        labels,
        classes: subset.classes.clone(),
    })
}

/// The id-selection half of [`stratified_subsample`].
pub fn stratified_ids(subset: &TaskSubset, n: usize, seed: u64) -> Result<Vec<String>> {
    if n > subset.len() {
        return Err(Error::invalid(format!(
            "sample size {n} exceeds population {}",
            subset.len()
        )));
    }
    let groups = subset.members_by_class();
    let counts: Vec<usize> = groups.iter().map(Vec::len).collect();
    let quotas = largest_remainder(&counts, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(n);
    for (group, &q) in groups.iter().zip(&quotas) {
        let mut g = group.clone();
        g.shuffle(&mut rng);
        chosen.extend_from_slice(&g[..q]);
    }
    chosen.sort_unstable();
    Ok(chosen
        .into_iter()
        .map(|p| subset.member_ids[p].clone())
        .collect())
}

/// Stratified k-fold assignment over a subset's members.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    pub k: usize,
    pub seed: u64,
    /// Member ids in subset order.
    pub ids: Vec<String>,
    /// Fold ordinal per member, aligned with `ids`.
    pub folds: Vec<usize>,
}

impl SplitPlan {
    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id).map(|p| self.folds[p])
    }

    pub fn test_positions(&self, fold: usize) -> Vec<usize> {
        (0..self.ids.len()).filter(|&p| self.folds[p] == fold).collect()
    }

    pub fn train_positions(&self, fold: usize) -> Vec<usize> {
        (0..self.ids.len()).filter(|&p| self.folds[p] != fold).collect()
    }

    pub fn assignment(&self) -> BTreeMap<&str, usize> {
        self.ids
            .iter()
            .map(String::as_str)
            .zip(self.folds.iter().copied())
            .collect()
    }
}

/// Within each class members are shuffled and dealt round-robin, so fold
/// sizes per class differ by at most one. Each class starts dealing where
/// the previous one stopped, which also balances overall fold sizes.
pub fn make_folds(subset: &TaskSubset, k: usize, seed: u64) -> Result<SplitPlan> {
    if k < 2 {
        return Err(Error::invalid("fold count must be at least 2"));
    }
    let groups = subset.members_by_class();
    for (c, g) in groups.iter().enumerate() {
        if g.len() < k {
            return Err(Error::ClassTooSmall {
                class: subset.classes[c].clone(),
                count: g.len(),
                required: k,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![0; subset.len()];
    let mut next = 0;
    for g in &groups {
        let mut g = g.clone();
        g.shuffle(&mut rng);
        for p in g {
            folds[p] = next;
            next = (next + 1) % k;
        }
    }
    Ok(SplitPlan {
        k,
        seed,
        ids: subset.member_ids.clone(),
        folds,
    })
}
