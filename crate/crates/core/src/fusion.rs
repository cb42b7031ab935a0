//! Concatenation of projected feature blocks: one metric per feature kind
//! (feature fusion) or several metrics over one feature kind (metric fusion).

use std::path::Path;

use nalgebra::DMatrix;

use crate::container::{decode_strings, encode_strings, Container};
use crate::dataset::{FeatureKind, FeatureSet, TableFormat};
use crate::error::{Error, Result};
use crate::metric::MahalanobisMetric;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockDescriptor {
    pub feature: String,
    pub metric: String,
    pub dim: usize,
    pub offset: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FusionOptions {
    /// Scale each block to unit total variance before concatenating.
    pub normalize_blocks: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedFeatureSet {
    pub features: FeatureSet,
    pub blocks: Vec<BlockDescriptor>,
}

impl FusedFeatureSet {
    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    pub fn block(&self, b: usize) -> DMatrix<f64> {
        let d = &self.blocks[b];
        self.features.matrix().columns(d.offset, d.dim).into_owned()
    }

    /// Squared distance between rows `i` and `j` inside each block.
    pub fn block_sq_distances(&self, i: usize, j: usize) -> Vec<f64> {
        let m = self.features.matrix();
        self.blocks
            .iter()
            .map(|b| {
                (b.offset..b.offset + b.dim)
                    .map(|c| (m[(i, c)] - m[(j, c)]).powi(2))
                    .sum()
            })
            .collect()
    }

    pub fn to_container(&self) -> Container {
        let blocks: Vec<String> = self
            .blocks
            .iter()
            .map(|b| format!("{}\t{}\t{}\t{}", b.feature, b.metric, b.dim, b.offset))
            .collect();
        self.features
            .to_container()
            .with_section("blocks", encode_strings(&blocks))
    }

    pub fn from_container(c: Container, path: &Path) -> Result<Self> {
        let err = |message: String| Error::Format { path: path.to_path_buf(), message };
        let raw = match c.section("blocks") {
            Some(p) => decode_strings(p).map_err(err)?,
            None => Vec::new(),
        };
        let mut blocks = Vec::with_capacity(raw.len());
        for line in &raw {
            let parts: Vec<&str> = line.split('\t').collect();
            let [feature, metric, dim, offset] = parts[..] else {
                return Err(err(format!("malformed block descriptor `{line}`")));
            };
            let num = |v: &str| v.parse::<usize>().map_err(|_| err(format!("bad block number `{v}`")));
            blocks.push(BlockDescriptor {
                feature: feature.to_string(),
                metric: metric.to_string(),
                dim: num(dim)?,
                offset: num(offset)?,
            });
        }
        let features = FeatureSet::from_container(c, path)?;
        if blocks.is_empty() {
            blocks.push(BlockDescriptor {
                feature: features.kind().as_str().to_string(),
                metric: "none".into(),
                dim: features.dim(),
                offset: 0,
            });
        }
        check_blocks(&blocks, features.dim()).map_err(err)?;
        Ok(FusedFeatureSet { features, blocks })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if TableFormat::from_path(path) == TableFormat::Csv {
            return Err(Error::invalid(format!("{}: fused sets are stored in the binary container", path.display())));
        }
        FusedFeatureSet::from_container(Container::load(path)?, path)
    }
}

fn check_blocks(blocks: &[BlockDescriptor], total: usize) -> std::result::Result<(), String> {
    let mut next = 0;
    for b in blocks {
        if b.offset != next {
            return Err(format!("block `{}/{}` starts at {} instead of {next}", b.feature, b.metric, b.offset));
        }
        next += b.dim;
    }
    if next != total {
        return Err(format!("blocks cover {next} of {total} columns"));
    }
    Ok(())
}

/// Divides the block by the square root of its total variance.
fn normalize(block: &DMatrix<f64>) -> DMatrix<f64> {
    let n = block.nrows();
    if n < 2 {
        return block.clone();
    }
    let mean = block.row_mean();
    let mut var = 0.0;
    for r in block.row_iter() {
        var += (r - &mean).norm_squared();
    }
    var /= (n - 1) as f64;
    if var > 0.0 {
        block / var.sqrt()
    } else {
        block.clone()
    }
}

fn concatenate(
    parts: Vec<(DMatrix<f64>, String, String)>,
    ids: &[String],
    kind: FeatureKind,
    opts: FusionOptions,
) -> Result<FusedFeatureSet> {
    let n = ids.len();
    let total: usize = parts.iter().map(|(m, _, _)| m.ncols()).sum();
    let mut out = DMatrix::zeros(n, total);
    let mut blocks = Vec::with_capacity(parts.len());
    let mut offset = 0;
    for (m, feature, metric) in parts {
        let m = if opts.normalize_blocks { normalize(&m) } else { m };
        out.columns_mut(offset, m.ncols()).copy_from(&m);
        blocks.push(BlockDescriptor { feature, metric, dim: m.ncols(), offset });
        offset += m.ncols();
    }
    Ok(FusedFeatureSet {
        features: FeatureSet::new(kind, ids.to_vec(), out)?,
        blocks,
    })
}

fn fused_kind<'a>(kinds: impl Iterator<Item = &'a FeatureKind>) -> FeatureKind {
    let kinds: Vec<&FeatureKind> = kinds.collect();
    match kinds.first() {
        Some(first) if kinds.iter().all(|k| k == first) => (*first).clone(),
        _ => FeatureKind::Other("fused".into()),
    }
}

/// Concatenates already-projected blocks, each tagged with the metric that
/// produced it. Blocks must list the same ids in the same order.
pub fn feature_fusion(blocks: &[(FeatureSet, String)], opts: FusionOptions) -> Result<FusedFeatureSet> {
    let Some((first, _)) = blocks.first() else {
        return Err(Error::invalid("feature fusion needs at least one block"));
    };
    for (b, _) in &blocks[1..] {
        if b.ids() != first.ids() {
            return Err(Error::invalid(format!(
                "block `{}` lists different ids than block `{}`",
                b.kind(),
                first.kind()
            )));
        }
    }
    let parts = blocks
        .iter()
        .map(|(b, tag)| (b.matrix().clone(), b.kind().as_str().to_string(), tag.clone()))
        .collect();
    concatenate(parts, first.ids(), fused_kind(blocks.iter().map(|(b, _)| b.kind())), opts)
}

/// Projects `x` by every metric and concatenates the results in order.
pub fn metric_fusion(x: &FeatureSet, metrics: &[MahalanobisMetric], opts: FusionOptions) -> Result<FusedFeatureSet> {
    if metrics.is_empty() {
        return Err(Error::invalid("metric fusion needs at least one metric"));
    }
    let mut parts = Vec::with_capacity(metrics.len());
    for (i, m) in metrics.iter().enumerate() {
        let tag = m
            .provenance_value("learner")
            .map_or_else(|| format!("metric{i}"), str::to_string);
        parts.push((m.project(x.matrix())?, x.kind().as_str().to_string(), tag));
    }
    concatenate(parts, x.ids(), x.kind().clone(), opts)
}
