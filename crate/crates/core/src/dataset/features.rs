use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::container::{decode_strings, encode_strings, Container};
use crate::error::{Error, Result};

/// Which extractor produced a feature table.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FeatureKind {
    Gist,
    Classemes,
    Picodes,
    Cnn,
    Synthetic,
    Other(String),
}

impl FeatureKind {
    pub fn as_str(&self) -> &str {
        match self {
            FeatureKind::Gist => "gist",
            FeatureKind::Classemes => "classemes",
            FeatureKind::Picodes => "picodes",
            FeatureKind::Cnn => "cnn",
            FeatureKind::Synthetic => "synthetic",
            FeatureKind::Other(name) => name,
        }
    }

    /// Column label used in accuracy tables.
    pub fn display_name(&self) -> String {
        match self {
            FeatureKind::Gist => "GIST".into(),
            FeatureKind::Classemes => "Classemes".into(),
            FeatureKind::Picodes => "Picodes".into(),
            FeatureKind::Cnn => "CNN".into(),
            FeatureKind::Synthetic => "Synthetic".into(),
            FeatureKind::Other(name) => name.clone(),
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let kind = match s.to_ascii_lowercase().as_str() {
            "gist" => FeatureKind::Gist,
            "classemes" | "classeme" => FeatureKind::Classemes,
            "picodes" | "picode" => FeatureKind::Picodes,
            "cnn" => FeatureKind::Cnn,
            "synthetic" => FeatureKind::Synthetic,
            "" => return Err(Error::invalid("empty feature kind")),
            _ => FeatureKind::Other(s.to_string()),
        };
        Ok(kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Binary,
}

impl TableFormat {
    /// `.csv` means CSV, anything else is the binary container.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => TableFormat::Csv,
            _ => TableFormat::Binary,
        }
    }
}

/// `N × D` per-image feature matrix with row-aligned image ids.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    kind: FeatureKind,
    ids: Vec<String>,
    matrix: DMatrix<f64>,
    index: HashMap<String, usize>,
}

impl FeatureSet {
    pub fn new(kind: FeatureKind, ids: Vec<String>, matrix: DMatrix<f64>) -> Result<Self> {
        if ids.len() != matrix.nrows() {
            return Err(Error::invalid(format!(
                "{} ids for {} feature rows",
                ids.len(),
                matrix.nrows()
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (row, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), row).is_some() {
                return Err(Error::DuplicateId {
                    id: id.clone(),
                    row: row + 1,
                });
            }
        }
        for row in 0..matrix.nrows() {
            if matrix.row(row).iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("feature row {} (`{}`)", row + 1, ids[row])));
            }
        }
        Ok(FeatureSet {
            kind,
            ids,
            matrix,
            index,
        })
    }

    pub fn kind(&self) -> &FeatureKind {
        &self.kind
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn row_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Rows for `ids`, in that order.
    pub fn rows_for<S: AsRef<str>>(&self, ids: &[S]) -> Result<DMatrix<f64>> {
        let rows = ids
            .iter()
            .map(|id| {
                self.row_of(id.as_ref())
                    .ok_or_else(|| Error::UnknownId(id.as_ref().to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.matrix.select_rows(rows.iter()))
    }

    /// Same ids and kind, new matrix (e.g. after a projection).
    pub fn with_matrix(&self, matrix: DMatrix<f64>) -> Result<Self> {
        FeatureSet::new(self.kind.clone(), self.ids.clone(), matrix)
    }

    pub fn to_container(&self) -> Container {
        Container::new(self.kind.as_str(), self.matrix.clone())
            .with_section("ids", encode_strings(&self.ids))
    }

    pub fn from_container(c: Container, path: &Path) -> Result<Self> {
        let fmt_err = |message: String| Error::Format {
            path: path.to_path_buf(),
            message,
        };
        let ids = match c.section("ids") {
            Some(p) => decode_strings(p).map_err(fmt_err)?,
            None => (0..c.matrix.nrows()).map(|i| i.to_string()).collect(),
        };
        let kind = c.kind.parse()?;
        FeatureSet::new(kind, ids, c.matrix)
    }

    pub fn load(path: impl AsRef<Path>, format: TableFormat) -> Result<Self> {
        let path = path.as_ref();
        match format {
            TableFormat::Binary => FeatureSet::from_container(Container::load(path)?, path),
            TableFormat::Csv => load_csv(path),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>, format: TableFormat) -> Result<()> {
        let path = path.as_ref();
        match format {
            TableFormat::Binary => self.to_container().save(path),
            TableFormat::Csv => save_csv(self, path),
        }
    }
}

/// Loads a feature table, choosing the format from the file extension.
pub fn load_feature_table(path: impl AsRef<Path>, format: TableFormat) -> Result<FeatureSet> {
    FeatureSet::load(path, format)
}

fn load_csv(path: &Path) -> Result<FeatureSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, 1, e))?;
    let header = reader.headers().map_err(|e| csv_err(path, 1, e))?.clone();
    if header.get(0) != Some("id") {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            row: 1,
            message: "header must start with `id`".into(),
        });
    }
    let dim = header.len() - 1;
    let kind = path
        .file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.parse().ok())
        .unwrap_or(FeatureKind::Other("csv".into()));

    let mut ids = Vec::new();
    let mut values = Vec::new();
    let mut seen = HashMap::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| csv_err(path, line, e))?;
        if record.len() != dim + 1 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row: line,
                message: format!("expected {} fields, found {}", dim + 1, record.len()),
            });
        }
        let id = record[0].to_string();
        if seen.insert(id.clone(), line).is_some() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row: line,
                message: format!("duplicate id `{id}`"),
            });
        }
        for (col, cell) in record.iter().skip(1).enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                row: line,
                message: format!("column {}: `{cell}` is not a number", col + 1),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    row: line,
                    message: format!("column {}: non-finite value `{cell}`", col + 1),
                });
            }
            values.push(v);
        }
        ids.push(id);
    }
    let matrix = DMatrix::from_row_slice(ids.len(), dim, &values);
    FeatureSet::new(kind, ids, matrix)
}

fn save_csv(set: &FeatureSet, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        write!(w, "id")?;
        for j in 0..set.dim() {
            write!(w, ",f{j}")?;
        }
        writeln!(w)?;
        for (i, id) in set.ids.iter().enumerate() {
            write!(w, "{id}")?;
            for j in 0..set.dim() {
                write!(w, ",{}", set.matrix[(i, j)])?;
            }
            writeln!(w)?;
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, row: usize, e: csv::Error) -> Error {
    let row = e
        .position()
        .map(|p| p.line() as usize)
        .unwrap_or(row);
    Error::Parse {
        path: path.to_path_buf(),
        row,
        message: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn minimal_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "gist.csv", "id,f0,f1\na,1,2\nb,3,4\nc,5.5,-6\n");
        let fs = FeatureSet::load(&p, TableFormat::Csv).unwrap();
        assert_eq!(fs.len(), 3);
        assert_eq!(fs.dim(), 2);
        assert_eq!(fs.kind(), &FeatureKind::Gist);
        assert_eq!(fs.matrix()[(2, 1)], -6.0);
        assert_eq!(fs.ids(), &["a", "b", "c"]);
    }

    #[test]
    fn nan_cell_names_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "f.csv", "id,f0,f1\na,1,2\nb,NaN,4\n");
        match FeatureSet::load(&p, TableFormat::Csv) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_arity_and_bad_number_and_duplicate() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "id,f0,f1\na,1\n");
        assert!(matches!(
            FeatureSet::load(&p, TableFormat::Csv),
            Err(Error::Parse { row: 2, .. })
        ));
        let p = write(&dir, "b.csv", "id,f0\na,1\nb,x\n");
        assert!(matches!(
            FeatureSet::load(&p, TableFormat::Csv),
            Err(Error::Parse { row: 3, .. })
        ));
        let p = write(&dir, "c.csv", "id,f0\na,1\nb,2\na,3\n");
        assert!(matches!(
            FeatureSet::load(&p, TableFormat::Csv),
            Err(Error::Parse { row: 4, .. })
        ));
    }

    #[test]
    fn invariants_enforced() {
        let m = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        assert!(FeatureSet::new(FeatureKind::Cnn, vec!["a".into()], m.clone()).is_err());
        assert!(FeatureSet::new(FeatureKind::Cnn, vec!["a".into(), "a".into()], m).is_err());
        let bad = DMatrix::from_row_slice(1, 1, &[f64::INFINITY]);
        assert!(FeatureSet::new(FeatureKind::Cnn, vec!["a".into()], bad).is_err());
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("GIST".parse::<FeatureKind>().unwrap(), FeatureKind::Gist);
        assert_eq!(
            "hog".parse::<FeatureKind>().unwrap(),
            FeatureKind::Other("hog".into())
        );
    }
}
