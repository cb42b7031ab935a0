use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Annotation task a metric or classifier is optimized for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    Style,
    Genre,
    Artist,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Style, Task::Genre, Task::Artist];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Style => "style",
            Task::Genre => "genre",
            Task::Artist => "artist",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "style" => Ok(Task::Style),
            "genre" => Ok(Task::Genre),
            "artist" => Ok(Task::Artist),
            other => Err(Error::invalid(format!(
                "unknown task `{other}` (expected style, genre or artist)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelRow {
    pub id: String,
    pub style: Option<String>,
    pub genre: Option<String>,
    pub artist: Option<String>,
}

impl LabelRow {
    pub fn get(&self, task: Task) -> Option<&str> {
        match task {
            Task::Style => self.style.as_deref(),
            Task::Genre => self.genre.as_deref(),
            Task::Artist => self.artist.as_deref(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelTable {
    rows: Vec<LabelRow>,
    index: HashMap<String, usize>,
}

impl LabelTable {
    pub fn new(rows: Vec<LabelRow>) -> Result<Self> {
        let mut index = HashMap::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            for task in Task::ALL {
                if row.get(task) == Some("") {
                    return Err(Error::invalid(format!(
                        "empty {task} label for `{}`",
                        row.id
                    )));
                }
            }
            if index.insert(row.id.clone(), i).is_some() {
                return Err(Error::DuplicateId {
                    id: row.id.clone(),
                    row: i + 1,
                });
            }
        }
        Ok(LabelTable { rows, index })
    }

    pub fn rows(&self) -> &[LabelRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&LabelRow> {
        self.index.get(id).map(|&i| &self.rows[i])
    }

    pub fn label(&self, id: &str, task: Task) -> Option<&str> {
        self.get(id).and_then(|r| r.get(task))
    }

    /// Distinct labels for `task`, sorted.
    pub fn distinct(&self, task: Task) -> Vec<String> {
        let mut v: Vec<String> = self
            .rows
            .iter()
            .filter_map(|r| r.get(task).map(str::to_string))
            .collect();
        v.sort();
        v.dedup();
        v
    }

    /// Rows whose id is in `ids`, keeping table order.
    pub fn restrict<S: AsRef<str>>(&self, ids: &[S]) -> LabelTable {
        let keep: std::collections::HashSet<&str> = ids.iter().map(|s| s.as_ref()).collect();
        let rows: Vec<LabelRow> = self
            .rows
            .iter()
            .filter(|r| keep.contains(r.id.as_str()))
            .cloned()
            .collect();
        LabelTable::new(rows).expect("subset of a valid table is valid")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("id,style,genre,artist\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.id,
                r.style.as_deref().unwrap_or(""),
                r.genre.as_deref().unwrap_or(""),
                r.artist.as_deref().unwrap_or("")
            ));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Reads an `id,style,genre,artist` file (comma- or tab-separated).
pub fn load_label_table(path: impl AsRef<Path>) -> Result<LabelTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let first = text.lines().next().unwrap_or("");
    let delimiter = if first.contains('\t') { b'\t' } else { b',' };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let mut records = reader.records();
    let header = match records.next() {
        Some(Ok(h)) => h,
        _ => {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row: 1,
                message: "missing header `id,style,genre,artist`".into(),
            })
        }
    };
    let names: Vec<String> = header.iter().map(|h| h.to_ascii_lowercase()).collect();
    if names.first().map(String::as_str) != Some("id") {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            row: 1,
            message: "missing header `id,style,genre,artist`".into(),
        });
    }
    let col = |name: &str| names.iter().position(|n| n == name);
    let (style_col, genre_col, artist_col) = (col("style"), col("genre"), col("artist"));

    let mut rows = Vec::new();
    let mut seen = HashMap::new();
    for (i, rec) in records.enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            row: line,
            message: e.to_string(),
        })?;
        if rec.iter().all(|c| c.is_empty()) {
            continue;
        }
        let id = rec.get(0).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row: line,
                message: "empty id".into(),
            });
        }
        if seen.insert(id.clone(), line).is_some() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row: line,
                message: format!("duplicate id `{id}`"),
            });
        }
        let cell = |c: Option<usize>| {
            c.and_then(|c| rec.get(c))
                .filter(|s| !s.is_empty())
                .map(str::to_string)
        };
        rows.push(LabelRow {
            id,
            style: cell(style_col),
            genre: cell(genre_col),
            artist: cell(artist_col),
        });
    }
    LabelTable::new(rows)
}

/// Reads an explicit class ordering: one class name per line, blank lines
/// and `#` comments ignored.
pub fn load_class_order(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}
