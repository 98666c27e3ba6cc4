//! CSV tables and JSONL event streams.
//!
//! CSV: header row, feature columns `x0..x{d-1}` (contiguous from `x0`), optional
//! `y`, `w` (confounder) and `group`. Column order is free. Every diagnostic names
//! the file, the 1-based line and the column.

use std::io::BufRead;
use std::path::{Path, PathBuf};

use dfinfer::scores::Dataset;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub x: Vec<Vec<f64>>,
    pub y: Option<Vec<f64>>,
    pub w: Option<Vec<f64>>,
    pub group: Option<Vec<usize>>,
}

#[derive(Clone, Copy)]
enum Col {
    X(usize),
    Y,
    W,
    Group,
}

fn format_err(path: &Path, message: impl Into<String>) -> CliError {
    CliError::CsvFormat { path: path.to_path_buf(), message: message.into() }
}

impl Table {
    pub fn read(path: &Path) -> CliResult<Self> {
        let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
        Self::from_reader(file, path)
    }

    pub fn from_reader(r: impl std::io::Read, path: &Path) -> CliResult<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(r);
        let csv_err = |e: csv::Error| {
            let line = e.position().map(|p| p.line());
            match line {
                Some(l) => format_err(path, format!("line {l}: {e}")),
                None => format_err(path, e.to_string()),
            }
        };
        let header = rdr.headers().map_err(csv_err)?.clone();
        let mut cols = Vec::with_capacity(header.len());
        let mut dim = 0;
        for name in header.iter() {
            let col = match name {
                "y" => Col::Y,
                "w" => Col::W,
                "group" => Col::Group,
                x if x.starts_with('x') && x[1..].parse::<usize>().is_ok() && (x.len() == 2 || !x[1..].starts_with('0')) => {
                    let j: usize = x[1..].parse().unwrap_or(usize::MAX);
                    dim = dim.max(j + 1);
                    Col::X(j)
                }
                other => return Err(format_err(path, format!("line 1: unknown column `{other}`"))),
            };
            cols.push(col);
        }
        let mut seen = vec![false; dim];
        let (mut has_y, mut has_w, mut has_g) = (false, false, false);
        for (c, name) in cols.iter().zip(header.iter()) {
            let dup = match *c {
                Col::X(j) => std::mem::replace(&mut seen[j], true),
                Col::Y => std::mem::replace(&mut has_y, true),
                Col::W => std::mem::replace(&mut has_w, true),
                Col::Group => std::mem::replace(&mut has_g, true),
            };
            if dup {
                return Err(format_err(path, format!("line 1: duplicate column `{name}`")));
            }
        }
        if let Some(j) = seen.iter().position(|s| !s) {
            return Err(format_err(path, format!("line 1: missing column `x{j}`")));
        }

        let mut t = Table {
            x: Vec::new(),
            y: has_y.then(Vec::new),
            w: has_w.then(Vec::new),
            group: has_g.then(Vec::new),
        };
        for rec in rdr.records() {
            let rec = rec.map_err(csv_err)?;
            let line = rec.position().map_or(0, |p| p.line());
            let value_err = |column: &str, message: String| CliError::CsvValue {
                path: path.to_path_buf(),
                line,
                column: column.to_string(),
                message,
            };
            let mut row = vec![0.0; dim];
            for ((c, name), field) in cols.iter().zip(header.iter()).zip(rec.iter()) {
                if let Col::Group = c {
                    let g = field.parse::<usize>().map_err(|_| value_err(name, format!("expected a group index, got `{field}`")))?;
                    t.group.as_mut().expect("group column").push(g);
                    continue;
                }
                let v = field.parse::<f64>().map_err(|_| value_err(name, format!("expected a number, got `{field}`")))?;
                if !v.is_finite() {
                    return Err(value_err(name, format!("non-finite value `{field}`")));
                }
                match *c {
                    Col::X(j) => row[j] = v,
                    Col::Y => t.y.as_mut().expect("y column").push(v),
                    Col::W => t.w.as_mut().expect("w column").push(v),
                    Col::Group => unreachable!(),
                }
            }
            t.x.push(row);
        }
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    pub fn require_y(&self, path: &Path) -> CliResult<&[f64]> {
        self.y.as_deref().ok_or_else(|| format_err(path, "a `y` column is required"))
    }

    pub fn require_w(&self, path: &Path) -> CliResult<&[f64]> {
        self.w.as_deref().ok_or_else(|| format_err(path, "a `w` column is required"))
    }

    /// The single feature column `x0`, for one-dimensional inputs such as forecasts.
    pub fn column0(&self, path: &Path) -> CliResult<Vec<f64>> {
        if self.dim() != 1 {
            return Err(format_err(path, format!("expected exactly one feature column `x0`, found {}", self.dim())));
        }
        Ok(self.x.iter().map(|r| r[0]).collect())
    }

    /// Labeled dataset; groups are carried when present.
    pub fn dataset(&self, path: &Path) -> CliResult<Dataset> {
        let y = self.require_y(path)?.to_vec();
        let d = Dataset::new(self.x.clone(), y)?;
        Ok(match &self.group {
            Some(g) => d.with_groups(g.clone())?,
            None => d,
        })
    }
}

/// One monitor event. `t` defaults to the 1-based arrival index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Event {
    pub x: Vec<f64>,
    pub y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<u64>,
}

/// Reads a JSONL stream; blank lines are skipped.
pub fn read_events(path: &Path) -> CliResult<Vec<(usize, Event)>> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ev: Event = serde_json::from_str(&line).map_err(|e| event_err(path, i + 1, format!("malformed event: {e}")))?;
        out.push((i + 1, ev));
    }
    Ok(out)
}

pub(crate) fn event_err(path: &Path, line: usize, message: impl Into<String>) -> CliError {
    CliError::Event { path: PathBuf::from(path), line, message: message.into() }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> CliResult<Table> {
        Table::from_reader(s.as_bytes(), Path::new("t.csv"))
    }

    #[test]
    fn reads_columns_in_any_order() {
        let t = parse("y,x1,x0,w,group\n1.5,2,3,0.5,1\n-1,0,1e-3,0,0\n").unwrap();
        assert_eq!(t.x, vec![vec![3.0, 2.0], vec![1e-3, 0.0]]);
        assert_eq!(t.y, Some(vec![1.5, -1.0]));
        assert_eq!(t.w, Some(vec![0.5, 0.0]));
        assert_eq!(t.group, Some(vec![1, 0]));
    }

    #[test]
    fn diagnostics_name_line_and_column() {
        let e = parse("x0,y\n1,2\n3,abc\n").unwrap_err().to_string();
        assert!(e.contains("line 3") && e.contains("`y`") && e.contains("abc"), "{e}");
        let e = parse("x0,y\n1,nan\n").unwrap_err().to_string();
        assert!(e.contains("line 2") && e.contains("non-finite"), "{e}");
        let e = parse("x0,z\n1,2\n").unwrap_err().to_string();
        assert!(e.contains("unknown column `z`"), "{e}");
        let e = parse("x1,y\n1,2\n").unwrap_err().to_string();
        assert!(e.contains("missing column `x0`"), "{e}");
        let e = parse("x0,x0\n1,2\n").unwrap_err().to_string();
        assert!(e.contains("duplicate"), "{e}");
        let e = parse("x0,y\n1,2\n3\n").unwrap_err().to_string();
        assert!(e.contains("line 3"), "{e}");
        assert!(parse("x00,y\n1,2\n").is_err());
    }

    #[test]
    fn header_only_is_an_empty_table() {
        let t = parse("x0,y\n").unwrap();
        assert!(t.is_empty());
        assert_eq!(t.y, Some(vec![]));
    }
}
