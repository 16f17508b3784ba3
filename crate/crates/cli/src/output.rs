//! Result tables and the run output directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::sha256_hex;
use crate::error::{io_err, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// A rectangular table rendered either as CSV or aligned text.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// CSV preceded by a `#` comment line.
    pub fn to_csv(&self, comment: &str) -> String {
        let mut s = format!("{comment}\n{}\n", self.columns.join(","));
        for row in &self.rows {
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }

    pub fn to_pretty(&self) -> String {
        let widths: Vec<usize> = (0..self.columns.len())
            .map(|c| self.rows.iter().map(|r| r[c].len()).chain([self.columns[c].len()]).max().unwrap_or(0))
            .collect();
        let mut s = String::new();
        for row in std::iter::once(&self.columns).chain(&self.rows) {
            let cells: Vec<String> = row.iter().zip(&widths).map(|(v, w)| format!("{v:>w$}")).collect();
            let _ = writeln!(s, "{}", cells.join("  "));
        }
        s
    }
}

/// Optional float cell: empty when absent.
pub fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Output directory of one command invocation, tagged with the hash of its
/// resolved settings.
#[derive(Debug, Clone)]
pub struct RunDir {
    dir: PathBuf,
    hash: String,
}

impl RunDir {
    /// Creates `dir` and writes `resolved` to `<dir>/<file>`.
    pub fn create(dir: &Path, file: &str, resolved: &str) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let run = RunDir { dir: dir.to_path_buf(), hash: sha256_hex(resolved.as_bytes()) };
        run.write(file, resolved)?;
        Ok(run)
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn comment(&self) -> String {
        format!("# encdp {VERSION} config_sha256={}", self.hash)
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(io_err(&path))?;
        Ok(path)
    }

    pub fn write_csv(&self, name: &str, table: &Table) -> Result<PathBuf> {
        self.write(name, &table.to_csv(&self.comment()))
    }
}
