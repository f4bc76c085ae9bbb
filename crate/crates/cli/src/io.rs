//! Price panels and report files.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use qlbs_core::dataset::fmt_f64;
use qlbs_core::market::{MarketParams, PathEnsemble};

use crate::error::CliError;

pub const PRICE_COLUMNS: &str = "path,t,s";

/// Read a `path,t,s` panel. Lines starting with `#` are ignored. Every
/// `(path, t)` with `path < n_paths` and `t <= n_steps` must appear exactly
/// once, where `n_paths` is one more than the largest path id.
pub fn read_price_panel(reader: impl BufRead, params: MarketParams) -> Result<PathEnsemble, CliError> {
    let bad = |ln: usize, msg: String| CliError::Config(format!("price panel line {ln}: {msg}"));
    let n_t = params.n_steps;
    let mut cells: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut seen_columns = false;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let ln = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !seen_columns {
            if line != PRICE_COLUMNS {
                return Err(bad(ln, format!("expected column line `{PRICE_COLUMNS}`")));
            }
            seen_columns = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 3 {
            return Err(bad(ln, format!("expected 3 fields, found {}", f.len())));
        }
        let path: usize = f[0].parse().map_err(|e| bad(ln, format!("path `{}`: {e}", f[0])))?;
        let t: usize = f[1].parse().map_err(|e| bad(ln, format!("t `{}`: {e}", f[1])))?;
        let s: f64 = f[2].parse().map_err(|e| bad(ln, format!("price `{}`: {e}", f[2])))?;
        if t > n_t {
            return Err(bad(ln, format!("t={t} beyond the configured {n_t} steps")));
        }
        if !(s > 0.0 && s.is_finite()) {
            return Err(bad(ln, format!("price at (path {path}, t {t}) is not positive: {s}")));
        }
        if cells.insert((path, t), s).is_some() {
            return Err(bad(ln, format!("duplicate cell (path {path}, t {t})")));
        }
    }
    let n_paths = match cells.keys().map(|(p, _)| p).max() {
        Some(p) => p + 1,
        None => return Err(CliError::Config("price panel has no rows".into())),
    };
    let mut prices = Vec::with_capacity(n_paths);
    for p in 0..n_paths {
        let mut row = Vec::with_capacity(n_t + 1);
        for t in 0..=n_t {
            let s = cells
                .get(&(p, t))
                .ok_or_else(|| CliError::Config(format!("ragged price panel: missing cell (path {p}, t {t})")))?;
            row.push(*s);
        }
        prices.push(row);
    }
    Ok(PathEnsemble::from_prices(params, &prices)?)
}

pub fn load_price_panel(path: &Path, params: MarketParams) -> Result<PathEnsemble, CliError> {
    let f = File::open(path).map_err(|e| CliError::Config(format!("cannot open price panel `{}`: {e}", path.display())))?;
    read_price_panel(BufReader::new(f), params)
}

/// Output directory plus the provenance lines stamped on every file.
pub struct Reporter {
    dir: PathBuf,
    provenance: Vec<(String, String)>,
}

impl Reporter {
    pub fn new(dir: PathBuf, command: &str, config_hash: &str) -> Result<Self, CliError> {
        std::fs::create_dir_all(&dir)?;
        Ok(Reporter {
            dir,
            provenance: vec![
                ("command".into(), command.into()),
                ("version".into(), qlbs_core::VERSION.into()),
                ("config_hash".into(), config_hash.into()),
            ],
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<(), CliError> {
        std::fs::write(self.path(name), text)?;
        Ok(())
    }

    /// A new file that already holds the `#key=value` provenance lines.
    pub fn stamped(&self, name: &str) -> Result<BufWriter<File>, CliError> {
        let mut w = BufWriter::new(File::create(self.path(name))?);
        for (k, v) in &self.provenance {
            writeln!(w, "#{k}={v}")?;
        }
        Ok(w)
    }

    /// CSV with provenance lines, a column line and rows.
    pub fn csv(&self, name: &str, columns: &str) -> Result<CsvFile, CliError> {
        let mut w = self.stamped(name)?;
        writeln!(w, "{columns}")?;
        Ok(CsvFile { w })
    }

    /// `summary.txt`: provenance followed by the results, one `key=value` per
    /// line. Returns the text so it can be echoed.
    pub fn summary(&self, results: &Summary) -> Result<String, CliError> {
        let mut text = String::new();
        for (k, v) in self.provenance.iter().chain(&results.0) {
            text.push_str(&format!("{k}={v}\n"));
        }
        self.write_text("summary.txt", &text)?;
        Ok(text)
    }
}

pub struct CsvFile {
    w: BufWriter<File>,
}

/// One CSV cell.
pub enum Cell {
    I(usize),
    F(f64),
    S(String),
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::I(v)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::F(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::S(v.to_string())
    }
}

impl CsvFile {
    pub fn row(&mut self, cells: &[Cell]) -> Result<(), CliError> {
        let text: Vec<String> = cells
            .iter()
            .map(|c| match c {
                Cell::I(v) => v.to_string(),
                Cell::F(v) => fmt_f64(*v),
                Cell::S(v) => v.clone(),
            })
            .collect();
        writeln!(self.w, "{}", text.join(","))?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.w.flush()?;
        Ok(())
    }
}

/// Ordered `key=value` results.
#[derive(Default)]
pub struct Summary(pub Vec<(String, String)>);

impl Summary {
    pub fn f(&mut self, key: &str, v: f64) -> &mut Self {
        self.0.push((key.into(), fmt_f64(v)));
        self
    }

    pub fn s(&mut self, key: &str, v: impl ToString) -> &mut Self {
        self.0.push((key.into(), v.to_string()));
        self
    }
}
