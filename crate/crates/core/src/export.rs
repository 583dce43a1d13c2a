//! Delimited-text tables with a `#`-prefixed metadata header, and atomic file
//! writes.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub caption: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: impl Into<String>, caption: impl Into<String>, header: Vec<String>) -> Self {
        Self {
            name: name.into(),
            caption: caption.into(),
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len(), "row width in table {}", self.name);
        self.rows.push(row);
    }

    /// Renders the table; `metadata` lines come first as `# key: value`.
    pub fn render(&self, metadata: &[(String, String)], delimiter: u8) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        writeln!(out, "# table: {}", self.name)?;
        if !self.caption.is_empty() {
            writeln!(out, "# caption: {}", self.caption)?;
        }
        for (k, v) in metadata {
            writeln!(out, "# {k}: {v}")?;
        }
        let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_writer(out);
        w.write_record(&self.header).map_err(csv_error)?;
        for row in &self.rows {
            w.write_record(row).map_err(csv_error)?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Numerical(format!("table encoding failed: {other:?}")),
    }
}

/// Fixed-precision number; non-finite values print as `NA`.
pub fn fmt_num(v: f64, digits: usize) -> String {
    if v.is_finite() {
        format!("{v:.digits$}")
    } else {
        "NA".to_string()
    }
}

pub fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "NA".to_string(), |x| fmt_num(x, digits))
}

/// Shortest round-trip representation, for values that are read back.
pub fn fmt_exact(v: f64) -> String {
    if v.is_finite() {
        format!("{v:?}")
    } else {
        "NA".to_string()
    }
}

/// One row per matrix row, one column per time point, labelled.
pub fn matrix_table(name: &str, row_labels: &[String], time_index: &[i64], m: &DMatrix<f64>) -> Table {
    let mut header = vec!["series".to_string()];
    header.extend(time_index.iter().map(|t| format!("t{t}")));
    let mut table = Table::new(name, "", header);
    for (r, label) in row_labels.iter().enumerate() {
        let mut row = vec![label.clone()];
        row.extend(m.row(r).iter().map(|&v| fmt_exact(v)));
        table.push(row);
    }
    table
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`, so
/// a failed run never leaves a partial file behind.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path).inspect_err(|_| {
        let _ = std::fs::remove_file(&tmp);
    })?;
    Ok(())
}
