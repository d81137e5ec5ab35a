//! CSV rows emitted by the sweeps.

use std::fmt::Write as _;
use std::path::Path;

/// A study row with a fixed header.
pub trait CsvRecord {
    fn header() -> &'static str;
    fn row(&self) -> String;
}

pub fn to_csv<R: CsvRecord>(records: &[R]) -> String {
    let mut out = String::new();
    out.push_str(R::header());
    out.push('\n');
    for r in records {
        let _ = writeln!(out, "{}", r.row());
    }
    out
}

pub fn write_csv<R: CsvRecord>(path: &Path, records: &[R]) -> std::io::Result<()> {
    std::fs::write(path, to_csv(records))
}

/// Formats an optional value, leaving the cell empty for `None`.
pub(crate) fn opt_cell(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.12e}")).unwrap_or_default()
}
