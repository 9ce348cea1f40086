//! CSV emission. Each file opens with a comment line naming the command and
//! the configuration hash, followed by a header row with units.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::commands::Table;
use crate::error::{CliError, Result};

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Writes `table` to `dir/<name>.csv`. Numbers use the shortest
/// representation that round-trips, so reruns are byte-identical.
pub fn write_csv(dir: &Path, table: &Table, command: &str, config_hash: &str) -> Result<PathBuf> {
    let path = dir.join(format!("{}.csv", table.name));
    let mut file = std::fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
    writeln!(file, "# omm {command} config_sha256={config_hash}").map_err(|e| CliError::io(&path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let csv_err = |e: csv::Error| CliError::Output(format!("{}: {e}", path.display()));
    w.write_record(&table.columns).map_err(csv_err)?;
    for row in &table.rows {
        if row.len() != table.columns.len() {
            return Err(CliError::Output(format!("{}: row of length {} under {} columns", path.display(), row.len(), table.columns.len())));
        }
        w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

/// Reads a file written by [`write_csv`]: `(hash line, header, rows)`.
pub fn read_csv(path: &Path) -> Result<(String, Vec<String>, Vec<Vec<f64>>)> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let (first, rest) = text.split_once('\n').ok_or_else(|| CliError::Output(format!("{}: empty file", path.display())))?;
    let mut r = csv::Reader::from_reader(rest.as_bytes());
    let bad = |e: String| CliError::Output(format!("{}: {e}", path.display()));
    let header = r.headers().map_err(|e| bad(e.to_string()))?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        rows.push(rec.iter().map(|s| s.parse::<f64>().map_err(|e| bad(e.to_string()))).collect::<Result<_>>()?);
    }
    Ok((first.to_string(), header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Table::new("demo", &["x [m]", "y [1]"]);
        t.rows = vec![vec![0.1, 1.0 / 3.0], vec![1e-300, -2.5e17]];
        let path = write_csv(dir.path(), &t, "trap", "abc").unwrap();
        let (first, header, rows) = read_csv(&path).unwrap();
        assert_eq!(first, "# omm trap config_sha256=abc");
        assert_eq!(header, t.columns);
        assert_eq!(rows, t.rows);
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Table::new("bad", &["x [m]", "y [1]"]);
        t.rows = vec![vec![1.0]];
        assert!(write_csv(dir.path(), &t, "trap", "abc").is_err());
    }
}
