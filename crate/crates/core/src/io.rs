//! Plain-text output helpers shared by the modules.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::Result;

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Renders a CSV table: a header line, then one row per entry, `\n` line ends.
pub fn csv_string(header: &[&str], rows: &[Vec<f64>]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for row in rows {
        for (k, v) in row.iter().enumerate() {
            if k > 0 {
                s.push(',');
            }
            let _ = write!(s, "{v:.16e}");
        }
        s.push('\n');
    }
    s
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, csv_string(header, rows))?;
    Ok(())
}

/// Parses a CSV produced by [`csv_string`], returning header and rows.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .unwrap_or_default()
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let row: std::result::Result<Vec<f64>, _> = line.split(',').map(str::parse).collect();
        rows.push(row.map_err(|e| crate::error::LabError::DegenerateInput(format!("bad csv value: {e}")))?);
    }
    Ok((header, rows))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        let rows = vec![vec![0.1, -1.0 / 3.0], vec![1e-300, std::f64::consts::PI]];
        write_csv(&p, &["x", "y"], &rows).unwrap();
        let (h, back) = read_csv(&p).unwrap();
        assert_eq!(h, vec!["x", "y"]);
        assert_eq!(back, rows);
    }
}
