//! Fixed-format CSV helpers shared by every tabular output.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// C-style `%.12e` formatting (`-1.234567890123e-05`).
pub fn sci(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    let s = format!("{x:.12e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mantissa}e{sign}{:02}", exp.abs())
}

/// Rows of numbers under a fixed header.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|&v| sci(v)).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Parses a table whose header must equal `expected`.
    pub fn parse(text: &str, expected: &[&str]) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines.next().ok_or_else(|| Error::arg("empty table"))?.split(',').map(str::trim).collect();
        if header != expected {
            return Err(Error::arg(format!("table header {header:?} does not match {expected:?}")));
        }
        let mut table = Table::new(expected);
        for (k, line) in lines.enumerate() {
            let row: std::result::Result<Vec<f64>, _> = line.split(',').map(|c| c.trim().parse::<f64>()).collect();
            let row = row.map_err(|e| Error::arg(format!("row {}: {e}", k + 1)))?;
            if row.len() != expected.len() {
                return Err(Error::arg(format!("row {} has {} cells, expected {}", k + 1, row.len(), expected.len())));
            }
            table.rows.push(row);
        }
        Ok(table)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }
}
