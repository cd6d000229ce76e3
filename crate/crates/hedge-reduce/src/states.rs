//! Per-path state records: named scalar variables observed on each
//! simulated path, consumed by basis evaluation and out-of-sample
//! reconstruction.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Column-oriented table of per-path state variables.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTable {
    n_paths: usize,
    columns: Vec<(String, Vec<f64>)>,
}

impl StateTable {
    pub fn new(n_paths: usize) -> Self {
        Self {
            n_paths,
            columns: Vec::new(),
        }
    }

    pub fn add_column(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        let name = name.into();
        if values.len() != self.n_paths {
            return Err(Error::DimensionMismatch {
                axis: "state column length",
                expected: self.n_paths,
                actual: values.len(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                location: format!("state '{}' at path {}", name, pos),
            });
        }
        self.columns.push((name, values));
        Ok(())
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn variable_names(&self) -> Vec<&str> {
        self.columns.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.columns
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::MissingStateVariable(name.to_string()))
    }

    /// CSV with a header row of variable names, one row per path.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        let header: Vec<&str> = self.variable_names();
        writeln!(out, "{}", header.join(","))?;
        for l in 0..self.n_paths {
            let row: Vec<String> = self
                .columns
                .iter()
                .map(|(_, v)| format!("{:e}", v[l]))
                .collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(&mut f)
    }

    pub fn read_csv_file(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut lines = f.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::CorruptFile(format!("{}: empty states file", path.display())))??;
        let names: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != names.len() {
                return Err(Error::CorruptFile(format!(
                    "{}: row {} has {} fields, header has {}",
                    path.display(),
                    lineno + 2,
                    fields.len(),
                    names.len()
                )));
            }
            for (c, field) in fields.iter().enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::CorruptFile(format!(
                        "{}: row {} column '{}': not a number",
                        path.display(),
                        lineno + 2,
                        names[c]
                    ))
                })?;
                cols[c].push(v);
            }
        }
        let n_paths = cols.first().map_or(0, |c| c.len());
        let mut table = Self::new(n_paths);
        for (name, col) in names.into_iter().zip(cols) {
            table.add_column(name, col)?;
        }
        Ok(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_roundtrip() {
        let mut t = StateTable::new(3);
        t.add_column("S_t", vec![1.0, 2.5, 3.0]).unwrap();
        t.add_column("D_tT", vec![0.9, 0.9, 0.9]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("states.csv");
        t.write_csv_file(&p).unwrap();
        let back = StateTable::read_csv_file(&p).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn missing_variable_reported() {
        let t = StateTable::new(1);
        assert!(matches!(
            t.column("S_t"),
            Err(Error::MissingStateVariable(_))
        ));
    }
}
