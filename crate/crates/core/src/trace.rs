//! Time-indexed metric records written as CSV.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trace {
    schema: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl Trace {
    /// Empty trace; the first column is the time index.
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Trace { schema: columns.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn schema(&self) -> &[String] {
        &self.schema
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> Option<&[f64]> {
        self.rows.last().map(Vec::as_slice)
    }

    /// Index of a named column.
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    /// Appends a row; rejects wrong arity and time going backwards.
    pub fn push(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.schema.len() {
            return Err(Error::Dimension(format!("row has {} fields, schema has {}", row.len(), self.schema.len())));
        }
        if let Some(prev) = self.rows.last() {
            if row[0] < prev[0] {
                return Err(Error::param(format!("time {} precedes {}", row[0], prev[0])));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", self.schema.join(","))?;
        for row in &self.rows {
            let fields: Vec<String> = row.iter().map(|v| format_value(*v)).collect();
            writeln!(out, "{}", fields.join(","))?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }
}

/// Integers print without a fraction, everything else with 17 significant digits.
pub fn format_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{:.16e}", v)
    }
}
