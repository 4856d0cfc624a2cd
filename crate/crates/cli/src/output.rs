//! Tabular output in the three `--format` flavors.

use std::io::Write;

use clap::ValueEnum;
use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    /// Aligned columns for reading.
    Human,
    Csv,
    /// An array of objects keyed by column name.
    Json,
}

pub struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new<S: Into<String>>(headers: impl IntoIterator<Item = S>) -> Self {
        Table {
            headers: headers.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn write(&self, format: OutputFormat, out: &mut impl Write) -> std::io::Result<()> {
        match format {
            OutputFormat::Csv => {
                writeln!(out, "{}", self.headers.join(","))?;
                for row in &self.rows {
                    let cells: Vec<String> = row.iter().map(cell).collect();
                    writeln!(out, "{}", cells.join(","))?;
                }
            }
            OutputFormat::Json => {
                let objects: Vec<Value> = self
                    .rows
                    .iter()
                    .map(|row| {
                        Value::Object(
                            self.headers
                                .iter()
                                .cloned()
                                .zip(row.iter().cloned())
                                .collect::<Map<String, Value>>(),
                        )
                    })
                    .collect();
                serde_json::to_writer_pretty(&mut *out, &objects)?;
                writeln!(out)?;
            }
            OutputFormat::Human => {
                let cells: Vec<Vec<String>> =
                    self.rows.iter().map(|r| r.iter().map(cell).collect()).collect();
                let widths: Vec<usize> = (0..self.headers.len())
                    .map(|c| {
                        cells
                            .iter()
                            .map(|r| r[c].len())
                            .chain([self.headers[c].len()])
                            .max()
                            .unwrap_or(0)
                    })
                    .collect();
                let line = |items: &[String]| {
                    items
                        .iter()
                        .zip(&widths)
                        .map(|(s, &w)| format!("{s:>w$}"))
                        .collect::<Vec<_>>()
                        .join("  ")
                };
                writeln!(out, "{}", line(&self.headers))?;
                for r in &cells {
                    writeln!(out, "{}", line(r))?;
                }
            }
        }
        Ok(())
    }
}

/// Numbers use the shortest representation that parses back exactly.
fn cell(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

/// A single JSON document in json mode, `key: value` lines otherwise.
pub fn write_record(format: OutputFormat, record: &Value, out: &mut impl Write) -> std::io::Result<()> {
    match format {
        OutputFormat::Json => {
            serde_json::to_writer_pretty(&mut *out, record)?;
            writeln!(out)
        }
        OutputFormat::Csv => {
            let Value::Object(m) = record else {
                return writeln!(out, "{record}");
            };
            let keys: Vec<&str> = m.keys().map(String::as_str).collect();
            writeln!(out, "{}", keys.join(","))?;
            let vals: Vec<String> = m.values().map(|v| match v {
                Value::String(_) | Value::Null | Value::Number(_) | Value::Bool(_) => cell(v),
                nested => nested.to_string().replace(',', ";"),
            })
            .collect();
            writeln!(out, "{}", vals.join(","))
        }
        OutputFormat::Human => {
            let Value::Object(m) = record else {
                return writeln!(out, "{record}");
            };
            let w = m.keys().map(String::len).max().unwrap_or(0);
            for (k, v) in m {
                writeln!(out, "{k:<w$}  {}", cell(v))?;
            }
            Ok(())
        }
    }
}
