//! Column-major table of raw string cells.
//!
//! Every module in the crate passes data around as a [`Table`]. Cells are kept
//! exactly as they were read; numeric and boolean interpretation only happens
//! in the validator.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TableError {
    #[error("column `{column}` has {found} cells, expected {expected}")]
    RaggedColumn {
        column: String,
        expected: usize,
        found: usize,
    },
    #[error("duplicate column name `{0}`")]
    DuplicateColumn(String),
    #[error("column {index} has an empty name")]
    EmptyColumnName { index: usize },
    #[error("row index {index} out of range for table with {row_count} rows")]
    RowOutOfRange { index: usize, row_count: usize },
    #[error("row index {0} selected more than once")]
    DuplicateRow(usize),
    #[error("parse error at line {line}{}: {message}", .column.map(|c| format!(", column {c}")).unwrap_or_default())]
    Parse {
        line: u64,
        column: Option<u64>,
        message: String,
    },
}

/// Input formats accepted by [`parse_table`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    ColumnMajorJson,
}

impl TableFormat {
    /// Guess the format from a file extension; anything but `.csv` is JSON.
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => TableFormat::Csv,
            _ => TableFormat::ColumnMajorJson,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Column {
    pub name: String,
    pub cells: Vec<String>,
}

/// An immutable grid of string cells with ordered, uniquely named columns.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "TableRepr", into = "TableRepr")]
pub struct Table {
    columns: Vec<Column>,
    row_count: usize,
}

/// Wire shape: `{"columns": [[name, [cell, ...]], ...]}`.
#[derive(Serialize, Deserialize)]
struct TableRepr {
    columns: Vec<(String, Vec<String>)>,
}

impl TryFrom<TableRepr> for Table {
    type Error = TableError;

    fn try_from(repr: TableRepr) -> Result<Self, Self::Error> {
        Table::new(repr.columns)
    }
}

impl From<Table> for TableRepr {
    fn from(table: Table) -> Self {
        TableRepr {
            columns: table
                .columns
                .into_iter()
                .map(|c| (c.name, c.cells))
                .collect(),
        }
    }
}

impl Table {
    /// Build a table from `(name, cells)` pairs, checking every invariant.
    pub fn new<N, C>(columns: impl IntoIterator<Item = (N, C)>) -> Result<Self, TableError>
    where
        N: Into<String>,
        C: IntoIterator,
        C::Item: Into<String>,
    {
        let columns: Vec<Column> = columns
            .into_iter()
            .map(|(name, cells)| Column {
                name: name.into(),
                cells: cells.into_iter().map(Into::into).collect(),
            })
            .collect();
        let row_count = columns.first().map_or(0, |c| c.cells.len());
        let mut seen = HashSet::new();
        for (index, col) in columns.iter().enumerate() {
            if col.name.is_empty() {
                return Err(TableError::EmptyColumnName { index });
            }
            if !seen.insert(col.name.as_str()) {
                return Err(TableError::DuplicateColumn(col.name.clone()));
            }
            if col.cells.len() != row_count {
                return Err(TableError::RaggedColumn {
                    column: col.name.clone(),
                    expected: row_count,
                    found: col.cells.len(),
                });
            }
        }
        Ok(Table { columns, row_count })
    }

    pub fn empty() -> Self {
        Table {
            columns: Vec::new(),
            row_count: 0,
        }
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    pub fn column_count(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn cell(&self, row: usize, column: usize) -> &str {
        &self.columns[column].cells[row]
    }

    /// Cells of one row, in column order.
    pub fn row(&self, row: usize) -> Vec<&str> {
        self.columns.iter().map(|c| c.cells[row].as_str()).collect()
    }

    /// Keep only the selected rows, in selection order.
    pub fn project_rows(&self, selection: &RowSelection) -> Result<Table, TableError> {
        selection.check(self.row_count)?;
        let columns = self
            .columns
            .iter()
            .map(|c| Column {
                name: c.name.clone(),
                cells: selection.iter().map(|i| c.cells[i].clone()).collect(),
            })
            .collect();
        Ok(Table {
            columns,
            row_count: selection.len(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("table serialization is infallible")
    }

    pub fn to_csv(&self) -> String {
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        // A zero-column table has no header line at all.
        if !self.columns.is_empty() {
            writer
                .write_record(self.column_names())
                .expect("write to Vec");
            for r in 0..self.row_count {
                writer.write_record(self.row(r)).expect("write to Vec");
            }
        }
        let bytes = writer.into_inner().expect("flush to Vec");
        String::from_utf8(bytes).expect("cells are UTF-8")
    }
}

impl fmt::Display for Table {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_csv())
    }
}

/// Ordered, duplicate-free list of row indices.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RowSelection {
    indices: Vec<usize>,
}

impl RowSelection {
    pub fn new(indices: Vec<usize>) -> Result<Self, TableError> {
        let mut seen = HashSet::with_capacity(indices.len());
        for &i in &indices {
            if !seen.insert(i) {
                return Err(TableError::DuplicateRow(i));
            }
        }
        Ok(RowSelection { indices })
    }

    /// All rows of a table, in order.
    pub fn all(row_count: usize) -> Self {
        RowSelection {
            indices: (0..row_count).collect(),
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    fn check(&self, row_count: usize) -> Result<(), TableError> {
        match self.indices.iter().find(|&&i| i >= row_count) {
            Some(&index) => Err(TableError::RowOutOfRange { index, row_count }),
            None => Ok(()),
        }
    }
}

/// Parse a table from bytes. For CSV the first record is the header.
pub fn parse_table(input: &[u8], format: TableFormat) -> Result<Table, TableError> {
    match format {
        TableFormat::ColumnMajorJson => parse_json(input),
        TableFormat::Csv => parse_csv(input),
    }
}

fn parse_json(input: &[u8]) -> Result<Table, TableError> {
    let repr: TableRepr = serde_json::from_slice(input).map_err(|e| TableError::Parse {
        line: e.line() as u64,
        column: Some(e.column() as u64),
        message: e.to_string(),
    })?;
    Table::try_from(repr).map_err(|e| {
        // invariant violations carry no position; point at the offending
        // column name when it can be found in the source
        let name = match &e {
            TableError::RaggedColumn { column, .. } | TableError::DuplicateColumn(column) => {
                Some(column.as_str())
            }
            _ => None,
        };
        let (line, column) = name
            .and_then(|n| locate(input, &serde_json::to_string(n).ok()?))
            .map_or((1, None), |(l, c)| (l, Some(c)));
        TableError::Parse {
            line,
            column,
            message: e.to_string(),
        }
    })
}

/// 1-based line/column of the last occurrence of `needle`.
fn locate(input: &[u8], needle: &str) -> Option<(u64, u64)> {
    let text = std::str::from_utf8(input).ok()?;
    let at = text.rfind(needle)?;
    let before = &text[..at];
    let line = before.matches('\n').count() as u64 + 1;
    let column = (at - before.rfind('\n').map_or(0, |p| p + 1)) as u64 + 1;
    Some((line, column))
}

fn parse_csv(input: &[u8]) -> Result<Table, TableError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(input);
    let headers = reader.headers().map_err(csv_error)?.clone();
    let mut columns: Vec<(String, Vec<String>)> = headers
        .iter()
        .map(|h| (h.to_string(), Vec::new()))
        .collect();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        for (col, cell) in columns.iter_mut().zip(record.iter()) {
            col.1.push(cell.to_string());
        }
    }
    Table::new(columns).map_err(|e| TableError::Parse {
        line: 1,
        column: None,
        message: e.to_string(),
    })
}

fn csv_error(err: csv::Error) -> TableError {
    let line = err.position().map_or(0, |p| p.line());
    let message = match err.kind() {
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => format!("row has {len} fields, header has {expected_len}"),
        csv::ErrorKind::Utf8 { err, .. } => {
            return TableError::Parse {
                line,
                column: Some(err.field() as u64 + 1),
                message: format!("invalid UTF-8: {err}"),
            }
        }
        _ => err.to_string(),
    };
    TableError::Parse {
        line,
        column: None,
        message,
    }
}
