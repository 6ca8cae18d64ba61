//! Prompt rendering.
//!
//! The prompt is a short pandas script that rebuilds the selected rows as a
//! dataframe and ends with the query as a line comment, e.g.
//!
//! ```text
//! import pandas as pd
//! df = pd.DataFrame()
//! df['Start'] = ['2/22/2015 1:06:20 PM']
//! df['End'] = ['2/23/2015 3:08:20 PM']
//! #Create a new column with ...
//! ```

use serde::Serialize;
use thiserror::Error;

use crate::table::Table;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("query must not be empty")]
    EmptyQuery,
    #[error("query must be a single line")]
    MultilineQuery,
    #[error("column name {0:?} cannot be rendered as a string literal")]
    UnrepresentableColumn(String),
    #[error("cell {row} of column `{column}` contains a line break")]
    MultilineCell { column: String, row: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Prompt {
    pub text: String,
    pub row_count_included: usize,
    pub char_count: usize,
}

/// Single-quoted literal with `\` and `'` backslash-escaped.
fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('\'');
    for c in s.chars() {
        if c == '\\' || c == '\'' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('\'');
    out
}

fn has_line_break(s: &str) -> bool {
    s.contains(['\n', '\r'])
}

/// `df = pd.DataFrame()` followed by one assignment per column. Shared by the
/// prompt and by the programs sent for execution.
pub fn dataframe_definition(rows: &Table) -> Result<String, PromptError> {
    let mut lines = vec!["df = pd.DataFrame()".to_string()];
    if rows.row_count() > 0 {
        for col in rows.columns() {
            if col.name.contains('\'') || has_line_break(&col.name) {
                return Err(PromptError::UnrepresentableColumn(col.name.clone()));
            }
            if let Some(row) = col.cells.iter().position(|c| has_line_break(c)) {
                return Err(PromptError::MultilineCell {
                    column: col.name.clone(),
                    row,
                });
            }
            let cells: Vec<String> = col.cells.iter().map(|c| quote(c)).collect();
            lines.push(format!("df[{}] = [{}]", quote(&col.name), cells.join(", ")));
        }
    }
    Ok(lines.join("\n"))
}

pub fn build_prompt(query: &str, rows: &Table) -> Result<Prompt, PromptError> {
    if query.trim().is_empty() {
        return Err(PromptError::EmptyQuery);
    }
    if has_line_break(query) {
        return Err(PromptError::MultilineQuery);
    }
    let text = format!(
        "import pandas as pd\n{}\n#{query}",
        dataframe_definition(rows)?
    );
    Ok(Prompt {
        char_count: text.chars().count(),
        row_count_included: rows.row_count(),
        text,
    })
}
