//! Task files.
//!
//! ```json
//! {
//!   "id": "username",
//!   "class": "dep",
//!   "query": "create a new column ...",
//!   "input":    {"columns": [["Names", ["John Smith", ...]]]},
//!   "expected": {"columns": [["username", ["jsmith", ...]]]},
//!   "match_options": {"relative_error": 0.01, "case_sensitive": false},
//!   "reference_solution": "df['username'] = ...",
//!   "metadata": {"source": "..."}
//! }
//! ```
//!
//! `expected` holds only the columns the program should add. `match_options`,
//! `reference_solution` and `metadata` are optional.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::table::Table;
use crate::validator::MatchOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskClass {
    /// Solvable from the query alone.
    Ind,
    /// Needs the data to pin down the format.
    Dep,
    /// Needs knowledge absent from the table.
    Ext,
}

impl TaskClass {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskClass::Ind => "ind",
            TaskClass::Dep => "dep",
            TaskClass::Ext => "ext",
        }
    }
}

impl fmt::Display for TaskClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub class: TaskClass,
    pub query: String,
    pub input: Table,
    pub expected: Table,
    #[serde(default)]
    pub match_options: MatchOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_solution: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error("duplicate task id `{id}` in {} and {}", first.display(), second.display())]
    DuplicateId {
        id: String,
        first: PathBuf,
        second: PathBuf,
    },
}

impl Task {
    pub fn check(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("task id is empty".into());
        }
        if self.query.trim().is_empty() {
            return Err("query is empty".into());
        }
        if self.expected.row_count() != self.input.row_count() {
            return Err(format!(
                "expected output has {} rows but the input has {}",
                self.expected.row_count(),
                self.input.row_count()
            ));
        }
        if self.expected.column_count() == 0 {
            return Err("expected output has no columns".into());
        }
        self.match_options.validate().map_err(|e| e.to_string())
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("task serialization")
    }
}

pub fn parse_task(bytes: &[u8], path: &Path) -> Result<Task, DatasetError> {
    let task: Task = serde_json::from_slice(bytes).map_err(|e| DatasetError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    task.check().map_err(|message| DatasetError::Invalid {
        path: path.to_path_buf(),
        message,
    })?;
    Ok(task)
}

pub fn load_task(path: &Path) -> Result<Task, DatasetError> {
    let bytes = std::fs::read(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_task(&bytes, path)
}

/// Every `*.json` file directly inside `dir`, sorted by task id.
pub fn load_suite(dir: &Path) -> Result<Vec<Task>, DatasetError> {
    let io = |source| DatasetError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io)?
        .map(|entry| entry.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(io)?;
    paths.retain(|p| p.is_file() && p.extension().is_some_and(|e| e == "json"));
    paths.sort();

    let mut loaded: BTreeMap<String, (PathBuf, Task)> = BTreeMap::new();
    for path in paths {
        let task = load_task(&path)?;
        if let Some((first, _)) = loaded.get(&task.id) {
            return Err(DatasetError::DuplicateId {
                id: task.id,
                first: first.clone(),
                second: path,
            });
        }
        loaded.insert(task.id.clone(), (path, task));
    }
    Ok(loaded.into_values().map(|(_, t)| t).collect())
}
