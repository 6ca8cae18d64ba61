//! Syntactic profiling of string cells and per-column clustering.
//!
//! Each cell is tokenized into a short sequence of character-class atoms.
//! Cells of one column that produce the same atom sequence form a cluster.
//! Tokenization is greedy: at every position the first atom kind (in the
//! order `TitleWord`, `UpperRun`, `LowerRun`, `DigitRun`, `SpaceRun`) that
//! matches consumes as much as it can, and any other character becomes a
//! `Literal`. Non-ASCII letters are literals.

use std::collections::HashMap;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::table::Table;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Atom {
    TitleWord,
    UpperRun,
    LowerRun,
    DigitRun,
    SpaceRun,
    Literal(char),
}

impl Atom {
    fn regex(self, out: &mut String) {
        match self {
            Atom::TitleWord => out.push_str("[A-Z][a-z]+"),
            Atom::UpperRun => out.push_str("[A-Z]+"),
            Atom::LowerRun => out.push_str("[a-z]+"),
            Atom::DigitRun => out.push_str("[0-9]+"),
            Atom::SpaceRun => out.push_str(r"[\s]+"),
            Atom::Literal(c) => {
                if is_regex_meta(c) {
                    out.push('\\');
                }
                out.push(c);
            }
        }
    }
}

fn is_regex_meta(c: char) -> bool {
    matches!(
        c,
        '\\' | '.'
            | '+'
            | '*'
            | '?'
            | '('
            | ')'
            | '|'
            | '['
            | ']'
            | '{'
            | '}'
            | '^'
            | '$'
            | '#'
            | '&'
            | '-'
            | '~'
    )
}

/// Atom sequence describing the shape of a string. The empty string maps to
/// the empty pattern.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct SyntacticPattern {
    atoms: Vec<Atom>,
}

impl SyntacticPattern {
    pub fn new(atoms: Vec<Atom>) -> Self {
        SyntacticPattern { atoms }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Unanchored regex source, e.g. `[A-Z][a-z]+[\s]+[A-Z][a-z]+`.
    pub fn to_regex(&self) -> String {
        let mut out = String::new();
        for atom in &self.atoms {
            atom.regex(&mut out);
        }
        out
    }
}

impl fmt::Display for SyntacticPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_regex())
    }
}

pub fn profile_string(s: &str) -> SyntacticPattern {
    let chars: Vec<char> = s.chars().collect();
    let mut atoms = Vec::new();
    let mut i = 0;
    let run =
        |from: usize, pred: fn(&char) -> bool| chars[from..].iter().take_while(|c| pred(c)).count();
    while i < chars.len() {
        let c = chars[i];
        let (atom, len) =
            if c.is_ascii_uppercase() && chars.get(i + 1).is_some_and(char::is_ascii_lowercase) {
                (Atom::TitleWord, 1 + run(i + 1, char::is_ascii_lowercase))
            } else if c.is_ascii_uppercase() {
                (Atom::UpperRun, run(i, char::is_ascii_uppercase))
            } else if c.is_ascii_lowercase() {
                (Atom::LowerRun, run(i, char::is_ascii_lowercase))
            } else if c.is_ascii_digit() {
                (Atom::DigitRun, run(i, char::is_ascii_digit))
            } else if c.is_whitespace() {
                (Atom::SpaceRun, run(i, |c| c.is_whitespace()))
            } else {
                (Atom::Literal(c), 1)
            };
        atoms.push(atom);
        i += len;
    }
    SyntacticPattern { atoms }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProfileError {
    #[error("nothing to cluster: table has no rows")]
    EmptyTable,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterInfo {
    pub cluster_id: usize,
    pub pattern: SyntacticPattern,
    /// Ascending row indices.
    pub members: Vec<usize>,
}

impl ClusterInfo {
    pub fn weight(&self) -> usize {
        self.members.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnClusters {
    pub name: String,
    /// Indexed by `cluster_id`: heaviest first, ties by first occurrence.
    pub clusters: Vec<ClusterInfo>,
}

/// One column's cluster membership for a single row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClusterRef {
    pub column: usize,
    pub cluster_id: usize,
    pub weight: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClusterMap {
    columns: Vec<ColumnClusters>,
    /// row -> one entry per column, in column order.
    row_view: Vec<Vec<ClusterRef>>,
}

impl ClusterMap {
    pub fn columns(&self) -> &[ColumnClusters] {
        &self.columns
    }

    pub fn row_count(&self) -> usize {
        self.row_view.len()
    }

    pub fn row_clusters(&self, row: usize) -> &[ClusterRef] {
        &self.row_view[row]
    }

    pub fn cluster_count(&self) -> usize {
        self.columns.iter().map(|c| c.clusters.len()).sum()
    }
}

fn cluster_column(cells: &[String]) -> Vec<ClusterInfo> {
    let mut index: HashMap<SyntacticPattern, usize> = HashMap::new();
    let mut groups: Vec<(SyntacticPattern, Vec<usize>)> = Vec::new();
    for (row, cell) in cells.iter().enumerate() {
        let pattern = profile_string(cell);
        match index.get(&pattern) {
            Some(&g) => groups[g].1.push(row),
            None => {
                index.insert(pattern.clone(), groups.len());
                groups.push((pattern, vec![row]));
            }
        }
    }
    // groups are in first-occurrence order already, so a stable sort on
    // weight gives the tie-break for free.
    groups.sort_by_key(|g| std::cmp::Reverse(g.1.len()));
    groups
        .into_iter()
        .enumerate()
        .map(|(cluster_id, (pattern, members))| ClusterInfo {
            cluster_id,
            pattern,
            members,
        })
        .collect()
}

/// Below this many cells, columns are clustered on the calling thread.
const PARALLEL_THRESHOLD: usize = 4096;

pub fn cluster_table(table: &Table) -> Result<ClusterMap, ProfileError> {
    if table.row_count() == 0 {
        return Err(ProfileError::EmptyTable);
    }
    let cells = table.row_count() * table.column_count();
    let columns: Vec<ColumnClusters> = if cells < PARALLEL_THRESHOLD || table.column_count() == 1 {
        table
            .columns()
            .iter()
            .map(|col| ColumnClusters {
                name: col.name.clone(),
                clusters: cluster_column(&col.cells),
            })
            .collect()
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = table
                .columns()
                .iter()
                .map(|col| scope.spawn(move || cluster_column(&col.cells)))
                .collect();
            table
                .columns()
                .iter()
                .zip(handles)
                .map(|(col, h)| ColumnClusters {
                    name: col.name.clone(),
                    clusters: h.join().expect("clustering thread panicked"),
                })
                .collect()
        })
    };

    let mut row_view = vec![Vec::with_capacity(columns.len()); table.row_count()];
    for (column, col) in columns.iter().enumerate() {
        for cluster in &col.clusters {
            for &row in &cluster.members {
                row_view[row].push(ClusterRef {
                    column,
                    cluster_id: cluster.cluster_id,
                    weight: cluster.weight(),
                });
            }
        }
    }
    Ok(ClusterMap { columns, row_view })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClusterReport {
    pub columns: Vec<ColumnReport>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ColumnReport {
    pub column: String,
    pub clusters: Vec<ClusterEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClusterEntry {
    pub cluster_id: usize,
    pub regex: String,
    pub weight: usize,
    pub example_cell: String,
}

/// Summarize a cluster map. The example cell is the first member of each
/// cluster, so the report needs the table the map was built from.
pub fn cluster_report(map: &ClusterMap, table: &Table) -> ClusterReport {
    let columns = map
        .columns()
        .iter()
        .enumerate()
        .map(|(c, col)| ColumnReport {
            column: col.name.clone(),
            clusters: col
                .clusters
                .iter()
                .map(|cl| ClusterEntry {
                    cluster_id: cl.cluster_id,
                    regex: cl.pattern.to_regex(),
                    weight: cl.weight(),
                    example_cell: table.cell(cl.members[0], c).to_string(),
                })
                .collect(),
        })
        .collect();
    ClusterReport { columns }
}
