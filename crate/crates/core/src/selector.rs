//! Row selection strategies for prompting.
//!
//! The representative strategy treats every `(column, cluster)` pair as an
//! element weighted by its cluster size and greedily picks rows with the
//! largest uncovered weight (weighted maximum coverage). Ties go to the lowest
//! row index. Once every cluster is covered the coverage set is cleared and
//! the greedy loop continues over the remaining rows.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::profiler::ClusterMap;
use crate::table::{RowSelection, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// No rows in the prompt.
    None,
    /// The first `n` rows.
    First,
    /// `n` rows drawn uniformly without replacement.
    Random,
    /// Greedy cluster coverage.
    Representative,
    /// Every row, in order.
    All,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::None => "none",
            Strategy::First => "first",
            Strategy::Random => "random",
            Strategy::Representative => "representative",
            Strategy::All => "all",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = SelectError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "none" => Strategy::None,
            "first" => Strategy::First,
            "random" => Strategy::Random,
            "representative" => Strategy::Representative,
            "all" => Strategy::All,
            other => return Err(SelectError::UnknownStrategy(other.to_string())),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub strategy: Strategy,
    pub row_budget: usize,
    pub rng_seed: Option<u64>,
}

impl SelectionConfig {
    pub fn none() -> Self {
        SelectionConfig {
            strategy: Strategy::None,
            row_budget: 0,
            rng_seed: None,
        }
    }

    pub fn new(strategy: Strategy, row_budget: usize) -> Self {
        SelectionConfig {
            strategy,
            row_budget,
            rng_seed: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = Some(seed);
        self
    }

    /// Check the config against a table of `row_count` rows.
    pub fn validate(&self, row_count: usize) -> Result<(), SelectError> {
        match self.strategy {
            Strategy::None | Strategy::All => {}
            Strategy::Representative if self.row_budget == 0 => {
                return Err(SelectError::BudgetOutOfRange { n: 0, row_count })
            }
            _ if self.row_budget > row_count => {
                return Err(SelectError::BudgetOutOfRange {
                    n: self.row_budget,
                    row_count,
                })
            }
            _ => {}
        }
        match (self.strategy, self.rng_seed) {
            (Strategy::Random, None) => Err(SelectError::MissingSeed),
            (Strategy::Random, Some(_)) | (_, None) => Ok(()),
            (_, Some(_)) => Err(SelectError::UnexpectedSeed(self.strategy)),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SelectError {
    #[error("row budget {n} out of range for table with {row_count} rows")]
    BudgetOutOfRange { n: usize, row_count: usize },
    #[error("cannot select from an empty table")]
    EmptyTable,
    #[error("random strategy requires a seed")]
    MissingSeed,
    #[error("a seed is only meaningful for the random strategy, not `{0}`")]
    UnexpectedSeed(Strategy),
    #[error("representative selection requires a cluster map")]
    MissingClusterMap,
    #[error("cluster map covers {map} rows but the table has {table}")]
    MapMismatch { map: usize, table: usize },
    #[error("unknown strategy `{0}`")]
    UnknownStrategy(String),
}

/// Uncovered weight of `row` given the coverage set.
fn marginal_gain(map: &ClusterMap, row: usize, covered: &HashSet<(usize, usize)>) -> usize {
    map.row_clusters(row)
        .iter()
        .filter(|c| !covered.contains(&(c.column, c.cluster_id)))
        .map(|c| c.weight)
        .sum()
}

pub fn select_representative(
    table: &Table,
    map: &ClusterMap,
    n: usize,
) -> Result<RowSelection, SelectError> {
    let rows = table.row_count();
    if rows == 0 {
        return Err(SelectError::EmptyTable);
    }
    if map.row_count() != rows {
        return Err(SelectError::MapMismatch {
            map: map.row_count(),
            table: rows,
        });
    }
    if n == 0 || n > rows {
        return Err(SelectError::BudgetOutOfRange { n, row_count: rows });
    }

    let total_clusters = map.cluster_count();
    let mut selected = vec![false; rows];
    let mut order = Vec::with_capacity(n);
    let mut covered: HashSet<(usize, usize)> = HashSet::new();
    while order.len() < n {
        let mut best: Option<(usize, usize)> = None;
        for row in (0..rows).filter(|&r| !selected[r]) {
            let gain = marginal_gain(map, row, &covered);
            // strict comparison keeps the lowest index on ties
            if best.is_none_or(|(_, g)| gain > g) {
                best = Some((row, gain));
            }
        }
        let (row, _) = best.expect("fewer than n rows selected implies a candidate");
        selected[row] = true;
        order.push(row);
        covered.extend(
            map.row_clusters(row)
                .iter()
                .map(|c| (c.column, c.cluster_id)),
        );
        if covered.len() == total_clusters {
            covered.clear();
        }
    }
    Ok(RowSelection::new(order).expect("greedy never repeats a row"))
}

pub fn select(
    table: &Table,
    map: Option<&ClusterMap>,
    config: &SelectionConfig,
) -> Result<RowSelection, SelectError> {
    let rows = table.row_count();
    config.validate(rows)?;
    let n = config.row_budget;
    let indices = match config.strategy {
        Strategy::None => Vec::new(),
        Strategy::All => (0..rows).collect(),
        Strategy::First => (0..n).collect(),
        Strategy::Random => {
            let seed = config.rng_seed.ok_or(SelectError::MissingSeed)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rand::seq::index::sample(&mut rng, rows, n).into_vec()
        }
        Strategy::Representative => {
            let map = map.ok_or(SelectError::MissingClusterMap)?;
            return select_representative(table, map, n);
        }
    };
    Ok(RowSelection::new(indices).expect("strategies yield distinct indices"))
}
