//! Reference implementations used as test oracles. Written for clarity, not
//! speed, and independently of the library code they check.

#![allow(dead_code)]

use std::collections::BTreeSet;

use num::{BigInt, BigRational, One, ToPrimitive, Zero};
use rand::Rng;
use tabprompt::table::Table;
use tabprompt::validator::{cells_match, MatchOptions};

/// One cell spelling per cluster label; each has a distinct syntactic shape.
pub const LABEL_CELLS: [&str; 4] = ["Ab", "CD", "ef", "12"];

/// `labels[c][r]` is the cluster label of row `r` in column `c`.
pub type Labels = Vec<Vec<usize>>;

pub fn label_table(labels: &Labels) -> Table {
    Table::new(labels.iter().enumerate().map(|(c, col)| {
        (
            format!("c{c}"),
            col.iter().map(|&l| LABEL_CELLS[l]).collect::<Vec<_>>(),
        )
    }))
    .unwrap()
}

fn weight_of(labels: &Labels, col: usize, label: usize) -> usize {
    labels[col].iter().filter(|&&l| l == label).count()
}

fn all_pairs(labels: &Labels) -> BTreeSet<(usize, usize)> {
    labels
        .iter()
        .enumerate()
        .flat_map(|(c, col)| col.iter().map(move |&l| (c, l)))
        .collect()
}

/// Weight of the distinct (column, label) pairs touched by `rows`.
pub fn covered_weight(labels: &Labels, rows: &[usize]) -> usize {
    let pairs: BTreeSet<(usize, usize)> = rows
        .iter()
        .flat_map(|&r| labels.iter().enumerate().map(move |(c, col)| (c, col[r])))
        .collect();
    pairs.iter().map(|&(c, l)| weight_of(labels, c, l)).sum()
}

/// Step replay of greedy coverage: every step recomputes every row's gain
/// from scratch and takes the first row with the largest gain. Coverage
/// starts over once every pair is covered.
pub fn greedy_oracle(labels: &Labels, n: usize) -> Vec<usize> {
    let rows = labels[0].len();
    let everything = all_pairs(labels);
    let mut covered: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut chosen: Vec<usize> = Vec::new();
    while chosen.len() < n {
        let gains: Vec<(usize, usize)> = (0..rows)
            .filter(|r| !chosen.contains(r))
            .map(|r| {
                let gain = (0..labels.len())
                    .filter(|&c| !covered.contains(&(c, labels[c][r])))
                    .map(|c| weight_of(labels, c, labels[c][r]))
                    .sum();
                (r, gain)
            })
            .collect();
        let best_gain = gains.iter().map(|&(_, g)| g).max().unwrap();
        let pick = gains.iter().find(|&&(_, g)| g == best_gain).unwrap().0;
        chosen.push(pick);
        for (c, col) in labels.iter().enumerate() {
            covered.insert((c, col[pick]));
        }
        if covered == everything {
            covered.clear();
        }
    }
    chosen
}

/// Best covered weight over all row subsets, indexed by subset size.
pub fn brute_force_optima(labels: &Labels) -> Vec<usize> {
    let rows = labels[0].len();
    let mut best = vec![0; rows + 1];
    for mask in 0u32..1 << rows {
        let subset: Vec<usize> = (0..rows).filter(|r| mask & (1 << r) != 0).collect();
        let size = subset.len();
        best[size] = best[size].max(covered_weight(labels, &subset));
    }
    best
}

/// Label sequences of length `len` up to renaming, using at most `max_labels`
/// labels (restricted growth strings).
pub fn partitions(len: usize, max_labels: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    fn extend(prefix: &mut Vec<usize>, len: usize, max_labels: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == len {
            out.push(prefix.clone());
            return;
        }
        let next_new = prefix.iter().max().map_or(0, |&m| m + 1);
        for l in 0..=next_new.min(max_labels - 1) {
            prefix.push(l);
            extend(prefix, len, max_labels, out);
            prefix.pop();
        }
    }
    extend(&mut Vec::new(), len, max_labels, &mut out);
    out
}

/// All injective assignments of expected columns to actual columns under
/// which every cell matches.
pub fn valid_mappings(expected: &Table, actual: &Table, opts: &MatchOptions) -> Vec<Vec<usize>> {
    let e = expected.column_count();
    let a = actual.column_count();
    let full = |ec: usize, ac: usize| {
        (0..expected.row_count())
            .all(|r| cells_match(expected.cell(r, ec), actual.cell(r, ac), opts))
    };
    let mut found = Vec::new();
    fn walk(
        i: usize,
        e: usize,
        a: usize,
        current: &mut Vec<usize>,
        full: &dyn Fn(usize, usize) -> bool,
        found: &mut Vec<Vec<usize>>,
    ) {
        if i == e {
            found.push(current.clone());
            return;
        }
        for ac in 0..a {
            if !current.contains(&ac) && full(i, ac) {
                current.push(ac);
                walk(i + 1, e, a, current, full, found);
                current.pop();
            }
        }
    }
    walk(0, e, a, &mut Vec::new(), &full, &mut found);
    found
}

fn binomial(n: usize, k: usize) -> BigInt {
    if k > n {
        return BigInt::zero();
    }
    let mut acc = BigInt::one();
    for i in 0..k {
        acc = acc * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    acc
}

/// `1 - C(m-s, k) / C(m, k)` in exact arithmetic.
pub fn exact_pass_at_k(m: usize, s: usize, k: usize) -> f64 {
    let ratio = BigRational::new(binomial(m - s, k), binomial(m, k));
    (BigRational::one() - ratio).to_f64().unwrap()
}

/// Fraction of `draws` size-`k` samples without replacement from `m` items,
/// the first `s` correct, that contain a correct item.
pub fn monte_carlo_pass_at_k(
    m: usize,
    s: usize,
    k: usize,
    draws: usize,
    rng: &mut impl Rng,
) -> f64 {
    let hits = (0..draws)
        .filter(|_| rand::seq::index::sample(rng, m, k).iter().any(|i| i < s))
        .count();
    hits as f64 / draws as f64
}
