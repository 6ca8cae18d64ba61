//! Validity checks and fuzzy output matching.
//!
//! A cell matches when any of these holds:
//!
//! * the strings are equal, or equal ignoring case (unless case-sensitive);
//! * both parse as decimal numbers and `|actual - expected|` is strictly less
//!   than `relative_error * max(|expected|, 1e-9)`, computed exactly;
//! * the expected cell is a truth string and the actual cell is the number 0
//!   or 1, or a truth string, with the same truth value.
//!
//! Output tables match when every expected column can be mapped to a distinct
//! actual column whose cells all match row by row. Extra actual columns,
//! column order and headers are ignored.

use std::cmp::Reverse;

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, Signed, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{ExecOutput, ExecStatus};
use crate::table::Table;

pub const DEFAULT_RELATIVE_ERROR: f64 = 0.01;
/// Absolute floor on the tolerance scale, so an expected 0 still compares.
pub const ABSOLUTE_FLOOR: f64 = 1e-9;
/// Exponents beyond this magnitude are not treated as numbers.
const MAX_EXPONENT: i64 = 1000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthStrings {
    #[serde(rename = "true")]
    pub true_values: Vec<String>,
    #[serde(rename = "false")]
    pub false_values: Vec<String>,
}

impl Default for TruthStrings {
    fn default() -> Self {
        let owned = |v: &[&str]| v.iter().map(|s| s.to_string()).collect();
        TruthStrings {
            true_values: owned(&["true", "yes", "t", "y", "1"]),
            false_values: owned(&["false", "no", "f", "n", "0"]),
        }
    }
}

impl TruthStrings {
    fn truth_value(&self, s: &str) -> Option<bool> {
        let s = s.trim();
        if self.true_values.iter().any(|t| t.eq_ignore_ascii_case(s)) {
            Some(true)
        } else if self.false_values.iter().any(|t| t.eq_ignore_ascii_case(s)) {
            Some(false)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchOptions {
    pub relative_error: f64,
    pub case_sensitive: bool,
    pub truth_strings: TruthStrings,
}

impl Default for MatchOptions {
    fn default() -> Self {
        MatchOptions {
            relative_error: DEFAULT_RELATIVE_ERROR,
            case_sensitive: false,
            truth_strings: TruthStrings::default(),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MatchError {
    #[error("expected {expected} rows but the output has {actual}")]
    RowCountMismatch { expected: usize, actual: usize },
    #[error("relative_error must be positive")]
    NonPositiveTolerance,
}

impl MatchOptions {
    pub fn validate(&self) -> Result<(), MatchError> {
        if self.relative_error > 0.0 && self.relative_error.is_finite() {
            Ok(())
        } else {
            Err(MatchError::NonPositiveTolerance)
        }
    }
}

/// A valid output ran cleanly and kept the input's row count.
pub fn is_valid(output: &ExecOutput, input: &Table) -> bool {
    output.status == ExecStatus::Ok
        && output
            .value
            .as_ref()
            .is_some_and(|v| v.row_count() == input.row_count() && v.column_count() >= 1)
}

/// Exact value of a decimal literal: optional sign, digits with an optional
/// fraction, optional exponent. Surrounding whitespace is allowed; thousands
/// separators, `inf` and `nan` are not.
pub fn parse_decimal(s: &str) -> Option<BigRational> {
    let s = s.trim();
    let (negative, body) = match s.as_bytes().first()? {
        b'-' => (true, &s[1..]),
        b'+' => (false, &s[1..]),
        _ => (false, s),
    };
    let (mantissa, exponent) = match body.find(['e', 'E']) {
        Some(i) => (&body[..i], Some(&body[i + 1..])),
        None => (body, None),
    };
    let (int_part, frac_part) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part
        .bytes()
        .chain(frac_part.bytes())
        .all(|b| b.is_ascii_digit())
    {
        return None;
    }
    let mut exp: i64 = match exponent {
        None => 0,
        Some(e) => {
            let digits = e.strip_prefix(['+', '-']).unwrap_or(e);
            if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
                return None;
            }
            let magnitude: i64 = digits.parse().ok().filter(|&m| m <= MAX_EXPONENT)?;
            if e.starts_with('-') {
                -magnitude
            } else {
                magnitude
            }
        }
    };
    exp -= frac_part.len() as i64;
    let digits = format!("{int_part}{frac_part}");
    let mut value = BigRational::from_integer(digits.parse::<BigInt>().ok()?);
    let scale = BigRational::from_integer(num::pow(BigInt::from(10), exp.unsigned_abs() as usize));
    if exp >= 0 {
        value *= scale;
    } else {
        value /= scale;
    }
    Some(if negative { -value } else { value })
}

/// The tolerance as the decimal it is written as (0.01 is exactly 1/100).
fn tolerance(relative_error: f64) -> BigRational {
    parse_decimal(&relative_error.to_string())
        .or_else(|| BigRational::from_float(relative_error))
        .unwrap_or_else(BigRational::zero)
}

fn numbers_match(expected: &BigRational, actual: &BigRational, relative_error: f64) -> bool {
    let floor = parse_decimal("1e-9").expect("literal");
    let scale = expected.abs().max(floor);
    (actual - expected).abs() < tolerance(relative_error) * scale
}

fn as_truth(actual: &str, opts: &MatchOptions) -> Option<bool> {
    if let Some(n) = parse_decimal(actual) {
        if n.is_zero() {
            return Some(false);
        }
        if n.is_one() {
            return Some(true);
        }
    }
    opts.truth_strings.truth_value(actual)
}

pub fn cells_match(expected: &str, actual: &str, opts: &MatchOptions) -> bool {
    if expected == actual {
        return true;
    }
    if !opts.case_sensitive && expected.to_lowercase() == actual.to_lowercase() {
        return true;
    }
    if let (Some(e), Some(a)) = (parse_decimal(expected), parse_decimal(actual)) {
        if numbers_match(&e, &a, opts.relative_error) {
            return true;
        }
    }
    if let Some(e) = opts.truth_strings.truth_value(expected) {
        if as_truth(actual, opts) == Some(e) {
            return true;
        }
    }
    false
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Mismatch {
    pub column: String,
    pub row: usize,
    pub expected_cell: String,
    pub actual_cell: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MatchResult {
    pub matched: bool,
    /// `(expected column, actual column)` in expected column order.
    pub column_mapping: Option<Vec<(String, String)>>,
    pub first_mismatch: Option<Mismatch>,
}

/// Per expected/actual column pair: number of matching cells and the first
/// mismatching row.
struct PairScore {
    matching: usize,
    first_bad: Option<usize>,
}

fn assign(
    order: &[usize],
    candidates: &[Vec<usize>],
    used: &mut [bool],
    mapping: &mut [Option<usize>],
) -> bool {
    let Some((&e, rest)) = order.split_first() else {
        return true;
    };
    for &a in &candidates[e] {
        if used[a] {
            continue;
        }
        used[a] = true;
        mapping[e] = Some(a);
        if assign(rest, candidates, used, mapping) {
            return true;
        }
        used[a] = false;
        mapping[e] = None;
    }
    false
}

pub fn outputs_match(
    expected: &Table,
    actual: &Table,
    opts: &MatchOptions,
) -> Result<MatchResult, MatchError> {
    opts.validate()?;
    if expected.row_count() != actual.row_count() {
        return Err(MatchError::RowCountMismatch {
            expected: expected.row_count(),
            actual: actual.row_count(),
        });
    }
    let scores: Vec<Vec<PairScore>> = expected
        .columns()
        .iter()
        .map(|ec| {
            actual
                .columns()
                .iter()
                .map(|ac| {
                    let mut matching = 0;
                    let mut first_bad = None;
                    for (row, (e, a)) in ec.cells.iter().zip(&ac.cells).enumerate() {
                        if cells_match(e, a, opts) {
                            matching += 1;
                        } else if first_bad.is_none() {
                            first_bad = Some(row);
                        }
                    }
                    PairScore {
                        matching,
                        first_bad,
                    }
                })
                .collect()
        })
        .collect();

    // full matches only; same header first, then by position
    let candidates: Vec<Vec<usize>> = expected
        .columns()
        .iter()
        .zip(&scores)
        .map(|(ec, row)| {
            let mut c: Vec<usize> = (0..row.len())
                .filter(|&a| row[a].first_bad.is_none())
                .collect();
            c.sort_by_key(|&a| (actual.columns()[a].name != ec.name, a));
            c
        })
        .collect();

    // most constrained expected columns first
    let mut order: Vec<usize> = (0..expected.column_count()).collect();
    order.sort_by_key(|&e| (candidates[e].len(), e));

    let mut used = vec![false; actual.column_count()];
    let mut mapping = vec![None; expected.column_count()];
    if assign(&order, &candidates, &mut used, &mut mapping) {
        let pairs = mapping
            .iter()
            .enumerate()
            .map(|(e, a)| {
                (
                    expected.columns()[e].name.clone(),
                    actual.columns()[a.expect("complete mapping")].name.clone(),
                )
            })
            .collect();
        return Ok(MatchResult {
            matched: true,
            column_mapping: Some(pairs),
            first_mismatch: None,
        });
    }

    let first_mismatch = (0..expected.column_count())
        .find(|&e| candidates[e].is_empty())
        .and_then(|e| {
            let best =
                (0..actual.column_count()).min_by_key(|&a| (Reverse(scores[e][a].matching), a))?;
            let row = scores[e][best].first_bad?;
            Some(Mismatch {
                column: expected.columns()[e].name.clone(),
                row,
                expected_cell: expected.cell(row, e).to_string(),
                actual_cell: actual.cell(row, best).to_string(),
            })
        });
    Ok(MatchResult {
        matched: false,
        column_mapping: None,
        first_mismatch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> MatchOptions {
        MatchOptions::default()
    }

    #[test]
    fn decimal_parsing() {
        let r = |n: i64, d: i64| BigRational::new(n.into(), d.into());
        assert_eq!(parse_decimal("5.05"), Some(r(505, 100)));
        assert_eq!(parse_decimal(" -1e2 "), Some(r(-100, 1)));
        assert_eq!(parse_decimal("+.5"), Some(r(1, 2)));
        assert_eq!(parse_decimal("3."), Some(r(3, 1)));
        assert_eq!(parse_decimal("2.5E-1"), Some(r(1, 4)));
        for bad in [
            "", ".", "1,000", "inf", "nan", "1e", "e5", "--1", "1e99999", "0x10", "1 2",
        ] {
            assert_eq!(parse_decimal(bad), None, "{bad}");
        }
    }

    #[test]
    fn numeric_tolerance() {
        assert!(cells_match("5", "5.002", &opts()));
        assert!(cells_match("5", "5.049", &opts()));
        assert!(!cells_match("5", "5.05", &opts()));
        assert!(!cells_match("5", "4.95", &opts()));
        assert!(cells_match("0", "0.0", &opts()));
        assert!(!cells_match("0", "0.001", &opts()));
        assert!(cells_match("100", " 1.005e2", &opts()));
        let loose = MatchOptions {
            relative_error: 0.1,
            ..opts()
        };
        assert!(cells_match("5", "5.4", &loose));
    }

    #[test]
    fn booleans() {
        assert!(cells_match("TRUE", "1", &opts()));
        assert!(cells_match("False", "0", &opts()));
        assert!(cells_match("false", "0.0", &opts()));
        assert!(!cells_match("TRUE", "0", &opts()));
        assert!(cells_match("yes", "True", &opts()));
        assert!(cells_match("no", "F", &opts()));
        assert!(!cells_match("yes", "2", &opts()));
        assert!(!cells_match("maybe", "1", &opts()));
        let custom = MatchOptions {
            truth_strings: TruthStrings {
                true_values: vec!["on".into()],
                false_values: vec!["off".into()],
            },
            ..opts()
        };
        assert!(cells_match("on", "1", &custom));
        assert!(!cells_match("on", "yes", &custom));
    }

    #[test]
    fn case_rules() {
        assert!(cells_match("Smith", "smith", &opts()));
        let strict = MatchOptions {
            case_sensitive: true,
            ..opts()
        };
        assert!(!cells_match("Smith", "smith", &strict));
        assert!(cells_match("Smith", "Smith", &strict));
    }

    #[test]
    fn validity() {
        let input = Table::new([("a", ["1", "2"])]).unwrap();
        let good = ExecOutput::ok(Table::new([("b", ["x", "y"])]).unwrap(), 0);
        assert!(is_valid(&good, &input));
        let long = ExecOutput::ok(Table::new([("b", ["x", "y", "z"])]).unwrap(), 0);
        assert!(!is_valid(&long, &input));
        let err = ExecOutput::failure(ExecStatus::RuntimeError, "boom", 0);
        assert!(!is_valid(&err, &input));
        let no_cols = ExecOutput::ok(Table::empty(), 0);
        assert!(!is_valid(&no_cols, &Table::empty()));
    }

    #[test]
    fn extra_columns_and_headers() {
        let expected = Table::new([("out", ["jsmith"])]).unwrap();
        let actual = Table::new([("Names", ["John Smith"]), ("username", ["jsmith"])]).unwrap();
        let r = outputs_match(&expected, &actual, &opts()).unwrap();
        assert!(r.matched);
        assert_eq!(
            r.column_mapping.unwrap(),
            vec![("out".into(), "username".into())]
        );
    }

    #[test]
    fn identical_tables_map_identically() {
        let t = Table::new([("a", ["1", "1"]), ("b", ["1", "1"])]).unwrap();
        let r = outputs_match(&t, &t, &opts()).unwrap();
        assert_eq!(
            r.column_mapping.unwrap(),
            vec![("a".into(), "a".into()), ("b".into(), "b".into())]
        );
    }

    #[test]
    fn column_order_ignored() {
        let expected = Table::new([("x", ["1"]), ("y", ["a"])]).unwrap();
        let actual = Table::new([("q", ["a"]), ("r", ["1.0"])]).unwrap();
        assert!(outputs_match(&expected, &actual, &opts()).unwrap().matched);
    }

    #[test]
    fn injectivity_required() {
        let expected = Table::new([("x", ["1"]), ("y", ["1"])]).unwrap();
        let actual = Table::new([("only", ["1"]), ("other", ["2"])]).unwrap();
        let r = outputs_match(&expected, &actual, &opts()).unwrap();
        assert!(!r.matched);
        assert!(r.column_mapping.is_none());
    }

    #[test]
    fn greedy_would_fail_backtracking_succeeds() {
        // x fits both a and b, y only a: x must take b
        let expected = Table::new([("x", ["1", "1"]), ("y", ["1", "2"])]).unwrap();
        let actual = Table::new([("a", ["1", "2"]), ("b", ["1", "1"])]).unwrap();
        let r = outputs_match(&expected, &actual, &opts()).unwrap();
        assert!(r.matched);
        assert_eq!(
            r.column_mapping.unwrap(),
            vec![("x".into(), "b".into()), ("y".into(), "a".into())]
        );
    }

    #[test]
    fn reports_first_mismatch() {
        let expected = Table::new([("out", ["a", "b", "c"])]).unwrap();
        let actual = Table::new([("n", ["1", "2", "3"]), ("m", ["a", "b", "x"])]).unwrap();
        let r = outputs_match(&expected, &actual, &opts()).unwrap();
        assert_eq!(
            r.first_mismatch.unwrap(),
            Mismatch {
                column: "out".into(),
                row: 2,
                expected_cell: "c".into(),
                actual_cell: "x".into()
            }
        );
    }

    #[test]
    fn row_count_mismatch_is_error() {
        let expected = Table::new([("out", ["a"])]).unwrap();
        let actual = Table::new([("out", ["a", "b"])]).unwrap();
        assert_eq!(
            outputs_match(&expected, &actual, &opts()),
            Err(MatchError::RowCountMismatch {
                expected: 1,
                actual: 2
            })
        );
    }

    #[test]
    fn options_deserialize_with_defaults() {
        let o: MatchOptions = serde_json::from_str(r#"{"case_sensitive": true}"#).unwrap();
        assert!(o.case_sensitive);
        assert_eq!(o.relative_error, 0.01);
        assert_eq!(o.truth_strings, TruthStrings::default());
        let bad = MatchOptions {
            relative_error: 0.0,
            ..opts()
        };
        assert_eq!(bad.validate(), Err(MatchError::NonPositiveTolerance));
    }
}
