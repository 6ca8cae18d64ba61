//! Python bindings: tables, profiling, row selection, prompts, completion
//! post-processing, output matching, pass@k and suite evaluation.

use std::fmt::Display;
use std::path::Path;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use tabprompt::dataset::load_suite;
use tabprompt::evaluator::{self, EvalSettings};
use tabprompt::postprocess;
use tabprompt::profiler;
use tabprompt::promptgen;
use tabprompt::replay::{MockBackend, MockSource};
use tabprompt::selector::{self, SelectionConfig, Strategy};
use tabprompt::table::{self, TableFormat};
use tabprompt::validator::{self, MatchOptions};

fn value_error(e: impl Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A column-major table of string cells.
#[pyclass(name = "Table", module = "tabprompt")]
pub struct PyTable {
    inner: table::Table,
}

#[pymethods]
impl PyTable {
    #[new]
    fn new(columns: Vec<(String, Vec<String>)>) -> PyResult<Self> {
        table::Table::new(columns)
            .map(|inner| PyTable { inner })
            .map_err(value_error)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        parse(text, TableFormat::ColumnMajorJson)
    }

    #[staticmethod]
    fn from_csv(text: &str) -> PyResult<Self> {
        parse(text, TableFormat::Csv)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv()
    }

    #[getter]
    fn row_count(&self) -> usize {
        self.inner.row_count()
    }

    #[getter]
    fn column_names(&self) -> Vec<String> {
        self.inner.column_names().map(str::to_string).collect()
    }

    #[getter]
    fn columns(&self) -> Vec<(String, Vec<String>)> {
        self.inner
            .columns()
            .iter()
            .map(|c| (c.name.clone(), c.cells.clone()))
            .collect()
    }

    fn rows(&self, indices: Vec<usize>) -> PyResult<Self> {
        let selection = table::RowSelection::new(indices).map_err(value_error)?;
        self.inner
            .project_rows(&selection)
            .map(|inner| PyTable { inner })
            .map_err(value_error)
    }

    fn __len__(&self) -> usize {
        self.inner.row_count()
    }

    fn __eq__(&self, other: PyRef<'_, PyTable>) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!(
            "Table(rows={}, columns={:?})",
            self.inner.row_count(),
            self.column_names()
        )
    }
}

fn parse(text: &str, format: TableFormat) -> PyResult<PyTable> {
    table::parse_table(text.as_bytes(), format)
        .map(|inner| PyTable { inner })
        .map_err(value_error)
}

/// Regex of the syntactic pattern of one cell.
#[pyfunction]
fn profile_string(cell: &str) -> String {
    profiler::profile_string(cell).to_regex()
}

/// `(cluster_id, regex, weight, members)`
type ClusterTuple = (usize, String, usize, Vec<usize>);

/// Per column, its name and clusters.
#[pyfunction]
fn cluster(table: PyRef<'_, PyTable>) -> PyResult<Vec<(String, Vec<ClusterTuple>)>> {
    let map = profiler::cluster_table(&table.inner).map_err(value_error)?;
    Ok(map
        .columns()
        .iter()
        .map(|col| {
            let clusters = col
                .clusters
                .iter()
                .map(|c| {
                    (
                        c.cluster_id,
                        c.pattern.to_regex(),
                        c.weight(),
                        c.members.clone(),
                    )
                })
                .collect();
            (col.name.clone(), clusters)
        })
        .collect())
}

fn selection_config(
    strategy: &str,
    n: Option<usize>,
    seed: Option<u64>,
) -> PyResult<SelectionConfig> {
    let strategy: Strategy = strategy.parse().map_err(value_error)?;
    let mut config = SelectionConfig::new(strategy, n.unwrap_or(0));
    if let Some(seed) = seed {
        config = config.with_seed(seed);
    }
    Ok(config)
}

/// Row indices chosen by `strategy` (none, first, random, representative, all).
#[pyfunction]
#[pyo3(signature = (table, strategy, n=None, seed=None))]
fn select(
    table: PyRef<'_, PyTable>,
    strategy: &str,
    n: Option<usize>,
    seed: Option<u64>,
) -> PyResult<Vec<usize>> {
    let config = selection_config(strategy, n, seed)?;
    let map = match config.strategy {
        Strategy::Representative => {
            Some(profiler::cluster_table(&table.inner).map_err(value_error)?)
        }
        _ => None,
    };
    selector::select(&table.inner, map.as_ref(), &config)
        .map(|s| s.indices().to_vec())
        .map_err(value_error)
}

/// Prompt text for `query` over the given rows.
#[pyfunction]
fn build_prompt(query: &str, rows: PyRef<'_, PyTable>) -> PyResult<String> {
    promptgen::build_prompt(query, &rows.inner)
        .map(|p| p.text)
        .map_err(value_error)
}

/// `df = pd.DataFrame()` plus one assignment per column.
#[pyfunction]
fn dataframe_definition(rows: PyRef<'_, PyTable>) -> PyResult<String> {
    promptgen::dataframe_definition(&rows.inner).map_err(value_error)
}

#[pyfunction]
fn cleanup(raw: &str) -> String {
    postprocess::cleanup(raw)
}

/// Cleans and rewrites a completion. Returns `(cleaned, program, form, output_var)`;
/// `program` is None when no rewrite applies.
#[pyfunction]
fn process(raw: &str, input_preamble: &str) -> (String, Option<String>, String, String) {
    let c = postprocess::process(raw, input_preamble);
    (
        c.cleaned,
        c.program,
        c.rewrite_form.as_str().to_string(),
        c.output_var,
    )
}

fn match_options(relative_error: f64, case_sensitive: bool) -> MatchOptions {
    MatchOptions {
        relative_error,
        case_sensitive,
        ..MatchOptions::default()
    }
}

#[pyfunction]
#[pyo3(signature = (expected, actual, relative_error=validator::DEFAULT_RELATIVE_ERROR, case_sensitive=false))]
fn cells_match(expected: &str, actual: &str, relative_error: f64, case_sensitive: bool) -> bool {
    validator::cells_match(
        expected,
        actual,
        &match_options(relative_error, case_sensitive),
    )
}

/// True when some injective column mapping makes every expected cell match.
#[pyfunction]
#[pyo3(signature = (expected, actual, relative_error=validator::DEFAULT_RELATIVE_ERROR, case_sensitive=false))]
fn outputs_match(
    expected: PyRef<'_, PyTable>,
    actual: PyRef<'_, PyTable>,
    relative_error: f64,
    case_sensitive: bool,
) -> PyResult<bool> {
    validator::outputs_match(
        &expected.inner,
        &actual.inner,
        &match_options(relative_error, case_sensitive),
    )
    .map(|r| r.matched)
    .map_err(value_error)
}

#[pyfunction]
fn pass_at_k(m: usize, s: usize, k: usize) -> PyResult<f64> {
    evaluator::pass_at_k(m, s, k).map_err(value_error)
}

/// Runs a task suite against a replay file and returns the report as JSON.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (suite_dir, replay_path, strategy, k_values, n=None, seed=None, m_factor=20))]
fn evaluate_replay(
    py: Python<'_>,
    suite_dir: &str,
    replay_path: &str,
    strategy: &str,
    k_values: Vec<usize>,
    n: Option<usize>,
    seed: Option<u64>,
    m_factor: usize,
) -> PyResult<String> {
    let config = selection_config(strategy, n, seed)?;
    let tasks = load_suite(Path::new(suite_dir)).map_err(value_error)?;
    let source = MockSource::from_file(Path::new(replay_path)).map_err(value_error)?;
    let settings = EvalSettings {
        m_factor,
        ..EvalSettings::new(k_values)
    };
    py.detach(|| {
        let backend = MockBackend::new(source, None);
        evaluator::evaluate(&tasks, &config, &settings, &backend).map(|r| r.to_json())
    })
    .map_err(value_error)
}

#[pymodule]
#[pyo3(name = "tabprompt")]
pub fn tabprompt_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTable>()?;
    m.add_function(wrap_pyfunction!(profile_string, m)?)?;
    m.add_function(wrap_pyfunction!(cluster, m)?)?;
    m.add_function(wrap_pyfunction!(select, m)?)?;
    m.add_function(wrap_pyfunction!(build_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(dataframe_definition, m)?)?;
    m.add_function(wrap_pyfunction!(cleanup, m)?)?;
    m.add_function(wrap_pyfunction!(process, m)?)?;
    m.add_function(wrap_pyfunction!(cells_match, m)?)?;
    m.add_function(wrap_pyfunction!(outputs_match, m)?)?;
    m.add_function(wrap_pyfunction!(pass_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_replay, m)?)?;
    Ok(())
}
