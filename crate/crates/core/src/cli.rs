//! Command-line interface.
//!
//! Exit codes: 0 on success, 1 when the work itself fails, 2 on usage errors.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::dataset::{load_suite, load_task, Task};
use crate::evaluator::{evaluate, strategy_label, Backend, EvalSettings};
use crate::exec::{Executor, SubprocessExecutor};
use crate::inference::{infer, prepare_prompt, ClusterCache, InferenceResult};
use crate::profiler::cluster_report;
use crate::replay::{MockBackend, MockSource};
use crate::selector::{select, SelectionConfig, Strategy};
use crate::table::{parse_table, Table, TableFormat};
use crate::transport::{
    CompletionSource, HttpTransport, InferenceConfig, DEFAULT_BUDGET_FACTOR, DEFAULT_TEMPERATURE,
};
use crate::validator::outputs_match;

#[derive(Debug, Parser)]
#[command(
    name = "tabprompt",
    version,
    about = "Cluster-then-select prompting for table transformations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Cluster each column by syntactic pattern.
    Profile {
        #[arg(long)]
        table: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Choose rows for the prompt.
    Select {
        #[arg(long)]
        table: PathBuf,
        #[command(flatten)]
        selection: SelectionArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Print the prompt for a query.
    Prompt {
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        selection: SelectionArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Sample, execute and keep up to k distinct valid completions.
    Infer {
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        selection: SelectionArgs,
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[command(flatten)]
        sampling: SamplingArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// pass@k over a suite of task files.
    Eval {
        #[arg(long)]
        suite: PathBuf,
        #[command(flatten)]
        selection: SelectionArgs,
        /// Comma-separated k values.
        #[arg(long, value_delimiter = ',', default_value = "1")]
        k: Vec<usize>,
        #[arg(long, default_value_t = 20)]
        m_factor: usize,
        /// Tasks evaluated in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[command(flatten)]
        sampling: SamplingArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
}

#[derive(Debug, Args)]
struct OutputArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Debug, Args)]
struct SelectionArgs {
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    /// Row budget for first, random and representative.
    #[arg(long)]
    n: Option<usize>,
    /// Seed for the random strategy.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StrategyArg {
    None,
    First,
    Random,
    Representative,
    All,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::None => Strategy::None,
            StrategyArg::First => Strategy::First,
            StrategyArg::Random => Strategy::Random,
            StrategyArg::Representative => Strategy::Representative,
            StrategyArg::All => Strategy::All,
        }
    }
}

#[derive(Debug, Args)]
struct SourceArgs {
    /// Task file (query and input table).
    #[arg(long, conflicts_with_all = ["table", "query"])]
    task: Option<PathBuf>,
    /// Table file (.csv or column-major .json); needs --query.
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long)]
    query: Option<String>,
}

#[derive(Debug, Args)]
struct SamplingArgs {
    #[arg(long, default_value_t = DEFAULT_TEMPERATURE)]
    temperature: f64,
    /// Completion budget as a multiple of the number wanted.
    #[arg(long, default_value_t = DEFAULT_BUDGET_FACTOR)]
    budget_factor: usize,
    #[arg(long, default_value_t = 5_000)]
    timeout_ms: u64,
    #[arg(long, value_enum, default_value_t = TransportArg::Http)]
    transport: TransportArg,
    #[arg(long)]
    mock_script: Option<PathBuf>,
    /// Runner command; defaults to $TABPROMPT_RUNNER or `tabprompt-runner`.
    #[arg(long)]
    runner: Option<String>,
    /// Runner processes started ahead of use.
    #[arg(long, default_value_t = 0)]
    warm_pool: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TransportArg {
    Http,
    Mock,
}

enum CliError {
    Usage(String),
    Failure(String),
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn failure(msg: impl ToString) -> CliError {
    CliError::Failure(msg.to_string())
}

type CliResult<T> = Result<T, CliError>;

/// Parse `argv` (including the program name), run, and return the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n\nRun `tabprompt --help` for usage.");
            2
        }
        Err(CliError::Failure(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

impl SelectionArgs {
    fn resolve(&self, default: Option<StrategyArg>) -> CliResult<SelectionConfig> {
        let strategy: Strategy = self
            .strategy
            .or(default)
            .ok_or_else(|| usage("--strategy is required"))?
            .into();
        let needs_n = matches!(
            strategy,
            Strategy::First | Strategy::Random | Strategy::Representative
        );
        let n = match (needs_n, self.n) {
            (true, Some(n)) => n,
            (true, None) => return Err(usage(format!("--strategy {strategy} requires --n"))),
            (false, Some(_)) => {
                return Err(usage(format!(
                    "--n does not apply to --strategy {strategy}"
                )))
            }
            (false, None) => 0,
        };
        if n == 0 && needs_n {
            return Err(usage("--n must be at least 1"));
        }
        match (strategy, self.seed) {
            (Strategy::Random, None) => return Err(usage("--strategy random requires --seed")),
            (s, Some(_)) if s != Strategy::Random => {
                return Err(usage("--seed only applies to --strategy random"))
            }
            _ => {}
        }
        let config = SelectionConfig::new(strategy, n);
        Ok(match self.seed {
            Some(seed) => config.with_seed(seed),
            None => config,
        })
    }
}

impl SamplingArgs {
    fn check(&self) -> CliResult<()> {
        match (self.transport, &self.mock_script) {
            (TransportArg::Mock, None) => Err(usage("--transport mock requires --mock-script")),
            (TransportArg::Http, Some(_)) => Err(usage("--mock-script requires --transport mock")),
            _ if self.budget_factor == 0 => Err(usage("--budget-factor must be positive")),
            _ if self.timeout_ms == 0 => Err(usage("--timeout-ms must be positive")),
            _ if !(0.0..=2.0).contains(&self.temperature) => {
                Err(usage("--temperature must lie in [0, 2]"))
            }
            _ => Ok(()),
        }
    }

    fn inference_config(&self, k: usize) -> InferenceConfig {
        InferenceConfig {
            budget_max: self.budget_factor * k,
            temperature: self.temperature,
            exec_timeout_ms: self.timeout_ms,
            ..InferenceConfig::new(k)
        }
    }

    fn subprocess_executor(&self) -> Arc<dyn Executor> {
        let ex = match &self.runner {
            Some(cmd) => {
                SubprocessExecutor::new(cmd.split_whitespace().map(str::to_string).collect())
            }
            None => SubprocessExecutor::from_env(),
        };
        Arc::new(ex.with_warm_pool(self.warm_pool))
    }

    fn backend(&self) -> CliResult<Box<dyn Backend>> {
        match &self.mock_script {
            Some(path) => {
                let source = MockSource::from_file(path).map_err(failure)?;
                Ok(Box::new(MockBackend::new(
                    source,
                    Some(self.subprocess_executor()),
                )))
            }
            None => {
                let http = HttpTransport::from_env().map_err(failure)?;
                Ok(Box::new(LiveBackend {
                    transport: Arc::new(http),
                    executor: self.subprocess_executor(),
                }))
            }
        }
    }
}

struct LiveBackend {
    transport: Arc<dyn CompletionSource>,
    executor: Arc<dyn Executor>,
}

impl Backend for LiveBackend {
    fn transport(&self, _: &Task) -> Result<Arc<dyn CompletionSource>, String> {
        Ok(Arc::clone(&self.transport))
    }

    fn executor(&self, _: &Task) -> Result<Arc<dyn Executor>, String> {
        Ok(Arc::clone(&self.executor))
    }

    fn model_name(&self) -> String {
        self.transport.model_name().to_string()
    }
}

fn read_table(path: &Path) -> CliResult<Table> {
    let bytes = std::fs::read(path).map_err(|e| failure(format!("{}: {e}", path.display())))?;
    parse_table(&bytes, TableFormat::from_path(path))
        .map_err(|e| failure(format!("{}: {e}", path.display())))
}

enum Source {
    Task(Task),
    Table { query: String, table: Table },
}

impl SourceArgs {
    fn check(&self) -> CliResult<()> {
        match (&self.task, &self.table, &self.query) {
            (Some(_), None, None) | (None, Some(_), Some(_)) => Ok(()),
            (None, Some(_), None) => Err(usage("--table requires --query")),
            _ => Err(usage("give either --task, or --table with --query")),
        }
    }

    fn load(&self) -> CliResult<Source> {
        if let Some(path) = &self.task {
            return load_task(path).map(Source::Task).map_err(failure);
        }
        let table = read_table(self.table.as_deref().expect("checked"))?;
        Ok(Source::Table {
            query: self.query.clone().expect("checked"),
            table,
        })
    }
}

impl Source {
    fn query(&self) -> &str {
        match self {
            Source::Task(t) => &t.query,
            Source::Table { query, .. } => query,
        }
    }

    fn table(&self) -> &Table {
        match self {
            Source::Task(t) => &t.input,
            Source::Table { table, .. } => table,
        }
    }
}

fn emit(output: &OutputArgs, body: &str) -> CliResult<()> {
    match &output.out {
        Some(path) => {
            std::fs::write(path, body).map_err(|e| failure(format!("{}: {e}", path.display())))
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(body.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(failure)
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable output");
    s.push('\n');
    s
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Profile { table, output } => {
            let table = read_table(&table)?;
            let map = ClusterCache::global()
                .get_or_compute(&table)
                .map_err(failure)?;
            let report = cluster_report(&map, &table);
            let body = match output.format.unwrap_or(Format::Json) {
                Format::Json => to_json(&report),
                Format::Text => {
                    let mut s = String::new();
                    for col in &report.columns {
                        let _ = writeln!(s, "{}", col.column);
                        for c in &col.clusters {
                            let _ = writeln!(
                                s,
                                "  #{:<3} {:>4}  {}  e.g. {}",
                                c.cluster_id, c.weight, c.regex, c.example_cell
                            );
                        }
                    }
                    s
                }
            };
            emit(&output, &body)
        }
        Command::Select {
            table,
            selection,
            output,
        } => {
            let config = selection.resolve(None)?;
            let table = read_table(&table)?;
            config.validate(table.row_count()).map_err(failure)?;
            let map = match config.strategy {
                Strategy::Representative => Some(
                    ClusterCache::global()
                        .get_or_compute(&table)
                        .map_err(failure)?,
                ),
                _ => None,
            };
            let rows = select(&table, map.as_deref(), &config).map_err(failure)?;
            let projected = table.project_rows(&rows).map_err(failure)?;
            #[derive(Serialize)]
            struct Selected<'a> {
                strategy: String,
                indices: &'a [usize],
                rows: &'a Table,
            }
            let body = match output.format.unwrap_or(Format::Json) {
                Format::Json => to_json(&Selected {
                    strategy: strategy_label(&config),
                    indices: rows.indices(),
                    rows: &projected,
                }),
                Format::Text => {
                    let idx: Vec<String> = rows.indices().iter().map(|i| i.to_string()).collect();
                    format!("rows: {}\n{}", idx.join(" "), projected.to_csv())
                }
            };
            emit(&output, &body)
        }
        Command::Prompt {
            source,
            selection,
            output,
        } => {
            source.check()?;
            let config = selection.resolve(Some(StrategyArg::None))?;
            let source = source.load()?;
            let prompt =
                prepare_prompt(source.query(), source.table(), &config).map_err(failure)?;
            match output.format.unwrap_or(Format::Text) {
                Format::Json => emit(&output, &to_json(&prompt)),
                Format::Text => {
                    eprintln!(
                        "rows: {}  chars: {}",
                        prompt.row_count_included, prompt.char_count
                    );
                    emit(&output, &format!("{}\n", prompt.text))
                }
            }
        }
        Command::Infer {
            source,
            selection,
            k,
            sampling,
            output,
        } => {
            source.check()?;
            sampling.check()?;
            if k == 0 {
                return Err(usage("--k must be positive"));
            }
            let config = selection.resolve(Some(StrategyArg::None))?;
            let source = source.load()?;
            let backend = sampling.backend()?;
            let task_for_backend = match &source {
                Source::Task(t) => t.clone(),
                Source::Table { query, table } => Task {
                    id: String::new(),
                    class: crate::dataset::TaskClass::Dep,
                    query: query.clone(),
                    input: table.clone(),
                    expected: table.clone(),
                    match_options: Default::default(),
                    reference_solution: None,
                    metadata: Default::default(),
                },
            };
            let transport = backend.transport(&task_for_backend).map_err(failure)?;
            let executor = backend.executor(&task_for_backend).map_err(failure)?;
            let result = infer(
                source.query(),
                source.table(),
                &config,
                &sampling.inference_config(k),
                transport.as_ref(),
                executor.as_ref(),
            )
            .map_err(failure)?;
            let correct: Option<Vec<bool>> = match &source {
                Source::Task(t) => Some(
                    result
                        .outputs
                        .iter()
                        .map(|o| {
                            outputs_match(&t.expected, o, &t.match_options).is_ok_and(|r| r.matched)
                        })
                        .collect(),
                ),
                Source::Table { .. } => None,
            };
            let body = match output.format.unwrap_or(Format::Json) {
                Format::Json => {
                    #[derive(Serialize)]
                    struct Inferred<'a> {
                        #[serde(flatten)]
                        result: &'a InferenceResult,
                        #[serde(skip_serializing_if = "Option::is_none")]
                        correct: Option<Vec<bool>>,
                    }
                    to_json(&Inferred {
                        result: &result,
                        correct,
                    })
                }
                Format::Text => infer_text(&result, correct.as_deref()),
            };
            emit(&output, &body)?;
            match result.aborted {
                Some(reason) => Err(failure(format!("sampling aborted: {reason}"))),
                None => Ok(()),
            }
        }
        Command::Eval {
            suite,
            selection,
            k,
            m_factor,
            jobs,
            sampling,
            output,
        } => {
            sampling.check()?;
            if k.is_empty() || k.contains(&0) || m_factor == 0 || jobs == 0 {
                return Err(usage("--k values, --m-factor and --jobs must be positive"));
            }
            let config = selection.resolve(Some(StrategyArg::None))?;
            let tasks = load_suite(&suite).map_err(failure)?;
            let backend = sampling.backend()?;
            let settings = EvalSettings {
                k_values: k,
                m_factor,
                budget_factor: sampling.budget_factor,
                inference: sampling.inference_config(1),
                jobs,
            };
            let report = evaluate(&tasks, &config, &settings, backend.as_ref()).map_err(failure)?;
            let body = match output.format.unwrap_or(Format::Json) {
                Format::Json => report.to_json(),
                Format::Text => report.to_text(),
            };
            emit(&output, &body)
        }
    }
}

fn infer_text(result: &InferenceResult, correct: Option<&[bool]>) -> String {
    let mut s = format!(
        "accepted {} completion(s) using {} sampled; prompt rows {} chars {}\n",
        result.completions.len(),
        result.calls_used,
        result.rows_in_prompt,
        result.prompt_chars
    );
    for (i, c) in result.completions.iter().enumerate() {
        let mark = match correct.map(|c| c[i]) {
            Some(true) => " [correct]",
            Some(false) => " [incorrect]",
            None => "",
        };
        let _ = writeln!(s, "--- {}{mark}\n{c}", i + 1);
    }
    s
}
