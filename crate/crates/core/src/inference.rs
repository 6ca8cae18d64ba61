//! The sampling loop: cluster, select, prompt once, then sample batches and
//! keep distinct completions whose programs produce a valid table on the full
//! input.

use std::collections::{HashMap, HashSet};
use std::sync::{Arc, Mutex, OnceLock};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::exec::{ExecOutput, ExecStatus, Executor};
use crate::postprocess::{detach_from_prompt, process, RewriteForm};
use crate::profiler::{cluster_table, ClusterMap, ProfileError};
use crate::promptgen::{build_prompt, dataframe_definition, Prompt, PromptError};
use crate::selector::{select, SelectError, SelectionConfig, Strategy};
use crate::table::{Table, TableError};
use crate::transport::{
    sample_completions, BatchPlanner, Choice, CompletionSource, InferenceConfig, TransportError,
};
use crate::validator::is_valid;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error(transparent)]
    Config(#[from] TransportError),
    #[error(transparent)]
    Selection(#[from] SelectError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Table(#[from] TableError),
}

/// Where processing of one sampled completion stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    /// The provider refused to produce this choice.
    Refused,
    /// Nothing executable survived cleanup.
    Empty,
    /// No statement could be turned into an output assignment.
    NotRewritable,
    /// Execution did not finish with status ok.
    ExecFailed,
    /// Executed, but the result is not a table with the input's row count.
    Invalid,
    /// Same cleaned text as an accepted completion.
    Duplicate,
    /// Valid and new, but `k` completions were already accepted.
    Surplus,
    Accepted,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletionLog {
    pub batch: usize,
    pub raw: String,
    pub cleaned: String,
    pub rewrite_form: RewriteForm,
    pub outcome: Outcome,
    pub exec_status: Option<ExecStatus>,
    /// Rows of the table the program ran against.
    pub exec_rows: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InferenceResult {
    /// Accepted completions (cleaned text), in acceptance order.
    pub completions: Vec<String>,
    /// Full programs that were executed for `completions`.
    pub programs: Vec<String>,
    pub outputs: Vec<Table>,
    /// Completions requested from the transport; bounded by `budget_max`.
    pub calls_used: usize,
    pub rows_in_prompt: usize,
    pub prompt_chars: usize,
    pub log: Vec<CompletionLog>,
    /// Set when a transport error ended sampling early.
    pub aborted: Option<String>,
}

/// Cluster maps keyed by the SHA-256 of the table's JSON form.
#[derive(Debug, Default)]
pub struct ClusterCache {
    entries: Mutex<HashMap<[u8; 32], Arc<ClusterMap>>>,
}

impl ClusterCache {
    pub fn global() -> &'static ClusterCache {
        static CACHE: OnceLock<ClusterCache> = OnceLock::new();
        CACHE.get_or_init(ClusterCache::default)
    }

    pub fn get_or_compute(&self, table: &Table) -> Result<Arc<ClusterMap>, ProfileError> {
        let key: [u8; 32] = Sha256::digest(table.to_json().as_bytes()).into();
        if let Some(map) = self.entries.lock().expect("cache lock").get(&key) {
            return Ok(Arc::clone(map));
        }
        let map = Arc::new(cluster_table(table)?);
        self.entries
            .lock()
            .expect("cache lock")
            .insert(key, Arc::clone(&map));
        Ok(map)
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Build the prompt for `query` from the rows chosen by `selection`.
pub fn prepare_prompt(
    query: &str,
    table: &Table,
    selection: &SelectionConfig,
) -> Result<Prompt, InferenceError> {
    selection.validate(table.row_count())?;
    let map = match selection.strategy {
        Strategy::Representative => Some(ClusterCache::global().get_or_compute(table)?),
        _ => None,
    };
    let rows = select(table, map.as_deref(), selection)?;
    Ok(build_prompt(query, &table.project_rows(&rows)?)?)
}

/// Processing of one choice up to (not including) acceptance.
struct Processed {
    log: CompletionLog,
    program: Option<String>,
    output: Option<ExecOutput>,
}

fn process_choice(
    choice: &Choice,
    batch: usize,
    preamble: &str,
    table: &Table,
    accepted: &HashSet<String>,
    executor: &dyn Executor,
    timeout_ms: u64,
) -> Processed {
    let mut log = CompletionLog {
        batch,
        raw: String::new(),
        cleaned: String::new(),
        rewrite_form: RewriteForm::None,
        outcome: Outcome::Refused,
        exec_status: None,
        exec_rows: None,
        error: None,
    };
    let raw = match choice {
        Choice::Text(t) => t,
        Choice::Refused(reason) => {
            log.error = Some(reason.clone());
            return Processed {
                log,
                program: None,
                output: None,
            };
        }
    };
    let completion = process(detach_from_prompt(raw), preamble);
    log.raw = raw.clone();
    log.cleaned = completion.cleaned.clone();
    log.rewrite_form = completion.rewrite_form;
    if completion.cleaned.is_empty() {
        log.outcome = Outcome::Empty;
        return Processed {
            log,
            program: None,
            output: None,
        };
    }
    if accepted.contains(&completion.cleaned) {
        log.outcome = Outcome::Duplicate;
        return Processed {
            log,
            program: None,
            output: None,
        };
    }
    let Some(program) = completion.program else {
        log.outcome = Outcome::NotRewritable;
        return Processed {
            log,
            program: None,
            output: None,
        };
    };
    let output = executor.execute(&program, &completion.output_var, timeout_ms);
    log.exec_status = Some(output.status);
    log.exec_rows = Some(table.row_count());
    log.error = output.error_message.clone();
    log.outcome = if !output.is_ok() {
        Outcome::ExecFailed
    } else if !is_valid(&output, table) {
        Outcome::Invalid
    } else {
        // provisional; settled during accumulation
        Outcome::Accepted
    };
    Processed {
        log,
        program: Some(program),
        output: Some(output),
    }
}

pub fn infer(
    query: &str,
    table: &Table,
    selection: &SelectionConfig,
    config: &InferenceConfig,
    transport: &dyn CompletionSource,
    executor: &dyn Executor,
) -> Result<InferenceResult, InferenceError> {
    config.validate()?;
    let prompt = prepare_prompt(query, table, selection)?;
    let preamble = dataframe_definition(table)?;

    let mut result = InferenceResult {
        completions: Vec::new(),
        programs: Vec::new(),
        outputs: Vec::new(),
        calls_used: 0,
        rows_in_prompt: prompt.row_count_included,
        prompt_chars: prompt.char_count,
        log: Vec::new(),
        aborted: None,
    };
    let mut accepted: HashSet<String> = HashSet::new();
    let mut planner = BatchPlanner::new(config.budget_max, config.k, config.p_floor);
    let mut batch_index = 0;

    while planner.remaining_budget > 0 && result.completions.len() < config.k {
        planner.needed = config.k - result.completions.len();
        let n = planner
            .next_batch_size(config.parallel_limit)
            .expect("loop guard keeps planner preconditions");
        planner.remaining_budget -= n;
        result.calls_used += n;
        let batch = match sample_completions(transport, &prompt, n, config) {
            Ok(b) => b,
            Err(e) => {
                result.aborted = Some(e.to_string());
                break;
            }
        };

        let workers = std::thread::available_parallelism().map_or(4, |n| n.get());
        let mut processed: Vec<Processed> = Vec::with_capacity(batch.choices.len());
        for chunk in batch.choices.chunks(workers) {
            std::thread::scope(|scope| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|choice| {
                        let (preamble, accepted) = (&preamble, &accepted);
                        scope.spawn(move || {
                            process_choice(
                                choice,
                                batch_index,
                                preamble,
                                table,
                                accepted,
                                executor,
                                config.exec_timeout_ms,
                            )
                        })
                    })
                    .collect();
                processed.extend(
                    handles
                        .into_iter()
                        .map(|h| h.join().expect("completion worker panicked")),
                );
            });
        }

        let mut valid = 0;
        for mut p in processed {
            match p.log.outcome {
                Outcome::Duplicate => valid += 1,
                Outcome::Accepted => {
                    valid += 1;
                    if accepted.contains(&p.log.cleaned) {
                        p.log.outcome = Outcome::Duplicate;
                    } else if result.completions.len() >= config.k {
                        p.log.outcome = Outcome::Surplus;
                    } else {
                        accepted.insert(p.log.cleaned.clone());
                        result.completions.push(p.log.cleaned.clone());
                        result
                            .programs
                            .push(p.program.take().expect("executed program"));
                        result
                            .outputs
                            .push(p.output.take().and_then(|o| o.value).expect("valid output"));
                    }
                }
                _ => {}
            }
            result.log.push(p.log);
        }
        planner
            .update_estimate(valid, batch.choices.len())
            .expect("valid never exceeds batch size");
        batch_index += 1;
    }
    Ok(result)
}
