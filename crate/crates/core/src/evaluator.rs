//! pass@k over a task suite.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::Serialize;
use thiserror::Error;

use crate::dataset::{Task, TaskClass};
use crate::exec::Executor;
use crate::inference::infer;
use crate::selector::{SelectionConfig, Strategy};
use crate::transport::{CompletionSource, InferenceConfig};
use crate::validator::outputs_match;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("pass@k needs 1 <= k <= m and s <= m (m={m}, s={s}, k={k})")]
    Domain { m: usize, s: usize, k: usize },
    #[error("no tasks to evaluate")]
    NoTasks,
    #[error("invalid evaluation settings: {0}")]
    Settings(String),
}

/// Unbiased estimate `1 - C(m-s, k) / C(m, k)` of the chance that at least
/// one of `k` draws from `m` samples (`s` correct) is correct, computed as
/// `1 - prod_{j<k} (m-s-j) / (m-j)`.
pub fn pass_at_k(m: usize, s: usize, k: usize) -> Result<f64, EvalError> {
    if k == 0 || k > m || s > m {
        return Err(EvalError::Domain { m, s, k });
    }
    if m - s < k {
        return Ok(1.0);
    }
    let miss: f64 = (0..k)
        .map(|j| (m - s - j) as f64 / (m - j) as f64)
        .product();
    Ok(1.0 - miss)
}

/// Report label for a selection regime.
pub fn strategy_label(selection: &SelectionConfig) -> String {
    let n = selection.row_budget;
    match selection.strategy {
        Strategy::None => "no-data".into(),
        Strategy::All => "full-data".into(),
        Strategy::First if n == 1 => "first-row".into(),
        Strategy::First => format!("first-{n}"),
        Strategy::Random => format!("random-{n}"),
        Strategy::Representative => format!("represent-{n}"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PassAtK {
    pub k: usize,
    /// `k` actually used; smaller than `k` when fewer valid samples exist.
    pub effective_k: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskEvalStats {
    pub task_id: String,
    pub class: TaskClass,
    pub strategy: String,
    /// Distinct valid completions collected.
    pub m: usize,
    /// How many of them match the expected output.
    pub s: usize,
    pub m_target: usize,
    /// Fewer than `m_target` valid completions were collected.
    pub shortfall: bool,
    pub calls_used: usize,
    pub rows_in_prompt: usize,
    pub prompt_chars: usize,
    pub pass_at_k: Vec<PassAtK>,
    /// Set when the task could not be run; its pass@k values are then 0.
    pub error: Option<String>,
    /// Set when sampling stopped on a transport error.
    pub aborted: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KValue {
    pub k: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSummary {
    /// `ind`, `dep`, `ext` or `all`.
    pub group: String,
    pub tasks: usize,
    pub failed: usize,
    pub shortfall: usize,
    pub pass_at_k: Vec<KValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetadata {
    pub model: String,
    pub strategy: String,
    pub n: usize,
    pub seed: Option<u64>,
    pub k_values: Vec<usize>,
    pub m_factor: usize,
    pub budget_factor: usize,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub metadata: RunMetadata,
    /// Sorted by task id.
    pub tasks: Vec<TaskEvalStats>,
    pub summary: Vec<GroupSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub k_values: Vec<usize>,
    pub m_factor: usize,
    pub budget_factor: usize,
    /// Template; `k` and `budget_max` are derived per run.
    pub inference: InferenceConfig,
    pub jobs: usize,
}

impl EvalSettings {
    pub fn new(k_values: Vec<usize>) -> Self {
        EvalSettings {
            k_values,
            m_factor: 20,
            budget_factor: crate::transport::DEFAULT_BUDGET_FACTOR,
            inference: InferenceConfig::new(1),
            jobs: 1,
        }
    }

    pub fn m_target(&self) -> usize {
        self.m_factor * self.k_values.iter().copied().max().unwrap_or(0)
    }

    fn inference_config(&self) -> InferenceConfig {
        let m = self.m_target();
        InferenceConfig {
            k: m,
            budget_max: self.budget_factor * m,
            ..self.inference.clone()
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: &str| Err(EvalError::Settings(m.to_string()));
        if self.k_values.is_empty() || self.k_values.contains(&0) {
            return bad("k values must be positive and non-empty");
        }
        if self.m_factor == 0 || self.budget_factor == 0 || self.jobs == 0 {
            return bad("m_factor, budget_factor and jobs must be positive");
        }
        self.inference_config()
            .validate()
            .map_err(|e| EvalError::Settings(e.to_string()))
    }
}

/// Supplies the completion source and executor for each task.
pub trait Backend: Sync {
    fn transport(&self, task: &Task) -> Result<Arc<dyn CompletionSource>, String>;
    fn executor(&self, task: &Task) -> Result<Arc<dyn Executor>, String>;
    fn model_name(&self) -> String;
}

fn pass_values(m: usize, s: usize, k_values: &[usize]) -> Vec<PassAtK> {
    k_values
        .iter()
        .map(|&k| {
            let effective_k = k.min(m);
            let value = if m == 0 {
                0.0
            } else {
                pass_at_k(m, s, effective_k).expect("clamped k is in range")
            };
            PassAtK {
                k,
                effective_k,
                value,
            }
        })
        .collect()
}

fn evaluate_task(
    task: &Task,
    selection: &SelectionConfig,
    settings: &EvalSettings,
    backend: &dyn Backend,
) -> TaskEvalStats {
    let m_target = settings.m_target();
    let mut stats = TaskEvalStats {
        task_id: task.id.clone(),
        class: task.class,
        strategy: strategy_label(selection),
        m: 0,
        s: 0,
        m_target,
        shortfall: true,
        calls_used: 0,
        rows_in_prompt: 0,
        prompt_chars: 0,
        pass_at_k: pass_values(0, 0, &settings.k_values),
        error: None,
        aborted: None,
    };
    let run = || -> Result<_, String> {
        let transport = backend.transport(task)?;
        let executor = backend.executor(task)?;
        infer(
            &task.query,
            &task.input,
            selection,
            &settings.inference_config(),
            transport.as_ref(),
            executor.as_ref(),
        )
        .map_err(|e| e.to_string())
    };
    let result = match run() {
        Ok(r) => r,
        Err(e) => {
            stats.error = Some(e);
            return stats;
        }
    };
    stats.m = result.outputs.len();
    stats.s = result
        .outputs
        .iter()
        .filter(|out| {
            outputs_match(&task.expected, out, &task.match_options)
                .map(|r| r.matched)
                .unwrap_or(false)
        })
        .count();
    stats.shortfall = stats.m < m_target;
    stats.calls_used = result.calls_used;
    stats.rows_in_prompt = result.rows_in_prompt;
    stats.prompt_chars = result.prompt_chars;
    stats.pass_at_k = pass_values(stats.m, stats.s, &settings.k_values);
    stats.aborted = result.aborted;
    stats
}

fn summarize(group: &str, tasks: &[&TaskEvalStats], k_values: &[usize]) -> GroupSummary {
    let pass_at_k = k_values
        .iter()
        .enumerate()
        .map(|(i, &k)| KValue {
            k,
            value: tasks.iter().map(|t| t.pass_at_k[i].value).sum::<f64>() / tasks.len() as f64,
        })
        .collect();
    GroupSummary {
        group: group.to_string(),
        tasks: tasks.len(),
        failed: tasks.iter().filter(|t| t.error.is_some()).count(),
        shortfall: tasks.iter().filter(|t| t.shortfall).count(),
        pass_at_k,
    }
}

/// Run every task and aggregate. Per-task failures are recorded, never fatal.
pub fn evaluate(
    tasks: &[Task],
    selection: &SelectionConfig,
    settings: &EvalSettings,
    backend: &dyn Backend,
) -> Result<EvalReport, EvalError> {
    if tasks.is_empty() {
        return Err(EvalError::NoTasks);
    }
    settings.validate()?;
    let mut k_values = settings.k_values.clone();
    k_values.sort_unstable();
    k_values.dedup();
    let settings = EvalSettings {
        k_values,
        ..settings.clone()
    };

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<TaskEvalStats>> = Mutex::new(Vec::with_capacity(tasks.len()));
    std::thread::scope(|scope| {
        for _ in 0..settings.jobs.min(tasks.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(task) = tasks.get(i) else { break };
                let stats = evaluate_task(task, selection, &settings, backend);
                results.lock().expect("results lock").push(stats);
            });
        }
    });
    let mut stats = results.into_inner().expect("results lock");
    stats.sort_by(|a, b| a.task_id.cmp(&b.task_id));

    let mut summary = Vec::new();
    for class in [TaskClass::Ind, TaskClass::Dep, TaskClass::Ext] {
        let members: Vec<&TaskEvalStats> = stats.iter().filter(|t| t.class == class).collect();
        if !members.is_empty() {
            summary.push(summarize(class.as_str(), &members, &settings.k_values));
        }
    }
    summary.push(summarize(
        "all",
        &stats.iter().collect::<Vec<_>>(),
        &settings.k_values,
    ));

    Ok(EvalReport {
        metadata: RunMetadata {
            model: backend.model_name(),
            strategy: strategy_label(selection),
            n: selection.row_budget,
            seed: selection.rng_seed,
            k_values: settings.k_values.clone(),
            m_factor: settings.m_factor,
            budget_factor: settings.budget_factor,
            temperature: settings.inference.temperature,
        },
        tasks: stats,
        summary,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialization");
        s.push('\n');
        s
    }

    /// Aligned plain-text rendering.
    pub fn to_text(&self) -> String {
        let md = &self.metadata;
        let ks: Vec<String> = md.k_values.iter().map(|k| k.to_string()).collect();
        let mut out = format!(
            "model: {}  strategy: {}  k: {}  m_factor: {}\n\n",
            md.model,
            md.strategy,
            ks.join(","),
            md.m_factor
        );

        let mut header = vec![
            "task".to_string(),
            "class".into(),
            "m".into(),
            "s".into(),
            "calls".into(),
        ];
        header.extend(md.k_values.iter().map(|k| format!("pass@{k}")));
        header.push("flags".into());
        let mut rows = vec![header];
        for t in &self.tasks {
            let mut row = vec![
                t.task_id.clone(),
                t.class.to_string(),
                t.m.to_string(),
                t.s.to_string(),
                t.calls_used.to_string(),
            ];
            row.extend(t.pass_at_k.iter().map(|p| format!("{:.4}", p.value)));
            let mut flags = Vec::new();
            if t.error.is_some() {
                flags.push("failed");
            }
            if t.aborted.is_some() {
                flags.push("aborted");
            }
            if t.shortfall {
                flags.push("shortfall");
            }
            row.push(flags.join(","));
            rows.push(row);
        }
        out.push_str(&align(&rows));
        out.push('\n');

        let mut header = vec!["group".to_string(), "tasks".into()];
        header.extend(md.k_values.iter().map(|k| format!("pass@{k}")));
        let mut rows = vec![header];
        for g in &self.summary {
            let mut row = vec![g.group.clone(), g.tasks.to_string()];
            row.extend(g.pass_at_k.iter().map(|p| format!("{:.4}", p.value)));
            rows.push(row);
        }
        out.push_str(&align(&rows));
        out
    }
}

fn align(rows: &[Vec<String>]) -> String {
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in rows {
        let mut line = String::new();
        for (cell, w) in row.iter().zip(&widths) {
            let _ = write!(line, "{cell:<w$}  ");
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}
