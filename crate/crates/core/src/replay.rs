//! Offline runs from a mock script file.
//!
//! Two shapes are accepted. A single script, used for every task:
//!
//! ```json
//! {"responses": ["\nout = df['a']", {"refusal": "..."}]}
//! ```
//!
//! or a per-task replay, optionally with canned execution results:
//!
//! ```json
//! {"model": "replay",
//!  "tasks": {"username": {"responses": ["..."],
//!                         "outputs": [{"contains": "u00 =", "status": "ok",
//!                                      "columns": [["username", ["jsmith"]]]}]}}}
//! ```
//!
//! A task with `outputs` runs against a [`ReplayExecutor`]; otherwise the
//! fallback executor is used.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;

use crate::dataset::Task;
use crate::evaluator::Backend;
use crate::exec::{CannedOutput, Executor, ReplayExecutor};
use crate::transport::{CompletionSource, MockScript, ScriptEntry, ScriptedTransport};

#[derive(Debug, Clone, Deserialize)]
pub struct ReplayTask {
    pub responses: Vec<ScriptEntry>,
    #[serde(default)]
    pub outputs: Option<Vec<CannedOutput>>,
    #[serde(default)]
    pub per_request_limit: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ReplayFile {
    #[serde(default = "default_model")]
    pub model: String,
    pub tasks: BTreeMap<String, ReplayTask>,
}

fn default_model() -> String {
    "mock".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum MockSource {
    PerTask(ReplayFile),
    Single(MockScript),
}

impl MockSource {
    pub fn from_file(path: &Path) -> Result<Self, String> {
        let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_slice(&bytes)
            .map_err(|e| format!("{}: not a mock script: {e}", path.display()))
    }

    fn model(&self) -> &str {
        match self {
            MockSource::PerTask(f) => &f.model,
            MockSource::Single(_) => "mock",
        }
    }

    fn script_for(&self, task_id: &str) -> Result<(MockScript, Option<Vec<CannedOutput>>), String> {
        match self {
            MockSource::Single(s) => Ok((s.clone(), None)),
            MockSource::PerTask(f) => {
                let t = f
                    .tasks
                    .get(task_id)
                    .ok_or_else(|| format!("mock script has no entry for task `{task_id}`"))?;
                Ok((
                    MockScript {
                        responses: t.responses.clone(),
                        per_request_limit: t.per_request_limit,
                    },
                    t.outputs.clone(),
                ))
            }
        }
    }

    pub fn transport_for(&self, task_id: &str) -> Result<ScriptedTransport, String> {
        let (script, _) = self.script_for(task_id)?;
        Ok(ScriptedTransport::from_script(script).with_model_name(self.model()))
    }

    pub fn canned_outputs_for(&self, task_id: &str) -> Result<Option<Vec<CannedOutput>>, String> {
        Ok(self.script_for(task_id)?.1)
    }
}

/// Backend built from a mock script: a fresh scripted transport per task.
pub struct MockBackend {
    source: MockSource,
    fallback: Option<Arc<dyn Executor>>,
}

impl MockBackend {
    pub fn new(source: MockSource, fallback: Option<Arc<dyn Executor>>) -> Self {
        MockBackend { source, fallback }
    }
}

impl Backend for MockBackend {
    fn transport(&self, task: &Task) -> Result<Arc<dyn CompletionSource>, String> {
        Ok(Arc::new(self.source.transport_for(&task.id)?))
    }

    fn executor(&self, task: &Task) -> Result<Arc<dyn Executor>, String> {
        match self.source.canned_outputs_for(&task.id)? {
            Some(canned) => Ok(Arc::new(ReplayExecutor::new(canned))),
            None => self.fallback.clone().ok_or_else(|| {
                format!(
                    "no canned outputs for task `{}` and no runner configured",
                    task.id
                )
            }),
        }
    }

    fn model_name(&self) -> String {
        self.source.model().to_string()
    }
}
