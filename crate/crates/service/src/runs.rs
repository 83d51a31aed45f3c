//! In-memory index of detector runs whose artifacts live on disk.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use outlierscope::pipeline::Job;
use outlierscope::report::{emit_report, ReportFiles, ReportFormat};

use crate::error::ErrorBody;
use crate::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Done,
    Failed,
}

/// What a run-launching request returns, and what `GET /runs/{id}` returns
/// while the run is not done.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHandle {
    pub run_id: String,
    pub kind: String,
    pub dataset: String,
    pub status: RunStatus,
    /// Where the full result can be fetched once `status` is `done`.
    pub result: String,
    pub series: String,
    pub manifest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

impl RunHandle {
    fn running(run_id: &str, kind: &str, dataset: &str) -> Self {
        Self {
            run_id: run_id.to_string(),
            kind: kind.to_string(),
            dataset: dataset.to_string(),
            status: RunStatus::Running,
            result: format!("/runs/{run_id}"),
            series: format!("/runs/{run_id}/series"),
            manifest: format!("/runs/{run_id}/manifest"),
            error: None,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct RunEntry {
    pub handle: RunHandle,
    pub files: Option<ReportFiles>,
    pub manifest_hash: Option<String>,
}

/// Outcome of asking the index to start a run.
#[allow(clippy::large_enum_variant)] // one per request
pub(crate) enum Launch {
    /// The run was already done or in flight; nothing new started.
    Existing(RunEntry),
    /// The caller must execute the run.
    Started,
}

/// The only mutable service state. Entries are keyed by deterministic run id,
/// so re-posting an identical request finds the existing run.
#[derive(Debug, Default)]
pub(crate) struct RunIndex {
    entries: RwLock<HashMap<String, RunEntry>>,
}

impl RunIndex {
    pub fn get(&self, run_id: &str) -> Option<RunEntry> {
        self.entries.read().expect("run index poisoned").get(run_id).cloned()
    }

    /// Registers a running entry unless a done or running one exists. Failed
    /// runs are retried.
    pub fn launch(&self, run_id: &str, kind: &str, dataset: &str) -> Launch {
        let mut entries = self.entries.write().expect("run index poisoned");
        if let Some(entry) = entries.get(run_id) {
            if entry.handle.status != RunStatus::Failed {
                return Launch::Existing(entry.clone());
            }
        }
        entries.insert(
            run_id.to_string(),
            RunEntry {
                handle: RunHandle::running(run_id, kind, dataset),
                files: None,
                manifest_hash: None,
            },
        );
        Launch::Started
    }

    fn finish(&self, run_id: &str, update: impl FnOnce(&mut RunEntry)) -> RunEntry {
        let mut entries = self.entries.write().expect("run index poisoned");
        let entry = entries.get_mut(run_id).expect("finished run was launched");
        update(entry);
        entry.clone()
    }
}

/// Executes `job` on the dataset, persists the report files into `runs_dir`,
/// and records the outcome in the index. Blocking; runs on a worker thread.
pub(crate) fn execute(index: &RunIndex, dataset: &Dataset, job: &Job, run_id: &str, runs_dir: &Path) -> RunEntry {
    let outcome = job
        .execute_with_manifest(&dataset.table, &dataset.fingerprint)
        .and_then(|(result, manifest)| {
            debug_assert_eq!(manifest.run_id, run_id);
            let files = emit_report(&result, &manifest, ReportFormat::Json, runs_dir)?;
            Ok((files, manifest.manifest_hash()?))
        });
    match outcome {
        Ok((files, hash)) => {
            log::info!("run {run_id} done: {}", files.report.display());
            index.finish(run_id, |e| {
                e.handle.status = RunStatus::Done;
                e.files = Some(files);
                e.manifest_hash = Some(hash);
            })
        }
        Err(err) => {
            log::warn!("run {run_id} failed: {err}");
            let body = crate::error::ApiError::from(err).body;
            index.finish(run_id, |e| {
                e.handle.status = RunStatus::Failed;
                e.handle.error = Some(body);
            })
        }
    }
}

/// Marks a run failed without a result, e.g. after a panic.
pub(crate) fn fail(index: &RunIndex, run_id: &str, message: &str) -> RunEntry {
    log::error!("run {run_id} failed: {message}");
    let body = crate::error::ApiError::internal(message).body;
    index.finish(run_id, |e| {
        e.handle.status = RunStatus::Failed;
        e.handle.error = Some(body);
    })
}

/// Which persisted artifact of a done run to read.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Artifact {
    Report,
    Series,
    Manifest,
}

impl Artifact {
    pub fn path(self, files: &ReportFiles) -> &PathBuf {
        match self {
            Artifact::Report => &files.report,
            Artifact::Series => &files.series,
            Artifact::Manifest => &files.manifest,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn launch_deduplicates_until_failure() {
        let index = RunIndex::default();
        assert!(matches!(index.launch("a", "outlier_run", "d"), Launch::Started));
        assert!(matches!(index.launch("a", "outlier_run", "d"), Launch::Existing(_)));
        index.finish("a", |e| e.handle.status = RunStatus::Failed);
        assert!(matches!(index.launch("a", "outlier_run", "d"), Launch::Started));
        assert_eq!(index.get("a").unwrap().handle.status, RunStatus::Running);
        assert!(index.get("b").is_none());
    }

    #[test]
    fn handle_serializes_locators() {
        let h = RunHandle::running("x-y", "searchlight", "d");
        let v = serde_json::to_value(&h).unwrap();
        assert_eq!(v["status"], "running");
        assert_eq!(v["result"], "/runs/x-y");
        assert_eq!(v["series"], "/runs/x-y/series");
        assert!(v.get("error").is_none());
    }
}
