//! Durable multi-rater evaluation queue.
//!
//! Batches of questions become tasks. Raters pull tasks one at a time, answer
//! on the five-point scale, and a task completes once `min_raters` distinct
//! raters have answered. Aggregation maps every level through the task's scale
//! and averages over raters.
//!
//! State is an append-only event log (`events.jsonl`); every mutation is
//! appended and synced before it is applied in memory, and reopening a queue
//! replays the log. Leases are not persisted: after a restart every incomplete
//! task is simply pending again.
//!
//! Raw levels and the presentation order of every pair are stored verbatim;
//! mapping levels to numbers happens in [`Queue::aggregate`] and flip
//! correction happens in the trainer.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::generator::ClassLabel;
use crate::nes::{NesError, PairedQuery, QueryKind, Question};
use crate::protocol::{InvalidLevel, Level};

#[derive(Debug, Error)]
pub enum QueueError {
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("unknown batch {0}")]
    UnknownBatch(String),
    #[error(transparent)]
    InvalidLevel(#[from] InvalidLevel),
    #[error("rater {rater_id} already rated task {task_id}")]
    DuplicateRating { task_id: String, rater_id: String },
    #[error("task {0} is not complete")]
    Incomplete(String),
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
    #[error("storage: {0}")]
    Storage(#[from] io::Error),
    #[error("corrupt event log line {line}: {detail}")]
    Corrupt { line: usize, detail: String },
}

impl From<NesError> for QueueError {
    fn from(e: NesError) -> Self {
        QueueError::InvalidBatch(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Combine {
    #[default]
    Mean,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregationPolicy {
    pub min_raters: usize,
    #[serde(default)]
    pub combine: Combine,
}

impl Default for AggregationPolicy {
    fn default() -> Self {
        AggregationPolicy { min_raters: 5, combine: Combine::Mean }
    }
}

/// A single stimulus to rate on the absolute scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsoluteQuery {
    pub query_id: String,
    pub x: Vec<f64>,
    pub kind: QueryKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_label: Option<ClassLabel>,
}

impl AbsoluteQuery {
    pub fn new(query_id: impl Into<String>, x: Vec<f64>, question: Question) -> Self {
        AbsoluteQuery { query_id: query_id.into(), x, kind: question.kind(), class_label: question.class_label() }
    }

    pub fn question(&self) -> Result<Question, NesError> {
        Question::from_parts(self.kind, self.class_label, &self.query_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "protocol", rename_all = "snake_case")]
pub enum TaskPayload {
    Paired(PairedQuery),
    Absolute(AbsoluteQuery),
}

impl TaskPayload {
    pub fn query_id(&self) -> String {
        match self {
            TaskPayload::Paired(q) => q.query_id.to_string(),
            TaskPayload::Absolute(q) => q.query_id.clone(),
        }
    }

    fn validate(&self) -> Result<(), QueueError> {
        match self {
            TaskPayload::Paired(q) => {
                q.question()?;
                if q.x_plus.len() != q.x_minus.len() {
                    return Err(QueueError::InvalidBatch(format!("{}: stimulus dimensions differ", q.query_id)));
                }
            }
            TaskPayload::Absolute(q) => {
                q.question()?;
            }
        }
        Ok(())
    }

    /// Numeric meaning of a level under this task's scale.
    pub fn level_value(&self, level: Level) -> f64 {
        match self {
            TaskPayload::Paired(_) => level.paired_delta(),
            TaskPayload::Absolute(_) => level.absolute_posterior(),
        }
    }
}

/// One entry of a batch: the question plus an optional opaque display payload
/// (for instance URLs of pre-rendered media) passed through to raters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    #[serde(flatten)]
    pub payload: TaskPayload,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub display: Option<serde_json::Value>,
}

impl From<PairedQuery> for TaskSpec {
    fn from(q: PairedQuery) -> Self {
        TaskSpec { payload: TaskPayload::Paired(q), display: None }
    }
}

impl From<AbsoluteQuery> for TaskSpec {
    fn from(q: AbsoluteQuery) -> Self {
        TaskSpec { payload: TaskPayload::Absolute(q), display: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Pending,
    InProgress,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingEntry {
    pub rater_id: String,
    pub level: Level,
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
struct Lease {
    rater_id: String,
    expires_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalTask {
    pub task_id: String,
    pub batch_id: String,
    pub spec: TaskSpec,
    pub min_raters: usize,
    pub ratings: Vec<RatingEntry>,
    seq: usize,
    leases: Vec<Lease>,
}

impl EvalTask {
    pub fn is_complete(&self) -> bool {
        self.ratings.len() >= self.min_raters
    }

    pub fn status(&self, now_ms: u64) -> TaskStatus {
        if self.is_complete() {
            TaskStatus::Complete
        } else if self.leases.iter().any(|l| l.expires_ms > now_ms) {
            TaskStatus::InProgress
        } else {
            TaskStatus::Pending
        }
    }

    fn rated_by(&self, rater: &str) -> bool {
        self.ratings.iter().any(|r| r.rater_id == rater)
    }

    fn active_leases(&self, now_ms: u64) -> usize {
        self.leases.iter().filter(|l| l.expires_ms > now_ms).count()
    }

    /// Full stored state, including raw levels and presentation order.
    pub fn record(&self, now_ms: u64) -> TaskRecord {
        TaskRecord {
            task_id: self.task_id.clone(),
            batch_id: self.batch_id.clone(),
            spec: self.spec.clone(),
            min_raters: self.min_raters,
            status: self.status(now_ms),
            ratings: self.ratings.clone(),
        }
    }

    /// Rater-facing view: stimuli in display order, no presentation metadata.
    pub fn view(&self, progress: BatchProgress) -> TaskView {
        let (question, stimuli) = match &self.spec.payload {
            TaskPayload::Paired(q) => {
                let (a, b) = q.displayed();
                (Question::from_parts(q.kind, q.class_label, ""), vec![a.to_vec(), b.to_vec()])
            }
            TaskPayload::Absolute(q) => (q.question(), vec![q.x.clone()]),
        };
        let question = question.expect("validated at enqueue");
        TaskView {
            task_id: self.task_id.clone(),
            batch_id: self.batch_id.clone(),
            protocol: match self.spec.payload {
                TaskPayload::Paired(_) => "paired".into(),
                TaskPayload::Absolute(_) => "absolute".into(),
            },
            kind: question.kind(),
            class_label: question.class_label(),
            stimuli,
            display: self.spec.display.clone(),
            progress,
        }
    }
}

/// Audit view of a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: String,
    pub batch_id: String,
    pub spec: TaskSpec,
    pub min_raters: usize,
    pub status: TaskStatus,
    pub ratings: Vec<RatingEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchProgress {
    pub complete: usize,
    pub total: usize,
}

/// What a rater is shown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskView {
    pub task_id: String,
    pub batch_id: String,
    /// `paired` or `absolute`.
    pub protocol: String,
    pub kind: QueryKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_label: Option<ClassLabel>,
    /// One stimulus (absolute) or two in display order (paired).
    pub stimuli: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub display: Option<serde_json::Value>,
    pub progress: BatchProgress,
}

/// Mean of the mapped levels of one complete task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedRating {
    pub task_id: String,
    pub query_id: String,
    pub value: f64,
    pub raters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchStatus {
    pub batch_id: String,
    pub total: usize,
    pub complete: usize,
    pub complete_fraction: f64,
    /// Present only once every task is complete, in batch order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub responses: Option<Vec<AggregatedRating>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingAck {
    pub task_id: String,
    pub status: TaskStatus,
    pub ratings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    Batch { batch_id: String, policy: AggregationPolicy, tasks: Vec<TaskSpec> },
    Rating { task_id: String, rater_id: String, level: Level, timestamp_ms: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueueConfig {
    pub lease_timeout_ms: u64,
    pub default_policy: AggregationPolicy,
}

impl Default for QueueConfig {
    fn default() -> Self {
        QueueConfig { lease_timeout_ms: 10 * 60 * 1000, default_policy: AggregationPolicy::default() }
    }
}

#[derive(Debug)]
struct Batch {
    task_ids: Vec<String>,
}

/// Content-addressed batch id: identical content and policy give the same id.
pub fn batch_id_for(tasks: &[TaskSpec], policy: &AggregationPolicy) -> String {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(policy).expect("policy serializes"));
    hasher.update(serde_json::to_vec(tasks).expect("tasks serialize"));
    let digest = hasher.finalize();
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug)]
pub struct Queue {
    config: QueueConfig,
    log_path: PathBuf,
    log: File,
    batches: BTreeMap<String, Batch>,
    tasks: HashMap<String, EvalTask>,
    next_seq: usize,
}

impl Queue {
    /// Opens (creating if needed) the queue stored under `data_dir`.
    pub fn open(data_dir: &Path, config: QueueConfig) -> Result<Self, QueueError> {
        fs::create_dir_all(data_dir)?;
        let log_path = data_dir.join("events.jsonl");
        let mut events = Vec::new();
        if log_path.exists() {
            let bytes = fs::read(&log_path)?;
            let mut valid_len = 0;
            let lines: Vec<&[u8]> = bytes.split_inclusive(|&b| b == b'\n').collect();
            for (i, line) in lines.iter().enumerate() {
                let complete = line.ends_with(b"\n");
                let text = String::from_utf8_lossy(line);
                if text.trim().is_empty() {
                    valid_len += line.len();
                    continue;
                }
                match serde_json::from_str::<Event>(text.trim()) {
                    Ok(e) if complete => {
                        events.push(e);
                        valid_len += line.len();
                    }
                    // A torn final write: drop it.
                    _ if !complete && i + 1 == lines.len() => break,
                    Ok(_) => unreachable!(),
                    Err(e) => return Err(QueueError::Corrupt { line: i + 1, detail: e.to_string() }),
                }
            }
            if valid_len < bytes.len() {
                OpenOptions::new().write(true).open(&log_path)?.set_len(valid_len as u64)?;
            }
        }
        let log = OpenOptions::new().create(true).append(true).open(&log_path)?;
        let mut queue =
            Queue { config, log_path, log, batches: BTreeMap::new(), tasks: HashMap::new(), next_seq: 0 };
        for e in events {
            queue.apply(e);
        }
        Ok(queue)
    }

    pub fn log_path(&self) -> &Path {
        &self.log_path
    }

    pub fn config(&self) -> &QueueConfig {
        &self.config
    }

    fn append(&mut self, event: &Event) -> Result<(), QueueError> {
        let mut line = serde_json::to_vec(event).expect("event serializes");
        line.push(b'\n');
        self.log.write_all(&line)?;
        self.log.sync_data()?;
        Ok(())
    }

    fn apply(&mut self, event: Event) {
        match event {
            Event::Batch { batch_id, policy, tasks } => {
                if self.batches.contains_key(&batch_id) {
                    return;
                }
                let mut ids = Vec::with_capacity(tasks.len());
                for (i, spec) in tasks.into_iter().enumerate() {
                    let task_id = format!("{batch_id}.{i}");
                    ids.push(task_id.clone());
                    self.tasks.insert(
                        task_id.clone(),
                        EvalTask {
                            task_id,
                            batch_id: batch_id.clone(),
                            spec,
                            min_raters: policy.min_raters,
                            ratings: Vec::new(),
                            seq: self.next_seq,
                            leases: Vec::new(),
                        },
                    );
                    self.next_seq += 1;
                }
                self.batches.insert(batch_id, Batch { task_ids: ids });
            }
            Event::Rating { task_id, rater_id, level, timestamp_ms } => {
                if let Some(t) = self.tasks.get_mut(&task_id) {
                    t.leases.retain(|l| l.rater_id != rater_id);
                    t.ratings.push(RatingEntry { rater_id, level, timestamp_ms });
                }
            }
        }
    }

    /// Persists a batch of tasks, all pending. Re-enqueueing identical content
    /// returns the existing id without duplicating tasks.
    pub fn enqueue_batch(
        &mut self,
        tasks: Vec<TaskSpec>,
        policy: Option<AggregationPolicy>,
    ) -> Result<String, QueueError> {
        let policy = policy.unwrap_or_else(|| self.config.default_policy.clone());
        if policy.min_raters == 0 {
            return Err(QueueError::InvalidBatch("min_raters must be at least 1".into()));
        }
        for t in &tasks {
            t.payload.validate()?;
        }
        let batch_id = batch_id_for(&tasks, &policy);
        if self.batches.contains_key(&batch_id) {
            return Ok(batch_id);
        }
        let event = Event::Batch { batch_id: batch_id.clone(), policy, tasks };
        self.append(&event)?;
        self.apply(event);
        Ok(batch_id)
    }

    fn progress(&self, batch_id: &str) -> BatchProgress {
        let ids = self.batches.get(batch_id).map(|b| b.task_ids.as_slice()).unwrap_or(&[]);
        BatchProgress { complete: ids.iter().filter(|id| self.tasks[*id].is_complete()).count(), total: ids.len() }
    }

    /// Next task for `rater_id`: one they have not rated, their own live lease
    /// first, then fewest ratings plus live leases, then oldest. The returned
    /// task is leased to the rater until `now_ms + lease_timeout`.
    pub fn next_task(&mut self, rater_id: &str, now_ms: u64) -> Option<TaskView> {
        let chosen = self
            .tasks
            .values()
            .filter(|t| !t.is_complete() && !t.rated_by(rater_id))
            .min_by_key(|t| {
                let own = t.leases.iter().any(|l| l.rater_id == rater_id && l.expires_ms > now_ms);
                (!own, t.ratings.len() + t.active_leases(now_ms), t.seq)
            })?
            .task_id
            .clone();
        let expires_ms = now_ms + self.config.lease_timeout_ms;
        let task = self.tasks.get_mut(&chosen).expect("chosen from map");
        task.leases.retain(|l| l.expires_ms > now_ms && l.rater_id != rater_id);
        task.leases.push(Lease { rater_id: rater_id.to_string(), expires_ms });
        let batch_id = task.batch_id.clone();
        let progress = self.progress(&batch_id);
        Some(self.tasks[&chosen].view(progress))
    }

    pub fn submit_rating(
        &mut self,
        task_id: &str,
        rater_id: &str,
        level: u8,
        now_ms: u64,
    ) -> Result<RatingAck, QueueError> {
        let task = self.tasks.get(task_id).ok_or_else(|| QueueError::UnknownTask(task_id.to_string()))?;
        let level = Level::new(level)?;
        if task.rated_by(rater_id) {
            return Err(QueueError::DuplicateRating { task_id: task_id.to_string(), rater_id: rater_id.to_string() });
        }
        let event = Event::Rating {
            task_id: task_id.to_string(),
            rater_id: rater_id.to_string(),
            level,
            timestamp_ms: now_ms,
        };
        self.append(&event)?;
        self.apply(event);
        let task = &self.tasks[task_id];
        Ok(RatingAck { task_id: task_id.to_string(), status: task.status(now_ms), ratings: task.ratings.len() })
    }

    pub fn task(&self, task_id: &str) -> Option<&EvalTask> {
        self.tasks.get(task_id)
    }

    pub fn batch_tasks(&self, batch_id: &str) -> Result<Vec<&EvalTask>, QueueError> {
        let batch = self.batches.get(batch_id).ok_or_else(|| QueueError::UnknownBatch(batch_id.to_string()))?;
        Ok(batch.task_ids.iter().map(|id| &self.tasks[id]).collect())
    }

    pub fn aggregate(&self, task_id: &str) -> Result<AggregatedRating, QueueError> {
        let task = self.tasks.get(task_id).ok_or_else(|| QueueError::UnknownTask(task_id.to_string()))?;
        aggregate(task)
    }

    pub fn poll_batch(&self, batch_id: &str) -> Result<BatchStatus, QueueError> {
        let tasks = self.batch_tasks(batch_id)?;
        let total = tasks.len();
        let complete = tasks.iter().filter(|t| t.is_complete()).count();
        let responses = if complete == total {
            Some(tasks.iter().map(|t| aggregate(t)).collect::<Result<Vec<_>, _>>()?)
        } else {
            None
        };
        Ok(BatchStatus {
            batch_id: batch_id.to_string(),
            total,
            complete,
            complete_fraction: if total == 0 { 1.0 } else { complete as f64 / total as f64 },
            responses,
        })
    }
}

/// Maps each rating through the task's scale and averages over raters.
pub fn aggregate(task: &EvalTask) -> Result<AggregatedRating, QueueError> {
    if !task.is_complete() {
        return Err(QueueError::Incomplete(task.task_id.clone()));
    }
    let sum: f64 = task.ratings.iter().map(|r| task.spec.payload.level_value(r.level)).sum();
    Ok(AggregatedRating {
        task_id: task.task_id.clone(),
        query_id: task.spec.payload.query_id(),
        value: sum / task.ratings.len() as f64,
        raters: task.ratings.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::GeneratedDatum;
    use crate::nes::{build_queries, sample_perturbations};

    fn queries(n: usize) -> Vec<TaskSpec> {
        let x: Vec<GeneratedDatum> = (0..n).map(|i| GeneratedDatum(vec![i as f64, 0.0])).collect();
        let labels = vec![ClassLabel(0); n];
        let perts = sample_perturbations(n, 1, 2, 1.0, 1).unwrap();
        build_queries(&x, &labels, &perts, QueryKind::Naturalness, 2).unwrap().into_iter().map(Into::into).collect()
    }

    fn open(dir: &Path) -> Queue {
        Queue::open(dir, QueueConfig::default()).unwrap()
    }

    fn rate_all(q: &mut Queue, task_id: &str, levels: &[u8]) {
        for (i, &l) in levels.iter().enumerate() {
            q.submit_rating(task_id, &format!("r{i}"), l, 1).unwrap();
        }
    }

    #[test]
    fn enqueue_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let mut q = open(dir.path());
        let id = q.enqueue_batch(queries(100), None).unwrap();
        assert_eq!(q.batch_tasks(&id).unwrap().len(), 100);
        assert!(q.batch_tasks(&id).unwrap().iter().all(|t| t.status(0) == TaskStatus::Pending));
        assert_eq!(q.enqueue_batch(queries(100), None).unwrap(), id);
        assert_eq!(q.tasks.len(), 100);
        assert_eq!(q.poll_batch(&id).unwrap().complete_fraction, 0.0);
    }

    #[test]
    fn no_double_rating_and_multi_rater() {
        let dir = tempfile::tempdir().unwrap();
        let mut q = open(dir.path());
        q.enqueue_batch(queries(1), Some(AggregationPolicy { min_raters: 2, combine: Combine::Mean })).unwrap();
        let t = q.next_task("A", 0).unwrap();
        q.submit_rating(&t.task_id, "A", 3, 1).unwrap();
        assert!(q.next_task("A", 2).is_none());
        assert_eq!(q.next_task("B", 2).unwrap().task_id, t.task_id);
        // Concurrent pollers may share a task.
        assert_eq!(q.next_task("C", 2).unwrap().task_id, t.task_id);
    }

    #[test]
    fn lease_expiry_reverts_to_pending() {
        let dir = tempfile::tempdir().unwrap();
        let mut q = Queue::open(dir.path(), QueueConfig { lease_timeout_ms: 100, ..QueueConfig::default() }).unwrap();
        q.enqueue_batch(queries(2), Some(AggregationPolicy { min_raters: 1, combine: Combine::Mean })).unwrap();
        let a = q.next_task("A", 0).unwrap();
        assert_eq!(q.task(&a.task_id).unwrap().status(50), TaskStatus::InProgress);
        // B is steered to the unleased task first.
        let b = q.next_task("B", 10).unwrap();
        assert_ne!(a.task_id, b.task_id);
        assert_eq!(q.task(&a.task_id).unwrap().status(150), TaskStatus::Pending);
        assert_eq!(q.next_task("C", 150).unwrap().task_id, a.task_id);
    }

    #[test]
    fn submit_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut q = open(dir.path());
        let id = q.enqueue_batch(queries(1), None).unwrap();
        let task_id = format!("{id}.0");
        assert!(matches!(q.submit_rating("nope", "A", 3, 0), Err(QueueError::UnknownTask(_))));
        assert!(matches!(q.submit_rating(&task_id, "A", 6, 0), Err(QueueError::InvalidLevel(InvalidLevel(6)))));
        q.submit_rating(&task_id, "A", 2, 0).unwrap();
        assert!(matches!(q.submit_rating(&task_id, "A", 4, 0), Err(QueueError::DuplicateRating { .. })));
        assert_eq!(q.task(&task_id).unwrap().ratings[0].level.get(), 2);
        assert!(matches!(q.aggregate(&task_id), Err(QueueError::Incomplete(_))));
    }

    #[test]
    fn five_raters_complete_under_default_policy() {
        let dir = tempfile::tempdir().unwrap();
        let mut q = open(dir.path());
        let id = q.enqueue_batch(queries(1), None).unwrap();
        let task_id = format!("{id}.0");
        rate_all(&mut q, &task_id, &[1, 5, 1, 5]);
        assert!(!q.task(&task_id).unwrap().is_complete());
        let ack = q.submit_rating(&task_id, "r4", 3, 1).unwrap();
        assert_eq!(ack.status, TaskStatus::Complete);
        assert_eq!(q.aggregate(&task_id).unwrap().value, 0.0);
        assert!(q.next_task("someone", 2).is_none());
    }

    #[test]
    fn aggregation_table() {
        let dir = tempfile::tempdir().unwrap();
        let mut q = open(dir.path());
        let id = q.enqueue_batch(queries(3), None).unwrap();
        rate_all(&mut q, &format!("{id}.0"), &[1, 1, 1, 1, 1]);
        rate_all(&mut q, &format!("{id}.1"), &[2, 2, 2, 2, 2]);
        assert_eq!(q.aggregate(&format!("{id}.0")).unwrap().value, 1.0);
        assert_eq!(q.aggregate(&format!("{id}.1")).unwrap().value, 0.5);
        let status = q.poll_batch(&id).unwrap();
        assert!((status.complete_fraction - 2.0 / 3.0).abs() < 1e-15);
        assert!(status.responses.is_none());
    }

    #[test]
    fn poll_empty_and_unknown() {
        let dir = tempfile::tempdir().unwrap();
        let mut q = open(dir.path());
        let id = q.enqueue_batch(vec![], None).unwrap();
        let s = q.poll_batch(&id).unwrap();
        assert_eq!(s.complete_fraction, 1.0);
        assert_eq!(s.responses, Some(vec![]));
        assert!(matches!(q.poll_batch("missing"), Err(QueueError::UnknownBatch(_))));
    }

    #[test]
    fn absolute_tasks_use_absolute_scale() {
        let dir = tempfile::tempdir().unwrap();
        let mut q = open(dir.path());
        let spec: TaskSpec = AbsoluteQuery::new("grid.0", vec![0.0, 0.0], Question::Naturalness).into();
        let id = q.enqueue_batch(vec![spec], Some(AggregationPolicy { min_raters: 2, combine: Combine::Mean })).unwrap();
        rate_all(&mut q, &format!("{id}.0"), &[5, 4]);
        assert_eq!(q.aggregate(&format!("{id}.0")).unwrap().value, 0.875);
    }

    #[test]
    fn restart_preserves_state_and_drops_torn_write() {
        let dir = tempfile::tempdir().unwrap();
        let (id, before) = {
            let mut q = open(dir.path());
            let id = q.enqueue_batch(queries(4), Some(AggregationPolicy { min_raters: 1, combine: Combine::Mean })).unwrap();
            for i in 0..4 {
                q.submit_rating(&format!("{id}.{i}"), "A", (i + 1) as u8, 5).unwrap();
            }
            (id.clone(), q.poll_batch(&id).unwrap())
        };
        let mut f = OpenOptions::new().append(true).open(dir.path().join("events.jsonl")).unwrap();
        f.write_all(b"{\"event\":\"rating\",\"task_id\":").unwrap();
        drop(f);
        let q = open(dir.path());
        assert_eq!(q.poll_batch(&id).unwrap(), before);
    }

    #[test]
    fn invalid_payload_rejected_atomically() {
        let dir = tempfile::tempdir().unwrap();
        let mut q = open(dir.path());
        let mut specs = queries(3);
        if let TaskPayload::Paired(p) = &mut specs[2].payload {
            p.class_label = Some(ClassLabel(0));
        }
        assert!(matches!(q.enqueue_batch(specs, None), Err(QueueError::InvalidBatch(_))));
        assert!(q.tasks.is_empty());
        assert_eq!(fs::metadata(q.log_path()).unwrap().len(), 0);
    }

    #[test]
    fn view_hides_presentation_order() {
        let dir = tempfile::tempdir().unwrap();
        let mut q = open(dir.path());
        let specs = queries(6);
        q.enqueue_batch(specs.clone(), Some(AggregationPolicy { min_raters: 1, combine: Combine::Mean })).unwrap();
        while let Some(view) = q.next_task("A", 0) {
            let task = q.task(&view.task_id).unwrap();
            let TaskPayload::Paired(p) = &task.spec.payload else { panic!() };
            let (first, second) = p.displayed();
            assert_eq!(view.stimuli, vec![first.to_vec(), second.to_vec()]);
            let json = serde_json::to_string(&view).unwrap();
            assert!(!json.contains("flip"));
            q.submit_rating(&view.task_id, "A", 3, 0).unwrap();
        }
    }
}
