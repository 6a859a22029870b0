//! Workers, assignments, simulated answers and the labeling desk.
//!
//! The desk is the meeting point between the engine loop and human workers:
//! the loop opens a batch and blocks until every assignment is answered, while
//! request handlers list a worker's open questions and record answers.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::er_graph::VertexId;
use crate::error::{Error, Result};
use crate::truth::Answer;

pub const DEFAULT_HUMAN_QUALITY: f64 = 0.9;
pub const DEFAULT_ASSIGNMENTS: usize = 5;
const MIN_QUALITY: f64 = 0.001;
const MAX_QUALITY: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkerKind {
    Simulated,
    Human,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Worker {
    pub id: String,
    pub kind: WorkerKind,
    /// Probability of a correct answer, strictly inside (0, 1).
    pub quality: f64,
    pub error_rate: Option<f64>,
}

impl Worker {
    /// A simulated worker; its quality is `1 - error_rate`, kept away from
    /// 0 and 1 so that the posterior stays finite.
    pub fn simulated(id: impl Into<String>, error_rate: f64) -> Result<Self> {
        let id = id.into();
        if !(0.0..=1.0).contains(&error_rate) {
            return Err(Error::Worker {
                worker: id,
                message: format!("error rate {error_rate} outside [0, 1]"),
            });
        }
        Ok(Worker {
            id,
            kind: WorkerKind::Simulated,
            quality: (1.0 - error_rate).clamp(MIN_QUALITY, MAX_QUALITY),
            error_rate: Some(error_rate),
        })
    }

    pub fn human(id: impl Into<String>, quality: Option<f64>) -> Result<Self> {
        let id = id.into();
        let quality = quality.unwrap_or(DEFAULT_HUMAN_QUALITY);
        if !(quality > 0.0 && quality < 1.0) {
            return Err(Error::Worker {
                worker: id,
                message: format!("quality {quality} outside (0, 1)"),
            });
        }
        Ok(Worker {
            id,
            kind: WorkerKind::Human,
            quality,
            error_rate: None,
        })
    }
}

/// Parses `worker_id<TAB>kind<TAB>quality_or_error_rate` lines. The value may
/// be omitted for human workers.
pub fn read_workers<R: BufRead>(reader: R, name: &Path) -> Result<Vec<Worker>> {
    let mut out = Vec::new();
    let mut seen = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(name, e))?;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: name.to_path_buf(),
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() < 2 || fields.len() > 3 || fields[0].is_empty() {
            return Err(parse_err("expected worker_id, kind and an optional value".into()));
        }
        let value = match fields.get(2).filter(|v| !v.is_empty()) {
            Some(v) => Some(v.parse::<f64>().map_err(|_| parse_err(format!("bad number {v:?}")))?),
            None => None,
        };
        let worker = match fields[1] {
            "simulated" => Worker::simulated(
                fields[0],
                value.ok_or_else(|| parse_err("simulated workers need an error rate".into()))?,
            )?,
            "human" => Worker::human(fields[0], value)?,
            other => return Err(parse_err(format!("unknown worker kind {other:?}"))),
        };
        if seen.insert(worker.id.clone(), ()).is_some() {
            return Err(parse_err(format!("duplicate worker {}", worker.id)));
        }
        out.push(worker);
    }
    Ok(out)
}

pub fn load_workers(path: impl AsRef<Path>) -> Result<Vec<Worker>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_workers(BufReader::new(file), path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentState {
    Pending,
    Answered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub question: VertexId,
    pub worker: String,
    pub state: AssignmentState,
}

/// Round-robin assignment whose cursor carries over between batches.
#[derive(Debug, Clone, Default)]
pub struct RoundRobin {
    cursor: usize,
}

impl RoundRobin {
    pub fn assign(&mut self, batch: &[VertexId], pool: &[Worker], n: usize) -> Result<Vec<Assignment>> {
        if pool.len() < n || n == 0 {
            return Err(Error::PoolTooSmall {
                available: pool.len(),
                required: n.max(1),
            });
        }
        let mut out = Vec::with_capacity(batch.len() * n);
        for &q in batch {
            for k in 0..n {
                out.push(Assignment {
                    question: q,
                    worker: pool[(self.cursor + k) % pool.len()].id.clone(),
                    state: AssignmentState::Pending,
                });
            }
            self.cursor = (self.cursor + n) % pool.len();
        }
        Ok(out)
    }
}

/// Assigns each question to `n` distinct workers, round-robin from the start
/// of the pool.
pub fn assign(batch: &[VertexId], pool: &[Worker], n: usize) -> Result<Vec<Assignment>> {
    RoundRobin::default().assign(batch, pool, n)
}

/// The true label with probability `1 - error_rate`, the flipped one otherwise.
pub fn simulate_answer<R: Rng + ?Sized>(worker: &Worker, is_match: bool, rng: &mut R) -> Answer {
    let truth = if is_match { Answer::Match } else { Answer::NonMatch };
    let e = worker.error_rate.unwrap_or(1.0 - worker.quality);
    if rng.gen_bool(e.clamp(0.0, 1.0)) {
        truth.flipped()
    } else {
        truth
    }
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Append-only `question_u1<TAB>question_u2<TAB>worker_id<TAB>answer<TAB>unix_ts`.
pub struct LabelLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl LabelLog {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(LabelLog {
            path,
            out: BufWriter::new(file),
        })
    }

    pub fn append(&mut self, u1: &str, u2: &str, worker: &str, answer: Answer, ts: u64) -> Result<()> {
        writeln!(
            self.out,
            "{}\t{}\t{}\t{}\t{}",
            crate::kb::escape(u1),
            crate::kb::escape(u2),
            crate::kb::escape(worker),
            answer,
            ts
        )
        .and_then(|_| self.out.flush())
        .map_err(|e| Error::io(&self.path, e))
    }
}

/// One matched attribute shown side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeRow {
    pub left_attribute: String,
    pub right_attribute: String,
    pub left: Vec<String>,
    pub right: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborView {
    pub relationship: String,
    pub entity: String,
    pub label: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Neighborhood {
    pub left: Vec<NeighborView>,
    pub right: Vec<NeighborView>,
}

/// What a worker sees for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionView {
    pub question_id: u64,
    pub u1: String,
    pub u2: String,
    pub u1_label: Option<String>,
    pub u2_label: Option<String>,
    pub attributes: Vec<AttributeRow>,
    pub neighborhood: Neighborhood,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionStatus {
    #[serde(rename = "loop")]
    pub loop_index: usize,
    pub asked: usize,
    pub resolved: usize,
    pub remaining: usize,
    pub budget: Option<usize>,
    pub finished: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProgressSnapshot {
    #[serde(rename = "loop")]
    pub loop_index: usize,
    pub asked: usize,
    pub labels_received: usize,
    pub confirmed_matches: usize,
    pub confirmed_non_matches: usize,
    pub inferred_matches: usize,
    pub resolved: usize,
    pub remaining: usize,
    pub finished: bool,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

/// Body of a label submission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRequest {
    pub worker_id: String,
    pub question_id: u64,
    pub answer: Answer,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SubmitError {
    #[error("unknown question {0}")]
    UnknownQuestion(u64),
    #[error("worker {worker} is not assigned question {question}")]
    NotAssigned { worker: String, question: u64 },
    #[error("worker {worker} already answered question {question}")]
    Duplicate { worker: String, question: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitReceipt {
    pub question_id: u64,
    pub worker_id: String,
    pub answers_received: usize,
    pub answers_required: usize,
    pub question_complete: bool,
    pub batch_complete: bool,
}

struct OpenQuestion {
    pair: VertexId,
    view: QuestionView,
    /// Empty when any worker may answer.
    assigned: Vec<String>,
    answers: Vec<(String, Answer)>,
}

/// Collected answers for one question: `(quality, answer)` per worker.
pub type Votes = Vec<(f64, Answer)>;

/// Question and answer bookkeeping for human labeling.
///
/// With a non-empty pool, questions are assigned round-robin and only the
/// assigned workers may answer. With an empty pool, any worker may answer
/// until `n` distinct answers are in; unknown workers get the default quality.
pub struct LabelDesk {
    pool: Vec<Worker>,
    n: usize,
    robin: RoundRobin,
    next_id: u64,
    open: BTreeMap<u64, OpenQuestion>,
    log: Option<LabelLog>,
    clock: Box<dyn Fn() -> u64 + Send>,
    status: SessionStatus,
    progress: ProgressSnapshot,
    labels_received: usize,
}

impl LabelDesk {
    pub fn new(pool: Vec<Worker>, n: usize) -> Result<Self> {
        if n == 0 || (!pool.is_empty() && pool.len() < n) {
            return Err(Error::PoolTooSmall {
                available: pool.len(),
                required: n.max(1),
            });
        }
        Ok(LabelDesk {
            pool,
            n,
            robin: RoundRobin::default(),
            next_id: 1,
            open: BTreeMap::new(),
            log: None,
            clock: Box::new(unix_now),
            status: SessionStatus::default(),
            progress: ProgressSnapshot::default(),
            labels_received: 0,
        })
    }

    pub fn with_log(mut self, log: LabelLog) -> Self {
        self.log = Some(log);
        self
    }

    /// Replaces the timestamp source of the label log.
    pub fn with_clock(mut self, clock: impl Fn() -> u64 + Send + 'static) -> Self {
        self.clock = Box::new(clock);
        self
    }

    pub fn assignments_per_question(&self) -> usize {
        self.n
    }

    fn quality(&self, worker: &str) -> f64 {
        self.pool
            .iter()
            .find(|w| w.id == worker)
            .map_or(DEFAULT_HUMAN_QUALITY, |w| w.quality)
    }

    /// Opens a batch. Question ids in the views are filled in and returned.
    pub fn open_batch(&mut self, questions: Vec<(VertexId, QuestionView)>) -> Result<Vec<u64>> {
        let pairs: Vec<VertexId> = questions.iter().map(|(v, _)| *v).collect();
        let assignments = if self.pool.is_empty() {
            Vec::new()
        } else {
            self.robin.assign(&pairs, &self.pool, self.n)?
        };
        let mut ids = Vec::with_capacity(questions.len());
        for (k, (pair, mut view)) in questions.into_iter().enumerate() {
            let id = self.next_id;
            self.next_id += 1;
            view.question_id = id;
            let assigned = if self.pool.is_empty() {
                Vec::new()
            } else {
                assignments[k * self.n..(k + 1) * self.n]
                    .iter()
                    .map(|a| a.worker.clone())
                    .collect()
            };
            self.open.insert(
                id,
                OpenQuestion {
                    pair,
                    view,
                    assigned,
                    answers: Vec::new(),
                },
            );
            ids.push(id);
        }
        Ok(ids)
    }

    fn complete(&self, q: &OpenQuestion) -> bool {
        q.answers.len() >= self.n
    }

    /// Open questions the worker still has to answer.
    pub fn questions_for(&self, worker: &str) -> Vec<QuestionView> {
        self.open
            .values()
            .filter(|q| !self.complete(q))
            .filter(|q| q.assigned.is_empty() || q.assigned.iter().any(|w| w == worker))
            .filter(|q| q.answers.iter().all(|(w, _)| w != worker))
            .map(|q| q.view.clone())
            .collect()
    }

    pub fn submit(&mut self, worker: &str, question: u64, answer: Answer) -> Result<SubmitReceipt, SubmitError> {
        let n = self.n;
        let q = self.open.get_mut(&question).ok_or(SubmitError::UnknownQuestion(question))?;
        if q.answers.iter().any(|(w, _)| w == worker) {
            return Err(SubmitError::Duplicate {
                worker: worker.to_string(),
                question,
            });
        }
        let allowed = if q.assigned.is_empty() {
            q.answers.len() < n
        } else {
            q.assigned.iter().any(|w| w == worker)
        };
        if !allowed {
            return Err(SubmitError::NotAssigned {
                worker: worker.to_string(),
                question,
            });
        }
        q.answers.push((worker.to_string(), answer));
        self.labels_received += 1;
        self.progress.labels_received = self.labels_received;
        let answers_received = q.answers.len();
        let (u1, u2) = (q.view.u1.clone(), q.view.u2.clone());
        if let Some(log) = self.log.as_mut() {
            let ts = (self.clock)();
            if let Err(e) = log.append(&u1, &u2, worker, answer, ts) {
                tracing::error!("label log write failed: {e}");
            }
        }
        Ok(SubmitReceipt {
            question_id: question,
            worker_id: worker.to_string(),
            answers_received,
            answers_required: n,
            question_complete: answers_received >= n,
            batch_complete: self.batch_complete(),
        })
    }

    pub fn batch_complete(&self) -> bool {
        self.open.values().all(|q| self.complete(q))
    }

    pub fn has_open_batch(&self) -> bool {
        !self.open.is_empty()
    }

    /// Removes the batch and returns its votes in question order.
    pub fn take_results(&mut self) -> Vec<(VertexId, Votes)> {
        let open = std::mem::take(&mut self.open);
        open.into_values()
            .map(|q| {
                let votes = q.answers.iter().map(|(w, a)| (self.quality(w), *a)).collect();
                (q.pair, votes)
            })
            .collect()
    }

    pub fn status(&self) -> SessionStatus {
        self.status.clone()
    }

    pub fn set_status(&mut self, status: SessionStatus) {
        self.status = status;
    }

    pub fn progress(&self) -> ProgressSnapshot {
        self.progress.clone()
    }

    pub fn set_progress(&mut self, mut progress: ProgressSnapshot) {
        progress.labels_received = self.labels_received;
        self.progress = progress;
    }
}

/// A desk shared between the engine loop and request handlers.
pub struct SharedDesk {
    desk: Mutex<LabelDesk>,
    changed: Condvar,
    closed: AtomicBool,
}

impl SharedDesk {
    pub fn new(desk: LabelDesk) -> Self {
        SharedDesk {
            desk: Mutex::new(desk),
            changed: Condvar::new(),
            closed: AtomicBool::new(false),
        }
    }

    pub fn lock(&self) -> MutexGuard<'_, LabelDesk> {
        self.desk.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn submit(&self, worker: &str, question: u64, answer: Answer) -> Result<SubmitReceipt, SubmitError> {
        let receipt = self.lock().submit(worker, question, answer);
        self.changed.notify_all();
        receipt
    }

    pub fn notify(&self) {
        self.changed.notify_all();
    }

    /// Wakes a blocked [`wait_for_batch`](Self::wait_for_batch) and makes it fail.
    pub fn close(&self) {
        self.closed.store(true, Ordering::SeqCst);
        self.changed.notify_all();
    }

    pub fn is_closed(&self) -> bool {
        self.closed.load(Ordering::SeqCst)
    }

    /// Blocks until every question of the open batch is answered, then
    /// returns its votes.
    pub fn wait_for_batch(&self) -> Result<Vec<(VertexId, Votes)>> {
        let mut desk = self.lock();
        while !desk.batch_complete() {
            if self.is_closed() {
                return Err(Error::Other("labeling desk closed before the batch was answered".into()));
            }
            desk = match self.changed.wait_timeout(desk, Duration::from_millis(500)) {
                Ok((g, _)) => g,
                Err(e) => e.into_inner().0,
            };
        }
        Ok(desk.take_results())
    }
}
