//! The search loop: warm start, propose → normalize → merge → evaluate →
//! tell, with a JSON-lines trial log that supports caching and resume.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::analysis::{centroid, SubsetRow};
use crate::cmaes::{CmaEs, CmaError};
use crate::fitness::{
    baseline_merge_best, best_single, evaluate_external, macro_average, Evaluation, FitnessError, FitnessValue,
    TaskScores,
};
use crate::merger::{merge, normalize, MergeError, NormalizedWeights, WeightVector};
use crate::tensorstore::{validate_pool, write_checkpoint, CheckpointPool, StoreError, TensorMap};
use crate::toylab::{ToyError, ToyTaskSuite};

pub const LOG_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum DriverError {
    #[error("invalid search config: {0}")]
    Config(String),
    #[error("invalid pool: {0}")]
    PoolInvalid(String),
    #[error("evaluation of trial {trial_id} failed: {source}")]
    Evaluator {
        trial_id: u64,
        #[source]
        source: FitnessError,
    },
    #[error("corrupt log: {0}")]
    CorruptLog(String),
    #[error("log does not match this run: {0}")]
    ConfigMismatch(String),
    #[error("i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Merge(#[from] MergeError),
    #[error(transparent)]
    Cma(#[from] CmaError),
    #[error(transparent)]
    Fitness(#[from] FitnessError),
    #[error(transparent)]
    Toy(#[from] ToyError),
}

impl DriverError {
    pub fn is_evaluator_failure(&self) -> bool {
        matches!(self, DriverError::Evaluator { .. })
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DriverError + '_ {
    move |source| DriverError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Where task scores come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum EvaluatorSpec {
    /// A toy-lab suite scored in process.
    Builtin { suite: PathBuf },
    /// An external command following the `--checkpoint/--tasks` protocol.
    External {
        command: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        timeout_secs: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorPolicy {
    #[default]
    Abort,
    Penalize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Number of sampled trials; seeded and baseline trials are extra.
    pub budget: usize,
    pub sigma0: f64,
    pub lambda: Option<usize>,
    pub seed: u64,
    pub tasks: Vec<String>,
    #[serde(default)]
    pub heldout_tasks: Vec<String>,
    pub evaluator: EvaluatorSpec,
    pub warm_start: bool,
    pub on_eval_error: ErrorPolicy,
    pub top_n: Option<usize>,
    pub epsilon_cache: f64,
    #[serde(default)]
    pub parallel: bool,
}

impl SearchConfig {
    pub fn new(tasks: Vec<String>, evaluator: EvaluatorSpec) -> Self {
        SearchConfig {
            budget: 50,
            sigma0: 1.0,
            lambda: None,
            seed: 0,
            tasks,
            heldout_tasks: Vec::new(),
            evaluator,
            warm_start: true,
            on_eval_error: ErrorPolicy::Abort,
            top_n: None,
            epsilon_cache: 1e-9,
            parallel: false,
        }
    }

    pub fn validate(&self) -> Result<(), DriverError> {
        let bad = |m: String| Err(DriverError::Config(m));
        if self.budget < 1 {
            return bad("budget must be >= 1".into());
        }
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return bad(format!("sigma0 must be positive and finite, got {}", self.sigma0));
        }
        if let Some(l) = self.lambda {
            if l < 2 {
                return bad(format!("lambda must be >= 2, got {l}"));
            }
        }
        if self.tasks.is_empty() {
            return bad("at least one held-in task is required".into());
        }
        let mut seen = std::collections::HashSet::new();
        for t in self.tasks.iter().chain(&self.heldout_tasks) {
            if !seen.insert(t) {
                return bad(format!("task {t:?} listed twice"));
            }
        }
        if self.epsilon_cache.is_nan() || self.epsilon_cache < 0.0 {
            return bad("epsilon_cache must be >= 0".into());
        }
        Ok(())
    }

    fn report_tasks(&self) -> Vec<String> {
        self.tasks.iter().chain(&self.heldout_tasks).cloned().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialKind {
    Seeded,
    Sampled,
    Baseline,
}

impl TrialKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TrialKind::Seeded => "seeded",
            TrialKind::Sampled => "sampled",
            TrialKind::Baseline => "baseline",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: u64,
    pub kind: TrialKind,
    pub raw: WeightVector,
    pub weights: NormalizedWeights,
    pub scores: TaskScores,
    pub fitness: FitnessValue,
    pub generation: usize,
    pub degenerate_flag: bool,
    #[serde(default)]
    pub cache_hit: bool,
    pub wall_time_ms: f64,
    #[serde(default)]
    pub evaluator_stderr: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_error: Option<String>,
}

/// First line of a trial log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub version: u32,
    pub search: SearchConfig,
    /// Content hash of the pool handed to the run (before any top-n cut).
    pub pool_hash: String,
    /// Labels of the checkpoints actually searched over.
    pub pool_labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool_dir: Option<PathBuf>,
    /// Indices into the original pool when `top_n` restricted it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset_indices: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub name: String,
    pub weights: NormalizedWeights,
    pub scores: TaskScores,
    pub fitness: FitnessValue,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heldout_fitness: Option<FitnessValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSummary {
    pub best_trial_id: u64,
    pub best_weights: NormalizedWeights,
    pub best_fitness: FitnessValue,
    /// Optimized merge, uniform soup, merge-best and best single, scored on
    /// held-in plus held-out tasks.
    pub report: Vec<ReportEntry>,
}

impl SearchSummary {
    pub fn entry(&self, name: &str) -> Option<&ReportEntry> {
        self.report.iter().find(|e| e.name == name)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum LogLine {
    Config(ConfigSnapshot),
    Trial(TrialRecord),
    Summary(SearchSummary),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchLog {
    pub config: ConfigSnapshot,
    pub trials: Vec<TrialRecord>,
    pub summary: Option<SearchSummary>,
}

impl SearchLog {
    pub fn count(&self, kind: TrialKind) -> usize {
        self.trials.iter().filter(|t| t.kind == kind).count()
    }

    pub fn is_complete(&self) -> bool {
        self.summary.is_some()
    }

    /// Best trial by fitness among successful evaluations (ties to the
    /// earliest).
    pub fn best(&self) -> Option<&TrialRecord> {
        let mut best: Option<&TrialRecord> = None;
        for t in self.trials.iter().filter(|t| t.eval_error.is_none()) {
            if best.is_none_or(|b| t.fitness.0 > b.fitness.0) {
                best = Some(t);
            }
        }
        best
    }

    /// Parses a log. A final line cut short by a crash is dropped.
    pub fn read(path: impl AsRef<Path>) -> Result<SearchLog, DriverError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(io_err(path))?;
        let lines: Vec<String> = BufReader::new(file)
            .lines()
            .collect::<Result<_, _>>()
            .map_err(io_err(path))?;
        let lines: Vec<&String> = lines.iter().filter(|l| !l.trim().is_empty()).collect();
        let mut parsed = Vec::with_capacity(lines.len());
        for (i, line) in lines.iter().enumerate() {
            match serde_json::from_str::<LogLine>(line) {
                Ok(l) => parsed.push(l),
                Err(_) if i + 1 == lines.len() && i > 0 => break,
                Err(e) => return Err(DriverError::CorruptLog(format!("line {}: {e}", i + 1))),
            }
        }
        let mut it = parsed.into_iter();
        let config = match it.next() {
            Some(LogLine::Config(c)) => c,
            _ => return Err(DriverError::CorruptLog("first line is not a config snapshot".into())),
        };
        if config.version != LOG_VERSION {
            return Err(DriverError::CorruptLog(format!("unsupported log version {}", config.version)));
        }
        let mut trials: Vec<TrialRecord> = Vec::new();
        let mut summary = None;
        for line in it {
            if summary.is_some() {
                return Err(DriverError::CorruptLog("records after the summary".into()));
            }
            match line {
                LogLine::Trial(t) => {
                    if let Some(prev) = trials.last() {
                        if t.trial_id <= prev.trial_id {
                            return Err(DriverError::CorruptLog(format!(
                                "trial ids not increasing ({} after {})",
                                t.trial_id, prev.trial_id
                            )));
                        }
                    }
                    trials.push(t);
                }
                LogLine::Summary(s) => summary = Some(s),
                LogLine::Config(_) => return Err(DriverError::CorruptLog("second config snapshot".into())),
            }
        }
        Ok(SearchLog { config, trials, summary })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), DriverError> {
        let mut w = LogWriter::create(path.as_ref())?;
        w.line(&LogLine::Config(self.config.clone()))?;
        for t in &self.trials {
            w.line(&LogLine::Trial(t.clone()))?;
        }
        if let Some(s) = &self.summary {
            w.line(&LogLine::Summary(s.clone()))?;
        }
        Ok(())
    }
}

struct LogWriter {
    path: PathBuf,
    file: File,
}

impl LogWriter {
    fn create(path: &Path) -> Result<Self, DriverError> {
        let file = File::create(path).map_err(io_err(path))?;
        Ok(LogWriter {
            path: path.to_path_buf(),
            file,
        })
    }

    fn line<T: Serialize>(&mut self, value: &T) -> Result<(), DriverError> {
        let mut s = serde_json::to_string(value).expect("log records serialize");
        s.push('\n');
        self.file.write_all(s.as_bytes()).map_err(io_err(&self.path))?;
        self.file.flush().map_err(io_err(&self.path))
    }
}

/// Scores a merged checkpoint on a list of tasks.
pub trait Evaluator: Sync {
    fn evaluate(&self, ckpt: &TensorMap, tasks: &[String]) -> Result<Evaluation, FitnessError>;
}

/// Scores toy checkpoints in process.
pub struct BuiltinEvaluator {
    pub suite: ToyTaskSuite,
}

impl Evaluator for BuiltinEvaluator {
    fn evaluate(&self, ckpt: &TensorMap, tasks: &[String]) -> Result<Evaluation, FitnessError> {
        let scores = self.suite.score(ckpt, tasks).map_err(|e| match e {
            ToyError::UnknownTask(t) => FitnessError::MissingTask(t),
            other => FitnessError::ProtocolError(other.to_string()),
        })?;
        Ok(Evaluation {
            scores,
            stderr: String::new(),
        })
    }
}

/// Stages each checkpoint in a private temp dir and runs a command on it.
pub struct ExternalEvaluator {
    pub command: String,
    pub timeout: Option<Duration>,
    dir: tempfile::TempDir,
    counter: AtomicU64,
}

impl ExternalEvaluator {
    pub fn new(command: impl Into<String>, timeout: Option<Duration>) -> std::io::Result<Self> {
        Ok(ExternalEvaluator {
            command: command.into(),
            timeout,
            dir: tempfile::tempdir()?,
            counter: AtomicU64::new(0),
        })
    }
}

impl Evaluator for ExternalEvaluator {
    fn evaluate(&self, ckpt: &TensorMap, tasks: &[String]) -> Result<Evaluation, FitnessError> {
        let k = self.counter.fetch_add(1, Ordering::Relaxed);
        let path = self.dir.path().join(format!("candidate_{k}.mrgc"));
        write_checkpoint(&path, ckpt)
            .map_err(|e| FitnessError::ProtocolError(format!("cannot stage checkpoint: {e}")))?;
        let out = evaluate_external(&path, &self.command, tasks, self.timeout);
        let _ = std::fs::remove_file(&path);
        out
    }
}

/// Instantiates the evaluator described by a spec.
pub fn build_evaluator(spec: &EvaluatorSpec) -> Result<Box<dyn Evaluator>, DriverError> {
    Ok(match spec {
        EvaluatorSpec::Builtin { suite } => Box::new(BuiltinEvaluator {
            suite: ToyTaskSuite::load(suite)?,
        }),
        EvaluatorSpec::External { command, timeout_secs } => {
            let timeout = match timeout_secs {
                Some(s) if !(*s > 0.0 && s.is_finite()) => {
                    return Err(DriverError::Config(format!("timeout must be positive, got {s}")))
                }
                Some(s) => Some(Duration::from_secs_f64(*s)),
                None => None,
            };
            Box::new(
                ExternalEvaluator::new(command.clone(), timeout)
                    .map_err(io_err(Path::new("<tempdir>")))?,
            )
        }
    })
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// JSON-lines log, written and flushed one record at a time.
    pub log_path: Option<PathBuf>,
    /// Recorded in the snapshot so that [`resume`] can reopen the pool.
    pub pool_dir: Option<PathBuf>,
    /// Stop (without a summary) once this many sampled trials are logged.
    pub stop_after_sampled: Option<usize>,
}

type Measured = Result<(Evaluation, FitnessValue), FitnessError>;

struct Outcome {
    scores: TaskScores,
    fitness: FitnessValue,
    stderr: String,
    error: Option<String>,
}

struct Proposal {
    token: crate::cmaes::CandidateToken,
    raw: WeightVector,
    weights: NormalizedWeights,
    degenerate: bool,
    generation: usize,
    cached: Option<(TaskScores, FitnessValue)>,
}

struct Session<'a> {
    cfg: SearchConfig,
    pool: CheckpointPool,
    evaluator: &'a dyn Evaluator,
    es: CmaEs,
    log: SearchLog,
    writer: Option<LogWriter>,
    prefetched: Vec<Option<(Evaluation, FitnessValue)>>,
}

impl<'a> Session<'a> {
    fn next_id(&self) -> u64 {
        self.log.trials.last().map_or(0, |t| t.trial_id + 1)
    }

    fn append(&mut self, rec: TrialRecord) -> Result<(), DriverError> {
        if let Some(w) = self.writer.as_mut() {
            w.line(&LogLine::Trial(rec.clone()))?;
        }
        self.log.trials.push(rec);
        Ok(())
    }

    fn measure(&self, w: &NormalizedWeights, tasks: &[String]) -> Result<Measured, DriverError> {
        let merged = merge(&self.pool, w)?;
        Ok(measure_merged(self.evaluator, &merged, tasks))
    }

    fn penalty(&self) -> f64 {
        self.log
            .trials
            .iter()
            .filter(|t| t.eval_error.is_none())
            .map(|t| t.fitness.0)
            .reduce(f64::min)
            .map_or(-1.0, |m| m - 1.0)
    }

    fn resolve(&self, trial_id: u64, measured: Measured) -> Result<Outcome, DriverError> {
        match measured {
            Ok((ev, f)) => Ok(Outcome {
                scores: ev.scores,
                fitness: f,
                stderr: ev.stderr,
                error: None,
            }),
            Err(source) => match self.cfg.on_eval_error {
                ErrorPolicy::Abort => Err(DriverError::Evaluator { trial_id, source }),
                ErrorPolicy::Penalize => Ok(Outcome {
                    scores: TaskScores::new(),
                    fitness: FitnessValue(self.penalty()),
                    stderr: String::new(),
                    error: Some(source.to_string()),
                }),
            },
        }
    }

    fn cache_lookup(&self, w: &NormalizedWeights) -> Option<(TaskScores, FitnessValue)> {
        self.log
            .trials
            .iter()
            .filter(|t| t.eval_error.is_none() && t.weights.len() == w.len())
            .find(|t| t.weights.max_abs_diff(w) <= self.cfg.epsilon_cache)
            .map(|t| (t.scores.clone(), t.fitness))
    }

    /// One-hots, uniform and merge-best, skipping any already in the log.
    fn baseline_phase(&mut self) -> Result<(), DriverError> {
        let n = self.pool.len();
        let kind = if self.cfg.warm_start { TrialKind::Seeded } else { TrialKind::Baseline };
        let done = self.log.trials.iter().filter(|t| t.kind != TrialKind::Sampled).count();
        let sampled = self.log.count(TrialKind::Sampled);
        if sampled > 0 && done != n + 2 {
            return Err(DriverError::CorruptLog(format!(
                "expected {} warm-start trials before sampling, found {done}",
                n + 2
            )));
        }
        if self.log.trials.iter().any(|t| t.kind != kind && t.kind != TrialKind::Sampled) {
            return Err(DriverError::ConfigMismatch("warm-start setting differs from the logged trials".into()));
        }
        for step in done..n + 2 {
            let (raw, w) = if step < n {
                let w = NormalizedWeights::one_hot(n, step);
                (WeightVector(w.as_slice().to_vec()), w)
            } else if step == n {
                (WeightVector(vec![1.0 / n as f64; n]), NormalizedWeights::uniform(n))
            } else {
                let w = self.merge_best_weights()?;
                (WeightVector(w.as_slice().to_vec()), w)
            };
            let id = self.next_id();
            let start = Instant::now();
            let measured = match self.prefetched.get_mut(step).and_then(Option::take) {
                Some(m) => Ok(m),
                None => self.measure(&w, &self.cfg.tasks.clone())?,
            };
            let out = self.resolve(id, measured)?;
            let generation = self.es.generation();
            if self.cfg.warm_start {
                self.es.inject(&raw.0, out.fitness.0)?;
            }
            self.append(TrialRecord {
                trial_id: id,
                kind,
                raw,
                weights: w,
                scores: out.scores,
                fitness: out.fitness,
                generation,
                degenerate_flag: false,
                cache_hit: false,
                wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
                evaluator_stderr: out.stderr,
                eval_error: out.error,
            })?;
        }
        Ok(())
    }

    /// Individual (one-hot) trials that evaluated successfully.
    fn individual_scores(&self) -> Vec<(usize, TaskScores)> {
        let n = self.pool.len();
        self.log
            .trials
            .iter()
            .filter(|t| t.kind != TrialKind::Sampled)
            .take(n)
            .enumerate()
            .filter(|(_, t)| t.eval_error.is_none())
            .map(|(i, t)| (i, t.scores.clone()))
            .collect()
    }

    fn merge_best_weights(&self) -> Result<NormalizedWeights, DriverError> {
        let n = self.pool.len();
        let ok = self.individual_scores();
        let scores: Vec<TaskScores> = ok.iter().map(|(_, s)| s.clone()).collect();
        let (_, picked) = baseline_merge_best(&scores, &self.cfg.tasks)?;
        let mut alpha = vec![0.0; n];
        for &p in &picked {
            alpha[ok[p].0] = 1.0 / picked.len() as f64;
        }
        Ok(NormalizedWeights::new(alpha)?)
    }

    fn propose(&mut self) -> Result<Proposal, DriverError> {
        let (x, token) = self.es.ask()?;
        let raw = WeightVector(x);
        let (weights, degenerate) = match normalize(&raw) {
            Ok(w) => (w, false),
            Err(MergeError::DegenerateWeights) => (NormalizedWeights::uniform(raw.0.len()), true),
            Err(e) => return Err(e.into()),
        };
        let cached = self.cache_lookup(&weights);
        Ok(Proposal {
            token,
            raw,
            weights,
            degenerate,
            generation: self.es.generation(),
            cached,
        })
    }

    fn sampling_phase(&mut self, stop_after: Option<usize>) -> Result<bool, DriverError> {
        let target = stop_after.map_or(self.cfg.budget, |s| s.min(self.cfg.budget));
        loop {
            let sampled = self.log.count(TrialKind::Sampled);
            if sampled >= target {
                return Ok(sampled >= self.cfg.budget);
            }
            let room = self.es.lambda() - self.es.pending_len();
            let k = if self.cfg.parallel { room.min(target - sampled) } else { 1 };
            let mut batch = Vec::with_capacity(k);
            for _ in 0..k {
                batch.push(self.propose()?);
            }
            let tasks = self.cfg.tasks.clone();
            let results: Vec<(Option<Measured>, f64)> = if k > 1 {
                let merged: Vec<Option<TensorMap>> = batch
                    .iter()
                    .map(|p| match p.cached {
                        Some(_) => Ok(None),
                        None => merge(&self.pool, &p.weights).map(Some),
                    })
                    .collect::<Result<_, _>>()?;
                let evaluator = self.evaluator;
                std::thread::scope(|s| {
                    let handles: Vec<_> = merged
                        .iter()
                        .map(|m| {
                            let tasks = &tasks;
                            s.spawn(move || {
                                let start = Instant::now();
                                let r = m.as_ref().map(|m| measure_merged(evaluator, m, tasks));
                                (r, start.elapsed().as_secs_f64() * 1e3)
                            })
                        })
                        .collect();
                    handles.into_iter().map(|h| h.join().expect("evaluator thread panicked")).collect()
                })
            } else {
                let p = &batch[0];
                let start = Instant::now();
                let r = match p.cached {
                    Some(_) => None,
                    None => Some(self.measure(&p.weights, &tasks)?),
                };
                vec![(r, start.elapsed().as_secs_f64() * 1e3)]
            };
            for (p, (measured, ms)) in batch.into_iter().zip(results) {
                let id = self.next_id();
                let (out, cache_hit) = match (p.cached, measured) {
                    (Some((scores, fitness)), _) => (
                        Outcome {
                            scores,
                            fitness,
                            stderr: String::new(),
                            error: None,
                        },
                        true,
                    ),
                    (None, Some(m)) => (self.resolve(id, m)?, false),
                    (None, None) => unreachable!("uncached proposals are always measured"),
                };
                self.es.tell(p.token, out.fitness.0)?;
                self.append(TrialRecord {
                    trial_id: id,
                    kind: TrialKind::Sampled,
                    raw: p.raw,
                    weights: p.weights,
                    scores: out.scores,
                    fitness: out.fitness,
                    generation: p.generation,
                    degenerate_flag: p.degenerate,
                    cache_hit,
                    wall_time_ms: ms,
                    evaluator_stderr: out.stderr,
                    eval_error: out.error,
                })?;
            }
        }
    }

    fn report(&mut self) -> Result<SearchSummary, DriverError> {
        let best = self
            .log
            .best()
            .cloned()
            .ok_or_else(|| DriverError::Config("no trial evaluated successfully".into()))?;
        let n = self.pool.len();
        let ok = self.individual_scores();
        let scores: Vec<TaskScores> = ok.iter().map(|(_, s)| s.clone()).collect();
        let (single, _) = best_single(&scores, &self.cfg.tasks)?;
        let candidates = [
            ("optimized", best.weights.clone()),
            ("uniform", NormalizedWeights::uniform(n)),
            ("merge_best", self.merge_best_weights()?),
            ("best_single", NormalizedWeights::one_hot(n, ok[single].0)),
        ];
        let all_tasks = self.cfg.report_tasks();
        let mut report = Vec::with_capacity(candidates.len());
        for (name, w) in candidates {
            let merged = merge(&self.pool, &w)?;
            let ev = self
                .evaluator
                .evaluate(&merged, &all_tasks)
                .map_err(|source| DriverError::Evaluator {
                    trial_id: best.trial_id,
                    source,
                })?;
            let fitness = macro_average(&ev.scores, &self.cfg.tasks)?;
            let heldout_fitness = if self.cfg.heldout_tasks.is_empty() {
                None
            } else {
                Some(macro_average(&ev.scores, &self.cfg.heldout_tasks)?)
            };
            report.push(ReportEntry {
                name: name.to_string(),
                weights: w,
                scores: ev.scores,
                fitness,
                heldout_fitness,
            });
        }
        Ok(SearchSummary {
            best_trial_id: best.trial_id,
            best_weights: best.weights,
            best_fitness: best.fitness,
            report,
        })
    }

    fn drive(mut self, stop_after: Option<usize>) -> Result<SearchLog, DriverError> {
        self.baseline_phase()?;
        let complete = self.sampling_phase(stop_after)?;
        if complete {
            let summary = self.report()?;
            if let Some(w) = self.writer.as_mut() {
                w.line(&LogLine::Summary(summary.clone()))?;
            }
            self.log.summary = Some(summary);
        }
        Ok(self.log)
    }
}

fn measure_merged(evaluator: &dyn Evaluator, merged: &TensorMap, tasks: &[String]) -> Measured {
    let ev = evaluator.evaluate(merged, tasks)?;
    let f = macro_average(&ev.scores, tasks)?;
    Ok((ev, f))
}

fn check_pool(pool: &CheckpointPool) -> Result<(), DriverError> {
    if pool.is_empty() {
        return Err(DriverError::PoolInvalid("pool is empty".into()));
    }
    let report = validate_pool(pool);
    match report.first_mismatch {
        Some(m) => Err(DriverError::PoolInvalid(format!("{m:?}"))),
        None => Ok(()),
    }
}

fn new_optimizer(cfg: &SearchConfig, n: usize) -> Result<CmaEs, DriverError> {
    Ok(CmaEs::new(&vec![1.0 / n as f64; n], cfg.sigma0, cfg.lambda, cfg.seed)?)
}

type Prefetched = (Evaluation, FitnessValue);

/// Top-`n` checkpoints by individual fitness (ties to the lower index),
/// returned in pool order together with their measurements.
fn select_top_n(
    cfg: &SearchConfig,
    pool: &CheckpointPool,
    evaluator: &dyn Evaluator,
    top_n: usize,
) -> Result<(Vec<usize>, Vec<Option<Prefetched>>), DriverError> {
    let mut measured = Vec::with_capacity(pool.len());
    for i in 0..pool.len() {
        let m = measure_merged(evaluator, &pool.load(i)?, &cfg.tasks)
            .map_err(|source| DriverError::Evaluator { trial_id: 0, source })?;
        measured.push(m);
    }
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| measured[b].1 .0.total_cmp(&measured[a].1 .0).then(a.cmp(&b)));
    let mut keep: Vec<usize> = order.into_iter().take(top_n).collect();
    keep.sort_unstable();
    let mut slots: Vec<Option<(Evaluation, FitnessValue)>> = measured.into_iter().map(Some).collect();
    let pre = keep.iter().map(|&i| slots[i].take()).collect();
    Ok((keep, pre))
}

/// Runs a search from scratch.
pub fn run_search(
    cfg: &SearchConfig,
    pool: &CheckpointPool,
    evaluator: &dyn Evaluator,
    opts: &RunOptions,
) -> Result<SearchLog, DriverError> {
    cfg.validate()?;
    check_pool(pool)?;
    let pool_hash = pool.content_hash()?;

    let (active, subset_indices, prefetched) = match cfg.top_n {
        Some(k) if k < 2 || k > pool.len() => {
            return Err(DriverError::Config(format!(
                "top_n must be in [2, {}], got {k}",
                pool.len()
            )))
        }
        Some(k) => {
            let (keep, pre) = select_top_n(cfg, pool, evaluator, k)?;
            (pool.subset(&keep), Some(keep), pre)
        }
        None => (pool.clone(), None, Vec::new()),
    };

    let config = ConfigSnapshot {
        version: LOG_VERSION,
        search: cfg.clone(),
        pool_hash,
        pool_labels: active.labels(),
        pool_dir: opts.pool_dir.clone(),
        subset_indices,
    };
    let mut writer = match &opts.log_path {
        Some(p) => Some(LogWriter::create(p)?),
        None => None,
    };
    if let Some(w) = writer.as_mut() {
        w.line(&LogLine::Config(config.clone()))?;
    }
    let session = Session {
        es: new_optimizer(cfg, active.len())?,
        cfg: cfg.clone(),
        pool: active,
        evaluator,
        log: SearchLog {
            config,
            trials: Vec::new(),
            summary: None,
        },
        writer,
        prefetched,
    };
    session.drive(opts.stop_after_sampled)
}

/// Continues a logged run using the pool directory and evaluator recorded in
/// its snapshot.
pub fn resume(log_path: impl AsRef<Path>, stop_after_sampled: Option<usize>) -> Result<SearchLog, DriverError> {
    let log_path = log_path.as_ref();
    let log = SearchLog::read(log_path)?;
    let dir = log
        .config
        .pool_dir
        .clone()
        .ok_or_else(|| DriverError::CorruptLog("snapshot has no pool_dir; supply the pool explicitly".into()))?;
    let pool = CheckpointPool::from_dir(&dir)?;
    let evaluator = build_evaluator(&log.config.search.evaluator)?;
    resume_with(log_path, &pool, evaluator.as_ref(), stop_after_sampled)
}

/// Replays a log into a fresh optimizer, then continues until the budget.
///
/// Seeded trials are re-injected and sampled trials re-asked and re-told in
/// log order; every re-asked vector must match the logged one bit for bit.
pub fn resume_with(
    log_path: impl AsRef<Path>,
    pool: &CheckpointPool,
    evaluator: &dyn Evaluator,
    stop_after_sampled: Option<usize>,
) -> Result<SearchLog, DriverError> {
    let log_path = log_path.as_ref();
    let log = SearchLog::read(log_path)?;
    let hash = pool.content_hash()?;
    if hash != log.config.pool_hash {
        return Err(DriverError::ConfigMismatch(format!(
            "pool hash {hash} differs from logged {}",
            log.config.pool_hash
        )));
    }
    if log.is_complete() {
        return Ok(log);
    }
    let cfg = log.config.search.clone();
    cfg.validate()?;
    let active = match &log.config.subset_indices {
        Some(idx) => {
            if idx.iter().any(|&i| i >= pool.len()) {
                return Err(DriverError::CorruptLog("subset index out of range".into()));
            }
            pool.subset(idx)
        }
        None => pool.clone(),
    };
    check_pool(&active)?;
    let n = active.len();

    let mut es = new_optimizer(&cfg, n)?;
    for t in &log.trials {
        if t.raw.0.len() != n || t.weights.len() != n {
            return Err(DriverError::CorruptLog(format!("trial {} has the wrong dimension", t.trial_id)));
        }
        match t.kind {
            TrialKind::Seeded => es.inject(&t.raw.0, t.fitness.0)?,
            TrialKind::Sampled => {
                let (x, token) = es.ask()?;
                let same = x.iter().zip(&t.raw.0).all(|(a, b)| a.to_bits() == b.to_bits());
                if !same {
                    return Err(DriverError::CorruptLog(format!(
                        "trial {} does not replay under seed {}",
                        t.trial_id, cfg.seed
                    )));
                }
                es.tell(token, t.fitness.0)?;
            }
            TrialKind::Baseline => {}
        }
    }

    // Rewrite so that a truncated trailing line cannot corrupt the append.
    log.write(log_path)?;
    let file = OpenOptions::new().append(true).open(log_path).map_err(io_err(log_path))?;
    let session = Session {
        cfg,
        pool: active,
        evaluator,
        es,
        log,
        writer: Some(LogWriter {
            path: log_path.to_path_buf(),
            file,
        }),
        prefetched: Vec::new(),
    };
    session.drive(stop_after_sampled)
}

/// Result of a subset-size study.
#[derive(Debug, Clone)]
pub struct SubsetStudy {
    pub logs: Vec<(usize, SearchLog)>,
    pub rows: Vec<SubsetRow>,
}

/// Runs one search per subset size `n`, each over the top-`n` checkpoints.
/// The centroid is taken over the held-in score tuples of sampled trials.
pub fn subset_experiment(
    cfg: &SearchConfig,
    pool: &CheckpointPool,
    evaluator: &dyn Evaluator,
    n_values: &[usize],
    log_dir: Option<&Path>,
) -> Result<SubsetStudy, DriverError> {
    if n_values.is_empty() {
        return Err(DriverError::Config("no subset sizes given".into()));
    }
    let mut logs = Vec::with_capacity(n_values.len());
    let mut rows = Vec::with_capacity(n_values.len());
    for &n in n_values {
        if n < 2 || n > pool.len() {
            return Err(DriverError::Config(format!("subset size {n} outside [2, {}]", pool.len())));
        }
        let mut c = cfg.clone();
        c.top_n = Some(n);
        let opts = RunOptions {
            log_path: log_dir.map(|d| d.join(format!("subset_{n}.jsonl"))),
            ..RunOptions::default()
        };
        let log = run_search(&c, pool, evaluator, &opts)?;
        let tuples: Vec<Vec<f64>> = log
            .trials
            .iter()
            .filter(|t| t.kind == TrialKind::Sampled)
            .filter_map(|t| t.scores.select(&cfg.tasks).ok())
            .collect();
        let centroid = centroid(&tuples).map_err(|e| DriverError::Config(e.to_string()))?;
        let best_fitness = log.summary.as_ref().map_or(f64::NAN, |s| s.best_fitness.0);
        rows.push(SubsetRow {
            n,
            best_fitness,
            centroid,
        });
        logs.push((n, log));
    }
    Ok(SubsetStudy { logs, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toylab::{gen_radial_suite, GeneratorConfig};

    fn lab(n: usize) -> (CheckpointPool, BuiltinEvaluator, SearchConfig) {
        let g = GeneratorConfig {
            dim: 2,
            pool_size: n,
            tasks: 2,
            noise: 0.1,
            seed: 3,
            ..GeneratorConfig::default()
        };
        let (pool, suite) = gen_radial_suite(&g).unwrap();
        let tasks = suite.task_names();
        let mut cfg = SearchConfig::new(tasks, EvaluatorSpec::Builtin { suite: "suite.json".into() });
        cfg.budget = 12;
        (pool, BuiltinEvaluator { suite }, cfg)
    }

    #[test]
    fn config_validation() {
        let (_, _, cfg) = lab(4);
        assert!(cfg.validate().is_ok());
        let mut c = cfg.clone();
        c.budget = 0;
        assert!(c.validate().is_err());
        let mut c = cfg.clone();
        c.sigma0 = 0.0;
        assert!(c.validate().is_err());
        let mut c = cfg.clone();
        c.tasks.clear();
        assert!(c.validate().is_err());
        let mut c = cfg;
        c.heldout_tasks = vec![c.tasks[0].clone()];
        assert!(c.validate().is_err());
    }

    #[test]
    fn seeded_then_sampled() {
        let (pool, ev, cfg) = lab(4);
        let log = run_search(&cfg, &pool, &ev, &RunOptions::default()).unwrap();
        assert_eq!(log.count(TrialKind::Seeded), 6);
        assert_eq!(log.count(TrialKind::Sampled), 12);
        let first_sampled = log.trials.iter().position(|t| t.kind == TrialKind::Sampled).unwrap();
        assert_eq!(first_sampled, 6);
        for (i, t) in log.trials.iter().enumerate() {
            assert_eq!(t.trial_id, i as u64);
            assert_eq!(t.fitness, macro_average(&t.scores, &cfg.tasks).unwrap());
        }
        let s = log.summary.unwrap();
        assert_eq!(s.report.len(), 4);
        assert!(s.best_fitness.0 >= s.entry("uniform").unwrap().fitness.0);
    }

    #[test]
    fn no_warm_start_logs_baselines() {
        let (pool, ev, mut cfg) = lab(4);
        cfg.warm_start = false;
        let log = run_search(&cfg, &pool, &ev, &RunOptions::default()).unwrap();
        assert_eq!(log.count(TrialKind::Baseline), 6);
        assert_eq!(log.count(TrialKind::Seeded), 0);
        assert_eq!(log.count(TrialKind::Sampled), 12);
    }

    #[test]
    fn parallel_matches_sequential() {
        let (pool, ev, cfg) = lab(4);
        let seq = run_search(&cfg, &pool, &ev, &RunOptions::default()).unwrap();
        let mut pc = cfg.clone();
        pc.parallel = true;
        let par = run_search(&pc, &pool, &ev, &RunOptions::default()).unwrap();
        for (a, b) in seq.trials.iter().zip(&par.trials) {
            assert_eq!(a.raw, b.raw);
            assert_eq!(a.fitness, b.fitness);
        }
    }

    struct Flaky<'a> {
        inner: &'a BuiltinEvaluator,
        fail_every: u64,
        calls: AtomicU64,
    }

    impl Evaluator for Flaky<'_> {
        fn evaluate(&self, ckpt: &TensorMap, tasks: &[String]) -> Result<Evaluation, FitnessError> {
            let k = self.calls.fetch_add(1, Ordering::SeqCst);
            if k % self.fail_every == self.fail_every - 1 {
                return Err(FitnessError::EvaluatorCrashed {
                    status: "exit status: 1".into(),
                    stderr: "boom".into(),
                });
            }
            self.inner.evaluate(ckpt, tasks)
        }
    }

    #[test]
    fn penalize_and_abort() {
        let (pool, ev, mut cfg) = lab(3);
        cfg.on_eval_error = ErrorPolicy::Penalize;
        let flaky = Flaky {
            inner: &ev,
            fail_every: 7,
            calls: AtomicU64::new(0),
        };
        let log = run_search(&cfg, &pool, &flaky, &RunOptions::default()).unwrap();
        let failed: Vec<_> = log.trials.iter().filter(|t| t.eval_error.is_some()).collect();
        assert!(!failed.is_empty());
        for f in failed {
            let prior_min = log
                .trials
                .iter()
                .take_while(|t| t.trial_id < f.trial_id)
                .filter(|t| t.eval_error.is_none())
                .map(|t| t.fitness.0)
                .fold(f64::INFINITY, f64::min);
            assert_eq!(f.fitness.0, prior_min - 1.0);
            assert!(f.scores.0.is_empty());
        }

        cfg.on_eval_error = ErrorPolicy::Abort;
        let flaky = Flaky {
            inner: &ev,
            fail_every: 7,
            calls: AtomicU64::new(0),
        };
        let err = run_search(&cfg, &pool, &flaky, &RunOptions::default()).unwrap_err();
        assert!(err.is_evaluator_failure());
    }

    #[test]
    fn top_n_restricts_pool() {
        let (pool, ev, mut cfg) = lab(6);
        cfg.top_n = Some(3);
        let log = run_search(&cfg, &pool, &ev, &RunOptions::default()).unwrap();
        let idx = log.config.subset_indices.clone().unwrap();
        assert_eq!(idx.len(), 3);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(log.count(TrialKind::Seeded), 5);
        cfg.top_n = Some(1);
        assert!(matches!(run_search(&cfg, &pool, &ev, &RunOptions::default()), Err(DriverError::Config(_))));
    }

    #[test]
    fn log_roundtrip_and_resume() {
        let dir = tempfile::tempdir().unwrap();
        let (pool, ev, cfg) = lab(4);
        let full = run_search(&cfg, &pool, &ev, &RunOptions::default()).unwrap();
        let path = dir.path().join("run.jsonl");
        let opts = RunOptions {
            log_path: Some(path.clone()),
            stop_after_sampled: Some(5),
            ..RunOptions::default()
        };
        let partial = run_search(&cfg, &pool, &ev, &opts).unwrap();
        assert!(!partial.is_complete());
        assert_eq!(SearchLog::read(&path).unwrap(), partial);
        let resumed = resume_with(&path, &pool, &ev, None).unwrap();
        assert_eq!(resumed.trials.len(), full.trials.len());
        for (a, b) in resumed.trials.iter().zip(&full.trials) {
            assert_eq!(a.raw, b.raw);
            assert_eq!(a.fitness, b.fitness);
        }
        let again = resume_with(&path, &pool, &ev, None).unwrap();
        assert_eq!(again.trials.len(), resumed.trials.len());

        let other = pool.subset(&[1, 0, 2, 3]);
        assert!(matches!(resume_with(&path, &other, &ev, None), Err(DriverError::ConfigMismatch(_))));
    }
}
