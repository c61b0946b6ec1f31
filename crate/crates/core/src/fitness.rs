//! Task scores, the macro-average fitness, external evaluators and the
//! baseline weightings (uniform soup, merge-best, best single).

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::merger::NormalizedWeights;

#[derive(Debug, thiserror::Error)]
pub enum FitnessError {
    #[error("task {0:?} has no score")]
    MissingTask(String),
    #[error("score for task {task:?} is not finite: {value}")]
    NonFiniteScore { task: String, value: f64 },
    #[error("no tasks selected")]
    NoTasks,
    #[error("pool scores are empty")]
    EmptyPool,
    #[error("evaluator exited with {status}: {stderr}")]
    EvaluatorCrashed { status: String, stderr: String },
    #[error("evaluator timed out after {0:?}")]
    EvaluatorTimeout(Duration),
    #[error("evaluator protocol error: {0}")]
    ProtocolError(String),
    #[error("could not launch evaluator {command:?}: {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },
}

/// Per-task performance `P_t(θ)`, higher is better.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskScores(pub BTreeMap<String, f64>);

impl TaskScores {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        TaskScores(pairs.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }

    pub fn get(&self, task: &str) -> Option<f64> {
        self.0.get(task).copied()
    }

    pub fn insert(&mut self, task: impl Into<String>, score: f64) {
        self.0.insert(task.into(), score);
    }

    /// Scores for `tasks`, in that order.
    pub fn select(&self, tasks: &[String]) -> Result<Vec<f64>, FitnessError> {
        tasks
            .iter()
            .map(|t| self.get(t).ok_or_else(|| FitnessError::MissingTask(t.clone())))
            .collect()
    }

    /// Restricts to `tasks`, failing if any is missing.
    pub fn restrict(&self, tasks: &[String]) -> Result<TaskScores, FitnessError> {
        let mut out = TaskScores::new();
        for t in tasks {
            out.insert(t.clone(), self.get(t).ok_or_else(|| FitnessError::MissingTask(t.clone()))?);
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), FitnessError> {
        for (task, &value) in &self.0 {
            if !value.is_finite() {
                return Err(FitnessError::NonFiniteScore {
                    task: task.clone(),
                    value,
                });
            }
        }
        Ok(())
    }
}

/// `R(θ)`: a finite scalar, higher is better.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FitnessValue(pub f64);

impl FitnessValue {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Unweighted mean of the selected task scores.
pub fn macro_average(scores: &TaskScores, tasks: &[String]) -> Result<FitnessValue, FitnessError> {
    if tasks.is_empty() {
        return Err(FitnessError::NoTasks);
    }
    let vals = scores.select(tasks)?;
    let mut sum = 0.0;
    for (t, v) in tasks.iter().zip(&vals) {
        if !v.is_finite() {
            return Err(FitnessError::NonFiniteScore {
                task: t.clone(),
                value: *v,
            });
        }
        sum += v;
    }
    Ok(FitnessValue(sum / tasks.len() as f64))
}

/// Weighted mean with per-task weights; tasks absent from `weights` get 1.
pub fn weighted_average(
    scores: &TaskScores,
    tasks: &[String],
    weights: &BTreeMap<String, f64>,
) -> Result<FitnessValue, FitnessError> {
    if tasks.is_empty() {
        return Err(FitnessError::NoTasks);
    }
    let vals = scores.select(tasks)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, v) in tasks.iter().zip(vals) {
        let w = weights.get(t).copied().unwrap_or(1.0);
        num += w * v;
        den += w;
    }
    if den.is_nan() || den <= 0.0 {
        return Err(FitnessError::ProtocolError("task weights must sum to a positive value".into()));
    }
    Ok(FitnessValue(num / den))
}

/// Output of one evaluator run.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub scores: TaskScores,
    pub stderr: String,
}

#[derive(Debug, Deserialize)]
struct EvaluatorReply {
    scores: BTreeMap<String, serde_json::Value>,
}

/// Parses an evaluator's stdout and keeps the requested tasks.
pub fn parse_evaluator_output(stdout: &str, tasks: &[String]) -> Result<TaskScores, FitnessError> {
    let reply: EvaluatorReply = serde_json::from_str(stdout.trim())
        .map_err(|e| FitnessError::ProtocolError(format!("expected {{\"scores\": {{...}}}}: {e}")))?;
    let mut out = TaskScores::new();
    for t in tasks {
        let value = reply
            .scores
            .get(t)
            .ok_or_else(|| FitnessError::MissingTask(t.clone()))?;
        let v = value
            .as_f64()
            .ok_or_else(|| FitnessError::ProtocolError(format!("score for {t:?} is not a number: {value}")))?;
        if !v.is_finite() {
            return Err(FitnessError::NonFiniteScore { task: t.clone(), value: v });
        }
        out.insert(t.clone(), v);
    }
    Ok(out)
}

/// Runs `<command> --checkpoint <path> --tasks a,b,c` and reads
/// `{"scores": {...}}` from its stdout.
///
/// `command` is split on whitespace; the first word is the program.
pub fn evaluate_external(
    ckpt_path: &Path,
    command: &str,
    tasks: &[String],
    timeout: Option<Duration>,
) -> Result<Evaluation, FitnessError> {
    let mut words = command.split_whitespace();
    let program = words
        .next()
        .ok_or_else(|| FitnessError::ProtocolError("empty evaluator command".into()))?;
    let mut child = Command::new(program)
        .args(words)
        .arg("--checkpoint")
        .arg(ckpt_path)
        .arg("--tasks")
        .arg(tasks.join(","))
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|source| FitnessError::Spawn {
            command: command.to_string(),
            source,
        })?;

    let mut out_pipe = child.stdout.take().expect("piped stdout");
    let mut err_pipe = child.stderr.take().expect("piped stderr");
    let out_thread = std::thread::spawn(move || {
        let mut s = Vec::new();
        let _ = out_pipe.read_to_end(&mut s);
        s
    });
    let err_thread = std::thread::spawn(move || {
        let mut s = Vec::new();
        let _ = err_pipe.read_to_end(&mut s);
        s
    });

    let start = Instant::now();
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) => {
                if let Some(limit) = timeout {
                    if start.elapsed() > limit {
                        let _ = child.kill();
                        let _ = child.wait();
                        return Err(FitnessError::EvaluatorTimeout(limit));
                    }
                }
                std::thread::sleep(Duration::from_millis(2));
            }
            Err(e) => {
                return Err(FitnessError::Spawn {
                    command: command.to_string(),
                    source: e,
                })
            }
        }
    };
    let stdout = String::from_utf8_lossy(&out_thread.join().unwrap_or_default()).into_owned();
    let stderr = String::from_utf8_lossy(&err_thread.join().unwrap_or_default()).into_owned();
    if !status.success() {
        return Err(FitnessError::EvaluatorCrashed {
            status: status.to_string(),
            stderr,
        });
    }
    let scores = parse_evaluator_output(&stdout, tasks)?;
    Ok(Evaluation { scores, stderr })
}

/// `α_i = 1/n`.
pub fn baseline_uniform(n: usize) -> NormalizedWeights {
    NormalizedWeights::uniform(n)
}

fn argmax_lowest(values: impl Iterator<Item = f64>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best
}

/// Per-task argmax checkpoints (ties to the lowest index), deduplicated and
/// weighted uniformly. Returns the weights and the selected 0-based indices.
pub fn baseline_merge_best(
    pool_scores: &[TaskScores],
    tasks: &[String],
) -> Result<(NormalizedWeights, Vec<usize>), FitnessError> {
    if pool_scores.is_empty() {
        return Err(FitnessError::EmptyPool);
    }
    if tasks.is_empty() {
        return Err(FitnessError::NoTasks);
    }
    let mut selected: Vec<usize> = Vec::new();
    for t in tasks {
        let col: Vec<f64> = pool_scores
            .iter()
            .map(|s| s.get(t).ok_or_else(|| FitnessError::MissingTask(t.clone())))
            .collect::<Result<_, _>>()?;
        let (i, _) = argmax_lowest(col.into_iter()).expect("non-empty pool");
        if !selected.contains(&i) {
            selected.push(i);
        }
    }
    let mut alpha = vec![0.0; pool_scores.len()];
    for &i in &selected {
        alpha[i] = 1.0 / selected.len() as f64;
    }
    selected.sort_unstable();
    Ok((NormalizedWeights::new(alpha).expect("uniform over a subset is on the simplex"), selected))
}

/// Checkpoint with the highest macro-average (0-based index; ties to the
/// lowest index).
pub fn best_single(pool_scores: &[TaskScores], tasks: &[String]) -> Result<(usize, FitnessValue), FitnessError> {
    if pool_scores.is_empty() {
        return Err(FitnessError::EmptyPool);
    }
    let fits: Vec<f64> = pool_scores
        .iter()
        .map(|s| macro_average(s, tasks).map(FitnessValue::value))
        .collect::<Result<_, _>>()?;
    let (i, f) = argmax_lowest(fits.into_iter()).expect("non-empty pool");
    Ok((i, FitnessValue(f)))
}
