//! Tradeoff and solution analysis: rank correlations, Pareto fronts,
//! weight sparsity, centroids, search progress and compute cost.
//!
//! Every table-producing function has a matching CSV writer so the data
//! behind the usual plots can be exported and rendered elsewhere.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::driver::{SearchLog, TrialKind};
use crate::merger::NormalizedWeights;

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} observations, got {found}")]
    TooFew { needed: usize, found: usize },
    #[error("series is constant; rank correlation is undefined")]
    ConstantSeries,
    #[error("non-finite value in input")]
    NonFinite,
    #[error("empty input")]
    Empty,
    #[error("unknown task column {0:?}")]
    UnknownTask(String),
    #[error("input must be positive: {0}")]
    NonPositive(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

/// Checkpoints (rows) by tasks (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub labels: Vec<String>,
    pub tasks: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl ScoreMatrix {
    pub fn new(labels: Vec<String>, tasks: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() != labels.len() {
            return Err(AnalysisError::LengthMismatch(labels.len(), values.len()));
        }
        for row in &values {
            if row.len() != tasks.len() {
                return Err(AnalysisError::LengthMismatch(tasks.len(), row.len()));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(AnalysisError::NonFinite);
            }
        }
        Ok(ScoreMatrix { labels, tasks, values })
    }

    /// Reads a CSV whose first column labels the rows. Columns that parse as
    /// numbers in every row become tasks; any other column is metadata and
    /// is skipped.
    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let records: Vec<csv::StringRecord> = rdr.records().collect::<std::result::Result<_, _>>()?;
        if headers.len() < 2 || records.is_empty() {
            return Err(AnalysisError::Empty);
        }
        let numeric: Vec<usize> = (1..headers.len())
            .filter(|&c| {
                records
                    .iter()
                    .all(|r| r.get(c).and_then(|s| s.trim().parse::<f64>().ok()).is_some())
            })
            .collect();
        let labels = records.iter().map(|r| r.get(0).unwrap_or("").to_string()).collect();
        let tasks = numeric.iter().map(|&c| headers[c].clone()).collect();
        let values = records
            .iter()
            .map(|r| numeric.iter().map(|&c| r[c].trim().parse::<f64>().unwrap()).collect())
            .collect();
        ScoreMatrix::new(labels, tasks, values)
    }

    pub fn column(&self, task: &str) -> Result<Vec<f64>> {
        let c = self
            .tasks
            .iter()
            .position(|t| t == task)
            .ok_or_else(|| AnalysisError::UnknownTask(task.to_string()))?;
        Ok(self.values.iter().map(|r| r[c]).collect())
    }

    /// Rows restricted to `tasks`, as score tuples.
    pub fn tuples(&self, tasks: &[String]) -> Result<Vec<Vec<f64>>> {
        let cols: Vec<usize> = tasks
            .iter()
            .map(|t| {
                self.tasks
                    .iter()
                    .position(|x| x == t)
                    .ok_or_else(|| AnalysisError::UnknownTask(t.clone()))
            })
            .collect::<Result<_>>()?;
        Ok(self
            .values
            .iter()
            .map(|r| cols.iter().map(|&c| r[c]).collect())
            .collect())
    }
}

/// 1-based ranks with ties sharing the average of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(AnalysisError::ConstantSeries);
    }
    // sqrt(fl(a*a)) == a, so identical rank vectors give exactly 1
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's ρ: Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(AnalysisError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(AnalysisError::TooFew { needed: 2, found: x.len() });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(AnalysisError::NonFinite);
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Pairwise Spearman between all task columns. Symmetric with unit diagonal.
pub fn correlation_matrix(m: &ScoreMatrix) -> Result<Vec<Vec<f64>>> {
    if m.values.len() < 2 {
        return Err(AnalysisError::TooFew {
            needed: 2,
            found: m.values.len(),
        });
    }
    let k = m.tasks.len();
    let cols: Vec<Vec<f64>> = (0..k).map(|c| m.values.iter().map(|r| r[c]).collect()).collect();
    let mut out = vec![vec![1.0; k]; k];
    for i in 0..k {
        for j in (i + 1)..k {
            let r = spearman(&cols[i], &cols[j])?;
            out[i][j] = r;
            out[j][i] = r;
        }
    }
    Ok(out)
}

/// `a` dominates `b` when it is no worse everywhere and better somewhere
/// (all coordinates maximized).
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    let mut strictly = false;
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return false;
        }
        if x > y {
            strictly = true;
        }
    }
    strictly
}

/// Indices of non-dominated points, ascending. Exact duplicates of a
/// frontier point are all kept.
pub fn pareto_front(points: &[Vec<f64>]) -> Result<Vec<usize>> {
    if points.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let arity = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != arity) {
        return Err(AnalysisError::LengthMismatch(arity, p.len()));
    }
    Ok((0..points.len())
        .filter(|&i| !points.iter().any(|q| dominates(q, &points[i])))
        .collect())
}

pub const DEFAULT_SPARSITY_EPSILON: f64 = 1e-3;

/// Entries of `w` below `epsilon`: their count and 0-based indices.
pub fn sparsity(w: &NormalizedWeights, epsilon: f64) -> (usize, Vec<usize>) {
    let idx: Vec<usize> = w
        .as_slice()
        .iter()
        .enumerate()
        .filter(|(_, a)| **a < epsilon)
        .map(|(i, _)| i)
        .collect();
    (idx.len(), idx)
}

/// Component-wise mean.
pub fn centroid<V: AsRef<[f64]>>(vs: &[V]) -> Result<Vec<f64>> {
    let first = vs.first().ok_or(AnalysisError::Empty)?.as_ref();
    let n = first.len();
    let mut acc = vec![0.0; n];
    for v in vs {
        let v = v.as_ref();
        if v.len() != n {
            return Err(AnalysisError::LengthMismatch(n, v.len()));
        }
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    let k = vs.len() as f64;
    Ok(acc.into_iter().map(|a| a / k).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProgressPoint {
    pub trial_id: u64,
    pub kind: TrialKind,
    pub fitness: f64,
    pub running_best: f64,
}

fn running_best(fitness: &[f64]) -> Vec<f64> {
    let mut best = f64::NEG_INFINITY;
    fitness
        .iter()
        .map(|&f| {
            best = best.max(f);
            best
        })
        .collect()
}

/// Fitness and running best for every seeded and sampled trial, in log order.
pub fn progress(log: &SearchLog) -> Result<Vec<ProgressPoint>> {
    let trials: Vec<_> = log
        .trials
        .iter()
        .filter(|t| t.kind != TrialKind::Baseline)
        .collect();
    if trials.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let fits: Vec<f64> = trials.iter().map(|t| t.fitness.0).collect();
    Ok(trials
        .iter()
        .zip(running_best(&fits))
        .map(|(t, rb)| ProgressPoint {
            trial_id: t.trial_id,
            kind: t.kind,
            fitness: t.fitness.0,
            running_best: rb,
        })
        .collect())
}

/// Batch size and step count of one training stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingStage {
    pub batch: f64,
    pub steps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub sft_flops: f64,
    pub po_flops: f64,
    pub train_flops: f64,
    pub inference_flops_per_task: IndexMap<String, f64>,
    pub search_flops: f64,
    pub ratio_search_to_train: f64,
}

/// Training cost `6·P·B·S` per stage, inference `2·P·samples` per task and
/// search cost `budget · Σ inference`.
pub fn flops_cost(
    params: f64,
    sft: TrainingStage,
    po: TrainingStage,
    samples_per_task: &IndexMap<String, f64>,
    budget: u64,
) -> Result<CostReport> {
    let positive = |name: &str, v: f64| {
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(AnalysisError::NonPositive(format!("{name} = {v}")))
        }
    };
    positive("params", params)?;
    positive("sft batch", sft.batch)?;
    positive("sft steps", sft.steps)?;
    positive("po batch", po.batch)?;
    positive("po steps", po.steps)?;
    positive("budget", budget as f64)?;
    for (t, &n) in samples_per_task {
        positive(&format!("samples[{t}]"), n)?;
    }
    let sft_flops = 6.0 * params * sft.batch * sft.steps;
    let po_flops = 6.0 * params * po.batch * po.steps;
    let train_flops = sft_flops + po_flops;
    let inference: IndexMap<String, f64> = samples_per_task
        .iter()
        .map(|(t, &n)| (t.clone(), 2.0 * params * n))
        .collect();
    let search_flops = budget as f64 * inference.values().sum::<f64>();
    Ok(CostReport {
        sft_flops,
        po_flops,
        train_flops,
        inference_flops_per_task: inference,
        search_flops,
        ratio_search_to_train: search_flops / train_flops,
    })
}

/// The `k` best trials of a log by fitness (ties to the earlier trial).
pub fn top_solutions(log: &SearchLog, k: usize) -> Vec<&crate::driver::TrialRecord> {
    let mut trials: Vec<_> = log.trials.iter().collect();
    trials.sort_by(|a, b| b.fitness.0.total_cmp(&a.fitness.0).then(a.trial_id.cmp(&b.trial_id)));
    trials.truncate(k);
    trials
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

pub fn write_correlation_csv(out: impl Write, tasks: &[String], corr: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["task".to_string()];
    header.extend(tasks.iter().cloned());
    w.write_record(&header)?;
    for (t, row) in tasks.iter().zip(corr) {
        let mut rec = vec![t.clone()];
        rec.extend(row.iter().map(|v| fmt(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_pareto_csv(out: impl Write, labels: &[String], tasks: &[String], points: &[Vec<f64>], front: &[usize]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["index".to_string(), "label".to_string()];
    header.extend(tasks.iter().cloned());
    header.push("on_front".into());
    w.write_record(&header)?;
    for (i, p) in points.iter().enumerate() {
        let mut rec = vec![i.to_string(), labels.get(i).cloned().unwrap_or_default()];
        rec.extend(p.iter().map(|v| fmt(*v)));
        rec.push(front.contains(&i).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Heatmap rows: one per solution, one column per checkpoint weight.
pub fn write_sparsity_csv(out: impl Write, log: &SearchLog, k: usize, epsilon: f64) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let n = log.config.pool_labels.len();
    let mut header = vec!["rank".to_string(), "trial_id".into(), "fitness".into(), "below_epsilon".into()];
    header.extend(log.config.pool_labels.iter().map(|l| format!("w_{l}")));
    w.write_record(&header)?;
    for (rank, t) in top_solutions(log, k).into_iter().enumerate() {
        let (count, _) = sparsity(&t.weights, epsilon);
        let mut rec = vec![(rank + 1).to_string(), t.trial_id.to_string(), fmt(t.fitness.0), count.to_string()];
        rec.extend(t.weights.as_slice().iter().take(n).map(|v| fmt(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_progress_csv(out: impl Write, points: &[ProgressPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["trial_id", "kind", "fitness", "running_best"])?;
    for p in points {
        w.write_record([p.trial_id.to_string(), p.kind.as_str().to_string(), fmt(p.fitness), fmt(p.running_best)])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-run summary row for subset-size studies.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetRow {
    pub n: usize,
    pub best_fitness: f64,
    pub centroid: Vec<f64>,
}

pub fn write_subsets_csv(out: impl Write, tasks: &[String], rows: &[SubsetRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["n".to_string(), "best_fitness".into()];
    header.extend(tasks.iter().map(|t| format!("centroid_{t}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.n.to_string(), fmt(r.best_fitness)];
        rec.extend(r.centroid.iter().map(|v| fmt(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-task scores of every logged trial (seeded and sampled), as a
/// score matrix keyed by trial id.
pub fn log_score_matrix(log: &SearchLog) -> Result<ScoreMatrix> {
    let tasks = log.config.search.tasks.clone();
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for t in log.trials.iter().filter(|t| t.kind != TrialKind::Baseline) {
        if let Ok(v) = t.scores.select(&tasks) {
            labels.push(format!("trial{}", t.trial_id));
            values.push(v);
        }
    }
    ScoreMatrix::new(labels, tasks, values)
}

/// Spearman matrix keyed by task name, convenient for JSON output.
pub fn correlation_map(m: &ScoreMatrix) -> Result<BTreeMap<String, BTreeMap<String, f64>>> {
    let c = correlation_matrix(m)?;
    Ok(m.tasks
        .iter()
        .enumerate()
        .map(|(i, a)| {
            (
                a.clone(),
                m.tasks.iter().enumerate().map(|(j, b)| (b.clone(), c[i][j])).collect(),
            )
        })
        .collect())
}
