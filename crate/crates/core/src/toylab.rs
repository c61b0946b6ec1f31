//! Desk-scale checkpoint pools with built-in task tradeoffs.
//!
//! Two generators are provided:
//!
//! * **radial** – every task has a center `μ_t` on a coordinate axis and
//!   scores a checkpoint by `100 / (1 + ‖θ − μ_t‖²)`. Checkpoints sit near the
//!   centers (round-robin over tasks) with Gaussian noise, plus a few near
//!   pairwise midpoints.
//! * **ridge** – every task is a linear regression problem with its own true
//!   coefficients. Checkpoints are closed-form ridge fits on weighted mixtures
//!   of the task datasets and score `100 / (1 + MSE)` on each task's eval split.
//!
//! Both generators redraw until every pair of tasks is negatively rank
//! correlated over the pool (ρ ≤ −0.3), so the pools exhibit real tradeoffs.
//! [`grid_oracle`] brute-forces the simplex for pools of up to three
//! checkpoints and certifies search results.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::analysis::spearman;
use crate::fitness::{macro_average, FitnessValue, TaskScores};
use crate::merger::{merge, MergeError, NormalizedWeights};
use crate::tensorstore::{CheckpointPool, StoreError, Tensor, TensorMap};

pub const TOY_TENSOR: &str = "w";
pub const SUITE_FILE: &str = "suite.json";
pub const MAX_ATTEMPTS: usize = 100;
pub const TRADEOFF_THRESHOLD: f64 = -0.3;

#[derive(Debug, thiserror::Error)]
pub enum ToyError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("no pool with pairwise Spearman <= {threshold} after {attempts} attempts (best worst-pair {best})")]
    NoTradeoff { threshold: f64, attempts: usize, best: f64 },
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("checkpoint lacks tensor {TOY_TENSOR:?} of length {0}")]
    BadCheckpoint(usize),
    #[error("grid oracle supports at most 3 checkpoints, got {0}")]
    PoolTooLarge(usize),
    #[error("grid resolution must be in (0, 0.5], got {0}")]
    InvalidResolution(f64),
    #[error("invalid suite: {0}")]
    InvalidSuite(String),
    #[error("i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Merge(#[from] MergeError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Fitness(#[from] crate::fitness::FitnessError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub dim: usize,
    pub pool_size: usize,
    pub tasks: usize,
    pub noise: f64,
    pub seed: u64,
    /// Ridge penalty for the ridge generator; must be positive.
    pub ridge_lambda: f64,
    pub train_rows: usize,
    pub eval_rows: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            dim: 2,
            pool_size: 16,
            tasks: 2,
            noise: 0.15,
            seed: 0,
            ridge_lambda: 1e-3,
            train_rows: 64,
            eval_rows: 64,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), ToyError> {
        let bad = |m: String| Err(ToyError::InvalidConfig(m));
        if self.dim < 1 {
            return bad("dim must be >= 1".into());
        }
        if self.pool_size < 2 {
            return bad("pool size must be >= 2".into());
        }
        if self.tasks < 2 {
            return bad("task count must be >= 2".into());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise must be >= 0, got {}", self.noise));
        }
        Ok(())
    }
}

/// Definition of one synthetic task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TaskKind {
    Radial {
        center: Vec<f64>,
    },
    Ridge {
        /// Eval design matrix, one row per example.
        x: Vec<Vec<f64>>,
        y: Vec<f64>,
        coef: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyTask {
    pub name: String,
    #[serde(flatten)]
    pub kind: TaskKind,
}

/// A set of synthetic tasks that can score toy checkpoints directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyTaskSuite {
    pub tensor: String,
    pub dim: usize,
    pub tasks: Vec<ToyTask>,
}

/// `100 / (1 + r²)`.
pub fn radial_score(theta: &[f64], center: &[f64]) -> f64 {
    let r2: f64 = theta.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
    100.0 / (1.0 + r2)
}

fn mse(x: &[Vec<f64>], y: &[f64], coef: &[f64]) -> f64 {
    let total: f64 = x
        .iter()
        .zip(y)
        .map(|(row, &target)| {
            let pred: f64 = row.iter().zip(coef).map(|(a, b)| a * b).sum();
            (pred - target) * (pred - target)
        })
        .sum();
    total / y.len() as f64
}

impl ToyTaskSuite {
    pub fn task_names(&self) -> Vec<String> {
        self.tasks.iter().map(|t| t.name.clone()).collect()
    }

    pub fn validate(&self) -> Result<(), ToyError> {
        let mut seen = std::collections::HashSet::new();
        for t in &self.tasks {
            if !seen.insert(&t.name) {
                return Err(ToyError::InvalidSuite(format!("duplicate task {:?}", t.name)));
            }
            match &t.kind {
                TaskKind::Radial { center } => {
                    if center.len() != self.dim || center.iter().any(|v| !v.is_finite()) {
                        return Err(ToyError::InvalidSuite(format!("bad center for {:?}", t.name)));
                    }
                }
                TaskKind::Ridge { x, y, coef } => {
                    if x.is_empty() || x.len() != y.len() || coef.len() != self.dim || x.iter().any(|r| r.len() != self.dim) {
                        return Err(ToyError::InvalidSuite(format!("inconsistent dataset for {:?}", t.name)));
                    }
                }
            }
        }
        Ok(())
    }

    /// Score of a parameter vector on one task.
    pub fn score_vector(&self, theta: &[f64], task: &str) -> Result<f64, ToyError> {
        let t = self
            .tasks
            .iter()
            .find(|t| t.name == task)
            .ok_or_else(|| ToyError::UnknownTask(task.to_string()))?;
        Ok(match &t.kind {
            TaskKind::Radial { center } => radial_score(theta, center),
            TaskKind::Ridge { x, y, .. } => 100.0 / (1.0 + mse(x, y, theta)),
        })
    }

    /// Scores a checkpoint on the requested tasks.
    pub fn score(&self, ckpt: &TensorMap, tasks: &[String]) -> Result<TaskScores, ToyError> {
        let theta = self.parameters(ckpt)?;
        let mut out = TaskScores::new();
        for t in tasks {
            out.insert(t.clone(), self.score_vector(&theta, t)?);
        }
        Ok(out)
    }

    fn parameters(&self, ckpt: &TensorMap) -> Result<Vec<f64>, ToyError> {
        let t = ckpt
            .get(&self.tensor)
            .filter(|t| t.data.len() == self.dim)
            .ok_or(ToyError::BadCheckpoint(self.dim))?;
        Ok(t.data.iter().map(|&v| v as f64).collect())
    }

    /// Loads `suite.json`, either directly or from inside a directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ToyError> {
        let path = path.as_ref();
        let file = if path.is_dir() { path.join(SUITE_FILE) } else { path.to_path_buf() };
        let text = std::fs::read_to_string(&file).map_err(|source| ToyError::Io {
            path: file.clone(),
            source,
        })?;
        let suite: ToyTaskSuite =
            serde_json::from_str(&text).map_err(|e| ToyError::InvalidSuite(format!("{}: {e}", file.display())))?;
        suite.validate()?;
        Ok(suite)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ToyError> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("suite serializes");
        std::fs::write(path, text).map_err(|source| ToyError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

fn task_name(t: usize) -> String {
    format!("t{}", t + 1)
}

fn toy_checkpoint(label: String, theta: &[f64]) -> TensorMap {
    TensorMap::new(label)
        .with(TOY_TENSOR, Tensor::vector(theta.iter().map(|&v| v as f32).collect()))
        .expect("vector tensor is valid")
}

/// Worst (largest) pairwise Spearman over the pool's task scores.
fn worst_pair_correlation(pool: &CheckpointPool, suite: &ToyTaskSuite) -> Result<f64, ToyError> {
    let names = suite.task_names();
    let mut cols = vec![Vec::with_capacity(pool.len()); names.len()];
    for i in 0..pool.len() {
        let s = suite.score(&pool.load(i)?, &names)?;
        for (c, n) in cols.iter_mut().zip(&names) {
            c.push(s.get(n).unwrap());
        }
    }
    let mut worst = f64::NEG_INFINITY;
    for a in 0..cols.len() {
        for b in (a + 1)..cols.len() {
            // a constant column carries no tradeoff at all
            let r = spearman(&cols[a], &cols[b]).unwrap_or(1.0);
            worst = worst.max(r);
        }
    }
    Ok(worst)
}

fn certify<F>(cfg: &GeneratorConfig, mut attempt: F) -> Result<(CheckpointPool, ToyTaskSuite), ToyError>
where
    F: FnMut(&mut ChaCha8Rng) -> Result<(CheckpointPool, ToyTaskSuite), ToyError>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best = f64::INFINITY;
    for _ in 0..MAX_ATTEMPTS {
        let (pool, suite) = attempt(&mut rng)?;
        let worst = worst_pair_correlation(&pool, &suite)?;
        if worst <= TRADEOFF_THRESHOLD {
            return Ok((pool, suite));
        }
        best = best.min(worst);
    }
    Err(ToyError::NoTradeoff {
        threshold: TRADEOFF_THRESHOLD,
        attempts: MAX_ATTEMPTS,
        best,
    })
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| { let z: f64 = StandardNormal.sample(rng); scale * z }).collect()
}

/// Radial suite: task `t` is centered on the `t`-th axis; checkpoints are
/// noisy copies of the centers (round-robin) followed by noisy pairwise
/// midpoints, as many as fit in the pool after one checkpoint per task.
pub fn gen_radial_suite(cfg: &GeneratorConfig) -> Result<(CheckpointPool, ToyTaskSuite), ToyError> {
    cfg.validate()?;
    if cfg.dim < cfg.tasks {
        return Err(ToyError::InvalidConfig(format!(
            "radial centers need dim >= tasks ({} < {})",
            cfg.dim, cfg.tasks
        )));
    }
    let centers: Vec<Vec<f64>> = (0..cfg.tasks)
        .map(|t| {
            let mut c = vec![0.0; cfg.dim];
            c[t] = 1.0;
            c
        })
        .collect();
    let suite = ToyTaskSuite {
        tensor: TOY_TENSOR.into(),
        dim: cfg.dim,
        tasks: centers
            .iter()
            .enumerate()
            .map(|(t, c)| ToyTask {
                name: task_name(t),
                kind: TaskKind::Radial { center: c.clone() },
            })
            .collect(),
    };
    let pairs: Vec<(usize, usize)> = (0..cfg.tasks)
        .flat_map(|a| ((a + 1)..cfg.tasks).map(move |b| (a, b)))
        .collect();
    let n_mid = pairs.len().min(cfg.pool_size - cfg.tasks.min(cfg.pool_size));
    let n_axis = cfg.pool_size - n_mid;

    certify(cfg, |rng| {
        let mut ckpts = Vec::with_capacity(cfg.pool_size);
        for i in 0..n_axis {
            let t = i % cfg.tasks;
            let noise = gaussian(rng, cfg.dim, cfg.noise);
            let theta: Vec<f64> = centers[t].iter().zip(&noise).map(|(c, e)| c + e).collect();
            ckpts.push(toy_checkpoint(format!("c{:02}_t{}", i + 1, t + 1), &theta));
        }
        for (k, &(a, b)) in pairs.iter().take(n_mid).enumerate() {
            let noise = gaussian(rng, cfg.dim, cfg.noise);
            let theta: Vec<f64> = (0..cfg.dim)
                .map(|j| 0.5 * (centers[a][j] + centers[b][j]) + noise[j])
                .collect();
            ckpts.push(toy_checkpoint(format!("c{:02}_mid{}{}", n_axis + k + 1, a + 1, b + 1), &theta));
        }
        Ok((CheckpointPool::from_memory(ckpts), suite.clone()))
    })
}

/// Ridge fit on a mixture of datasets:
/// `(Σ p_t X_tᵀX_t/n_t + λI)⁻¹ Σ p_t X_tᵀy_t/n_t`.
pub fn ridge_fit(datasets: &[(DMatrix<f64>, DVector<f64>)], mix: &[f64], lambda: f64) -> Result<Vec<f64>, ToyError> {
    if lambda.is_nan() || lambda <= 0.0 {
        return Err(ToyError::InvalidConfig(format!("ridge lambda must be > 0, got {lambda}")));
    }
    let d = datasets[0].0.ncols();
    let mut a = DMatrix::<f64>::identity(d, d) * lambda;
    let mut b = DVector::<f64>::zeros(d);
    for ((x, y), &p) in datasets.iter().zip(mix) {
        if p == 0.0 {
            continue;
        }
        let n = x.nrows() as f64;
        a += x.transpose() * x * (p / n);
        b += x.transpose() * y * (p / n);
    }
    let chol = a
        .cholesky()
        .ok_or_else(|| ToyError::InvalidConfig("ridge system is not positive definite".into()))?;
    Ok(chol.solve(&b).as_slice().to_vec())
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Orthonormal true coefficients, one per task (requires `dim >= tasks`).
fn orthonormal_coefs(rng: &mut ChaCha8Rng, tasks: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(tasks);
    while out.len() < tasks {
        let mut v = DVector::from_iterator(dim, (0..dim).map(|_| StandardNormal.sample(rng)));
        for u in &out {
            v -= u * u.dot(&v);
        }
        let n = v.norm();
        if n > 1e-8 {
            out.push(v / n);
        }
    }
    out.into_iter().map(|v| v.as_slice().to_vec()).collect()
}

/// Ridge suite: the first `tasks` checkpoints are trained on a single task
/// each; the rest on random Dirichlet(1) mixtures.
pub fn gen_ridge_suite(cfg: &GeneratorConfig) -> Result<(CheckpointPool, ToyTaskSuite), ToyError> {
    cfg.validate()?;
    if cfg.ridge_lambda.is_nan() || cfg.ridge_lambda <= 0.0 {
        return Err(ToyError::InvalidConfig(format!(
            "ridge lambda must be > 0, got {}",
            cfg.ridge_lambda
        )));
    }
    if cfg.dim < cfg.tasks {
        return Err(ToyError::InvalidConfig(format!(
            "orthogonal task coefficients need dim >= tasks ({} < {})",
            cfg.dim, cfg.tasks
        )));
    }
    if cfg.train_rows == 0 || cfg.eval_rows == 0 {
        return Err(ToyError::InvalidConfig("train and eval splits must be non-empty".into()));
    }
    certify(cfg, |rng| {
        let coefs = orthonormal_coefs(rng, cfg.tasks, cfg.dim);
        let mut train = Vec::with_capacity(cfg.tasks);
        let mut tasks = Vec::with_capacity(cfg.tasks);
        for (t, beta) in coefs.iter().enumerate() {
            let beta_v = DVector::from_column_slice(beta);
            let xt = random_matrix(rng, cfg.train_rows, cfg.dim);
            let yt = &xt * &beta_v + DVector::from_vec(gaussian(rng, cfg.train_rows, cfg.noise));
            let xe = random_matrix(rng, cfg.eval_rows, cfg.dim);
            let ye = &xe * &beta_v + DVector::from_vec(gaussian(rng, cfg.eval_rows, cfg.noise));
            train.push((xt, yt));
            tasks.push(ToyTask {
                name: task_name(t),
                kind: TaskKind::Ridge {
                    x: xe.row_iter().map(|r| r.iter().copied().collect()).collect(),
                    y: ye.as_slice().to_vec(),
                    coef: beta.clone(),
                },
            });
        }
        let mut ckpts = Vec::with_capacity(cfg.pool_size);
        for i in 0..cfg.pool_size {
            let mix: Vec<f64> = if i < cfg.tasks {
                (0..cfg.tasks).map(|t| if t == i { 1.0 } else { 0.0 }).collect()
            } else {
                let g: Vec<f64> = (0..cfg.tasks).map(|_| Exp1.sample(rng)).collect();
                let s: f64 = g.iter().sum();
                g.into_iter().map(|v| v / s).collect()
            };
            let theta = ridge_fit(&train, &mix, cfg.ridge_lambda)?;
            let dominant = mix
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(t, _)| t + 1)
                .unwrap_or(1);
            ckpts.push(toy_checkpoint(format!("c{:02}_mix{}", i + 1, dominant), &theta));
        }
        // keep the stream position independent of how many draws a fit used
        let _: u64 = rng.random();
        Ok((
            CheckpointPool::from_memory(ckpts),
            ToyTaskSuite {
                tensor: TOY_TENSOR.into(),
                dim: cfg.dim,
                tasks,
            },
        ))
    })
}

/// Writes a generated pool and its suite descriptor into `dir`.
pub fn save_toy_lab(dir: impl AsRef<Path>, pool: &CheckpointPool, suite: &ToyTaskSuite) -> Result<CheckpointPool, ToyError> {
    let dir = dir.as_ref();
    let saved = pool.save_to_dir(dir)?;
    suite.save(dir.join(SUITE_FILE))?;
    Ok(saved)
}

/// Exhaustive search over the simplex grid with spacing `h` (rounded to
/// `1/k` for integer `k`). Ties go to the lexicographically smallest weights.
pub fn grid_oracle(
    pool: &CheckpointPool,
    suite: &ToyTaskSuite,
    tasks: &[String],
    h: f64,
) -> Result<(NormalizedWeights, FitnessValue), ToyError> {
    let n = pool.len();
    if n == 0 {
        return Err(ToyError::InvalidConfig("empty pool".into()));
    }
    if n > 3 {
        return Err(ToyError::PoolTooLarge(n));
    }
    if !(h > 0.0 && h <= 0.5) {
        return Err(ToyError::InvalidResolution(h));
    }
    let k = (1.0 / h + 1e-9).floor() as usize;
    let mem = CheckpointPool::from_memory((0..n).map(|i| pool.load(i)).collect::<Result<_, _>>()?);

    let mut best: Option<(NormalizedWeights, f64)> = None;
    let mut consider = |alpha: Vec<f64>| -> Result<(), ToyError> {
        let w = NormalizedWeights::new(alpha)?;
        let merged = merge(&mem, &w)?;
        let f = macro_average(&suite.score(&merged, tasks)?, tasks)?.value();
        if best.as_ref().is_none_or(|(_, b)| f > *b) {
            best = Some((w, f));
        }
        Ok(())
    };
    let kf = k as f64;
    match n {
        1 => consider(vec![1.0])?,
        2 => {
            for i in 0..=k {
                consider(vec![i as f64 / kf, (k - i) as f64 / kf])?;
            }
        }
        _ => {
            for i in 0..=k {
                for j in 0..=(k - i) {
                    consider(vec![i as f64 / kf, j as f64 / kf, (k - i - j) as f64 / kf])?;
                }
            }
        }
    }
    let (w, f) = best.expect("grid is non-empty");
    Ok((w, FitnessValue(f)))
}

/// The two-checkpoint radial lab: centers `(1,0)` and `(0,1)` with one
/// noise-free checkpoint at each.
pub fn symmetric_pair() -> (CheckpointPool, ToyTaskSuite) {
    let cfg = GeneratorConfig {
        dim: 2,
        pool_size: 2,
        tasks: 2,
        noise: 0.0,
        ..GeneratorConfig::default()
    };
    gen_radial_suite(&cfg).expect("noise-free pair always trades off")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(suite: &ToyTaskSuite) -> Vec<String> {
        suite.task_names()
    }

    #[test]
    fn radial_score_at_center_is_100() {
        assert_eq!(radial_score(&[1.0, 0.0], &[1.0, 0.0]), 100.0);
        assert!(radial_score(&[1.0, 0.5], &[1.0, 0.0]) > radial_score(&[1.0, 1.0], &[1.0, 0.0]));
    }

    #[test]
    fn symmetric_midpoint_fitness() {
        let (pool, suite) = symmetric_pair();
        let m = merge(&pool, &NormalizedWeights::uniform(2)).unwrap();
        let f = macro_average(&suite.score(&m, &names(&suite)).unwrap(), &names(&suite)).unwrap();
        assert!((f.value() - 200.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn radial_generation_is_deterministic_and_certified() {
        let cfg = GeneratorConfig {
            dim: 2,
            pool_size: 16,
            tasks: 2,
            noise: 0.15,
            seed: 0,
            ..GeneratorConfig::default()
        };
        let (a, suite) = gen_radial_suite(&cfg).unwrap();
        let (b, _) = gen_radial_suite(&cfg).unwrap();
        assert_eq!(a.len(), 16);
        assert_eq!(a.content_hash().unwrap(), b.content_hash().unwrap());
        assert!(worst_pair_correlation(&a, &suite).unwrap() <= -0.3);
    }

    #[test]
    fn radial_rejects_bad_configs() {
        let mut cfg = GeneratorConfig { tasks: 3, ..GeneratorConfig::default() };
        assert!(matches!(gen_radial_suite(&cfg), Err(ToyError::InvalidConfig(_))));
        cfg = GeneratorConfig { pool_size: 1, ..GeneratorConfig::default() };
        assert!(matches!(gen_radial_suite(&cfg), Err(ToyError::InvalidConfig(_))));
        cfg = GeneratorConfig { noise: -1.0, ..GeneratorConfig::default() };
        assert!(matches!(gen_radial_suite(&cfg), Err(ToyError::InvalidConfig(_))));
    }

    #[test]
    fn ridge_rejects_zero_lambda() {
        let cfg = GeneratorConfig { ridge_lambda: 0.0, dim: 4, ..GeneratorConfig::default() };
        assert!(matches!(gen_ridge_suite(&cfg), Err(ToyError::InvalidConfig(_))));
    }

    #[test]
    fn grid_oracle_errors_and_single() {
        let (pool, suite) = symmetric_pair();
        let tasks = names(&suite);
        assert!(matches!(grid_oracle(&pool, &suite, &tasks, 0.0), Err(ToyError::InvalidResolution(_))));
        assert!(matches!(grid_oracle(&pool, &suite, &tasks, 0.6), Err(ToyError::InvalidResolution(_))));
        let big = pool.subset(&[0, 1, 0, 1]);
        assert!(matches!(grid_oracle(&big, &suite, &tasks, 0.1), Err(ToyError::PoolTooLarge(4))));

        let single = pool.subset(&[0]);
        let (w, f) = grid_oracle(&single, &suite, &tasks, 0.1).unwrap();
        assert_eq!(w.as_slice(), &[1.0]);
        let direct = macro_average(&suite.score(&pool.load(0).unwrap(), &tasks).unwrap(), &tasks).unwrap();
        assert_eq!(f, direct);
    }

    #[test]
    fn suite_json_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let (pool, suite) = symmetric_pair();
        save_toy_lab(dir.path(), &pool, &suite).unwrap();
        assert_eq!(ToyTaskSuite::load(dir.path()).unwrap(), suite);
        let reopened = CheckpointPool::from_dir(dir.path()).unwrap();
        assert_eq!(reopened.content_hash().unwrap(), pool.content_hash().unwrap());
    }
}
