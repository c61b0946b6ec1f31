//! Simplex projection of raw search vectors and linear merging of pools.

use serde::{Deserialize, Serialize};

use crate::tensorstore::{validate_pool, CheckpointPool, StoreError, Tensor, TensorMap};

#[derive(Debug, thiserror::Error)]
pub enum MergeError {
    #[error("all weights are non-positive after clamping")]
    DegenerateWeights,
    #[error("weight vector has {found} entries, pool has {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("weight {index} is not finite")]
    NonFinite { index: usize },
    #[error("empty weight vector")]
    Empty,
    #[error("invalid normalized weights: {0}")]
    NotOnSimplex(String),
    #[error("pool schema mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Unconstrained point sampled by the optimizer, one entry per checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(pub Vec<f64>);

/// Merge coefficients on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NormalizedWeights(Vec<f64>);

pub const SIMPLEX_TOLERANCE: f64 = 1e-12;

impl NormalizedWeights {
    /// Wraps `alpha` after checking non-negativity and unit sum.
    pub fn new(alpha: Vec<f64>) -> Result<Self, MergeError> {
        if alpha.is_empty() {
            return Err(MergeError::Empty);
        }
        if let Some(i) = alpha.iter().position(|a| !a.is_finite() || *a < 0.0) {
            return Err(MergeError::NotOnSimplex(format!("alpha[{i}] = {}", alpha[i])));
        }
        let sum = accurate_sum(&alpha);
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(MergeError::NotOnSimplex(format!("weights sum to {sum}")));
        }
        Ok(NormalizedWeights(alpha))
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n >= 1, "uniform weights need at least one entry");
        NormalizedWeights(vec![1.0 / n as f64; n])
    }

    pub fn one_hot(n: usize, i: usize) -> Self {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        NormalizedWeights(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Max-norm distance to another weight vector of the same length.
    pub fn max_abs_diff(&self, other: &NormalizedWeights) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

// Neumaier summation. Keeps normalize() invariant to positive rescaling at the
// 1e-15 level independent of the vector length.
fn accurate_sum(xs: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for &x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Clamps negative entries to zero and divides by the sum of what remains.
pub fn normalize(raw: &WeightVector) -> Result<NormalizedWeights, MergeError> {
    if raw.0.is_empty() {
        return Err(MergeError::Empty);
    }
    if let Some(index) = raw.0.iter().position(|v| !v.is_finite()) {
        return Err(MergeError::NonFinite { index });
    }
    let clamped: Vec<f64> = raw.0.iter().map(|&v| v.max(0.0)).collect();
    let sum = accurate_sum(&clamped);
    if sum <= 0.0 {
        return Err(MergeError::DegenerateWeights);
    }
    Ok(NormalizedWeights(clamped.into_iter().map(|v| v / sum).collect()))
}

/// Number of raw entries that [`normalize`] clamps to zero.
pub fn clamped_count(raw: &WeightVector) -> usize {
    raw.0.iter().filter(|v| **v < 0.0).count()
}

/// `θ_mrg = Σ α_i θ_i`, streamed one tensor name at a time.
///
/// Each output element is accumulated in `f64` in ascending pool order and
/// rounded to `f32` once. Entries with `α_i = 0` are never read, so a one-hot
/// weight vector reproduces its checkpoint bit for bit.
pub fn merge(pool: &CheckpointPool, w: &NormalizedWeights) -> Result<TensorMap, MergeError> {
    if w.len() != pool.len() {
        return Err(MergeError::LengthMismatch {
            expected: pool.len(),
            found: w.len(),
        });
    }
    let schema = pool.schema()?;
    let mut sources = pool.open_sources()?;
    let alpha = w.as_slice();
    let mut out = TensorMap::new("merge");

    for (name, shape) in &schema.0 {
        let numel: usize = shape.iter().product();
        let mut acc: Option<Vec<f64>> = None;
        for (i, src) in sources.iter_mut().enumerate() {
            let a = alpha[i];
            if a == 0.0 {
                continue;
            }
            let t = src.tensor(name).map_err(|e| match e {
                StoreError::MissingTensor(n) => {
                    MergeError::ShapeMismatch(format!("entry {i} lacks tensor {n:?}"))
                }
                other => MergeError::Store(other),
            })?;
            if &t.shape != shape {
                return Err(MergeError::ShapeMismatch(format!(
                    "entry {i} tensor {name:?}: expected {shape:?}, found {:?}",
                    t.shape
                )));
            }
            match acc.as_mut() {
                // seeding from the first product keeps -0.0 and exact copies intact
                None => acc = Some(t.data.iter().map(|&v| a * v as f64).collect()),
                Some(acc) => {
                    for (s, &v) in acc.iter_mut().zip(t.data.iter()) {
                        *s += a * v as f64;
                    }
                }
            }
        }
        let acc = acc.unwrap_or_else(|| vec![0.0; numel]);
        out.insert(
            name.clone(),
            Tensor::new(shape.clone(), acc.into_iter().map(|v| v as f32).collect()),
        )?;
    }
    Ok(out)
}

/// [`merge`] preceded by a full schema check, for callers that have not
/// already validated the pool.
pub fn merge_checked(pool: &CheckpointPool, w: &NormalizedWeights) -> Result<TensorMap, MergeError> {
    let report = validate_pool(pool);
    if let Some(m) = report.first_mismatch {
        return Err(MergeError::ShapeMismatch(format!("{m:?}")));
    }
    merge(pool, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wv(v: &[f64]) -> WeightVector {
        WeightVector(v.to_vec())
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(&wv(&[2.0, 1.0, 1.0])).unwrap().as_slice(), &[0.5, 0.25, 0.25]);
        assert_eq!(normalize(&wv(&[-0.5, 1.0, 1.0])).unwrap().as_slice(), &[0.0, 0.5, 0.5]);
        assert!(matches!(normalize(&wv(&[-1.0, -2.0])), Err(MergeError::DegenerateWeights)));
        assert!(matches!(normalize(&wv(&[0.0, 0.0])), Err(MergeError::DegenerateWeights)));
        assert!(matches!(normalize(&wv(&[1.0, f64::NAN])), Err(MergeError::NonFinite { index: 1 })));
        assert_eq!(clamped_count(&wv(&[-0.5, 1.0, -1.0])), 2);
    }

    #[test]
    fn normalized_weights_validation() {
        assert!(NormalizedWeights::new(vec![0.5, 0.5]).is_ok());
        assert!(NormalizedWeights::new(vec![0.5, 0.6]).is_err());
        assert!(NormalizedWeights::new(vec![1.5, -0.5]).is_err());
        assert!(NormalizedWeights::new(vec![]).is_err());
    }

    fn pool2() -> CheckpointPool {
        CheckpointPool::from_memory(vec![
            TensorMap::new("p").with("a", Tensor::vector(vec![1.0, 2.0])).unwrap(),
            TensorMap::new("q").with("a", Tensor::vector(vec![3.0, 4.0])).unwrap(),
        ])
    }

    #[test]
    fn merge_midpoint() {
        let m = merge(&pool2(), &NormalizedWeights::uniform(2)).unwrap();
        assert_eq!(m.get("a").unwrap().data, vec![2.0, 3.0]);
    }

    #[test]
    fn merge_one_hot_is_exact() {
        let c = TensorMap::new("c")
            .with("a", Tensor::vector(vec![0.1, -0.0, 1e-40, 3.3e30]))
            .unwrap();
        let d = TensorMap::new("d").with("a", Tensor::vector(vec![9.0; 4])).unwrap();
        let pool = CheckpointPool::from_memory(vec![d.clone(), c.clone(), d]);
        let m = merge(&pool, &NormalizedWeights::one_hot(3, 1)).unwrap();
        assert!(m.get("a").unwrap().data.iter().zip(&c.get("a").unwrap().data).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn merge_of_copies_is_identity() {
        let c = TensorMap::new("c")
            .with("a", Tensor::new(vec![2, 2], vec![0.3, -1.7, 12.5, 1e-3]))
            .unwrap();
        let pool = CheckpointPool::from_memory(vec![c.clone(); 5]);
        let w = normalize(&wv(&[0.3, 0.1, 2.0, 0.7, 0.01])).unwrap();
        let m = merge(&pool, &w).unwrap();
        for (x, y) in m.get("a").unwrap().data.iter().zip(&c.get("a").unwrap().data) {
            assert!(((x - y) / y).abs() <= 1e-6);
        }
    }

    #[test]
    fn merge_errors() {
        assert!(matches!(
            merge(&pool2(), &NormalizedWeights::uniform(3)),
            Err(MergeError::LengthMismatch { expected: 2, found: 3 })
        ));
        let bad = CheckpointPool::from_memory(vec![
            TensorMap::new("p").with("a", Tensor::vector(vec![1.0, 2.0])).unwrap(),
            TensorMap::new("q").with("a", Tensor::vector(vec![3.0, 4.0, 5.0])).unwrap(),
        ]);
        assert!(matches!(
            merge(&bad, &NormalizedWeights::uniform(2)),
            Err(MergeError::ShapeMismatch(_))
        ));
        assert!(matches!(
            merge_checked(&bad, &NormalizedWeights::uniform(2)),
            Err(MergeError::ShapeMismatch(_))
        ));
    }
}
