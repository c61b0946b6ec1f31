//! CMA-ES with ask/tell semantics and injection of pre-evaluated points.
//!
//! The engine **maximizes** fitness. Candidates are collected into
//! generations of `λ`; when the `λ`-th result of a generation is told the
//! distribution (mean, paths, covariance, step size) is updated from the
//! ranking of that generation. Injected points count as already-told
//! members of the current generation.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CmaError {
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("initial step size must be positive and finite, got {0}")]
    InvalidSigma(f64),
    #[error("population size must be at least 2, got {0}")]
    InvalidLambda(usize),
    #[error("expected a vector of length {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("vector contains non-finite entries")]
    NonFiniteVector,
    #[error("generation already holds {0} outstanding candidates")]
    GenerationFull(usize),
    #[error("unknown candidate token {0}")]
    UnknownToken(u64),
    #[error("candidate token {0} was already told")]
    DoubleTell(u64),
    #[error("fitness must be finite, got {0}")]
    NonFiniteFitness(f64),
}

/// Binds an asked candidate to its eventual `tell`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CandidateToken(pub u64);

/// Strategy constants derived from `(d, λ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Constants {
    pub lambda: usize,
    pub mu: usize,
    pub weights: Vec<f64>,
    pub mu_eff: f64,
    pub c_sigma: f64,
    pub d_sigma: f64,
    pub c_c: f64,
    pub c_1: f64,
    pub c_mu: f64,
    /// E‖N(0, I)‖
    pub chi_d: f64,
}

/// Default population size `floor(4 + 3 ln d)`.
pub fn default_lambda(d: usize) -> usize {
    (4.0 + 3.0 * (d as f64).ln()).floor() as usize
}

impl Constants {
    pub fn new(d: usize, lambda: usize) -> Self {
        let n = d as f64;
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu)
            .map(|i| (mu as f64 + 0.5).ln() - (i as f64).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();

        let c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (n + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n);
        let c_1 = 2.0 / ((n + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0).powi(2) + mu_eff));
        let chi_d = n.sqrt() * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));
        Constants {
            lambda,
            mu,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_d,
        }
    }
}

#[derive(Debug, Clone)]
struct Slot {
    token: CandidateToken,
    x: DVector<f64>,
    fitness: Option<f64>,
}

/// Full optimizer state.
#[derive(Debug, Clone)]
pub struct CmaEs {
    dim: usize,
    mean: DVector<f64>,
    sigma: f64,
    cov: DMatrix<f64>,
    /// Eigenvectors of `cov` (columns).
    basis: DMatrix<f64>,
    /// Square roots of the eigenvalues of `cov`.
    scales: DVector<f64>,
    path_sigma: DVector<f64>,
    path_c: DVector<f64>,
    consts: Constants,
    generation: usize,
    next_token: u64,
    pending: Vec<Slot>,
    rng: ChaCha8Rng,
    repairs: usize,
}

const SIGMA_MIN: f64 = 1e-300;
const SIGMA_MAX: f64 = 1e300;

impl CmaEs {
    /// Starts from mean `m0`, step `sigma0`, `C = I` and zero paths.
    /// `lambda` defaults to `floor(4 + 3 ln d)`.
    pub fn new(m0: &[f64], sigma0: f64, lambda: Option<usize>, seed: u64) -> Result<Self, CmaError> {
        let dim = m0.len();
        if dim == 0 {
            return Err(CmaError::ZeroDimension);
        }
        if !(sigma0 > 0.0 && sigma0.is_finite()) {
            return Err(CmaError::InvalidSigma(sigma0));
        }
        if m0.iter().any(|v| !v.is_finite()) {
            return Err(CmaError::NonFiniteVector);
        }
        let lambda = lambda.unwrap_or_else(|| default_lambda(dim));
        if lambda < 2 {
            return Err(CmaError::InvalidLambda(lambda));
        }
        Ok(CmaEs {
            dim,
            mean: DVector::from_column_slice(m0),
            sigma: sigma0,
            cov: DMatrix::identity(dim, dim),
            basis: DMatrix::identity(dim, dim),
            scales: DVector::from_element(dim, 1.0),
            path_sigma: DVector::zeros(dim),
            path_c: DVector::zeros(dim),
            consts: Constants::new(dim, lambda),
            generation: 0,
            next_token: 0,
            pending: Vec::with_capacity(lambda),
            rng: ChaCha8Rng::seed_from_u64(seed),
            repairs: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda(&self) -> usize {
        self.consts.lambda
    }

    pub fn constants(&self) -> &Constants {
        &self.consts
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn path_sigma(&self) -> &[f64] {
        self.path_sigma.as_slice()
    }

    pub fn path_c(&self) -> &[f64] {
        self.path_c.as_slice()
    }

    /// Number of completed generation updates.
    pub fn generation(&self) -> usize {
        self.generation
    }

    /// Candidates in the current, not yet complete, generation.
    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    /// Asked candidates that have not been told yet.
    pub fn outstanding(&self) -> usize {
        self.pending.iter().filter(|s| s.fitness.is_none()).count()
    }

    /// How many times the covariance needed an eigenvalue repair.
    pub fn repairs(&self) -> usize {
        self.repairs
    }

    /// Lower bound enforced on the eigenvalues of `C`.
    pub fn eigen_floor(&self) -> f64 {
        1e-14 * self.cov.trace() / self.dim as f64
    }

    /// Draws `x ~ N(m, σ² C)` as `m + σ B D z`.
    pub fn ask(&mut self) -> Result<(Vec<f64>, CandidateToken), CmaError> {
        if self.pending.len() >= self.consts.lambda {
            return Err(CmaError::GenerationFull(self.outstanding()));
        }
        let z = DVector::from_iterator(
            self.dim,
            (0..self.dim).map(|_| StandardNormal.sample(&mut self.rng)),
        );
        let y = &self.basis * z.component_mul(&self.scales);
        let x = &self.mean + y * self.sigma;
        let token = self.fresh_token();
        self.pending.push(Slot {
            token,
            x: x.clone(),
            fitness: None,
        });
        Ok((x.as_slice().to_vec(), token))
    }

    /// Records the fitness of an asked candidate; completes the generation
    /// update once `λ` results are in.
    pub fn tell(&mut self, token: CandidateToken, fitness: f64) -> Result<(), CmaError> {
        if !fitness.is_finite() {
            return Err(CmaError::NonFiniteFitness(fitness));
        }
        let slot = self
            .pending
            .iter_mut()
            .find(|s| s.token == token)
            .ok_or(CmaError::UnknownToken(token.0))?;
        if slot.fitness.is_some() {
            return Err(CmaError::DoubleTell(token.0));
        }
        slot.fitness = Some(fitness);
        self.maybe_update();
        Ok(())
    }

    /// Adds an already-evaluated point to the current generation.
    pub fn inject(&mut self, x: &[f64], fitness: f64) -> Result<(), CmaError> {
        if x.len() != self.dim {
            return Err(CmaError::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(CmaError::NonFiniteVector);
        }
        if !fitness.is_finite() {
            return Err(CmaError::NonFiniteFitness(fitness));
        }
        if self.pending.len() >= self.consts.lambda {
            return Err(CmaError::GenerationFull(self.outstanding()));
        }
        let token = self.fresh_token();
        self.pending.push(Slot {
            token,
            x: DVector::from_column_slice(x),
            fitness: Some(fitness),
        });
        self.maybe_update();
        Ok(())
    }

    fn fresh_token(&mut self) -> CandidateToken {
        let t = CandidateToken(self.next_token);
        self.next_token += 1;
        t
    }

    fn maybe_update(&mut self) {
        if self.pending.len() == self.consts.lambda && self.pending.iter().all(|s| s.fitness.is_some()) {
            let generation = std::mem::take(&mut self.pending);
            self.update(generation);
        }
    }

    fn update(&mut self, mut generation: Vec<Slot>) {
        let c = self.consts.clone();
        let n = self.dim as f64;

        // Best first. The sort is stable and slots are kept in token order,
        // so ties resolve by creation order.
        generation.sort_by(|a, b| b.fitness.unwrap().total_cmp(&a.fitness.unwrap()));

        let old_mean = self.mean.clone();
        let mut new_mean = DVector::zeros(self.dim);
        for (w, s) in c.weights.iter().zip(&generation) {
            new_mean += &s.x * *w;
        }
        let y_w = (&new_mean - &old_mean) / self.sigma;

        // C^{-1/2} = B D^{-1} B^T from the cached decomposition
        let inv_scales = self.scales.map(|s| 1.0 / s);
        let c_inv_sqrt_y = &self.basis * (self.basis.transpose() * &y_w).component_mul(&inv_scales);

        self.path_sigma = &self.path_sigma * (1.0 - c.c_sigma)
            + c_inv_sqrt_y * (c.c_sigma * (2.0 - c.c_sigma) * c.mu_eff).sqrt();

        let gen_index = (self.generation + 1) as f64;
        let ps_norm = self.path_sigma.norm();
        let h_sigma = ps_norm / (1.0 - (1.0 - c.c_sigma).powf(2.0 * gen_index)).sqrt()
            < (1.4 + 2.0 / (n + 1.0)) * c.chi_d;
        let h = if h_sigma { 1.0 } else { 0.0 };

        self.path_c =
            &self.path_c * (1.0 - c.c_c) + &y_w * (h * (c.c_c * (2.0 - c.c_c) * c.mu_eff).sqrt());

        let mut rank_mu = DMatrix::zeros(self.dim, self.dim);
        for (w, s) in c.weights.iter().zip(&generation) {
            let y = (&s.x - &old_mean) / self.sigma;
            rank_mu += (&y * y.transpose()) * *w;
        }
        let rank_one = &self.path_c * self.path_c.transpose();
        let stall_correction = (1.0 - h) * c.c_c * (2.0 - c.c_c);
        self.cov = &self.cov * (1.0 - c.c_1 - c.c_mu + c.c_1 * stall_correction)
            + rank_one * c.c_1
            + rank_mu * c.c_mu;

        self.sigma *= ((c.c_sigma / c.d_sigma) * (ps_norm / c.chi_d - 1.0)).exp();
        if !self.sigma.is_finite() {
            self.sigma = SIGMA_MAX;
        }
        self.sigma = self.sigma.clamp(SIGMA_MIN, SIGMA_MAX);

        self.mean = new_mean;
        self.refresh_eigen();
        self.generation += 1;
    }

    fn symmetrize(&mut self) {
        for i in 0..self.dim {
            for j in (i + 1)..self.dim {
                let v = 0.5 * (self.cov[(i, j)] + self.cov[(j, i)]);
                self.cov[(i, j)] = v;
                self.cov[(j, i)] = v;
            }
        }
    }

    /// Symmetrizes `C`, re-decomposes it and lifts eigenvalues below the
    /// floor, rebuilding `C` from the repaired spectrum when needed.
    fn refresh_eigen(&mut self) {
        self.symmetrize();
        if self.cov.iter().any(|v| !v.is_finite()) {
            self.cov = DMatrix::identity(self.dim, self.dim);
            self.repairs += 1;
        }
        let eig = SymmetricEigen::new(self.cov.clone());
        let floor = self.eigen_floor();
        let mut values = eig.eigenvalues.clone();
        let repaired = values.iter().any(|&v| v < floor);
        if repaired {
            // lift with some headroom so a fresh decomposition stays above the floor
            values.iter_mut().for_each(|v| *v = v.max(2.0 * floor));
            self.cov = &eig.eigenvectors * DMatrix::from_diagonal(&values) * eig.eigenvectors.transpose();
            self.symmetrize();
            self.repairs += 1;
        }
        self.basis = eig.eigenvectors;
        self.scales = values.map(f64::sqrt);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_lambda_values() {
        assert_eq!(default_lambda(16), 12);
        assert_eq!(default_lambda(5), 8);
        assert_eq!(default_lambda(2), 6);
        let es = CmaEs::new(&[0.0; 16], 1.0, None, 0).unwrap();
        assert_eq!(es.lambda(), 12);
    }

    #[test]
    fn constants_are_consistent() {
        let c = Constants::new(16, 12);
        assert_eq!(c.mu, 6);
        assert!((c.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(c.weights.windows(2).all(|w| w[0] >= w[1]));
        assert!(*c.weights.last().unwrap() > 0.0);
        assert!(c.c_1 + c.c_mu <= 1.0);
    }

    #[test]
    fn init_state() {
        let es = CmaEs::new(&[1.0, 2.0, 3.0], 0.5, None, 7).unwrap();
        assert_eq!(es.covariance(), &DMatrix::<f64>::identity(3, 3));
        assert_eq!(es.mean(), &[1.0, 2.0, 3.0]);
        assert_eq!(es.sigma(), 0.5);
        assert!(es.path_sigma().iter().all(|v| *v == 0.0));
        assert!(es.path_c().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn init_errors() {
        assert_eq!(CmaEs::new(&[], 1.0, None, 0).unwrap_err(), CmaError::ZeroDimension);
        assert_eq!(CmaEs::new(&[0.0], 0.0, None, 0).unwrap_err(), CmaError::InvalidSigma(0.0));
        assert_eq!(CmaEs::new(&[0.0], 1.0, Some(1), 0).unwrap_err(), CmaError::InvalidLambda(1));
    }

    #[test]
    fn tiny_sigma_samples_the_mean() {
        let m = [0.3, -1.25, 7.0];
        let mut es = CmaEs::new(&m, 1e-300, None, 3).unwrap();
        let (x, _) = es.ask().unwrap();
        for (a, b) in x.iter().zip(&m) {
            assert!((a - b).abs() <= f64::EPSILON * b.abs());
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let mut a = CmaEs::new(&[0.0; 4], 1.0, None, 11).unwrap();
        let mut b = CmaEs::new(&[0.0; 4], 1.0, None, 11).unwrap();
        for _ in 0..20 {
            let (xa, ta) = a.ask().unwrap();
            let (xb, tb) = b.ask().unwrap();
            assert_eq!(xa, xb);
            let f = -xa.iter().map(|v| v * v).sum::<f64>();
            a.tell(ta, f).unwrap();
            b.tell(tb, f).unwrap();
        }
        assert_eq!(a.mean(), b.mean());
        assert_eq!(a.covariance(), b.covariance());
    }

    #[test]
    fn token_errors() {
        let mut es = CmaEs::new(&[0.0; 2], 1.0, Some(3), 0).unwrap();
        let (_, t) = es.ask().unwrap();
        assert_eq!(es.tell(CandidateToken(99), 1.0), Err(CmaError::UnknownToken(99)));
        assert!(matches!(es.tell(t, f64::NAN), Err(CmaError::NonFiniteFitness(_))));
        es.tell(t, 1.0).unwrap();
        assert_eq!(es.tell(t, 1.0), Err(CmaError::DoubleTell(t.0)));
        es.ask().unwrap();
        es.ask().unwrap();
        assert_eq!(es.ask().unwrap_err(), CmaError::GenerationFull(2));
    }

    #[test]
    fn inject_rejects_bad_input() {
        let mut es = CmaEs::new(&[0.0; 2], 1.0, None, 0).unwrap();
        assert_eq!(es.inject(&[0.0, 0.0], f64::INFINITY), Err(CmaError::NonFiniteFitness(f64::INFINITY)));
        assert!(matches!(es.inject(&[0.0], 1.0), Err(CmaError::DimensionMismatch { .. })));
        assert_eq!(es.pending_len(), 0);
    }

    #[test]
    fn inject_then_ask_completes_one_generation() {
        let mut es = CmaEs::new(&[0.0; 3], 1.0, None, 5).unwrap();
        let lambda = es.lambda();
        es.inject(&[1.0, 0.0, 0.0], 3.0).unwrap();
        for i in 0..lambda - 1 {
            let (_, t) = es.ask().unwrap();
            assert_eq!(es.generation(), 0);
            es.tell(t, i as f64).unwrap();
        }
        assert_eq!(es.generation(), 1);
        assert_eq!(es.pending_len(), 0);
    }
}
