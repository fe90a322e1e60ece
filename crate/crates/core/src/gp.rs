//! Exact Gaussian process regression on the unit box.
//!
//! The kernel is Matérn 5/2 with one lengthscale per input dimension and a
//! constant prior mean. A [`GpPosterior`] caches the Cholesky factor of
//! `K(X, X) + σ²I` and answers mean, covariance, joint-sample and
//! fantasize queries against it.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SQRT5: f64 = 2.236_067_977_499_79;

/// Smallest relative jitter tried before giving up on a factorization.
pub const JITTER_START: f64 = 1e-10;
/// Largest relative jitter (times signal variance).
pub const JITTER_MAX: f64 = 1e-4;

/// Measured points and values, plus the measurement noise variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub dimension: usize,
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub noise_variance: f64,
}

impl Dataset {
    pub fn new(points: Vec<Vec<f64>>, values: Vec<f64>, noise_variance: f64) -> Result<Self> {
        let dimension = points
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::InvalidConfig("dataset needs at least one point; use Dataset::empty".into()))?;
        let ds = Self {
            dimension,
            points,
            values,
            noise_variance,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn empty(dimension: usize, noise_variance: f64) -> Self {
        Self {
            dimension,
            points: Vec::new(),
            values: Vec::new(),
            noise_variance,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() != self.values.len() {
            return Err(Error::InvalidConfig(format!(
                "{} points but {} values",
                self.points.len(),
                self.values.len()
            )));
        }
        if !(self.noise_variance >= 0.0) {
            return Err(Error::InvalidConfig("noise variance must be nonnegative".into()));
        }
        for p in &self.points {
            check_point(p, self.dimension)?;
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite measured value".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, point: Vec<f64>, value: f64) -> Result<()> {
        check_point(&point, self.dimension)?;
        self.points.push(point);
        self.values.push(value);
        Ok(())
    }

    /// Same points and noise, different values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        let ds = Self {
            values,
            ..self.clone()
        };
        ds.validate()?;
        Ok(ds)
    }
}

pub(crate) fn check_point(p: &[f64], dimension: usize) -> Result<()> {
    if p.len() != dimension {
        return Err(Error::DimensionMismatch {
            expected: dimension,
            got: p.len(),
        });
    }
    if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::OutOfBounds(p.to_vec()));
    }
    Ok(())
}

/// Hyperparameters of the Matérn 5/2 ARD kernel with constant mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub constant_mean: f64,
}

impl KernelParams {
    pub fn new(lengthscales: Vec<f64>, signal_variance: f64, constant_mean: f64) -> Result<Self> {
        let p = Self {
            lengthscales,
            signal_variance,
            constant_mean,
        };
        p.validate()?;
        Ok(p)
    }

    /// Prior asserted before any measurement exists: lengthscale 0.5 in every
    /// dimension, unit signal variance, zero mean.
    pub fn default_prior(dimension: usize) -> Self {
        Self {
            lengthscales: vec![0.5; dimension],
            signal_variance: 1.0,
            constant_mean: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lengthscales.is_empty() || self.lengthscales.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            return Err(Error::InvalidConfig("lengthscales must be positive".into()));
        }
        if !(self.signal_variance > 0.0) || !self.signal_variance.is_finite() {
            return Err(Error::InvalidConfig("signal variance must be positive".into()));
        }
        if !self.constant_mean.is_finite() {
            return Err(Error::InvalidConfig("constant mean must be finite".into()));
        }
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.lengthscales.len()
    }

    /// Matérn 5/2 covariance between two points.
    #[inline]
    pub fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a
            .iter()
            .zip(b)
            .zip(&self.lengthscales)
            .map(|((x, y), l)| {
                let t = (x - y) / l;
                t * t
            })
            .sum();
        let sr = SQRT5 * r2.sqrt();
        self.signal_variance * (1.0 + sr + 5.0 * r2 / 3.0) * (-sr).exp()
    }

    pub fn kernel_matrix(&self, a: &[Vec<f64>], b: &[Vec<f64>]) -> DMatrix<f64> {
        DMatrix::from_fn(a.len(), b.len(), |i, j| self.kernel(&a[i], &b[j]))
    }
}

/// Cholesky with escalating diagonal jitter: first without jitter, then
/// `JITTER_START·scale`, growing ×10 up to `JITTER_MAX·scale`.
pub(crate) fn cholesky_jittered(m: &DMatrix<f64>, scale: f64) -> Option<(Cholesky<f64, Dyn>, f64)> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Some((c, 0.0));
    }
    let mut jitter = JITTER_START * scale;
    while jitter <= JITTER_MAX * scale * (1.0 + 1e-9) {
        let mut mj = m.clone();
        for i in 0..mj.nrows() {
            mj[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(mj) {
            return Some((c, jitter));
        }
        jitter *= 10.0;
    }
    None
}

/// A GP conditioned on a dataset; immutable once built.
#[derive(Debug, Clone)]
pub struct GpPosterior {
    dataset: Dataset,
    params: KernelParams,
    /// Lower Cholesky factor of `K(X, X) + (σ² + jitter) I`.
    chol_l: DMatrix<f64>,
    /// `(K + σ²I)^{-1} (y − m)`.
    alpha: DVector<f64>,
    jitter: f64,
}

impl GpPosterior {
    pub fn new(dataset: Dataset, params: KernelParams) -> Result<Self> {
        dataset.validate()?;
        params.validate()?;
        if params.dimension() != dataset.dimension {
            return Err(Error::DimensionMismatch {
                expected: dataset.dimension,
                got: params.dimension(),
            });
        }
        let mut k = params.kernel_matrix(&dataset.points, &dataset.points);
        for i in 0..k.nrows() {
            k[(i, i)] += dataset.noise_variance;
        }
        let (chol, jitter) = cholesky_jittered(&k, params.signal_variance)
            .ok_or_else(|| Error::IllConditioned("kernel matrix not positive definite after jitter".into()))?;
        let resid = DVector::from_iterator(
            dataset.len(),
            dataset.values.iter().map(|y| y - params.constant_mean),
        );
        let alpha = chol.solve(&resid);
        Ok(Self {
            chol_l: chol.unpack(),
            dataset,
            params,
            alpha,
            jitter,
        })
    }

    /// The no-data GP.
    pub fn prior(dimension: usize, params: KernelParams, noise_variance: f64) -> Result<Self> {
        Self::new(Dataset::empty(dimension, noise_variance), params)
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn dimension(&self) -> usize {
        self.dataset.dimension
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Effective diagonal added to `K(X, X)`: noise plus any jitter.
    pub fn effective_noise(&self) -> f64 {
        self.dataset.noise_variance + self.jitter
    }

    /// Reconstructs `L Lᵀ`, i.e. the factorized `K + σ²I` (+ jitter).
    pub fn reconstructed_gram(&self) -> DMatrix<f64> {
        &self.chol_l * self.chol_l.transpose()
    }

    /// `L^{-1} K(X, query)`, shape n × q.
    pub(crate) fn whitened_cross(&self, query: &[Vec<f64>]) -> DMatrix<f64> {
        let kxq = self.params.kernel_matrix(&self.dataset.points, query);
        if self.dataset.is_empty() {
            return kxq;
        }
        self.chol_l
            .solve_lower_triangular(&kxq)
            .expect("cholesky factor has a positive diagonal")
    }

    pub fn mean_at(&self, x: &[f64]) -> f64 {
        let mut m = self.params.constant_mean;
        for (p, a) in self.dataset.points.iter().zip(self.alpha.iter()) {
            m += self.params.kernel(p, x) * a;
        }
        m
    }

    pub fn variance_at(&self, x: &[f64]) -> f64 {
        let v = self.whitened_cross(std::slice::from_ref(&x.to_vec()));
        (self.params.signal_variance - v.norm_squared()).max(0.0)
    }

    pub fn mean(&self, query: &[Vec<f64>]) -> DVector<f64> {
        DVector::from_iterator(query.len(), query.iter().map(|q| self.mean_at(q)))
    }

    /// Posterior variances at each query point.
    pub fn variances(&self, query: &[Vec<f64>]) -> DVector<f64> {
        let v = self.whitened_cross(query);
        DVector::from_iterator(
            query.len(),
            (0..query.len()).map(|j| (self.params.signal_variance - v.column(j).norm_squared()).max(0.0)),
        )
    }

    fn raw_covariance(&self, query: &[Vec<f64>]) -> DMatrix<f64> {
        let kqq = self.params.kernel_matrix(query, query);
        if self.dataset.is_empty() {
            return kqq;
        }
        let v = self.whitened_cross(query);
        kqq - v.transpose() * v
    }

    /// Posterior mean vector and (symmetrized) covariance matrix at `query`.
    pub fn posterior(&self, query: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
        let mean = self.mean(query);
        let raw = self.raw_covariance(query);
        let cov = (&raw + raw.transpose()) * 0.5;
        (mean, cov)
    }

    /// One draw from the joint posterior at `query`.
    pub fn joint_sample<R: Rng + ?Sized>(&self, query: &[Vec<f64>], rng: &mut R) -> Result<Vec<f64>> {
        if query.is_empty() {
            return Err(Error::InvalidConfig("joint_sample needs at least one query point".into()));
        }
        let (mean, cov) = self.posterior(query);
        let l = posterior_sampling_factor(&cov, self.params.signal_variance)?;
        let z = DVector::from_iterator(query.len(), (0..query.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
        Ok((mean + l * z).iter().copied().collect())
    }

    /// Conditions on measurements at `arms` without refitting hyperparameters.
    ///
    /// Placeholder values for the arms are the current posterior mean, so the
    /// returned posterior keeps the same mean function; its covariance only
    /// depends on the arm locations.
    pub fn fantasize(&self, arms: &[Vec<f64>]) -> Result<GpPosterior> {
        for a in arms {
            check_point(a, self.dimension())?;
        }
        if arms.is_empty() {
            return Ok(self.clone());
        }
        let placeholder: Vec<f64> = arms.iter().map(|a| self.mean_at(a)).collect();
        let mut dataset = self.dataset.clone();
        dataset.points.extend(arms.iter().cloned());
        dataset.values.extend(placeholder);

        match self.extend_factor(arms) {
            Some(chol_l) => {
                let resid = DVector::from_iterator(
                    dataset.len(),
                    dataset.values.iter().map(|y| y - self.params.constant_mean),
                );
                let chol = Cholesky::pack_dirty(chol_l);
                let alpha = chol.solve(&resid);
                Ok(Self {
                    chol_l: chol.unpack(),
                    dataset,
                    params: self.params.clone(),
                    alpha,
                    jitter: self.jitter,
                })
            }
            None => GpPosterior::new(dataset, self.params.clone()),
        }
    }

    /// Block update of the Cholesky factor for appended points, using the
    /// same effective diagonal as the existing factor.
    fn extend_factor(&self, arms: &[Vec<f64>]) -> Option<DMatrix<f64>> {
        let n = self.dataset.len();
        let b = arms.len();
        let w = self.whitened_cross(arms); // n × b
        let mut schur = self.params.kernel_matrix(arms, arms);
        if n > 0 {
            schur -= w.transpose() * &w;
        }
        for i in 0..b {
            schur[(i, i)] += self.effective_noise();
        }
        let l22 = Cholesky::new(schur)?.unpack();
        let mut l = DMatrix::zeros(n + b, n + b);
        l.view_mut((0, 0), (n, n)).copy_from(&self.chol_l);
        l.view_mut((n, 0), (b, n)).copy_from(&w.transpose());
        l.view_mut((n, n), (b, b)).copy_from(&l22);
        Some(l)
    }
}

/// Lower factor of a posterior covariance with jitter escalation from
/// `JITTER_START` to `JITTER_MAX` relative to `scale`.
pub(crate) fn posterior_sampling_factor(cov: &DMatrix<f64>, scale: f64) -> Result<DMatrix<f64>> {
    let mut jitter = JITTER_START * scale;
    while jitter <= JITTER_MAX * scale * (1.0 + 1e-9) {
        let mut m = cov.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(m) {
            return Ok(c.unpack());
        }
        jitter *= 10.0;
    }
    Err(Error::IllConditioned(
        "posterior covariance not factorizable after jitter escalation".into(),
    ))
}
