//! Samples from p_*(x), the distribution of the maximizer of the surrogate.
//!
//! N_x hit-and-run Metropolis chains start together at the maximizer of the
//! posterior mean. Each iteration proposes a truncated-normal move along a
//! random direction and accepts it when a joint two-point posterior draw at
//! (current, proposed) ranks the proposal higher. Only the final chain states
//! are returned. The step scale adapts once per iteration from the pooled
//! acceptance fraction.

use nalgebra::Matrix2;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{Error, Result};
use crate::gp::{GpPosterior, JITTER_MAX, JITTER_START};
use crate::optim::{minimize_bounded, BoundedSettings};
use crate::sobol::SobolStream;

/// Chains sitting on a face of the box are moved this far inward.
pub const BOUNDARY_NUDGE: f64 = 1e-9;
const ARGMAX_STARTS: usize = 64;
const ARGMAX_POLISHED: usize = 8;

/// How a proposed move is judged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcceptRule {
    /// Accept iff y' > y for one joint posterior draw at (x, x').
    JointSample,
    /// Accept iff μ(x') > μ(x); deterministic hill climbing.
    MeanComparison,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PStarConfig {
    pub n_samples: usize,
    pub n_iterations: usize,
    /// Initial hit-and-run step scale ε.
    pub step_scale: f64,
    pub accept_band: (f64, f64),
    pub shrink: f64,
    pub grow: f64,
    pub accept_rule: AcceptRule,
}

impl Default for PStarConfig {
    fn default() -> Self {
        Self {
            n_samples: 64,
            n_iterations: 64,
            step_scale: 0.25,
            accept_band: (0.2, 0.5),
            shrink: 0.7,
            grow: 1.3,
            accept_rule: AcceptRule::JointSample,
        }
    }
}

impl PStarConfig {
    /// Defaults with `n_samples = max(10·B, 64)`.
    pub fn for_batch(batch_size: usize) -> Self {
        Self {
            n_samples: (10 * batch_size).max(64),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.accept_band;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(Error::InvalidConfig(format!("accept band ({lo}, {hi}) must satisfy 0 < low < high < 1")));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0 && self.grow > 1.0) {
            return Err(Error::InvalidConfig("need 0 < shrink < 1 < grow".into()));
        }
        if !(self.step_scale > 0.0) {
            return Err(Error::InvalidConfig("step scale must be positive".into()));
        }
        if self.n_samples == 0 {
            return Err(Error::InvalidConfig("n_samples must be at least 1".into()));
        }
        Ok(())
    }
}

/// One hit-and-run proposal from a point `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepProposal {
    pub direction: Vec<f64>,
    pub lambda_minus: f64,
    pub lambda_plus: f64,
    pub eta: f64,
}

impl StepProposal {
    /// `x + eta·direction`, clipped to the box to absorb rounding.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.direction)
            .map(|(xi, di)| (xi + self.eta * di).clamp(0.0, 1.0))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleOrigin {
    Mcmc,
    SobolUniform,
}

/// Integration nodes x_i for the MTV sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub points: Vec<Vec<f64>>,
    pub origin: SampleOrigin,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Uniform nodes from a scrambled Sobol' stream.
    pub fn sobol_uniform<R: RngCore + ?Sized>(dimension: usize, n: usize, rng: &mut R) -> Result<Self> {
        let mut stream = SobolStream::new(dimension, Some(rng.next_u64()))?;
        Ok(Self {
            points: stream.take_points(n),
            origin: SampleOrigin::SobolUniform,
        })
    }
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn std_normal_quantile(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

/// Draws from N(0, sigma²) restricted to `[lo, hi]` by inverting the CDF.
///
/// Intervals entirely in the upper tail are reflected to the lower tail,
/// where the CDF keeps full relative precision.
pub fn truncated_normal<R: Rng + ?Sized>(sigma: f64, lo: f64, hi: f64, rng: &mut R) -> f64 {
    debug_assert!(lo <= hi);
    if lo >= hi {
        return lo;
    }
    let u: f64 = rng.random();
    let (a, b) = (lo / sigma, hi / sigma);
    let (a, b, flip) = if a > 0.0 { (-b, -a, true) } else { (a, b, false) };
    let (pa, pb) = (std_normal_cdf(a), std_normal_cdf(b));
    let z = if pb - pa > 0.0 && (pb - pa).is_finite() {
        let p = (pa + u * (pb - pa)).clamp(pa, pb);
        std_normal_quantile(p).clamp(a, b)
    } else {
        // far lower tail: density ~ exp(-|b|·(b − z)) on [a, b]
        let rate = b.abs().max(1e-300);
        let width = b - a;
        let y = -(1.0 - u * (1.0 - (-rate * width).exp())).ln() / rate;
        (b - y).clamp(a, b)
    };
    let z = if flip { -z } else { z };
    (sigma * z).clamp(lo, hi)
}

fn nudge_inward(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|v| v.clamp(BOUNDARY_NUDGE, 1.0 - BOUNDARY_NUDGE))
        .collect()
}

/// Distances from `x` to the unit-box boundary along `+direction` and
/// `−direction`.
pub fn box_exit_distances(x: &[f64], direction: &[f64]) -> (f64, f64) {
    let mut plus = f64::INFINITY;
    let mut minus = f64::INFINITY;
    for (&xi, &di) in x.iter().zip(direction) {
        if di > 0.0 {
            plus = plus.min((1.0 - xi) / di);
            minus = minus.min(xi / di);
        } else if di < 0.0 {
            plus = plus.min(xi / -di);
            minus = minus.min((1.0 - xi) / -di);
        }
    }
    (minus.max(0.0), plus.max(0.0))
}

/// Proposes a hit-and-run move along a given unit direction.
pub fn hit_and_run_step_along<R: Rng + ?Sized>(
    x: &[f64],
    direction: Vec<f64>,
    step_scale: f64,
    rng: &mut R,
) -> StepProposal {
    let x = nudge_inward(x);
    let (lambda_minus, lambda_plus) = box_exit_distances(&x, &direction);
    let eta = truncated_normal(step_scale, -lambda_minus, lambda_plus, rng);
    StepProposal {
        direction,
        lambda_minus,
        lambda_plus,
        eta,
    }
}

/// Proposes a hit-and-run move from `x` in a uniformly random direction.
pub fn hit_and_run_step<R: Rng + ?Sized>(x: &[f64], step_scale: f64, rng: &mut R) -> StepProposal {
    let direction = loop {
        let v: Vec<f64> = (0..x.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm > 1e-12 {
            break v.into_iter().map(|c| c / norm).collect::<Vec<_>>();
        }
    };
    hit_and_run_step_along(x, direction, step_scale, rng)
}

/// Maximizer of the posterior mean: the best of 64 scrambled-Sobol' starts,
/// with the leading starts polished by bounded quasi-Newton. Ties keep the
/// earliest start.
pub fn argmax_mean<R: RngCore + ?Sized>(gp: &GpPosterior, rng: &mut R) -> Vec<f64> {
    let d = gp.dimension();
    let mut stream = SobolStream::new(d, Some(rng.next_u64())).expect("dimension within sobol table");
    let starts = stream.take_points(ARGMAX_STARTS);
    let mut scored: Vec<(usize, f64)> = starts.iter().map(|s| gp.mean_at(s)).enumerate().collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let lower = vec![0.0; d];
    let upper = vec![1.0; d];
    let settings = BoundedSettings {
        max_iters: 50,
        ..Default::default()
    };
    let mut best = (starts[scored[0].0].clone(), scored[0].1);
    for &(i, start_value) in scored.iter().take(ARGMAX_POLISHED) {
        let polished = minimize_bounded(|x| -gp.mean_at(x), &starts[i], &lower, &upper, &settings);
        let (x, v) = if -polished.value > start_value {
            (polished.x, -polished.value)
        } else {
            (starts[i].clone(), start_value)
        };
        if v > best.1 {
            best = (x, v);
        }
    }
    best.0
}

/// ε update from one iteration's acceptance fraction.
pub fn adapt_step_scale(step_scale: f64, accept_fraction: f64, config: &PStarConfig) -> f64 {
    if accept_fraction < config.accept_band.0 {
        step_scale * config.shrink
    } else if accept_fraction > config.accept_band.1 {
        step_scale * config.grow
    } else {
        step_scale
    }
}

/// Per-iteration diagnostics of an MCMC run.
#[derive(Debug, Clone, Default)]
pub struct PStarTrace {
    pub start: Vec<f64>,
    pub step_scales: Vec<f64>,
    pub accept_fractions: Vec<f64>,
    /// Accept/reject decision of every chain at every iteration.
    pub decisions: Vec<Vec<bool>>,
    /// Every chain state after every iteration.
    pub states: Vec<Vec<Vec<f64>>>,
}

/// Draws `config.n_samples` points from p_*. Without a GP (no measurements
/// yet) p_* is uniform and the points come from a scrambled Sobol' stream.
pub fn sample_pstar<R: Rng + ?Sized>(
    gp: Option<&GpPosterior>,
    dimension: usize,
    config: &PStarConfig,
    rng: &mut R,
) -> Result<SampleSet> {
    sample_pstar_traced(gp, dimension, config, rng, false).map(|(s, _)| s)
}

/// As [`sample_pstar`], optionally recording per-iteration chain states.
pub fn sample_pstar_traced<R: Rng + ?Sized>(
    gp: Option<&GpPosterior>,
    dimension: usize,
    config: &PStarConfig,
    rng: &mut R,
    keep_states: bool,
) -> Result<(SampleSet, PStarTrace)> {
    config.validate()?;
    let Some(gp) = gp else {
        let set = SampleSet::sobol_uniform(dimension, config.n_samples, rng)?;
        return Ok((set, PStarTrace::default()));
    };
    if gp.dimension() != dimension {
        return Err(Error::DimensionMismatch {
            expected: dimension,
            got: gp.dimension(),
        });
    }

    let start = argmax_mean(gp, rng);
    let n = config.n_samples;
    let mut chains = vec![start.clone(); n];
    let mut eps = config.step_scale;
    let mut trace = PStarTrace {
        start,
        ..Default::default()
    };
    let sv = gp.params().signal_variance;

    for _ in 0..config.n_iterations {
        let proposals: Vec<Vec<f64>> = chains
            .iter()
            .map(|x| hit_and_run_step(x, eps, rng).apply(&nudge_inward(x)))
            .collect();

        let decisions: Vec<bool> = match config.accept_rule {
            AcceptRule::MeanComparison => chains
                .iter()
                .zip(&proposals)
                .map(|(x, xp)| gp.mean_at(xp) > gp.mean_at(x))
                .collect(),
            AcceptRule::JointSample => {
                // one 2-point joint draw per chain; chains share a single
                // whitening solve but are sampled independently
                let mut query = Vec::with_capacity(2 * n);
                for (x, xp) in chains.iter().zip(&proposals) {
                    query.push(x.clone());
                    query.push(xp.clone());
                }
                let v = gp.whitened_cross(&query);
                let kern = gp.params();
                (0..n)
                    .map(|i| {
                        let (x, xp) = (&query[2 * i], &query[2 * i + 1]);
                        let (c0, c1) = (v.column(2 * i), v.column(2 * i + 1));
                        let s00 = sv - c0.norm_squared();
                        let s11 = sv - c1.norm_squared();
                        let s01 = kern.kernel(x, xp) - c0.dot(&c1);
                        let l = factor_2x2(s00, s01, s11, sv);
                        let z0: f64 = rng.sample(StandardNormal);
                        let z1: f64 = rng.sample(StandardNormal);
                        let y = gp.mean_at(x) + l[(0, 0)] * z0;
                        let yp = gp.mean_at(xp) + l[(1, 0)] * z0 + l[(1, 1)] * z1;
                        yp > y
                    })
                    .collect()
            }
        };

        let accepted = decisions.iter().filter(|a| **a).count();
        for ((x, xp), &acc) in chains.iter_mut().zip(proposals).zip(&decisions) {
            if acc {
                *x = xp;
            }
        }
        let frac = accepted as f64 / n as f64;
        trace.step_scales.push(eps);
        trace.accept_fractions.push(frac);
        eps = adapt_step_scale(eps, frac, config);
        if keep_states {
            trace.decisions.push(decisions);
            trace.states.push(chains.clone());
        }
    }

    Ok((
        SampleSet {
            points: chains,
            origin: SampleOrigin::Mcmc,
        },
        trace,
    ))
}

/// Lower Cholesky factor of a 2×2 covariance with the standard jitter
/// escalation; falls back to independent marginals if still indefinite.
fn factor_2x2(s00: f64, s01: f64, s11: f64, scale: f64) -> Matrix2<f64> {
    let mut jitter = 0.0;
    loop {
        let a = s00 + jitter;
        let c = s11 + jitter;
        if a > 0.0 {
            let l00 = a.sqrt();
            let l10 = s01 / l00;
            let r = c - l10 * l10;
            if r > 0.0 {
                return Matrix2::new(l00, 0.0, l10, r.sqrt());
            }
        }
        jitter = if jitter == 0.0 { JITTER_START * scale } else { jitter * 10.0 };
        if jitter > JITTER_MAX * scale * (1.0 + 1e-9) {
            return Matrix2::new(s00.max(0.0).sqrt(), 0.0, 0.0, s11.max(0.0).sqrt());
        }
    }
}
