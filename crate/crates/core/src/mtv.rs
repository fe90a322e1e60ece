//! Minimal Terminal Variance batch design.
//!
//! A batch of B arms is chosen to minimize the sum, over nodes drawn from
//! p_*, of the posterior variance that would remain after measuring the
//! arms. Because GP covariance ignores measured values, that variance is
//! computable before the experiment by conditioning on the arm locations
//! alone. All B·d coordinates are optimized jointly.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{cholesky_jittered, GpPosterior, KernelParams};
use crate::optim::{minimize_bounded, BoundedSettings};
use crate::pstar::{sample_pstar, PStarConfig, SampleSet};

/// Noise variance of the no-data prior used for round-0 designs.
pub const PRIOR_NOISE: f64 = 1e-6;
/// Offset applied to repeated arms inside one candidate batch.
pub const DUPLICATE_OFFSET: f64 = 1e-6;

/// B arms proposed for simultaneous measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub arms: Vec<Vec<f64>>,
    pub round_index: usize,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.arms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arms.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtvConfig {
    pub batch_size: usize,
    pub n_restarts: usize,
    pub max_opt_iters: usize,
    /// Finite-difference step in unit-box coordinates.
    pub fd_step: f64,
    /// Integrate against p_* samples; off means Sobol' uniform nodes.
    pub use_pstar_weights: bool,
    /// Minimize MTV; off means return p_* samples as the batch.
    pub optimize: bool,
    /// Seed restarts from the nodes; off means uniform random seeds.
    pub seed_from_pstar: bool,
}

impl MtvConfig {
    pub fn new(batch_size: usize) -> Self {
        Self {
            batch_size,
            n_restarts: 8,
            max_opt_iters: 100,
            fd_step: 1e-6,
            use_pstar_weights: true,
            optimize: true,
            seed_from_pstar: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.n_restarts == 0 {
            return Err(Error::InvalidConfig("n_restarts must be at least 1".into()));
        }
        Ok(())
    }
}

/// Result of one design call, with the nodes it integrated over.
#[derive(Debug, Clone)]
pub struct BatchDesign {
    pub batch: Batch,
    pub nodes: SampleSet,
    pub value: f64,
    /// MTV of the starting configuration of the winning restart.
    pub seed_value: f64,
}

fn prior_gp(dimension: usize) -> GpPosterior {
    GpPosterior::prior(dimension, KernelParams::default_prior(dimension), PRIOR_NOISE)
        .expect("default prior is valid")
}

/// Moves exact (or near-exact) repeats of earlier arms by a small offset so
/// the conditioning system stays well posed.
fn separate_duplicates(arms: &mut [Vec<f64>]) {
    for j in 1..arms.len() {
        let mut bump = 0usize;
        while (0..j).any(|i| {
            arms[i]
                .iter()
                .zip(&arms[j])
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                < 1e-24
        }) {
            bump += 1;
            for v in arms[j].iter_mut() {
                *v = if *v + DUPLICATE_OFFSET <= 1.0 {
                    *v + DUPLICATE_OFFSET
                } else {
                    *v - DUPLICATE_OFFSET
                };
            }
            if bump > 8 {
                break;
            }
        }
    }
}

/// Precomputed pieces for evaluating MTV many times against fixed nodes.
pub struct MtvObjective<'a> {
    gp: &'a GpPosterior,
    nodes: &'a [Vec<f64>],
    /// `L^{-1} K(X, nodes)`.
    node_cross: DMatrix<f64>,
    /// Σ_i σ²(x_i) under the unconditioned posterior.
    base_total: f64,
    node_var: DVector<f64>,
}

impl<'a> MtvObjective<'a> {
    pub fn new(gp: &'a GpPosterior, nodes: &'a [Vec<f64>]) -> Self {
        let node_cross = gp.whitened_cross(nodes);
        let sv = gp.params().signal_variance;
        let node_var = DVector::from_iterator(
            nodes.len(),
            (0..nodes.len()).map(|j| {
                if gp.dataset().is_empty() {
                    sv
                } else {
                    (sv - node_cross.column(j).norm_squared()).max(0.0)
                }
            }),
        );
        Self {
            gp,
            nodes,
            node_cross,
            base_total: node_var.sum(),
            node_var,
        }
    }

    /// Σ_i σ²(x_i) with no arms.
    pub fn unconditioned(&self) -> f64 {
        self.base_total
    }

    /// Σ_i σ²(x_i | arms); `None` if the arm system cannot be factorized.
    pub fn value(&self, arms: &[Vec<f64>]) -> Option<f64> {
        if arms.is_empty() {
            return Some(self.base_total);
        }
        let mut arms = arms.to_vec();
        separate_duplicates(&mut arms);
        let params = self.gp.params();
        let has_data = !self.gp.dataset().is_empty();

        let mut s_aa = params.kernel_matrix(&arms, &arms);
        let mut c = params.kernel_matrix(&arms, self.nodes);
        if has_data {
            let va = self.gp.whitened_cross(&arms);
            s_aa -= va.transpose() * &va;
            c -= va.transpose() * &self.node_cross;
        }
        let noise = self.gp.effective_noise();
        for i in 0..arms.len() {
            s_aa[(i, i)] += noise;
        }
        let (chol, _) = cholesky_jittered(&s_aa, params.signal_variance)?;
        let w = chol.l_dirty().solve_lower_triangular(&c)?;
        let total = (0..self.nodes.len())
            .map(|j| (self.node_var[j] - w.column(j).norm_squared()).max(0.0))
            .sum();
        Some(total)
    }

    fn value_flat(&self, flat: &[f64]) -> f64 {
        let d = self.gp.dimension();
        let arms: Vec<Vec<f64>> = flat.chunks(d).map(<[f64]>::to_vec).collect();
        self.value(&arms).unwrap_or(f64::INFINITY)
    }
}

/// Sum over `nodes` of the posterior variance after conditioning on `arms`.
/// With no GP the default no-data prior is used.
pub fn mtv_value(gp: Option<&GpPosterior>, dimension: usize, arms: &[Vec<f64>], nodes: &SampleSet) -> Result<f64> {
    if nodes.is_empty() {
        return Err(Error::InvalidConfig("mtv_value needs at least one node".into()));
    }
    let prior;
    let gp = match gp {
        Some(g) => g,
        None => {
            prior = prior_gp(dimension);
            &prior
        }
    };
    for a in arms {
        crate::gp::check_point(a, gp.dimension())?;
    }
    MtvObjective::new(gp, &nodes.points)
        .value(arms)
        .ok_or_else(|| Error::IllConditioned("arm covariance not factorizable".into()))
}

/// Greedy max-min selection of `count` nodes starting from node `first`.
pub fn greedy_maxmin(nodes: &[Vec<f64>], count: usize, first: usize) -> Vec<Vec<f64>> {
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let mut chosen = vec![nodes[first % nodes.len()].clone()];
    let mut min_d: Vec<f64> = nodes.iter().map(|p| dist2(p, &chosen[0])).collect();
    while chosen.len() < count {
        let (idx, _) = min_d
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        let next = nodes[idx].clone();
        for (m, p) in min_d.iter_mut().zip(nodes) {
            *m = m.min(dist2(p, &next));
        }
        chosen.push(next);
    }
    chosen
}

/// Designs a batch against a fixed set of nodes.
pub fn design_from_nodes<R: RngCore + ?Sized>(
    gp: Option<&GpPosterior>,
    dimension: usize,
    nodes: SampleSet,
    config: &MtvConfig,
    round_index: usize,
    rng: &mut R,
) -> Result<BatchDesign> {
    config.validate()?;
    if nodes.is_empty() {
        return Err(Error::InvalidConfig("no integration nodes".into()));
    }
    let prior;
    let gp_ref = match gp {
        Some(g) => g,
        None => {
            prior = prior_gp(dimension);
            &prior
        }
    };
    let b = config.batch_size;
    let objective = MtvObjective::new(gp_ref, &nodes.points);

    if !config.optimize {
        if b > nodes.len() {
            return Err(Error::InsufficientSamples {
                batch: b,
                available: nodes.len(),
            });
        }
        let picks = index::sample(rng, nodes.len(), b);
        let arms: Vec<Vec<f64>> = picks.iter().map(|i| nodes.points[i].clone()).collect();
        let value = objective.value(&arms).unwrap_or(f64::INFINITY);
        return Ok(BatchDesign {
            batch: Batch { arms, round_index },
            value,
            seed_value: value,
            nodes,
        });
    }

    let restart_seeds: Vec<u64> = (0..config.n_restarts).map(|_| rng.next_u64()).collect();
    let lower = vec![0.0; b * dimension];
    let upper = vec![1.0; b * dimension];
    let settings = BoundedSettings {
        max_iters: config.max_opt_iters,
        fd_step: config.fd_step,
        ..Default::default()
    };

    let results: Vec<(Vec<f64>, f64, f64)> = restart_seeds
        .par_iter()
        .enumerate()
        .map(|(r, &seed)| {
            let start: Vec<Vec<f64>> = if config.seed_from_pstar {
                greedy_maxmin(&nodes.points, b, r)
            } else {
                let mut local = ChaCha8Rng::seed_from_u64(seed);
                (0..b)
                    .map(|_| (0..dimension).map(|_| local.random::<f64>()).collect())
                    .collect()
            };
            let flat: Vec<f64> = start.concat();
            let start_value = objective.value_flat(&flat);
            let m = minimize_bounded(|x| objective.value_flat(x), &flat, &lower, &upper, &settings);
            if m.value <= start_value {
                (m.x, m.value, start_value)
            } else {
                (flat, start_value, start_value)
            }
        })
        .collect();

    let (best_x, best_value, seed_value) = results
        .into_iter()
        .reduce(|best, cur| if cur.1 < best.1 { cur } else { best })
        .expect("at least one restart");
    let arms = best_x.chunks(dimension).map(<[f64]>::to_vec).collect();
    Ok(BatchDesign {
        batch: Batch { arms, round_index },
        nodes,
        value: best_value,
        seed_value,
    })
}

/// Full design step: draw nodes (p_* or uniform) then design against them.
pub fn design_batch_detailed<R: Rng + ?Sized>(
    gp: Option<&GpPosterior>,
    dimension: usize,
    config: &MtvConfig,
    pstar_config: &PStarConfig,
    round_index: usize,
    rng: &mut R,
) -> Result<BatchDesign> {
    config.validate()?;
    let nodes = if config.use_pstar_weights {
        sample_pstar(gp, dimension, pstar_config, rng)?
    } else {
        SampleSet::sobol_uniform(dimension, pstar_config.n_samples, rng)?
    };
    design_from_nodes(gp, dimension, nodes, config, round_index, rng)
}

pub fn design_batch<R: Rng + ?Sized>(
    gp: Option<&GpPosterior>,
    dimension: usize,
    config: &MtvConfig,
    pstar_config: &PStarConfig,
    round_index: usize,
    rng: &mut R,
) -> Result<Batch> {
    design_batch_detailed(gp, dimension, config, pstar_config, round_index, rng).map(|d| d.batch)
}

/// Round-0 design: no data, uniform p_*, default prior kernel.
pub fn initial_batch<R: Rng + ?Sized>(dimension: usize, config: &MtvConfig, rng: &mut R) -> Result<BatchDesign> {
    let pstar = PStarConfig::for_batch(config.batch_size);
    design_batch_detailed(None, dimension, config, &pstar, 0, rng)
}
