//! Maximum-likelihood hyperparameter fitting.
//!
//! Values are standardized before fitting and the fitted parameters are
//! mapped back to the caller's units, so a GP built from the result uses the
//! raw measurements directly.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{cholesky_jittered, Dataset, GpPosterior, KernelParams};
use crate::optim::{minimize_bounded, BoundedSettings};
use crate::sobol::SobolStream;

const LOG_LS_START: (f64, f64) = (-2.995_732_273_553_991, std::f64::consts::LN_2); // ln 0.05, ln 2
const LOG_LS_BOUNDS: (f64, f64) = (-4.605_170_185_988_091, 2.302_585_092_994_046); // ln 0.01, ln 10
const LOG_SV_BOUNDS: (f64, f64) = (-6.907_755_278_982_137, 3.912_023_005_428_146); // ln 1e-3, ln 50
const MEAN_BOUNDS: (f64, f64) = (-3.0, 3.0);
/// Floor on fitted noise, in standardized units.
pub const NOISE_FLOOR: f64 = 1e-6;
const LOG_NOISE_BOUNDS: (f64, f64) = (-13.815_510_557_964_274, 0.0); // ln 1e-6, ln 1
/// Signal variance reported for degenerate (constant) datasets.
pub const DEGENERATE_SIGNAL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSettings {
    pub n_starts: usize,
    pub max_iters: usize,
    pub seed: u64,
    /// Fit the noise variance jointly; otherwise `dataset.noise_variance` is
    /// taken as known.
    pub fit_noise: bool,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            n_starts: 8,
            max_iters: 100,
            seed: 0,
            fit_noise: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub params: KernelParams,
    pub noise_variance: f64,
    /// Set when the data carried no usable signal and floors were applied.
    pub degenerate: bool,
    /// Negative log marginal likelihood in standardized units.
    pub neg_log_likelihood: f64,
}

struct Standardized {
    points: Vec<Vec<f64>>,
    z: Vec<f64>,
    known_noise: Option<f64>,
}

impl Standardized {
    fn dim(&self) -> usize {
        self.points[0].len()
    }

    fn unpack(&self, theta: &[f64]) -> (KernelParams, f64) {
        let d = self.dim();
        let params = KernelParams {
            lengthscales: theta[..d].iter().map(|v| v.exp()).collect(),
            signal_variance: theta[d].exp(),
            constant_mean: theta[d + 1],
        };
        let noise = match self.known_noise {
            Some(v) => v,
            None => theta[d + 2].exp().max(NOISE_FLOOR),
        };
        (params, noise)
    }

    fn neg_log_likelihood(&self, theta: &[f64]) -> f64 {
        let (params, noise) = self.unpack(theta);
        let mut k = params.kernel_matrix(&self.points, &self.points);
        for i in 0..k.nrows() {
            k[(i, i)] += noise;
        }
        let Some((chol, _)) = cholesky_jittered(&k, params.signal_variance) else {
            return f64::INFINITY;
        };
        let r = DVector::from_iterator(self.z.len(), self.z.iter().map(|z| z - params.constant_mean));
        let alpha = chol.solve(&r);
        let log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
        let n = self.z.len() as f64;
        0.5 * r.dot(&alpha) + log_det + 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }
}

/// Fits kernel hyperparameters by multi-start maximization of the log
/// marginal likelihood.
pub fn fit_hyperparams(dataset: &Dataset, settings: &FitSettings) -> Result<FitOutcome> {
    dataset.validate()?;
    let d = dataset.dimension;
    let n = dataset.len();
    let mean = if n > 0 {
        dataset.values.iter().sum::<f64>() / n as f64
    } else {
        0.0
    };
    let var = if n > 1 {
        dataset.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64
    } else {
        0.0
    };
    if n < 2 || !(var > 0.0) {
        return Ok(FitOutcome {
            params: KernelParams {
                lengthscales: vec![0.5; d],
                signal_variance: DEGENERATE_SIGNAL_FLOOR,
                constant_mean: mean,
            },
            noise_variance: if settings.fit_noise {
                NOISE_FLOOR * DEGENERATE_SIGNAL_FLOOR
            } else {
                dataset.noise_variance
            },
            degenerate: true,
            neg_log_likelihood: f64::NAN,
        });
    }
    let sd = var.sqrt();
    let std = Standardized {
        points: dataset.points.clone(),
        z: dataset.values.iter().map(|v| (v - mean) / sd).collect(),
        known_noise: (!settings.fit_noise).then_some(dataset.noise_variance / var),
    };

    let n_params = d + 2 + usize::from(settings.fit_noise);
    let mut lower = vec![LOG_LS_BOUNDS.0; d];
    let mut upper = vec![LOG_LS_BOUNDS.1; d];
    lower.extend([LOG_SV_BOUNDS.0, MEAN_BOUNDS.0]);
    upper.extend([LOG_SV_BOUNDS.1, MEAN_BOUNDS.1]);
    if settings.fit_noise {
        lower.push(LOG_NOISE_BOUNDS.0);
        upper.push(LOG_NOISE_BOUNDS.1);
    }

    let mut starts = SobolStream::new(d, Some(settings.seed))?;
    let opt = BoundedSettings {
        max_iters: settings.max_iters,
        fd_step: 1e-6,
        ..Default::default()
    };
    let mut best: Option<(Vec<f64>, f64)> = None;
    for _ in 0..settings.n_starts.max(1) {
        let u = starts.next_point();
        let mut theta = Vec::with_capacity(n_params);
        theta.extend(u.iter().map(|v| LOG_LS_START.0 + v * (LOG_LS_START.1 - LOG_LS_START.0)));
        theta.push(0.0);
        theta.push(0.0);
        if settings.fit_noise {
            theta.push((1e-2f64).ln());
        }
        let start_value = std.neg_log_likelihood(&theta);
        let result = minimize_bounded(|t| std.neg_log_likelihood(t), &theta, &lower, &upper, &opt);
        let (x, v) = if result.value <= start_value {
            (result.x, result.value)
        } else {
            (theta, start_value)
        };
        if v.is_finite() && best.as_ref().is_none_or(|(_, bv)| v < *bv) {
            best = Some((x, v));
        }
    }
    let (theta, nll) =
        best.ok_or_else(|| Error::IllConditioned("no finite marginal likelihood at any start".into()))?;
    let (std_params, std_noise) = std.unpack(&theta);
    Ok(FitOutcome {
        params: KernelParams {
            lengthscales: std_params.lengthscales,
            signal_variance: std_params.signal_variance * var,
            constant_mean: mean + sd * std_params.constant_mean,
        },
        noise_variance: std_noise * var,
        degenerate: false,
        neg_log_likelihood: nll,
    })
}

/// Fits hyperparameters and builds the conditioned posterior.
pub fn fit_posterior(mut dataset: Dataset, settings: &FitSettings) -> Result<(GpPosterior, FitOutcome)> {
    let outcome = fit_hyperparams(&dataset, settings)?;
    dataset.noise_variance = outcome.noise_variance;
    let gp = GpPosterior::new(dataset, outcome.params.clone())?;
    Ok((gp, outcome))
}
