//! Persisted ask–tell sessions for real batch experiments.
//!
//! A session is one JSON document holding the parameter bounds in natural
//! units, every observation so far, the batch awaiting measurement, and the
//! RNG state, so each `suggest` is reproducible from the file alone.

use std::io::Write;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::Error;
use crate::fit::{fit_posterior, FitSettings};
use crate::gp::{Dataset, KernelParams};
use crate::mtv::{design_batch, MtvConfig};
use crate::pstar::PStarConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("a batch is already pending; tell its results first or pass --force to replace it")]
    PendingBatch,
    #[error("no pending batch; run suggest first")]
    NoPendingBatch,
    #[error("expected {expected} measurements, got {got}")]
    CountMismatch { expected: usize, got: usize },
    #[error("invalid measurement value '{0}'")]
    BadValue(String),
    #[error("malformed session: {0}")]
    Malformed(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl SessionError {
    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            SessionError::PendingBatch
            | SessionError::NoPendingBatch
            | SessionError::CountMismatch { .. }
            | SessionError::BadValue(_) => 2,
            SessionError::Malformed(_) => 3,
            SessionError::Core(Error::InvalidConfig(_)) => 2,
            SessionError::Core(_) => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub point: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub schema_version: u32,
    pub bounds: Vec<(f64, f64)>,
    pub batch_size: usize,
    pub observations: Vec<Observation>,
    pub pending_batch: Option<Vec<Vec<f64>>>,
    pub rng_state: u64,
    pub kernel: Option<KernelParams>,
    pub noise_variance: Option<f64>,
    pub mtv: MtvConfig,
    pub pstar: PStarConfig,
}

impl Session {
    pub fn new(bounds: Vec<(f64, f64)>, batch_size: usize, seed: u64) -> Result<Self, SessionError> {
        let s = Self {
            schema_version: SCHEMA_VERSION,
            bounds,
            batch_size,
            observations: Vec::new(),
            pending_batch: None,
            rng_state: seed,
            kernel: None,
            noise_variance: None,
            mtv: MtvConfig::new(batch_size),
            pstar: PStarConfig::for_batch(batch_size),
        };
        s.validate().map_err(|e| match e {
            SessionError::Malformed(m) => SessionError::Core(Error::InvalidConfig(m)),
            other => other,
        })?;
        Ok(s)
    }

    /// Parses `lo:hi,lo:hi,...`.
    pub fn parse_bounds(spec: &str) -> Result<Vec<(f64, f64)>, SessionError> {
        spec.split(',')
            .map(|pair| {
                let (lo, hi) = pair
                    .split_once(':')
                    .ok_or_else(|| Error::InvalidConfig(format!("bound '{pair}' is not lo:hi")))?;
                let lo: f64 = lo.trim().parse().map_err(|_| Error::InvalidConfig(format!("bad bound '{pair}'")))?;
                let hi: f64 = hi.trim().parse().map_err(|_| Error::InvalidConfig(format!("bad bound '{pair}'")))?;
                Ok((lo, hi))
            })
            .collect()
    }

    pub fn dimension(&self) -> usize {
        self.bounds.len()
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        let bad = |m: String| Err(SessionError::Malformed(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("unsupported schema_version {}", self.schema_version));
        }
        if self.bounds.is_empty() {
            return bad("no bounds".into());
        }
        if self.bounds.iter().any(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo < hi)) {
            return bad("every bound needs finite lo < hi".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.mtv.batch_size != self.batch_size {
            return bad("mtv.batch_size disagrees with batch_size".into());
        }
        self.mtv.validate().map_err(|e| SessionError::Malformed(e.to_string()))?;
        self.pstar.validate().map_err(|e| SessionError::Malformed(e.to_string()))?;
        for o in &self.observations {
            if !self.inside(&o.point) {
                return bad(format!("observation {:?} outside bounds", o.point));
            }
            if !o.value.is_finite() {
                return bad("non-finite observation value".into());
            }
        }
        if let Some(p) = &self.pending_batch {
            if p.len() != self.batch_size {
                return bad(format!("pending batch has {} arms, expected {}", p.len(), self.batch_size));
            }
            if let Some(arm) = p.iter().find(|a| !self.inside(a)) {
                return bad(format!("pending arm {arm:?} outside bounds"));
            }
        }
        Ok(())
    }

    fn inside(&self, p: &[f64]) -> bool {
        p.len() == self.dimension() && p.iter().zip(&self.bounds).all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
    }

    pub fn to_unit(&self, p: &[f64]) -> Vec<f64> {
        p.iter()
            .zip(&self.bounds)
            .map(|(v, (lo, hi))| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
            .collect()
    }

    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(&self.bounds)
            .map(|(v, (lo, hi))| (lo + v * (hi - lo)).clamp(*lo, *hi))
            .collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SessionError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| SessionError::Malformed(format!("{}: {e}", path.as_ref().display())))?;
        let s: Session = serde_json::from_str(&text).map_err(|e| SessionError::Malformed(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    /// Writes to a temporary file next to `path`, then renames over it.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SessionError> {
        let path = path.as_ref();
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(Error::from)?;
        serde_json::to_writer_pretty(&mut tmp, self).map_err(Error::from)?;
        tmp.write_all(b"\n").map_err(Error::from)?;
        tmp.as_file().sync_all().map_err(Error::from)?;
        tmp.persist(path).map_err(|e| Error::from(e.error))?;
        Ok(())
    }

    /// Designs the next batch and stores it as pending; returns it in
    /// natural units.
    pub fn suggest(&mut self, force: bool) -> Result<Vec<Vec<f64>>, SessionError> {
        if self.pending_batch.is_some() && !force {
            return Err(SessionError::PendingBatch);
        }
        let d = self.dimension();
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_state);
        let gp = if self.observations.is_empty() {
            None
        } else {
            let mut ds = Dataset::empty(d, 0.0);
            for o in &self.observations {
                ds.push(self.to_unit(&o.point), o.value)?;
            }
            let settings = FitSettings {
                seed: rng.next_u64(),
                fit_noise: true,
                ..Default::default()
            };
            let (gp, outcome) = fit_posterior(ds, &settings)?;
            self.kernel = Some(outcome.params);
            self.noise_variance = Some(outcome.noise_variance);
            Some(gp)
        };
        let round = self.observations.len() / self.batch_size;
        let batch = design_batch(gp.as_ref(), d, &self.mtv, &self.pstar, round, &mut rng)?;
        let arms: Vec<Vec<f64>> = batch.arms.iter().map(|a| self.from_unit(a)).collect();
        self.pending_batch = Some(arms.clone());
        self.rng_state = rng.next_u64();
        Ok(arms)
    }

    /// Records measurements for the pending batch, in arm order.
    pub fn tell(&mut self, values: &[f64]) -> Result<(), SessionError> {
        let pending = self.pending_batch.as_ref().ok_or(SessionError::NoPendingBatch)?;
        if values.len() != pending.len() {
            return Err(SessionError::CountMismatch {
                expected: pending.len(),
                got: values.len(),
            });
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(SessionError::BadValue(v.to_string()));
        }
        let pending = self.pending_batch.take().expect("checked above");
        self.observations.extend(
            pending
                .into_iter()
                .zip(values)
                .map(|(point, &value)| Observation { point, value }),
        );
        Ok(())
    }
}

/// Parses measurement tokens; each token may itself be comma separated.
pub fn parse_values(tokens: &[String]) -> Result<Vec<f64>, SessionError> {
    tokens
        .iter()
        .flat_map(|t| t.split(','))
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| SessionError::BadValue(t.to_string())))
        .collect()
}
