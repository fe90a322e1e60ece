//! Dimension-scalable test functions with a center-moving distortion.
//!
//! Every problem is posed as maximization on the unit box. A point `x` is
//! mapped to centered coordinates `u = 2x − 1`, each coordinate is distorted
//! so that `x_0` lands on the center, and the result is mapped affinely onto
//! the function's classical domain. Classical minimization forms are negated.

use std::f64::consts::{E, PI};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Range of each distortion-center coordinate when drawn at random.
pub const CENTER_DRAW_LIMIT: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFunction {
    Ackley,
    DixonPrice,
    Griewank,
    Levy,
    Michalewicz,
    Rastrigin,
    Rosenbrock,
    StyblinskiTang,
    Sphere,
}

impl TestFunction {
    pub const ALL: [TestFunction; 9] = [
        TestFunction::Ackley,
        TestFunction::DixonPrice,
        TestFunction::Griewank,
        TestFunction::Levy,
        TestFunction::Michalewicz,
        TestFunction::Rastrigin,
        TestFunction::Rosenbrock,
        TestFunction::StyblinskiTang,
        TestFunction::Sphere,
    ];

    pub fn id(self) -> &'static str {
        match self {
            TestFunction::Ackley => "ackley",
            TestFunction::DixonPrice => "dixon_price",
            TestFunction::Griewank => "griewank",
            TestFunction::Levy => "levy",
            TestFunction::Michalewicz => "michalewicz",
            TestFunction::Rastrigin => "rastrigin",
            TestFunction::Rosenbrock => "rosenbrock",
            TestFunction::StyblinskiTang => "styblinski_tang",
            TestFunction::Sphere => "sphere",
        }
    }

    /// Classical per-coordinate domain.
    pub fn domain(self) -> (f64, f64) {
        match self {
            TestFunction::Ackley => (-32.768, 32.768),
            TestFunction::DixonPrice => (-10.0, 10.0),
            TestFunction::Griewank => (-600.0, 600.0),
            TestFunction::Levy => (-10.0, 10.0),
            TestFunction::Michalewicz => (0.0, PI),
            TestFunction::Rastrigin => (-5.12, 5.12),
            TestFunction::Rosenbrock => (-5.0, 10.0),
            TestFunction::StyblinskiTang => (-5.0, 5.0),
            TestFunction::Sphere => (-5.12, 5.12),
        }
    }

    pub fn min_dimension(self) -> usize {
        match self {
            TestFunction::Michalewicz | TestFunction::Rosenbrock => 2,
            _ => 1,
        }
    }

    /// Functions usable at dimension `d`.
    pub fn available(d: usize) -> Vec<TestFunction> {
        Self::ALL.into_iter().filter(|f| d >= f.min_dimension()).collect()
    }

    /// Classical (minimization) value at a point of the natural domain.
    pub fn classical(self, z: &[f64]) -> f64 {
        let d = z.len() as f64;
        match self {
            TestFunction::Ackley => {
                let sq = z.iter().map(|v| v * v).sum::<f64>() / d;
                let cs = z.iter().map(|v| (2.0 * PI * v).cos()).sum::<f64>() / d;
                -20.0 * (-0.2 * sq.sqrt()).exp() - cs.exp() + 20.0 + E
            }
            TestFunction::DixonPrice => {
                let head = (z[0] - 1.0).powi(2);
                head + z
                    .windows(2)
                    .enumerate()
                    .map(|(i, w)| (i + 2) as f64 * (2.0 * w[1] * w[1] - w[0]).powi(2))
                    .sum::<f64>()
            }
            TestFunction::Griewank => {
                let s = z.iter().map(|v| v * v).sum::<f64>() / 4000.0;
                let p = z
                    .iter()
                    .enumerate()
                    .map(|(i, v)| (v / ((i + 1) as f64).sqrt()).cos())
                    .product::<f64>();
                s - p + 1.0
            }
            TestFunction::Levy => {
                let w: Vec<f64> = z.iter().map(|v| 1.0 + (v - 1.0) / 4.0).collect();
                let n = w.len();
                let first = (PI * w[0]).sin().powi(2);
                let mid = w[..n - 1]
                    .iter()
                    .map(|wi| (wi - 1.0).powi(2) * (1.0 + 10.0 * (PI * wi + 1.0).sin().powi(2)))
                    .sum::<f64>();
                let last = (w[n - 1] - 1.0).powi(2) * (1.0 + (2.0 * PI * w[n - 1]).sin().powi(2));
                first + mid + last
            }
            TestFunction::Michalewicz => -z
                .iter()
                .enumerate()
                .map(|(i, v)| v.sin() * ((i + 1) as f64 * v * v / PI).sin().powi(20))
                .sum::<f64>(),
            TestFunction::Rastrigin => {
                10.0 * d + z.iter().map(|v| v * v - 10.0 * (2.0 * PI * v).cos()).sum::<f64>()
            }
            TestFunction::Rosenbrock => z
                .windows(2)
                .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (w[0] - 1.0).powi(2))
                .sum(),
            TestFunction::StyblinskiTang => {
                0.5 * z.iter().map(|v| v.powi(4) - 16.0 * v * v + 5.0 * v).sum::<f64>()
            }
            TestFunction::Sphere => z.iter().map(|v| v * v).sum(),
        }
    }
}

impl fmt::Display for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for TestFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|f| f.id() == norm)
            .ok_or_else(|| Error::UnknownId {
                kind: "function",
                id: s.to_string(),
                valid: Self::ALL.map(|f| f.id()).join(", "),
            })
    }
}

/// Moves `u0` to the center of `[−1, 1]` while keeping both ends fixed.
pub fn distort(u: f64, u0: f64) -> f64 {
    if u < u0 {
        (u - u0) / (1.0 + u0)
    } else if u > u0 {
        (u - u0) / (1.0 - u0)
    } else {
        0.0
    }
}

/// A test function instance: function, dimension, distortion center, noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub function: TestFunction,
    pub dimension: usize,
    pub distortion_center: Vec<f64>,
    pub noise_sd: f64,
    /// Seed the center was drawn from, when drawn at random.
    pub seed: Option<u64>,
}

impl Problem {
    pub fn new(function: TestFunction, distortion_center: Vec<f64>, noise_sd: f64) -> Result<Self> {
        let p = Self {
            function,
            dimension: distortion_center.len(),
            distortion_center,
            noise_sd,
            seed: None,
        };
        p.validate()?;
        Ok(p)
    }

    /// Undistorted problem (`x_0 = 0`).
    pub fn centered(function: TestFunction, dimension: usize) -> Result<Self> {
        Self::new(function, vec![0.0; dimension], 0.0)
    }

    /// Draws `x_0` uniformly from `(−0.8, 0.8)^d`.
    pub fn random<R: Rng + ?Sized>(
        function: TestFunction,
        dimension: usize,
        noise_sd: f64,
        seed: u64,
        rng: &mut R,
    ) -> Result<Self> {
        let center = (0..dimension)
            .map(|_| rng.random_range(-CENTER_DRAW_LIMIT..CENTER_DRAW_LIMIT))
            .collect();
        let mut p = Self::new(function, center, noise_sd)?;
        p.seed = Some(seed);
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension < self.function.min_dimension() {
            return Err(Error::InvalidProblem(format!(
                "{} requires dimension >= {}, got {}",
                self.function,
                self.function.min_dimension(),
                self.dimension
            )));
        }
        if self.distortion_center.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                got: self.distortion_center.len(),
            });
        }
        if self.distortion_center.iter().any(|c| !(c.abs() < 1.0)) {
            return Err(Error::InvalidProblem("distortion center must lie in (-1, 1)".into()));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(Error::InvalidProblem("noise_sd must be nonnegative".into()));
        }
        Ok(())
    }

    /// Unit-box point to the function's natural coordinates.
    pub fn to_natural(&self, x: &[f64]) -> Vec<f64> {
        let (lo, hi) = self.function.domain();
        x.iter()
            .zip(&self.distortion_center)
            .map(|(&xi, &c)| {
                let u = distort(2.0 * xi - 1.0, c);
                lo + 0.5 * (u + 1.0) * (hi - lo)
            })
            .collect()
    }

    /// Noiseless objective (to be maximized).
    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        self.validate()?;
        crate::gp::check_point(x, self.dimension)?;
        Ok(-self.function.classical(&self.to_natural(x)))
    }

    /// Objective plus Gaussian noise of standard deviation `noise_sd`.
    pub fn measure<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<f64> {
        let f = self.evaluate(x)?;
        if self.noise_sd == 0.0 {
            return Ok(f);
        }
        let noise = Normal::new(0.0, self.noise_sd).expect("noise sd validated");
        Ok(f + noise.sample(rng))
    }

    pub fn name(&self) -> String {
        self.function.id().to_string()
    }
}
