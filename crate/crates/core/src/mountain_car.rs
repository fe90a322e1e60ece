//! Continuous mountain car and a three-parameter linear controller.
//!
//! The dynamics and rewards follow the common continuous mountain-car
//! environment: an underpowered car must rock back and forth to climb out of
//! a valley; every step costs `0.1·a²` and reaching the goal pays 100.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const MIN_POSITION: f64 = -1.2;
pub const MAX_POSITION: f64 = 0.6;
pub const MAX_SPEED: f64 = 0.07;
pub const GOAL_POSITION: f64 = 0.45;
pub const POWER: f64 = 0.0015;
pub const MAX_STEPS: usize = 999;
pub const GOAL_REWARD: f64 = 100.0;
/// Half-width of the controller parameter box; each parameter maps to
/// `[−PARAM_LIMIT, PARAM_LIMIT]`.
pub const PARAM_LIMIT: f64 = 2.0;
pub const SD_FLOOR: f64 = 1e-6;
pub const N_PARAMS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarState {
    pub position: f64,
    pub velocity: f64,
}

impl CarState {
    pub fn as_array(&self) -> [f64; 2] {
        [self.position, self.velocity]
    }
}

/// Advances the car one step. Returns the new state, the step reward and
/// whether the episode reached the goal.
pub fn step(state: CarState, action: f64) -> (CarState, f64, bool) {
    let a = action.clamp(-1.0, 1.0);
    let mut velocity = state.velocity + a * POWER - 0.0025 * (3.0 * state.position).cos();
    velocity = velocity.clamp(-MAX_SPEED, MAX_SPEED);
    let mut position = (state.position + velocity).clamp(MIN_POSITION, MAX_POSITION);
    if position == MIN_POSITION && velocity < 0.0 {
        velocity = 0.0;
    }
    position = position.clamp(MIN_POSITION, MAX_POSITION);
    let done = position >= GOAL_POSITION;
    let mut reward = -0.1 * a * a;
    if done {
        reward += GOAL_REWARD;
    }
    (CarState { position, velocity }, reward, done)
}

/// `a = k · Bᵀ s̃` with `s̃` the state normalized by running statistics.
#[derive(Debug, Clone)]
pub struct LinearController {
    pub gain: f64,
    pub weights: [f64; 2],
    pub running_mean: [f64; 2],
    pub running_sd: [f64; 2],
    m2: [f64; 2],
    pub step_count: u64,
}

impl LinearController {
    pub fn new(gain: f64, weights: [f64; 2]) -> Self {
        Self {
            gain,
            weights,
            running_mean: [0.0; 2],
            running_sd: [SD_FLOOR; 2],
            m2: [0.0; 2],
            step_count: 0,
        }
    }

    /// Maps a unit-box parameter vector `(k, B_1, B_2)` to a controller.
    pub fn from_unit(params: &[f64]) -> Self {
        assert_eq!(params.len(), N_PARAMS, "controller takes 3 parameters");
        let map = |u: f64| -PARAM_LIMIT + 2.0 * PARAM_LIMIT * u;
        Self::new(map(params[0]), [map(params[1]), map(params[2])])
    }

    fn observe(&mut self, s: [f64; 2]) {
        self.step_count += 1;
        let n = self.step_count as f64;
        for i in 0..2 {
            let delta = s[i] - self.running_mean[i];
            self.running_mean[i] += delta / n;
            self.m2[i] += delta * (s[i] - self.running_mean[i]);
            let var = self.m2[i] / n;
            self.running_sd[i] = var.sqrt().max(SD_FLOOR);
        }
    }

    /// Folds `state` into the running statistics, then returns the action.
    pub fn act(&mut self, state: &CarState) -> f64 {
        let s = state.as_array();
        self.observe(s);
        let mut a = 0.0;
        for i in 0..2 {
            let z = (s[i] - self.running_mean[i]) / self.running_sd[i];
            a += self.weights[i] * z;
        }
        (self.gain * a).clamp(-1.0, 1.0)
    }
}

/// Runs one episode from `start`; returns the total reward.
pub fn run_episode(controller: &mut LinearController, start: CarState) -> f64 {
    let mut state = start;
    let mut total = 0.0;
    for _ in 0..MAX_STEPS {
        let a = controller.act(&state);
        let (next, r, done) = step(state, a);
        total += r;
        state = next;
        if done {
            break;
        }
    }
    total
}

/// Random start: position uniform in [−0.6, −0.4), velocity 0.
pub fn random_start<R: Rng + ?Sized>(rng: &mut R) -> CarState {
    CarState {
        position: rng.random_range(-0.6..-0.4),
        velocity: 0.0,
    }
}

/// Mean return over `episodes` episodes. Running normalization statistics
/// persist across the episodes of one evaluation.
pub fn evaluate_controller<R: Rng + ?Sized>(params: &[f64], episodes: usize, rng: &mut R) -> f64 {
    let mut controller = LinearController::from_unit(params);
    let mut total = 0.0;
    for _ in 0..episodes {
        let start = random_start(rng);
        total += run_episode(&mut controller, start);
    }
    total / episodes.max(1) as f64
}

/// Evaluation with an explicit seed.
pub fn evaluate_controller_seeded(params: &[f64], episodes: usize, seed: u64) -> f64 {
    evaluate_controller(params, episodes, &mut ChaCha8Rng::seed_from_u64(seed))
}
