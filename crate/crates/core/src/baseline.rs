//! Comparison batch designers: uniform random, Sobol', and batch Thompson
//! sampling.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::gp::GpPosterior;
use crate::mtv::Batch;
use crate::sobol::SobolStream;

/// Candidate-set size for each Thompson sample.
pub const TS_CANDIDATES: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Random,
    Sobol,
    Thompson,
}

/// B independent Thompson samples: each arm is the argmax of one joint
/// posterior draw over a fresh scrambled-Sobol' candidate set.
pub fn thompson_batch<R: Rng + ?Sized>(
    gp: &GpPosterior,
    batch_size: usize,
    round_index: usize,
    rng: &mut R,
) -> Result<Batch> {
    let d = gp.dimension();
    let mut arms = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let mut stream = SobolStream::new(d, Some(rng.next_u64()))?;
        let candidates = stream.take_points(TS_CANDIDATES);
        let draw = gp.joint_sample(&candidates, rng)?;
        let best = draw
            .iter()
            .enumerate()
            .fold(0, |b, (i, v)| if *v > draw[b] { i } else { b });
        arms.push(candidates[best].clone());
    }
    Ok(Batch { arms, round_index })
}

/// Produces one baseline batch.
///
/// `sobol_stream` is the run's persistent scrambled stream, advanced by the
/// `sobol` baseline and by Thompson's round-0 fallback.
pub fn baseline_batch<R: Rng + ?Sized>(
    kind: BaselineKind,
    gp: Option<&GpPosterior>,
    batch_size: usize,
    dimension: usize,
    round_index: usize,
    sobol_stream: &mut SobolStream,
    rng: &mut R,
) -> Result<Batch> {
    match (kind, gp) {
        (BaselineKind::Random, _) => Ok(Batch {
            arms: (0..batch_size)
                .map(|_| (0..dimension).map(|_| rng.random::<f64>()).collect())
                .collect(),
            round_index,
        }),
        (BaselineKind::Sobol, _) | (BaselineKind::Thompson, None) => Ok(Batch {
            arms: sobol_stream.take_points(batch_size),
            round_index,
        }),
        (BaselineKind::Thompson, Some(gp)) => thompson_batch(gp, batch_size, round_index, rng),
    }
}

/// A fresh scrambled stream seeded from `rng`, for one optimization run.
pub fn run_sobol_stream<R: RngCore + ?Sized>(dimension: usize, rng: &mut R) -> Result<SobolStream> {
    SobolStream::new(dimension, Some(rng.next_u64()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{Dataset, KernelParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_batch_in_bounds_and_distinct() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let mut s = run_sobol_stream(3, &mut r).unwrap();
        let b = baseline_batch(BaselineKind::Random, None, 8, 3, 0, &mut s, &mut r).unwrap();
        assert_eq!(b.len(), 8);
        assert!(b.arms.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        for i in 0..8 {
            for j in i + 1..8 {
                assert_ne!(b.arms[i], b.arms[j]);
            }
        }
    }

    #[test]
    fn sobol_repeats_with_seed_and_advances() {
        let run = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let mut s = run_sobol_stream(2, &mut r).unwrap();
            let a = baseline_batch(BaselineKind::Sobol, None, 4, 2, 0, &mut s, &mut r).unwrap();
            let b = baseline_batch(BaselineKind::Sobol, None, 4, 2, 1, &mut s, &mut r).unwrap();
            (a, b)
        };
        let (a1, b1) = run(3);
        let (a2, b2) = run(3);
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
        assert_ne!(a1.arms, b1.arms);
    }

    #[test]
    fn thompson_round_zero_falls_back_to_sobol() {
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let mut s = run_sobol_stream(2, &mut r).unwrap();
        let mut s2 = s.clone();
        let b = baseline_batch(BaselineKind::Thompson, None, 4, 2, 0, &mut s, &mut r).unwrap();
        assert_eq!(b.arms, s2.take_points(4));
    }

    #[test]
    fn thompson_arms_come_from_candidates() {
        let params = KernelParams::new(vec![0.3, 0.3], 1.0, 0.0).unwrap();
        let ds = Dataset::new(vec![vec![0.2, 0.8], vec![0.6, 0.4]], vec![1.0, -1.0], 1e-4).unwrap();
        let gp = GpPosterior::new(ds, params).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let mut replay = r.clone();
        let b = thompson_batch(&gp, 3, 1, &mut r).unwrap();
        for arm in &b.arms {
            let cands = SobolStream::new(2, Some(replay.next_u64())).unwrap().take_points(TS_CANDIDATES);
            assert!(cands.contains(arm));
            gp.joint_sample(&cands, &mut replay).unwrap();
        }
    }
}
