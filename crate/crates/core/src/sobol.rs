//! Sobol' low-discrepancy sequence with optional seeded Owen scrambling.
//!
//! Direction numbers follow the Joe–Kuo "new-joe-kuo-6" table format:
//! a header line, then one row per dimension `d s a m_1 .. m_s` starting at
//! dimension 2 (dimension 1 is the van der Corput sequence). The embedded
//! table covers 64 dimensions; a longer table can be loaded from a file.

use std::path::Path;
use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};

const BITS: usize = 32;
const EMBEDDED_TABLE: &str = include_str!("../data/new-joe-kuo-6.64");

/// Per-dimension direction numbers, MSB-aligned in 32-bit words.
#[derive(Debug, Clone)]
pub struct DirectionNumbers {
    dims: Vec<[u32; BITS]>,
}

impl DirectionNumbers {
    /// The embedded 64-dimension table.
    pub fn embedded() -> Arc<DirectionNumbers> {
        static TABLE: OnceLock<Arc<DirectionNumbers>> = OnceLock::new();
        TABLE
            .get_or_init(|| Arc::new(Self::parse(EMBEDDED_TABLE).expect("embedded direction numbers parse")))
            .clone()
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut dims = vec![first_dimension()];
        for (lineno, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() || fields[0].parse::<u64>().is_err() {
                continue; // header or blank
            }
            let nums: Vec<u64> = fields
                .iter()
                .map(|f| f.parse::<u64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::DirectionTable(format!("line {}: {e}", lineno + 1)))?;
            if nums.len() < 3 {
                return Err(Error::DirectionTable(format!("line {}: too few fields", lineno + 1)));
            }
            let (d, s, a) = (nums[0] as usize, nums[1] as usize, nums[2] as u32);
            if d != dims.len() + 1 {
                return Err(Error::DirectionTable(format!(
                    "line {}: expected dimension {}, found {d}",
                    lineno + 1,
                    dims.len() + 1
                )));
            }
            if s == 0 || s > BITS || nums.len() != 3 + s {
                return Err(Error::DirectionTable(format!("line {}: degree {s} does not match row", lineno + 1)));
            }
            let m = &nums[3..];
            for (k, &mk) in m.iter().enumerate() {
                if mk % 2 == 0 || mk >= 1 << (k + 1) {
                    return Err(Error::DirectionTable(format!(
                        "line {}: m_{} = {mk} must be odd and < 2^{}",
                        lineno + 1,
                        k + 1,
                        k + 1
                    )));
                }
            }
            dims.push(direction_numbers(s, a, m));
        }
        Ok(Self { dims })
    }

    pub fn max_dimension(&self) -> usize {
        self.dims.len()
    }

    fn point_bits(&self, dim: usize, index: u64) -> u32 {
        let gray = index ^ (index >> 1);
        let v = &self.dims[dim];
        let mut x = 0u32;
        let mut g = gray;
        let mut k = 0;
        while g != 0 {
            if g & 1 == 1 {
                x ^= v[k];
            }
            g >>= 1;
            k += 1;
        }
        x
    }
}

fn first_dimension() -> [u32; BITS] {
    std::array::from_fn(|k| 1u32 << (BITS - 1 - k))
}

fn direction_numbers(s: usize, a: u32, m: &[u64]) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    for k in 0..s.min(BITS) {
        v[k] = (m[k] as u32) << (BITS - 1 - k);
    }
    for k in s..BITS {
        let mut x = v[k - s] ^ (v[k - s] >> s);
        for i in 1..s {
            if (a >> (s - 1 - i)) & 1 == 1 {
                x ^= v[k - i];
            }
        }
        v[k] = x;
    }
    v
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Nested uniform (Owen) digit scramble: each bit is flipped by a hash of
/// the seed, the dimension, the bit depth and all higher-order bits.
fn owen_scramble(x: u32, seed: u64, dim: usize) -> u32 {
    let base = splitmix64(seed ^ splitmix64(dim as u64 + 1));
    let mut out = 0u32;
    for depth in 0..BITS {
        let pos = BITS - 1 - depth;
        let prefix = if depth == 0 { 0 } else { (x >> (BITS - depth)) as u64 };
        let flip = (splitmix64(base ^ ((depth as u64) << 32 | prefix)) >> 63) as u32;
        out |= (((x >> pos) & 1) ^ flip) << pos;
    }
    out
}

/// A stream of Sobol' points. Unscrambled streams start at index 1 (the
/// origin is skipped); scrambled streams start at index 0.
#[derive(Debug, Clone)]
pub struct SobolStream {
    dimension: usize,
    index: u64,
    scramble_seed: Option<u64>,
    table: Arc<DirectionNumbers>,
}

impl SobolStream {
    pub fn new(dimension: usize, scramble_seed: Option<u64>) -> Result<Self> {
        Self::with_table(dimension, scramble_seed, DirectionNumbers::embedded())
    }

    pub fn with_table(dimension: usize, scramble_seed: Option<u64>, table: Arc<DirectionNumbers>) -> Result<Self> {
        if dimension == 0 || dimension > table.max_dimension() {
            return Err(Error::SobolDimension {
                requested: dimension,
                limit: table.max_dimension(),
            });
        }
        Ok(Self {
            dimension,
            index: if scramble_seed.is_some() { 0 } else { 1 },
            scramble_seed,
            table,
        })
    }

    /// Repositions the stream so the next point emitted has `index`.
    pub fn starting_at(mut self, index: u64) -> Self {
        self.index = index;
        self
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    pub fn scramble_seed(&self) -> Option<u64> {
        self.scramble_seed
    }

    pub fn next_point(&mut self) -> Vec<f64> {
        let idx = self.index;
        assert!(idx < 1 << BITS, "sobol index exhausted 2^32 points");
        self.index += 1;
        (0..self.dimension)
            .map(|j| {
                let mut bits = self.table.point_bits(j, idx);
                if let Some(seed) = self.scramble_seed {
                    bits = owen_scramble(bits, seed, j);
                }
                bits as f64 / (1u64 << BITS) as f64
            })
            .collect()
    }

    pub fn take_points(&mut self, n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.next_point()).collect()
    }
}

/// Emits the next `n` points of `stream`.
pub fn sobol_points(stream: &mut SobolStream, n: usize) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::InvalidConfig("sobol_points needs n >= 1".into()));
    }
    Ok(stream.take_points(n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_point_is_the_center() {
        for d in [1, 2, 7, 34, 64] {
            let mut s = SobolStream::new(d, None).unwrap();
            assert!(s.next_point().iter().all(|v| *v == 0.5));
        }
    }

    #[test]
    fn one_dimensional_prefix() {
        let mut s = SobolStream::new(1, None).unwrap();
        let pts: Vec<f64> = s.take_points(4).into_iter().map(|p| p[0]).collect();
        assert_eq!(pts, vec![0.5, 0.75, 0.25, 0.375]);
    }

    #[test]
    fn dimension_beyond_table_is_rejected() {
        let err = SobolStream::new(65, None).unwrap_err();
        assert!(err.to_string().contains("64"), "{err}");
        assert!(SobolStream::new(0, None).is_err());
    }

    #[test]
    fn range_invariant_scrambled_and_not() {
        for seed in [None, Some(3), Some(u64::MAX)] {
            let mut s = SobolStream::new(10, seed).unwrap();
            for p in sobol_points(&mut s, 1024).unwrap() {
                assert!(p.iter().all(|v| (0.0..1.0).contains(v)));
            }
        }
    }

    #[test]
    fn scrambled_streams_differ_by_seed_and_repeat_by_seed() {
        let a = SobolStream::new(3, Some(1)).unwrap().take_points(16);
        let b = SobolStream::new(3, Some(1)).unwrap().take_points(16);
        let c = SobolStream::new(3, Some(2)).unwrap().take_points(16);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn scrambling_keeps_net_balance() {
        let mut s = SobolStream::new(4, Some(99)).unwrap();
        let pts = s.take_points(64);
        for j in 0..4 {
            let mut cells: Vec<u32> = pts.iter().map(|p| (p[j] * 64.0) as u32).collect();
            cells.sort_unstable();
            assert_eq!(cells, (0..64).collect::<Vec<_>>());
        }
    }

    #[test]
    fn table_parser_rejects_garbage() {
        assert!(DirectionNumbers::parse("d s a m\n2 1 0 2\n").is_err());
        assert!(DirectionNumbers::parse("d s a m\n3 1 0 1\n").is_err());
        assert!(DirectionNumbers::parse("d s a m\n2 2 0 1\n").is_err());
        let t = DirectionNumbers::parse("d s a m\n2 1 0 1\n").unwrap();
        assert_eq!(t.max_dimension(), 2);
    }
}
