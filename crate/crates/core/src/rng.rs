//! Portable seeded random source.
//!
//! The generator is SplitMix64 (Steele, Lea, Flood 2014): a 64-bit counter
//! advanced by `0x9E3779B97F4A7C15` and passed through a fixed mixing
//! function. It is small enough to reimplement byte-exactly in any language,
//! which keeps generated instances reproducible outside this crate.
//!
//! Derived quantities:
//! - `next_f64`: top 53 bits of the next output scaled by 2^-53, in [0, 1).
//! - `gaussian`: Box-Muller with `u1 = 1 - next_f64()`, `u2 = next_f64()`,
//!   returning `sqrt(-2 ln u1) * cos(2π u2)` in 64-bit arithmetic. One normal
//!   variate consumes exactly two outputs; the sine branch is discarded.
//! - `below(n)`: `next_u64() % n`.
//! - `derive(seed, stream)`: seed of an independent sub-stream, computed as the
//!   first output of a generator seeded with `seed ^ mix(stream)`.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Seed for sub-stream `stream` of `seed`; used to give each trial its own generator.
    pub fn derive(seed: u64, stream: u64) -> u64 {
        SplitMix64::new(seed ^ mix(stream.wrapping_add(GOLDEN_GAMMA))).next_u64()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix(self.state)
    }

    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn gaussian(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn gaussian_f32(&mut self) -> f32 {
        self.gaussian() as f32
    }

    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        self.next_u64() % n
    }

    /// Uniform integer in `lo..=hi`.
    pub fn range_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        lo + self.below((hi - lo + 1) as u64) as usize
    }

    /// `count` distinct values from `0..n` via a partial Fisher-Yates shuffle,
    /// in draw order.
    pub fn sample_distinct(&mut self, n: usize, count: usize) -> Vec<usize> {
        assert!(count <= n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..count {
            let j = i + self.below((n - i) as u64) as usize;
            pool.swap(i, j);
        }
        pool.truncate(count);
        pool
    }
}
