//! Grouped-gather memory microbenchmark.
//!
//! A buffer of `n_groups × g × d` f32 values is treated as `n_groups`
//! contiguous groups of `g` vectors. The sparse path copies a seeded random
//! subset of groups into a contiguous destination; the dense path copies the
//! same number of bytes from one contiguous range. Both are timed on the
//! calling thread with a discarded warm-up, and the median over `repeats` is
//! reported.

use std::hint::black_box;
use std::time::Instant;

use crate::error::{HireError, Result};
use crate::rng::SplitMix64;

pub const DEFAULT_MAX_BYTES: usize = 512 << 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GatherBenchConfig {
    pub n_groups: usize,
    pub g: usize,
    pub d: usize,
    pub fraction_selected: f64,
    pub repeats: usize,
    pub seed: u64,
    /// Cap on buffer plus destination size.
    pub max_bytes: usize,
}

impl GatherBenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_groups == 0 || self.g == 0 || self.d == 0 {
            return Err(HireError::InvalidParameter("n_groups, g and d must be positive".into()));
        }
        if !(self.fraction_selected > 0.0 && self.fraction_selected <= 1.0) {
            return Err(HireError::InvalidParameter(format!(
                "fraction_selected {} outside (0, 1]",
                self.fraction_selected
            )));
        }
        if self.repeats < 3 {
            return Err(HireError::InvalidParameter("repeats must be at least 3".into()));
        }
        let bytes = self.buffer_bytes().saturating_mul(2);
        if bytes > self.max_bytes {
            return Err(HireError::InvalidParameter(format!(
                "benchmark needs {bytes} bytes, budget is {}",
                self.max_bytes
            )));
        }
        Ok(())
    }

    pub fn group_len(&self) -> usize {
        self.g * self.d
    }

    pub fn buffer_bytes(&self) -> usize {
        self.n_groups
            .saturating_mul(self.group_len())
            .saturating_mul(std::mem::size_of::<f32>())
    }

    pub fn groups_selected(&self) -> usize {
        ((self.fraction_selected * self.n_groups as f64).ceil() as usize).clamp(1, self.n_groups)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatherBenchResult {
    pub g: usize,
    pub groups_selected: usize,
    pub sparse_bytes: usize,
    pub dense_bytes: usize,
    /// Median nanoseconds.
    pub sparse_time: u64,
    pub dense_time: u64,
    /// sparse / dense
    pub efficiency_paper: f64,
    /// dense / sparse
    pub efficiency_ratio: f64,
    pub checksum: u64,
    pub checksum_ok: bool,
}

/// Seeded group selection, ascending.
pub fn select_groups(cfg: &GatherBenchConfig) -> Vec<usize> {
    let mut ids = SplitMix64::new(cfg.seed).sample_distinct(cfg.n_groups, cfg.groups_selected());
    ids.sort_unstable();
    ids
}

fn alloc(len: usize) -> Result<Vec<f32>> {
    let mut v = Vec::new();
    v.try_reserve_exact(len).map_err(|_| HireError::Allocation {
        bytes: len * std::mem::size_of::<f32>(),
    })?;
    v.resize(len, 0.0);
    Ok(v)
}

fn checksum(values: &[f32]) -> u64 {
    values
        .iter()
        .fold(0u64, |acc, v| acc.rotate_left(5) ^ v.to_bits() as u64)
}

fn gather(src: &[f32], dst: &mut [f32], ids: &[usize], group_len: usize) {
    for (slot, &id) in dst.chunks_exact_mut(group_len).zip(ids) {
        slot.copy_from_slice(&src[id * group_len..(id + 1) * group_len]);
    }
}

fn median(mut v: Vec<u64>) -> u64 {
    v.sort_unstable();
    v[v.len() / 2].max(1)
}

pub fn run_gather_bench(cfg: &GatherBenchConfig) -> Result<GatherBenchResult> {
    cfg.validate()?;
    let group_len = cfg.group_len();
    let total = cfg.n_groups * group_len;
    let mut src = alloc(total)?;
    for (i, v) in src.iter_mut().enumerate() {
        *v = (i % 65_521) as f32;
    }
    let ids = select_groups(cfg);
    let moved = ids.len() * group_len;
    let mut dst = alloc(moved)?;

    // Warm-up, then verify the gathered bytes against the source.
    gather(&src, &mut dst, &ids, group_len);
    let expected = ids
        .iter()
        .fold(0u64, |acc, &id| {
            src[id * group_len..(id + 1) * group_len]
                .iter()
                .fold(acc, |a, v| a.rotate_left(5) ^ v.to_bits() as u64)
        });
    let got = checksum(&dst);
    let exact = dst
        .chunks_exact(group_len)
        .zip(&ids)
        .all(|(slot, &id)| slot == &src[id * group_len..(id + 1) * group_len]);
    let checksum_ok = exact && got == expected;
    dst.copy_from_slice(&src[..moved]);

    let mut sparse = Vec::with_capacity(cfg.repeats);
    let mut dense = Vec::with_capacity(cfg.repeats);
    for _ in 0..cfg.repeats {
        let t = Instant::now();
        gather(black_box(&src), &mut dst, black_box(&ids), group_len);
        black_box(&dst);
        sparse.push(t.elapsed().as_nanos() as u64);

        let t = Instant::now();
        dst.copy_from_slice(black_box(&src[..moved]));
        black_box(&dst);
        dense.push(t.elapsed().as_nanos() as u64);
    }
    let (sparse_time, dense_time) = (median(sparse), median(dense));
    let bytes = moved * std::mem::size_of::<f32>();
    Ok(GatherBenchResult {
        g: cfg.g,
        groups_selected: ids.len(),
        sparse_bytes: bytes,
        dense_bytes: bytes,
        sparse_time,
        dense_time,
        efficiency_paper: sparse_time as f64 / dense_time as f64,
        efficiency_ratio: dense_time as f64 / sparse_time as f64,
        checksum: got,
        checksum_ok,
    })
}

/// Sweep `g` at a fixed total number of `d`-vectors (`n_groups = vectors / g`).
pub fn run_gather_sweep(base: &GatherBenchConfig, total_vectors: usize, gs: &[usize]) -> Result<Vec<GatherBenchResult>> {
    gs.iter()
        .map(|&g| {
            if g == 0 || total_vectors % g != 0 {
                return Err(HireError::Divisibility {
                    what: "total vectors",
                    value: total_vectors,
                    name: "g",
                    divisor: g,
                });
            }
            run_gather_bench(&GatherBenchConfig {
                n_groups: total_vectors / g,
                g,
                ..*base
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(g: usize, fraction: f64) -> GatherBenchConfig {
        GatherBenchConfig {
            n_groups: 64,
            g,
            d: 16,
            fraction_selected: fraction,
            repeats: 3,
            seed: 5,
            max_bytes: DEFAULT_MAX_BYTES,
        }
    }

    #[test]
    fn parity_and_checksum() {
        for g in [1, 2, 8] {
            let r = run_gather_bench(&small(g, 0.25)).unwrap();
            assert_eq!(r.sparse_bytes, r.dense_bytes);
            assert_eq!(r.groups_selected, 16);
            assert!(r.checksum_ok);
            assert!(r.sparse_time > 0 && r.dense_time > 0);
            assert!((r.efficiency_paper * r.efficiency_ratio - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn full_fraction_selects_everything() {
        let cfg = small(4, 1.0);
        assert_eq!(select_groups(&cfg), (0..64).collect::<Vec<_>>());
        let r = run_gather_bench(&cfg).unwrap();
        assert_eq!(r.sparse_bytes, cfg.buffer_bytes());
    }

    #[test]
    fn selection_is_seeded() {
        let cfg = small(2, 0.3);
        assert_eq!(select_groups(&cfg), select_groups(&cfg));
        assert_ne!(select_groups(&cfg), select_groups(&GatherBenchConfig { seed: 6, ..cfg }));
    }

    #[test]
    fn validation() {
        assert!(run_gather_bench(&GatherBenchConfig { repeats: 2, ..small(1, 0.5) }).is_err());
        assert!(run_gather_bench(&small(1, 0.0)).is_err());
        assert!(run_gather_bench(&small(1, 1.5)).is_err());
        assert!(run_gather_bench(&GatherBenchConfig { max_bytes: 16, ..small(1, 0.5) }).is_err());
        assert!(run_gather_sweep(&small(1, 0.5), 100, &[3]).is_err());
    }
}
