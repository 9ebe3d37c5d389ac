//! Column-sharded top-k across simulated devices.
//!
//! Each shard picks its own `k'/s` candidates from its slice of the
//! approximation and keeps its own exact top-`k/s`; the shard results are then
//! concatenated and re-sorted. Shards are evaluated independently (possibly in
//! parallel) and merged in a fixed order, so results do not depend on
//! scheduling.

use rayon::prelude::*;

use crate::approx::ApproxScorer;
use crate::error::{HireError, Result};
use crate::ffn::{group_proxy, ffn_restricted, rank_candidate_groups, GroupIndexSet, GroupedFFN};
use crate::hire::{restricted_topk, select_candidates, HireConfig};
use crate::linalg::{check_dim, rank_order, topk_select, ScoreMatrix, ScoredIndex, TopKSet};

/// Bytes per gathered exact weight in the simulation (32-bit reals).
pub const BYTES_PER_WEIGHT: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    pub z: ScoreMatrix,
    pub a: ApproxScorer,
    /// Global index of this shard's column 0.
    pub offset: usize,
}

impl Shard {
    pub fn width(&self) -> usize {
        self.z.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShardedScorer {
    shards: Vec<Shard>,
}

impl ShardedScorer {
    pub fn shards(&self) -> &[Shard] {
        &self.shards
    }

    pub fn s(&self) -> usize {
        self.shards.len()
    }

    pub fn rows(&self) -> usize {
        self.shards[0].z.rows()
    }

    pub fn cols(&self) -> usize {
        self.shards.iter().map(Shard::width).sum()
    }

    /// Concatenate the shards back into one matrix.
    pub fn reassemble(&self) -> Result<ScoreMatrix> {
        let data = self
            .shards
            .iter()
            .flat_map(|s| s.z.as_col_major().iter().copied())
            .collect();
        ScoreMatrix::from_col_major(self.rows(), self.cols(), data)
    }
}

/// Contiguous near-equal partition of `n` items into `s` parts; the first
/// `n mod s` parts are one larger. Returns `(start, end)` pairs.
pub fn partition(n: usize, s: usize) -> Vec<(usize, usize)> {
    let base = n / s;
    let extra = n % s;
    let mut out = Vec::with_capacity(s);
    let mut start = 0;
    for i in 0..s {
        let width = base + usize::from(i < extra);
        out.push((start, start + width));
        start += width;
    }
    out
}

pub fn shard(z: &ScoreMatrix, a: &ApproxScorer, s: usize) -> Result<ShardedScorer> {
    check_dim("approx scorer rows", z.rows(), a.rows())?;
    check_dim("approx scorer columns", z.cols(), a.cols())?;
    if s == 0 || s > z.cols() {
        return Err(HireError::InvalidParameter(format!(
            "shard count {s} outside 1..={}",
            z.cols()
        )));
    }
    let shards = partition(z.cols(), s)
        .into_iter()
        .map(|(start, end)| {
            Ok(Shard {
                z: z.slice_columns(start, end)?,
                a: a.slice_columns(start, end)?,
                offset: start,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ShardedScorer { shards })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommReport {
    /// Exact-weight bytes read for the candidate columns: `Σ |S'_i| · d · 4`.
    pub bytes_gathered: usize,
    pub candidates_per_shard: Vec<usize>,
    pub values_concatenated: usize,
}

fn check_divides(what: &'static str, value: usize, name: &'static str, divisor: usize) -> Result<()> {
    if value % divisor != 0 {
        return Err(HireError::Divisibility {
            what,
            value,
            name,
            divisor,
        });
    }
    Ok(())
}

pub fn da_topk(sh: &ShardedScorer, x: &[f32], cfg: &HireConfig) -> Result<(TopKSet, CommReport)> {
    let s = sh.s();
    check_dim("distributed top-k input", sh.rows(), x.len())?;
    check_divides("k", cfg.k, "s", s)?;
    check_divides("k_prime", cfg.k_prime, "s", s)?;
    let (quota, cand_quota) = (cfg.k / s, cfg.k_prime / s);
    for (i, shard) in sh.shards.iter().enumerate() {
        if quota > shard.width() {
            return Err(HireError::ShardUnderflow {
                shard: i,
                width: shard.width(),
                quota,
            });
        }
    }

    let per_shard: Vec<(Vec<ScoredIndex>, usize)> = sh
        .shards
        .par_iter()
        .map(|shard| {
            let candidates = select_candidates(&shard.a, x, cand_quota, cfg.phi)?;
            let local = restricted_topk(&shard.z, x, &candidates.indices, quota, cfg.phi)?;
            let global = local
                .entries
                .into_iter()
                .map(|e| ScoredIndex {
                    index: e.index + shard.offset,
                    value: e.value,
                })
                .collect();
            Ok((global, candidates.len()))
        })
        .collect::<Result<_>>()?;

    let candidates_per_shard: Vec<usize> = per_shard.iter().map(|(_, c)| *c).collect();
    let mut entries: Vec<ScoredIndex> = per_shard.into_iter().flat_map(|(e, _)| e).collect();
    entries.sort_unstable_by(rank_order);
    let report = CommReport {
        bytes_gathered: candidates_per_shard.iter().sum::<usize>() * sh.rows() * BYTES_PER_WEIGHT,
        candidates_per_shard,
        values_concatenated: entries.len(),
    };
    Ok((
        TopKSet {
            entries,
            k: cfg.k,
            clamped: false,
        },
        report,
    ))
}

/// Group-sparse FFN with the groups split contiguously over `s` devices. Each
/// device keeps `k'/(s·g)` candidate groups and `k/(s·g)` final groups; the
/// output is the exact FFN sum over the union.
pub fn da_group_sparse(
    f: &GroupedFFN,
    a: &ApproxScorer,
    s: usize,
    x: &[f32],
    k: usize,
    k_prime: usize,
) -> Result<(Vec<f32>, GroupIndexSet)> {
    let n_groups = f.n_groups();
    if s == 0 || s > n_groups {
        return Err(HireError::InvalidParameter(format!(
            "shard count {s} outside 1..={n_groups} groups"
        )));
    }
    let per_device = s * f.g();
    check_divides("k", k, "s·g", per_device)?;
    check_divides("k_prime", k_prime, "s·g", per_device)?;
    if k == 0 || k > k_prime || k_prime > f.m() {
        return Err(HireError::InvalidParameter(format!(
            "need 1 <= k <= k_prime <= m, got k = {k}, k_prime = {k_prime}, m = {}",
            f.m()
        )));
    }
    let (quota, cand_quota) = (k / per_device, k_prime / per_device);
    let proxy = group_proxy(f, x, a)?;

    let ranges = partition(n_groups, s);
    for (i, &(start, end)) in ranges.iter().enumerate() {
        if quota > end - start {
            return Err(HireError::ShardUnderflow {
                shard: i,
                width: end - start,
                quota,
            });
        }
    }
    let selections: Vec<GroupIndexSet> = ranges
        .par_iter()
        .map(|&(start, end)| {
            let local = topk_select(&proxy[start..end], cand_quota)?;
            let candidates: Vec<usize> = local.sorted_indices().into_iter().map(|i| i + start).collect();
            rank_candidate_groups(f, x, &candidates, quota)
        })
        .collect::<Result<_>>()?;
    let union = GroupIndexSet::union(&selections);
    let out = ffn_restricted(f, x, &union)?;
    Ok((out, union))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::quantize_int4;
    use crate::ffn::ffn_group_sparse;
    use crate::hire::hire_topk;
    use crate::linalg::{exact_topk, ActivationKind};
    use crate::rng::SplitMix64;

    fn pairs(t: &TopKSet) -> Vec<(usize, f32)> {
        t.entries.iter().map(|e| (e.index, e.value)).collect()
    }

    fn identity_instance(scores: &[f32]) -> (ScoreMatrix, Vec<f32>) {
        (ScoreMatrix::identity(scores.len()).unwrap(), scores.to_vec())
    }

    #[test]
    fn partition_rule() {
        assert_eq!(partition(10, 3), vec![(0, 4), (4, 7), (7, 10)]);
        assert_eq!(partition(5, 1), vec![(0, 5)]);
    }

    #[test]
    fn shard_examples() {
        let mut rng = SplitMix64::new(1);
        let z = ScoreMatrix::from_fn(3, 10, |_, _| rng.gaussian_f32()).unwrap();
        let a = ApproxScorer::Quantized(quantize_int4(&z));
        let one = shard(&z, &a, 1).unwrap();
        assert_eq!(one.s(), 1);
        assert_eq!(one.shards()[0].offset, 0);

        let three = shard(&z, &a, 3).unwrap();
        let widths: Vec<usize> = three.shards().iter().map(Shard::width).collect();
        let offsets: Vec<usize> = three.shards().iter().map(|s| s.offset).collect();
        assert_eq!(widths, vec![4, 3, 3]);
        assert_eq!(offsets, vec![0, 4, 7]);
        assert_eq!(three.reassemble().unwrap(), z);

        assert!(shard(&z, &a, 11).is_err());
        assert!(shard(&z, &a, 0).is_err());
    }

    #[test]
    fn hand_traced_two_shards() {
        let (z, x) = identity_instance(&[9.0, 1.0, 3.0, 7.0, 8.0, 2.0, 6.0, 4.0]);
        let sh = shard(&z, &ApproxScorer::ExactCopy(z.clone()), 2).unwrap();
        let cfg = HireConfig::new(2, 4, ActivationKind::Identity).unwrap();
        let (top, comm) = da_topk(&sh, &x, &cfg).unwrap();
        assert_eq!(pairs(&top), vec![(0, 9.0), (4, 8.0)]);
        assert!(top.bitwise_eq(&exact_topk(&z, &x, 2, ActivationKind::Identity).unwrap()));
        assert_eq!(comm.candidates_per_shard, vec![2, 2]);
        assert_eq!(comm.bytes_gathered, 4 * 8 * 4);
        assert_eq!(comm.values_concatenated, 2);
    }

    #[test]
    fn hand_traced_approximation_gap() {
        let (z, x) = identity_instance(&[9.0, 8.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0]);
        let sh = shard(&z, &ApproxScorer::ExactCopy(z.clone()), 2).unwrap();
        let cfg = HireConfig::new(2, 4, ActivationKind::Identity).unwrap();
        let (top, _) = da_topk(&sh, &x, &cfg).unwrap();
        assert_eq!(pairs(&top), vec![(0, 9.0), (4, 2.0)]);
        let exact = exact_topk(&z, &x, 2, ActivationKind::Identity).unwrap();
        assert_eq!(pairs(&exact), vec![(0, 9.0), (1, 8.0)]);
    }

    #[test]
    fn single_shard_equals_hire() {
        let mut rng = SplitMix64::new(5);
        let z = ScoreMatrix::from_fn(8, 50, |_, _| rng.gaussian_f32()).unwrap();
        let x: Vec<f32> = (0..8).map(|_| rng.gaussian_f32()).collect();
        let a = ApproxScorer::Quantized(quantize_int4(&z));
        let cfg = HireConfig::new(5, 12, ActivationKind::ReLU).unwrap();
        let (da, _) = da_topk(&shard(&z, &a, 1).unwrap(), &x, &cfg).unwrap();
        let (h, _) = hire_topk(&x, &z, &a, &cfg).unwrap();
        assert!(da.bitwise_eq(&h));
    }

    #[test]
    fn divisibility_and_underflow() {
        let (z, x) = identity_instance(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let sh = shard(&z, &ApproxScorer::ExactCopy(z.clone()), 2).unwrap();
        let err = da_topk(&sh, &x, &HireConfig::new(3, 4, ActivationKind::Identity).unwrap()).unwrap_err();
        assert!(matches!(err, HireError::Divisibility { what: "k", .. }));
        let err = da_topk(&sh, &x, &HireConfig::new(2, 3, ActivationKind::Identity).unwrap()).unwrap_err();
        assert!(matches!(err, HireError::Divisibility { what: "k_prime", .. }));
        let err = da_topk(&sh, &x, &HireConfig::new(6, 6, ActivationKind::Identity).unwrap()).unwrap_err();
        assert!(matches!(err, HireError::ShardUnderflow { quota: 3, width: 2, .. }));
    }

    fn random_ffn(d: usize, m: usize, g: usize, seed: u64) -> GroupedFFN {
        let mut rng = SplitMix64::new(seed);
        let u = ScoreMatrix::from_fn(d, m, |_, _| rng.gaussian_f32()).unwrap();
        let v = ScoreMatrix::from_fn(d, m, |_, _| rng.gaussian_f32()).unwrap();
        GroupedFFN::new(u, v, g, ActivationKind::ReLU).unwrap()
    }

    #[test]
    fn group_sparse_single_device_matches_centralized() {
        let f = random_ffn(6, 64, 4, 7);
        let a = ApproxScorer::Quantized(quantize_int4(f.u()));
        let mut rng = SplitMix64::new(8);
        for _ in 0..20 {
            let x: Vec<f32> = (0..6).map(|_| rng.gaussian_f32()).collect();
            let (da, dg) = da_group_sparse(&f, &a, 1, &x, 16, 32).unwrap();
            let (c, cg) = ffn_group_sparse(&f, &x, &a, 16, 32).unwrap();
            assert_eq!(dg, cg);
            assert_eq!(da, c);
        }
    }

    /// Units of group `j` respond to coordinate `j` of the input with weight
    /// `w[j]`; other coordinates are zero.
    fn block_ffn(weights: &[f32], g: usize) -> GroupedFFN {
        let n = weights.len();
        let u = ScoreMatrix::from_fn(n, n * g, |i, j| if j / g == i { weights[i] } else { 0.0 }).unwrap();
        let v = ScoreMatrix::from_fn(n, n * g, |i, j| if j / g == i { 1.0 } else { 0.0 }).unwrap();
        GroupedFFN::new(u, v, g, ActivationKind::ReLU).unwrap()
    }

    #[test]
    fn group_sparse_uniform_activation_matches_centralized() {
        // Two devices with four groups each; every device holds one strong
        // group, so per-device quotas pick what central selection picks.
        let f = block_ffn(&[5.0, 1.0, 0.5, 0.2, 4.0, 0.9, 0.4, 0.1], 2);
        let a = ApproxScorer::ExactCopy(f.u().clone());
        let x = vec![1.0; 8];
        let (da, dg) = da_group_sparse(&f, &a, 2, &x, 4, 8).unwrap();
        let (c, cg) = ffn_group_sparse(&f, &x, &a, 4, 8).unwrap();
        assert_eq!(dg.ids(), &[0, 4]);
        assert_eq!(dg, cg);
        assert_eq!(da, c);
    }

    #[test]
    fn group_sparse_concentrated_mass_residual() {
        // All the large activations live on device 0.
        let f = block_ffn(&[5.0, 4.0, 3.0, 2.0, 0.4, 0.3, 0.2, 0.1], 2);
        let a = ApproxScorer::ExactCopy(f.u().clone());
        let x = vec![1.0; 8];
        let (da, dg) = da_group_sparse(&f, &a, 2, &x, 4, 8).unwrap();
        let (c, cg) = ffn_group_sparse(&f, &x, &a, 4, 8).unwrap();
        assert_eq!(cg.ids(), &[0, 1]);
        assert_eq!(dg.ids(), &[0, 4]);
        // central − distributed = contribution(central \ da) − contribution(da \ central).
        let only = |ids: Vec<usize>| ffn_restricted(&f, &x, &GroupIndexSet::new(ids, 8).unwrap()).unwrap();
        let missing = only(vec![1]);
        let extra = only(vec![4]);
        for i in 0..8 {
            assert!(((c[i] - da[i]) - (missing[i] - extra[i])).abs() < 1e-6);
        }
        assert_ne!(da, c);
    }

    #[test]
    fn group_sparse_quota_errors() {
        let f = random_ffn(4, 32, 4, 3);
        let a = ApproxScorer::ExactCopy(f.u().clone());
        let x = vec![0.5; 4];
        assert!(matches!(
            da_group_sparse(&f, &a, 2, &x, 4, 16),
            Err(HireError::Divisibility { name: "s·g", .. })
        ));
        assert!(da_group_sparse(&f, &a, 9, &x, 8, 16).is_err());
    }
}
