//! Recall of candidate sets, the parameter-bytes cost model, and overlap of
//! group selections across samples.

use std::collections::BTreeSet;

use crate::error::{HireError, Result};
use crate::ffn::GroupIndexSet;
use crate::hire::CandidateSet;
use crate::linalg::TopKSet;

// ── Recall ───────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecallReport {
    /// `|S ∩ S'| / |S|`.
    pub recall: f64,
    /// `|top-k(exact) ∩ top-k(method)|`.
    pub intersection_k: usize,
    pub top1_agree: bool,
}

/// Recall of `candidates` against the exact top-k.
///
/// The method's own top-k is the exact top-k restricted to `S'`, and an exact
/// top-k index inside `S'` always survives that restriction. So
/// `intersection_k = |S ∩ S'|` (bounded by `min(k', k)`), and the top-1 agrees
/// exactly when the exact argmax is a candidate.
pub fn recall(candidates: &CandidateSet, exact: &TopKSet) -> RecallReport {
    let hits = exact
        .entries
        .iter()
        .filter(|e| candidates.contains(e.index))
        .count();
    let recall = if exact.is_empty() {
        1.0
    } else {
        hits as f64 / exact.len() as f64
    };
    RecallReport {
        recall,
        intersection_k: hits,
        top1_agree: exact.entries.first().is_some_and(|e| candidates.contains(e.index)),
    }
}

/// `|top-k(exact) ∩ top-k(method)|` for two arbitrary results.
pub fn intersection(a: &TopKSet, b: &TopKSet) -> usize {
    let left: BTreeSet<usize> = a.entries.iter().map(|e| e.index).collect();
    b.entries.iter().filter(|e| left.contains(&e.index)).count()
}

// ── Cost model ───────────────────────────────────────────────────────────────

/// Bytes of parameters each method reads for one top-k evaluation of a
/// `d × l` score matrix stored in bf16.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostReport {
    /// `2dl`
    pub bytes_baseline: u64,
    /// `2(dr + rl + dk')`
    pub bytes_lr: u64,
    /// `⌈dl/2⌉ + 2dk'`
    pub bytes_q: u64,
    /// `⌈(dr + rl)/2⌉ + 2dk'`
    pub bytes_lrq: u64,
}

impl CostReport {
    pub fn lr_saves(&self) -> bool {
        self.bytes_lr < self.bytes_baseline
    }

    pub fn q_saves(&self) -> bool {
        self.bytes_q < self.bytes_baseline
    }

    pub fn lrq_saves(&self) -> bool {
        self.bytes_lrq < self.bytes_baseline
    }

    /// `(method, bytes)` rows in a fixed order.
    pub fn rows(&self) -> [(&'static str, u64); 4] {
        [
            ("baseline", self.bytes_baseline),
            ("hire-lr", self.bytes_lr),
            ("hire-q", self.bytes_q),
            ("hire-lrq", self.bytes_lrq),
        ]
    }
}

pub fn param_bytes(d: u64, l: u64, r: u64, k_prime: u64) -> Result<CostReport> {
    if d == 0 || l == 0 {
        return Err(HireError::InvalidParameter("d and l must be positive".into()));
    }
    let gathered = 2 * d * k_prime;
    Ok(CostReport {
        bytes_baseline: 2 * d * l,
        bytes_lr: 2 * (d * r + r * l + d * k_prime),
        bytes_q: (d * l).div_ceil(2) + gathered,
        bytes_lrq: (d * r + r * l).div_ceil(2) + gathered,
    })
}

// ── Overlap ──────────────────────────────────────────────────────────────────

/// `|∪ sets| / (s · k_groups)`.
pub fn overlap_ratio(per_sample: &[GroupIndexSet], k_groups: usize) -> Result<f64> {
    if per_sample.is_empty() {
        return Err(HireError::Empty("per-sample group sets"));
    }
    if k_groups == 0 {
        return Err(HireError::InvalidParameter("k_groups must be at least 1".into()));
    }
    for set in per_sample {
        if set.len() != k_groups {
            return Err(HireError::DimensionMismatch {
                context: "per-sample group set size",
                expected: k_groups,
                found: set.len(),
            });
        }
    }
    let union = GroupIndexSet::union(per_sample);
    Ok(union.len() as f64 / (per_sample.len() * k_groups) as f64)
}

/// Counts of `values` over `bins` equal-width bins spanning `[lo, hi]`;
/// the top edge is inclusive.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<usize> {
    let mut counts = vec![0; bins];
    let width = (hi - lo) / bins as f64;
    for &v in values {
        let b = (((v - lo) / width).floor() as isize).clamp(0, bins as isize - 1);
        counts[b as usize] += 1;
    }
    counts
}
