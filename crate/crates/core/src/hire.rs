//! Approximate candidate selection followed by exact recomputation.
//!
//! [`hire_topk`] ranks `phi(Z_approxᵀx)` to get `k'` candidates, recomputes
//! `phi(⟨z_j, x⟩)` exactly for those candidates only, and returns their top-k.
//! Because the recomputation uses the same kernel as [`exact_topk`] and the
//! same total order, the result is bit-identical to the exact top-k whenever
//! the exact top-k indices are all among the candidates.
//!
//! [`exact_topk`]: crate::linalg::exact_topk

use crate::approx::{ApproxScorer, ScorerKind};
use crate::error::{HireError, Result};
use crate::linalg::{
    check_dim, column_score, matvec, select_best, topk_select, ActivationKind, ScoreMatrix,
    ScoredIndex, TopKSet,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HireConfig {
    pub k: usize,
    pub k_prime: usize,
    pub phi: ActivationKind,
}

impl HireConfig {
    pub fn new(k: usize, k_prime: usize, phi: ActivationKind) -> Result<Self> {
        if k == 0 {
            return Err(HireError::InvalidParameter("k must be at least 1".into()));
        }
        if k_prime < k {
            return Err(HireError::InvalidParameter(format!(
                "k_prime ({k_prime}) must be at least k ({k})"
            )));
        }
        Ok(Self { k, k_prime, phi })
    }
}

/// Candidate indices `S'`, sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    pub indices: Vec<usize>,
    pub origin: ScorerKind,
    /// True when `k_prime` exceeded the column count and was reduced to it.
    pub clamped: bool,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.indices.binary_search(&index).is_ok()
    }
}

fn check_scorer(z: &ScoreMatrix, a: &ApproxScorer) -> Result<()> {
    check_dim("approx scorer rows", z.rows(), a.rows())?;
    check_dim("approx scorer columns", z.cols(), a.cols())
}

/// Top-`k'` indices of `phi(Z_approxᵀx)`.
pub fn select_candidates(a: &ApproxScorer, x: &[f32], k_prime: usize, phi: ActivationKind) -> Result<CandidateSet> {
    let scores = a.approx_scores(x, phi)?;
    let top = topk_select(&scores, k_prime)?;
    Ok(CandidateSet {
        indices: top.sorted_indices(),
        origin: a.kind(),
        clamped: top.clamped,
    })
}

/// Exact top-k of `phi(Z|_Sᵀx)` over an explicit index set. Values are
/// recomputed from `z`.
pub fn restricted_topk(z: &ScoreMatrix, x: &[f32], indices: &[usize], k: usize, phi: ActivationKind) -> Result<TopKSet> {
    check_dim("restricted top-k input (rows of Z)", z.rows(), x.len())?;
    if k == 0 {
        return Err(HireError::InvalidParameter("k must be at least 1".into()));
    }
    let items: Vec<ScoredIndex> = indices
        .iter()
        .map(|&index| ScoredIndex {
            index,
            value: column_score(z, index, x, phi),
        })
        .collect();
    let clamped = k > items.len();
    Ok(TopKSet {
        entries: select_best(items, k),
        k,
        clamped,
    })
}

/// Approximate top-`k'` candidates, then exact top-k among them.
pub fn hire_topk(x: &[f32], z: &ScoreMatrix, a: &ApproxScorer, cfg: &HireConfig) -> Result<(TopKSet, CandidateSet)> {
    check_dim("hire input (rows of Z)", z.rows(), x.len())?;
    check_scorer(z, a)?;
    let candidates = select_candidates(a, x, cfg.k_prime, cfg.phi)?;
    let result = restricted_topk(z, x, &candidates.indices, cfg.k, cfg.phi)?;
    Ok((result, candidates))
}

// ── Softmax ──────────────────────────────────────────────────────────────────

/// Max-subtracted softmax of the given logits.
pub fn softmax(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = logits.iter().map(|&v| (v as f64 - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| (e / sum) as f32).collect()
}

/// Full softmax over the `c` output classes: `softmax(Wᵀx)`.
pub fn softmax_full(w: &ScoreMatrix, x: &[f32]) -> Result<Vec<f32>> {
    Ok(softmax(&matvec(w, x, ActivationKind::Identity)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparseProb {
    pub index: usize,
    pub probability: f32,
    /// Exact logit the probability was computed from.
    pub logit: f32,
}

/// Top-k renormalized distribution, in descending probability order.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDistribution {
    pub entries: Vec<SparseProb>,
}

impl SparseDistribution {
    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.probability as f64).sum()
    }
}

/// Softmax restricted to the top-k logits found by [`hire_topk`], renormalized
/// over the retained exact logits.
pub fn softmax_topk(
    w: &ScoreMatrix,
    x: &[f32],
    a: &ApproxScorer,
    cfg: &HireConfig,
) -> Result<(SparseDistribution, CandidateSet)> {
    if cfg.phi != ActivationKind::Identity {
        return Err(HireError::InvalidParameter(format!(
            "softmax top-k needs the identity activation, got {}",
            cfg.phi.name()
        )));
    }
    let (top, candidates) = hire_topk(x, w, a, cfg)?;
    let logits: Vec<f32> = top.entries.iter().map(|e| e.value).collect();
    let probs = softmax(&logits);
    let entries = top
        .entries
        .iter()
        .zip(probs)
        .map(|(e, probability)| SparseProb {
            index: e.index,
            probability,
            logit: e.value,
        })
        .collect();
    Ok((SparseDistribution { entries }, candidates))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::quantize_int4;
    use crate::linalg::exact_topk;
    use crate::metrics::recall;
    use crate::rng::SplitMix64;

    fn four_columns() -> ScoreMatrix {
        ScoreMatrix::from_columns(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0], vec![-1.0, -1.0]])
            .unwrap()
    }

    /// A scorer whose scores for `x = e_0` are exactly `scores`.
    fn scripted(scores: &[f32], d: usize) -> ApproxScorer {
        ApproxScorer::ExactCopy(
            ScoreMatrix::from_fn(d, scores.len(), |i, j| if i == 0 { scores[j] } else { 0.0 }).unwrap(),
        )
    }

    #[test]
    fn exact_copy_reproduces_exact_topk() {
        let z = four_columns();
        let x = [2.0, 1.0];
        for phi in ActivationKind::ALL {
            for (k, kp) in [(1, 1), (1, 3), (2, 2), (2, 4), (3, 4)] {
                let cfg = HireConfig::new(k, kp, phi).unwrap();
                let (got, _) = hire_topk(&x, &z, &ApproxScorer::ExactCopy(z.clone()), &cfg).unwrap();
                assert!(got.bitwise_eq(&exact_topk(&z, &x, k, phi).unwrap()));
            }
        }
    }

    #[test]
    fn hand_traced_candidates() {
        // Approximate scores [2.1, 0.9, 2.9, 0] steer the candidate choice.
        let z = four_columns();
        let x = [2.0, 1.0];
        // The scripted scorer reads x[0] = 2, so halve the scripted scores.
        let a = scripted(&[1.05, 0.45, 1.45, 0.0], 2);
        assert_eq!(a.approx_scores(&x, ActivationKind::Identity).unwrap(), vec![2.1, 0.9, 2.9, 0.0]);
        let cfg = HireConfig::new(2, 3, ActivationKind::ReLU).unwrap();
        let (top, cand) = hire_topk(&x, &z, &a, &cfg).unwrap();
        assert_eq!(cand.indices, vec![0, 1, 2]);
        let got: Vec<(usize, f32)> = top.entries.iter().map(|e| (e.index, e.value)).collect();
        assert_eq!(got, vec![(2, 3.0), (0, 2.0)]);
    }

    #[test]
    fn missed_argmax_lowers_recall() {
        let z = four_columns();
        let x = [2.0, 1.0];
        // Column 2 (the true argmax) gets the lowest approximate score.
        let a = scripted(&[1.0, 0.5, -5.0, 0.0], 2);
        let cfg = HireConfig::new(1, 1, ActivationKind::ReLU).unwrap();
        let (top, cand) = hire_topk(&x, &z, &a, &cfg).unwrap();
        let exact = exact_topk(&z, &x, 1, ActivationKind::ReLU).unwrap();
        assert!(!cand.contains(2));
        assert!(!top.bitwise_eq(&exact));
        assert!(recall(&cand, &exact).recall < 1.0);
    }

    #[test]
    fn k_prime_is_clamped_and_flagged() {
        let z = four_columns();
        let cfg = HireConfig::new(2, 10, ActivationKind::Identity).unwrap();
        let (top, cand) = hire_topk(&[1.0, 1.0], &z, &ApproxScorer::Quantized(quantize_int4(&z)), &cfg).unwrap();
        assert!(cand.clamped);
        assert_eq!(cand.len(), 4);
        assert!(top.bitwise_eq(&exact_topk(&z, &[1.0, 1.0], 2, ActivationKind::Identity).unwrap()));
    }

    #[test]
    fn config_validation() {
        assert!(HireConfig::new(0, 3, ActivationKind::Identity).is_err());
        assert!(HireConfig::new(4, 3, ActivationKind::Identity).is_err());
    }

    #[test]
    fn dimension_mismatch() {
        let z = four_columns();
        let other = ScoreMatrix::identity(3).unwrap();
        let cfg = HireConfig::new(1, 2, ActivationKind::Identity).unwrap();
        assert!(hire_topk(&[1.0, 2.0], &z, &ApproxScorer::ExactCopy(other), &cfg).is_err());
        assert!(hire_topk(&[1.0], &z, &ApproxScorer::ExactCopy(z.clone()), &cfg).is_err());
    }

    #[test]
    fn softmax_closed_forms() {
        let p = softmax(&[2f32.ln(), 0.0, 0.0]);
        for (g, w) in p.iter().zip([0.5, 0.25, 0.25]) {
            assert!((g - w).abs() < 1e-7);
        }
        let p = softmax(&[3.0; 5]);
        assert!(p.iter().all(|v| (v - 0.2).abs() < 1e-7));
    }

    #[test]
    fn softmax_matches_naive_oracle() {
        let mut rng = SplitMix64::new(4);
        for _ in 0..50 {
            let logits: Vec<f32> = (0..64).map(|_| rng.gaussian_f32() * 3.0).collect();
            let naive: Vec<f64> = {
                let e: Vec<f64> = logits.iter().map(|&v| (v as f64).exp()).collect();
                let s: f64 = e.iter().sum();
                e.iter().map(|v| v / s).collect()
            };
            let got = softmax(&logits);
            let total: f64 = got.iter().map(|&v| v as f64).sum();
            assert!((total - 1.0).abs() < 1e-6);
            for (g, n) in got.iter().zip(&naive) {
                assert!((*g as f64 - n).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn softmax_topk_closed_form() {
        let w = ScoreMatrix::identity(3).unwrap();
        let x = [2f32.ln(), 0.0, 0.0];
        let cfg = HireConfig::new(2, 2, ActivationKind::Identity).unwrap();
        let (dist, _) = softmax_topk(&w, &x, &ApproxScorer::ExactCopy(w.clone()), &cfg).unwrap();
        assert_eq!(dist.entries.len(), 2);
        assert_eq!((dist.entries[0].index, dist.entries[1].index), (0, 1));
        assert!((dist.entries[0].probability - 2.0 / 3.0).abs() < 1e-7);
        assert!((dist.entries[1].probability - 1.0 / 3.0).abs() < 1e-7);
    }

    #[test]
    fn softmax_topk_full_k_equals_full_softmax() {
        let mut rng = SplitMix64::new(12);
        let w = ScoreMatrix::from_fn(6, 20, |_, _| rng.gaussian_f32()).unwrap();
        let x: Vec<f32> = (0..6).map(|_| rng.gaussian_f32()).collect();
        let full = softmax_full(&w, &x).unwrap();
        let cfg = HireConfig::new(20, 20, ActivationKind::Identity).unwrap();
        let (dist, _) = softmax_topk(&w, &x, &ApproxScorer::Quantized(quantize_int4(&w)), &cfg).unwrap();
        for e in &dist.entries {
            assert!((e.probability - full[e.index]).abs() < 1e-6);
        }
        for pair in dist.entries.windows(2) {
            assert!(pair[0].probability >= pair[1].probability);
        }
    }

    #[test]
    fn softmax_topk_quantized_support_and_values() {
        let mut rng = SplitMix64::new(99);
        let w = ScoreMatrix::from_fn(8, 64, |_, _| rng.gaussian_f32()).unwrap();
        let x: Vec<f32> = (0..8).map(|_| rng.gaussian_f32()).collect();
        let cfg = HireConfig::new(4, 16, ActivationKind::Identity).unwrap();
        let (dist, cand) = softmax_topk(&w, &x, &ApproxScorer::Quantized(quantize_int4(&w)), &cfg).unwrap();
        let full = softmax_full(&w, &x).unwrap();
        let retained: f64 = dist.entries.iter().map(|e| full[e.index] as f64).sum();
        assert!((dist.total() - 1.0).abs() < 1e-6);
        for e in &dist.entries {
            assert!(cand.contains(e.index));
            let want = full[e.index] as f64 / retained;
            assert!((e.probability as f64 - want).abs() < 1e-6);
            assert_eq!(e.logit, column_score(&w, e.index, &x, ActivationKind::Identity));
        }
    }

    #[test]
    fn softmax_topk_rejects_relu() {
        let w = ScoreMatrix::identity(2).unwrap();
        let cfg = HireConfig::new(1, 1, ActivationKind::ReLU).unwrap();
        assert!(softmax_topk(&w, &[1.0, 0.0], &ApproxScorer::ExactCopy(w.clone()), &cfg).is_err());
    }
}
