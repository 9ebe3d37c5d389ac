use std::collections::BTreeSet;

use proptest::prelude::*;

use hire::approx::quantize_int4;
use hire::ffn::{ffn_common_path, ffn_dense, ffn_group_sparse, ffn_topk, CommonPathFFN, GroupedFFN};
use hire::hire::select_candidates;
use hire::rng::SplitMix64;
use hire::{da_topk, exact_topk, hire_topk, shard, ActivationKind, ApproxScorer, HireConfig, ScoreMatrix};

fn matrix(d: usize, l: usize, seed: u64) -> ScoreMatrix {
    let mut rng = SplitMix64::new(seed);
    ScoreMatrix::from_fn(d, l, |_, _| rng.gaussian_f32()).unwrap()
}

fn vector(d: usize, seed: u64) -> Vec<f32> {
    let mut rng = SplitMix64::new(seed ^ 0x9e37);
    (0..d).map(|_| rng.gaussian_f32()).collect()
}

fn phi_of(i: usize) -> ActivationKind {
    ActivationKind::ALL[i % 3]
}

fn rel_err(a: &[f32], b: &[f32]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum();
    let den: f64 = b.iter().map(|y| (*y as f64).powi(2)).sum();
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn candidates_grow_with_k_prime(d in 1usize..12, l in 1usize..200, seed in any::<u64>(), p in 0usize..3) {
        let z = matrix(d, l, seed);
        let x = vector(d, seed);
        let a = ApproxScorer::Quantized(quantize_int4(&z));
        let mut prev = BTreeSet::new();
        for kp in 1..=l.min(40) {
            let c: BTreeSet<usize> = select_candidates(&a, &x, kp, phi_of(p)).unwrap().indices.into_iter().collect();
            prop_assert_eq!(c.len(), kp);
            prop_assert!(prev.is_subset(&c));
            prev = c;
        }
    }

    #[test]
    fn recall_only_improves_with_k_prime(d in 1usize..12, l in 2usize..200, seed in any::<u64>(), p in 0usize..3) {
        let z = matrix(d, l, seed);
        let x = vector(d, seed);
        let a = ApproxScorer::Quantized(quantize_int4(&z));
        let k = 1 + (seed as usize) % l;
        let exact = exact_topk(&z, &x, k, phi_of(p)).unwrap();
        let mut last = 0.0;
        for kp in [k, (k + l) / 2, l] {
            let r = hire::recall(&select_candidates(&a, &x, kp, phi_of(p)).unwrap(), &exact).recall;
            prop_assert!(r >= last);
            last = r;
        }
        prop_assert_eq!(last, 1.0);
    }

    #[test]
    fn da_with_exact_scorer_is_union_of_shard_local_top_k(
        d in 1usize..10, per in 1usize..40, s in 1usize..5, kq in 1usize..4, extra in 0usize..4,
        seed in any::<u64>(), p in 0usize..3,
    ) {
        let l = per * s;
        let q = kq.min(per);
        let (k, kp) = (s * q, (s * (q + extra)).min(l));
        let z = matrix(d, l, seed);
        let x = vector(d, seed);
        let a = ApproxScorer::ExactCopy(z.clone());
        let cfg = HireConfig::new(k, kp, phi_of(p)).unwrap();
        let (da, _) = da_topk(&shard(&z, &a, s).unwrap(), &x, &cfg).unwrap();
        let mut expected = Vec::new();
        for i in 0..s {
            let block = z.slice_columns(i * per, (i + 1) * per).unwrap();
            let local = exact_topk(&block, &x, q, phi_of(p)).unwrap();
            expected.extend(local.entries.iter().map(|e| (e.index + i * per, e.value.to_bits())));
        }
        let mut got: Vec<(usize, u32)> = da.entries.iter().map(|e| (e.index, e.value.to_bits())).collect();
        got.sort_unstable();
        expected.sort_unstable();
        prop_assert_eq!(got, expected);
    }

    #[test]
    fn da_invariant_under_shard_and_column_permutation(
        d in 1usize..8, per in 2usize..30, s in 1usize..4, rot in 0usize..4, seed in any::<u64>(),
    ) {
        let l = per * s;
        let z = matrix(d, l, seed);
        let x = vector(d, seed);
        let cfg = HireConfig::new(s, 2 * s, ActivationKind::Identity).unwrap();
        let a = ApproxScorer::Quantized(quantize_int4(&z));
        let (base, _) = da_topk(&shard(&z, &a, s).unwrap(), &x, &cfg).unwrap();

        // Rotate the shard order and reverse the columns inside every shard.
        let perm: Vec<usize> = (0..l)
            .map(|j| (((j / per) + rot) % s) * per + (per - 1 - j % per))
            .collect();
        let zp = ScoreMatrix::from_fn(d, l, |i, j| z.get(i, perm[j])).unwrap();
        let ap = ApproxScorer::Quantized(quantize_int4(&zp));
        let (moved, _) = da_topk(&shard(&zp, &ap, s).unwrap(), &x, &cfg).unwrap();
        let a: Vec<(usize, u32)> = base.entries.iter().map(|e| (e.index, e.value.to_bits())).collect();
        let b: Vec<(usize, u32)> = moved.entries.iter().map(|e| (perm[e.index], e.value.to_bits())).collect();
        // Same sorted result; Gaussian data makes ties (the only order-dependent case) vanishingly rare.
        prop_assert_eq!(a, b);
    }

    #[test]
    fn collapse_chain(d in 1usize..10, m in 1usize..40, seed in any::<u64>()) {
        let u = matrix(d, m, seed);
        let v = matrix(d, m, seed.wrapping_add(1));
        let x = vector(d, seed);
        let f = GroupedFFN::new(u.clone(), v, 1, ActivationKind::ReLU).unwrap();
        let k = 1 + (seed as usize) % m;
        let (gs, _) = ffn_group_sparse(&f, &x, &ApproxScorer::ExactCopy(u), k, m).unwrap();
        let topk = ffn_topk(&f, &x, k).unwrap();
        let dense = ffn_dense(&f, &x).unwrap();
        if topk.iter().any(|t| *t != 0.0) {
            prop_assert!(rel_err(&gs, &topk) <= 1e-5);
        }
        if dense.iter().any(|t| *t != 0.0) {
            prop_assert!(rel_err(&ffn_topk(&f, &x, m).unwrap(), &dense) <= 1e-5);
        }
        let a = ApproxScorer::Quantized(quantize_int4(f.u()));
        let c = CommonPathFFN::new(None, f.clone()).unwrap();
        prop_assert_eq!(ffn_common_path(&c, &x, &a, k, m).unwrap(), ffn_group_sparse(&f, &x, &a, k, m).unwrap().0);
    }

    #[test]
    fn hire_never_beats_exact(d in 1usize..10, l in 1usize..150, seed in any::<u64>(), p in 0usize..3) {
        let z = matrix(d, l, seed);
        let x = vector(d, seed);
        let k = 1 + (seed as usize) % l;
        let kp = k + (seed as usize >> 8) % (l - k + 1);
        let cfg = HireConfig::new(k, kp, phi_of(p)).unwrap();
        let (got, _) = hire_topk(&x, &z, &ApproxScorer::Quantized(quantize_int4(&z)), &cfg).unwrap();
        let exact = exact_topk(&z, &x, k, phi_of(p)).unwrap();
        // The i-th hire_topk value never exceeds the i-th exact value.
        for (g, e) in got.entries.iter().zip(&exact.entries) {
            prop_assert!(g.value <= e.value);
        }
    }
}

#[test]
fn da_result_can_leave_the_global_top_k_prime() {
    let z = ScoreMatrix::identity(4).unwrap();
    let x = [10.0, 9.0, 1.0, 0.0];
    let cfg = HireConfig::new(2, 2, ActivationKind::Identity).unwrap();
    let (da, _) = da_topk(&shard(&z, &ApproxScorer::ExactCopy(z.clone()), 2).unwrap(), &x, &cfg).unwrap();
    assert_eq!(da.sorted_indices(), vec![0, 2]);
    assert_eq!(exact_topk(&z, &x, 2, ActivationKind::Identity).unwrap().sorted_indices(), vec![0, 1]);
}
