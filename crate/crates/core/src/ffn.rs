//! Two-layer feedforward blocks: dense, top-k, group-sparse and common-path.
//!
//! Hidden unit `j` has first-layer column `u_j` and second-layer column `v_j`;
//! the dense output is `Σ_j phi(⟨u_j, x⟩) v_j`. Groups are the contiguous
//! ranges `[jg, (j+1)g)`. All sums run over units in ascending index order, so
//! any two variants that end up selecting the same units agree bit for bit.

use rayon::prelude::*;

use crate::approx::ApproxScorer;
use crate::error::{HireError, Result};
use crate::linalg::{check_dim, column_score, matvec, select_best, topk_select, ActivationKind, ScoreMatrix, ScoredIndex};

/// Default group size.
pub const DEFAULT_GROUP_SIZE: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct GroupedFFN {
    u: ScoreMatrix,
    v: ScoreMatrix,
    g: usize,
    phi: ActivationKind,
}

impl GroupedFFN {
    /// `u` and `v` are both `d × m`; `g` must divide `m`.
    pub fn new(u: ScoreMatrix, v: ScoreMatrix, g: usize, phi: ActivationKind) -> Result<Self> {
        check_dim("second-layer rows", u.rows(), v.rows())?;
        check_dim("second-layer hidden units", u.cols(), v.cols())?;
        if g == 0 {
            return Err(HireError::InvalidParameter("group size g must be at least 1".into()));
        }
        if u.cols() % g != 0 {
            return Err(HireError::Divisibility {
                what: "hidden units m",
                value: u.cols(),
                name: "g",
                divisor: g,
            });
        }
        Ok(Self { u, v, g, phi })
    }

    pub fn u(&self) -> &ScoreMatrix {
        &self.u
    }

    pub fn v(&self) -> &ScoreMatrix {
        &self.v
    }

    pub fn d(&self) -> usize {
        self.u.rows()
    }

    pub fn m(&self) -> usize {
        self.u.cols()
    }

    pub fn g(&self) -> usize {
        self.g
    }

    pub fn phi(&self) -> ActivationKind {
        self.phi
    }

    pub fn n_groups(&self) -> usize {
        self.m() / self.g
    }

    /// Units `start..end` as a standalone layer with the same group size.
    pub fn slice_units(&self, start: usize, end: usize) -> Result<Self> {
        Self::new(
            self.u.slice_columns(start, end)?,
            self.v.slice_columns(start, end)?,
            self.g,
            self.phi,
        )
    }

    fn check_input(&self, x: &[f32]) -> Result<()> {
        check_dim("ffn input", self.d(), x.len())
    }

    fn check_scorer(&self, a: &ApproxScorer) -> Result<()> {
        check_dim("approx scorer rows (d)", self.d(), a.rows())?;
        check_dim("approx scorer columns (m)", self.m(), a.cols())
    }

    #[inline]
    fn activation(&self, j: usize, x: &[f32]) -> f32 {
        column_score(&self.u, j, x, self.phi)
    }

    /// `out += Σ_{j ∈ units} phi(⟨u_j, x⟩) v_j`, units visited in the given order.
    fn accumulate(&self, x: &[f32], units: impl IntoIterator<Item = usize>, out: &mut [f32]) {
        for j in units {
            let a = self.activation(j, x);
            for (o, &vj) in out.iter_mut().zip(self.v.column(j)) {
                *o += a * vj;
            }
        }
    }
}

/// Selected group ids, sorted ascending and unique.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GroupIndexSet {
    ids: Vec<usize>,
}

impl GroupIndexSet {
    pub fn new(mut ids: Vec<usize>, n_groups: usize) -> Result<Self> {
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(HireError::InvalidParameter("duplicate group id".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= n_groups) {
            return Err(HireError::InvalidParameter(format!(
                "group id {bad} out of range 0..{n_groups}"
            )));
        }
        Ok(Self { ids })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: usize) -> bool {
        self.ids.binary_search(&id).is_ok()
    }

    pub fn union(sets: &[GroupIndexSet]) -> GroupIndexSet {
        let mut ids: Vec<usize> = sets.iter().flat_map(|s| s.ids.iter().copied()).collect();
        ids.sort_unstable();
        ids.dedup();
        GroupIndexSet { ids }
    }

    /// Hidden-unit indices covered by these groups, ascending.
    pub fn units(&self, g: usize) -> impl Iterator<Item = usize> + '_ {
        self.ids.iter().flat_map(move |&id| id * g..(id + 1) * g)
    }
}

// ── Dense and top-k ──────────────────────────────────────────────────────────

pub fn ffn_dense(f: &GroupedFFN, x: &[f32]) -> Result<Vec<f32>> {
    f.check_input(x)?;
    let mut out = vec![0.0; f.d()];
    f.accumulate(x, 0..f.m(), &mut out);
    Ok(out)
}

/// Sum restricted to the exact top-k units of `phi(Uᵀx)`.
pub fn ffn_topk(f: &GroupedFFN, x: &[f32], k: usize) -> Result<Vec<f32>> {
    f.check_input(x)?;
    if k == 0 || k > f.m() {
        return Err(HireError::InvalidParameter(format!("k = {k} outside 1..={}", f.m())));
    }
    let acts = matvec(&f.u, x, f.phi)?;
    let units = topk_select(&acts, k)?.sorted_indices();
    let mut out = vec![0.0; f.d()];
    f.accumulate(x, units, &mut out);
    Ok(out)
}

// ── Group sparse ─────────────────────────────────────────────────────────────

/// Approximate group activations `Φ[j] = Σ_{t<g} |phi(approx score of unit jg+t)|`.
pub fn group_proxy(f: &GroupedFFN, x: &[f32], a: &ApproxScorer) -> Result<Vec<f32>> {
    f.check_input(x)?;
    f.check_scorer(a)?;
    let scores = a.approx_scores(x, f.phi)?;
    Ok(scores
        .chunks(f.g)
        .map(|group| group.iter().map(|s| s.abs()).sum())
        .collect())
}

/// Exact proxy `Σ_{t<g} |phi(⟨u_{jg+t}, x⟩)|` of one group.
fn exact_group_mass(f: &GroupedFFN, x: &[f32], group: usize) -> f32 {
    (group * f.g..(group + 1) * f.g)
        .map(|j| f.activation(j, x).abs())
        .sum()
}

fn check_quotas(f: &GroupedFFN, k: usize, k_prime: usize) -> Result<()> {
    let g = f.g;
    for (what, value) in [("k", k), ("k_prime", k_prime)] {
        if value % g != 0 {
            return Err(HireError::Divisibility {
                what,
                value,
                name: "g",
                divisor: g,
            });
        }
    }
    if k == 0 || k > k_prime || k_prime > f.m() {
        return Err(HireError::InvalidParameter(format!(
            "need 1 <= k <= k_prime <= m, got k = {k}, k_prime = {k_prime}, m = {}",
            f.m()
        )));
    }
    Ok(())
}

/// Candidate groups `S'_g` from the approximate proxy, then the final groups
/// `S̃_g` ranked by exact proxy among the candidates.
pub fn select_groups(f: &GroupedFFN, x: &[f32], a: &ApproxScorer, k: usize, k_prime: usize) -> Result<GroupIndexSet> {
    check_quotas(f, k, k_prime)?;
    let proxy = group_proxy(f, x, a)?;
    let candidates = topk_select(&proxy, k_prime / f.g)?.sorted_indices();
    rank_candidate_groups(f, x, &candidates, k / f.g)
}

/// Top `n_final` of `candidates` by exact group proxy.
pub(crate) fn rank_candidate_groups(
    f: &GroupedFFN,
    x: &[f32],
    candidates: &[usize],
    n_final: usize,
) -> Result<GroupIndexSet> {
    let items: Vec<ScoredIndex> = candidates
        .iter()
        .map(|&index| ScoredIndex {
            index,
            value: exact_group_mass(f, x, index),
        })
        .collect();
    let chosen = select_best(items, n_final).into_iter().map(|e| e.index).collect();
    GroupIndexSet::new(chosen, f.n_groups())
}

/// FFN output restricted to the units of `groups`, with exact weights.
pub fn ffn_restricted(f: &GroupedFFN, x: &[f32], groups: &GroupIndexSet) -> Result<Vec<f32>> {
    f.check_input(x)?;
    if let Some(&bad) = groups.ids().iter().find(|&&id| id >= f.n_groups()) {
        return Err(HireError::InvalidParameter(format!(
            "group id {bad} out of range 0..{}",
            f.n_groups()
        )));
    }
    let mut out = vec![0.0; f.d()];
    f.accumulate(x, groups.units(f.g), &mut out);
    Ok(out)
}

pub fn ffn_group_sparse(
    f: &GroupedFFN,
    x: &[f32],
    a: &ApproxScorer,
    k: usize,
    k_prime: usize,
) -> Result<(Vec<f32>, GroupIndexSet)> {
    let groups = select_groups(f, x, a, k, k_prime)?;
    let out = ffn_restricted(f, x, &groups)?;
    Ok((out, groups))
}

// ── Common path ──────────────────────────────────────────────────────────────

/// A dense block of `m1` units evaluated for every input, plus a group-sparse
/// block of `m2` units.
#[derive(Debug, Clone, PartialEq)]
pub struct CommonPathFFN {
    dense: Option<GroupedFFN>,
    sparse: GroupedFFN,
}

impl CommonPathFFN {
    pub fn new(dense: Option<GroupedFFN>, sparse: GroupedFFN) -> Result<Self> {
        if let Some(dp) = &dense {
            check_dim("common-path model dimension", sparse.d(), dp.d())?;
        }
        Ok(Self { dense, sparse })
    }

    pub fn dense_part(&self) -> Option<&GroupedFFN> {
        self.dense.as_ref()
    }

    pub fn sparse_part(&self) -> &GroupedFFN {
        &self.sparse
    }

    pub fn m1(&self) -> usize {
        self.dense.as_ref().map_or(0, GroupedFFN::m)
    }

    pub fn m2(&self) -> usize {
        self.sparse.m()
    }
}

/// Dense common path plus the group-sparse term; `a` approximates the sparse
/// block's first layer.
pub fn ffn_common_path(c: &CommonPathFFN, x: &[f32], a: &ApproxScorer, k: usize, k_prime: usize) -> Result<Vec<f32>> {
    let (mut out, _) = ffn_group_sparse(&c.sparse, x, a, k, k_prime)?;
    if let Some(dense) = &c.dense {
        let common = ffn_dense(dense, x)?;
        for (o, d) in out.iter_mut().zip(common) {
            *o += d;
        }
    }
    Ok(out)
}

// ── Dynamic overlap ──────────────────────────────────────────────────────────

/// `S̃_g(x_u)` for every sample.
pub fn per_sample_groups(
    f: &GroupedFFN,
    xs: &[Vec<f32>],
    a: &ApproxScorer,
    k: usize,
    k_prime: usize,
) -> Result<Vec<GroupIndexSet>> {
    if xs.is_empty() {
        return Err(HireError::Empty("sample inputs"));
    }
    xs.par_iter().map(|x| select_groups(f, x, a, k, k_prime)).collect()
}

/// Union of the per-sample final group selections.
pub fn union_group_select(
    f: &GroupedFFN,
    xs: &[Vec<f32>],
    a: &ApproxScorer,
    k: usize,
    k_prime: usize,
) -> Result<GroupIndexSet> {
    Ok(GroupIndexSet::union(&per_sample_groups(f, xs, a, k, k_prime)?))
}

/// Every sample's output computed over the shared union of selected groups.
pub fn ffn_union_outputs(
    f: &GroupedFFN,
    xs: &[Vec<f32>],
    a: &ApproxScorer,
    k: usize,
    k_prime: usize,
) -> Result<(Vec<Vec<f32>>, GroupIndexSet)> {
    let union = union_group_select(f, xs, a, k, k_prime)?;
    let outs = xs
        .iter()
        .map(|x| ffn_restricted(f, x, &union))
        .collect::<Result<Vec<_>>>()?;
    Ok((outs, union))
}
