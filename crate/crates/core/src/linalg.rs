//! Dense kernels, activations and the exact top-k primitive.
//!
//! Everything in this crate treats [`exact_topk`] as ground truth. Two rules
//! make that possible:
//!
//! - every inner product goes through [`dot`], which sums in ascending row
//!   order, so a restricted recomputation of column `j` is bit-identical to
//!   the full [`matvec`] entry;
//! - selection uses a strict total order (value descending, then index
//!   ascending), so the selected set is a function of the scores alone.

use std::cmp::Ordering;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{HireError, Result};

// ── Matrix ───────────────────────────────────────────────────────────────────

/// Dense `rows × cols` matrix of `f32`, stored column-major.
///
/// Columns are the scored objects (output classes, hidden units); rows are
/// the model dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl ScoreMatrix {
    /// Build from column-major data. Rejects empty shapes and non-finite entries.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(HireError::InvalidShape(format!(
                "matrix must be at least 1x1, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(HireError::DimensionMismatch {
                context: "matrix payload",
                expected: rows * cols,
                found: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(HireError::NonFinite { index });
        }
        Ok(Self { rows, cols, data })
    }

    /// Build from a list of equal-length columns.
    pub fn from_columns(columns: &[Vec<f32>]) -> Result<Self> {
        let rows = columns.first().map_or(0, Vec::len);
        if let Some(bad) = columns.iter().find(|c| c.len() != rows) {
            return Err(HireError::DimensionMismatch {
                context: "column length",
                expected: rows,
                found: bad.len(),
            });
        }
        let data = columns.iter().flatten().copied().collect();
        Self::from_col_major(rows, columns.len(), data)
    }

    /// Build from a row-major closure `f(row, col)`.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Self::from_col_major(rows, cols, data)
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::from_col_major(rows, cols, vec![0.0; rows * cols])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[col * self.rows + row]
    }

    #[inline]
    pub fn column(&self, j: usize) -> &[f32] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    /// Contiguous block of columns `start..end` as one slice.
    pub fn column_block(&self, start: usize, end: usize) -> &[f32] {
        &self.data[start * self.rows..end * self.rows]
    }

    pub fn as_col_major(&self) -> &[f32] {
        &self.data
    }

    /// Copy of columns `start..end`.
    pub fn slice_columns(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.cols {
            return Err(HireError::InvalidShape(format!(
                "column range {start}..{end} out of 0..{}",
                self.cols
            )));
        }
        Ok(Self {
            rows: self.rows,
            cols: end - start,
            data: self.column_block(start, end).to_vec(),
        })
    }

    /// Copy of rows `start..end` (every column truncated).
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.rows {
            return Err(HireError::InvalidShape(format!(
                "row range {start}..{end} out of 0..{}",
                self.rows
            )));
        }
        let data = (0..self.cols)
            .flat_map(|j| self.column(j)[start..end].iter().copied())
            .collect();
        Ok(Self {
            rows: end - start,
            cols: self.cols,
            data,
        })
    }

    /// Horizontal concatenation `[a | b]`.
    pub fn hconcat(a: &Self, b: &Self) -> Result<Self> {
        if a.rows != b.rows {
            return Err(HireError::DimensionMismatch {
                context: "hconcat rows",
                expected: a.rows,
                found: b.rows,
            });
        }
        let mut data = a.data.clone();
        data.extend_from_slice(&b.data);
        Ok(Self {
            rows: a.rows,
            cols: a.cols + b.cols,
            data,
        })
    }

    pub fn transpose(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for i in 0..self.rows {
            for j in 0..self.cols {
                data.push(self.get(i, j));
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }
}

// ── Vector ───────────────────────────────────────────────────────────────────

/// Finite `f32` vector. Dereferences to `[f32]`, which is what the kernels take.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DenseVector(Vec<f32>);

impl DenseVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(HireError::NonFinite { index });
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

impl Deref for DenseVector {
    type Target = [f32];

    fn deref(&self) -> &[f32] {
        &self.0
    }
}

// ── Activation ───────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActivationKind {
    #[default]
    Identity,
    #[serde(rename = "relu")]
    ReLU,
    #[serde(rename = "squared-relu")]
    SquaredReLU,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 3] = [Self::Identity, Self::ReLU, Self::SquaredReLU];

    #[inline]
    pub fn apply(self, z: f32) -> f32 {
        match self {
            ActivationKind::Identity => z,
            // Written as a branch so that -0.0 maps to +0.0.
            ActivationKind::ReLU => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            ActivationKind::SquaredReLU => {
                if z > 0.0 {
                    z * z
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Identity => "identity",
            ActivationKind::ReLU => "relu",
            ActivationKind::SquaredReLU => "squared-relu",
        }
    }
}

// ── Kernels ──────────────────────────────────────────────────────────────────

/// Inner product summed in ascending index order.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(HireError::DimensionMismatch {
            context,
            expected,
            found,
        });
    }
    Ok(())
}

/// `phi(Zᵀx)`, one entry per column of `z`.
pub fn matvec(z: &ScoreMatrix, x: &[f32], phi: ActivationKind) -> Result<Vec<f32>> {
    check_dim("matvec input (rows of Z)", z.rows(), x.len())?;
    Ok((0..z.cols()).map(|j| phi.apply(dot(z.column(j), x))).collect())
}

/// Activated exact score of a single column.
#[inline]
pub fn column_score(z: &ScoreMatrix, j: usize, x: &[f32], phi: ActivationKind) -> f32 {
    phi.apply(dot(z.column(j), x))
}

// ── Top-k ────────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredIndex {
    pub index: usize,
    pub value: f32,
}

/// Value descending, then index ascending. Values comparing equal under `==`
/// (including `-0.0 == 0.0`) fall through to the index.
#[inline]
pub fn rank_order(a: &ScoredIndex, b: &ScoredIndex) -> Ordering {
    if a.value == b.value {
        a.index.cmp(&b.index)
    } else {
        b.value.total_cmp(&a.value)
    }
}

/// Selected `(index, value)` pairs, in [`rank_order`].
#[derive(Debug, Clone, PartialEq)]
pub struct TopKSet {
    pub entries: Vec<ScoredIndex>,
    /// Count that was asked for, before clamping.
    pub k: usize,
    /// True when `k` exceeded the number of candidates and was reduced.
    pub clamped: bool,
}

impl TopKSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.index).collect()
    }

    pub fn sorted_indices(&self) -> Vec<usize> {
        let mut idx = self.indices();
        idx.sort_unstable();
        idx
    }

    /// Entry-wise equality on indices and the raw bits of the values.
    pub fn bitwise_eq(&self, other: &TopKSet) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.index == b.index && a.value.to_bits() == b.value.to_bits())
    }
}

/// Pick the `k` best of `items` in place and return them in rank order.
pub(crate) fn select_best(mut items: Vec<ScoredIndex>, k: usize) -> Vec<ScoredIndex> {
    let k = k.min(items.len());
    if k == 0 {
        return Vec::new();
    }
    if k < items.len() {
        items.select_nth_unstable_by(k - 1, rank_order);
        items.truncate(k);
    }
    items.sort_unstable_by(rank_order);
    items
}

/// Top-k of a precomputed score vector. `k` larger than the vector clamps.
pub fn topk_select(scores: &[f32], k: usize) -> Result<TopKSet> {
    if k == 0 {
        return Err(HireError::InvalidParameter("k must be at least 1".into()));
    }
    if scores.is_empty() {
        return Err(HireError::Empty("score vector"));
    }
    let items = scores
        .iter()
        .enumerate()
        .map(|(index, &value)| ScoredIndex { index, value })
        .collect();
    Ok(TopKSet {
        entries: select_best(items, k),
        k,
        clamped: k > scores.len(),
    })
}

/// The baseline: full `phi(Zᵀx)` followed by top-k.
pub fn exact_topk(z: &ScoreMatrix, x: &[f32], k: usize, phi: ActivationKind) -> Result<TopKSet> {
    let scores = matvec(z, x, phi)?;
    topk_select(&scores, k)
}
