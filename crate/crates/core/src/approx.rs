//! Cheap stand-ins for a score matrix: low-rank factors, int4 codes, both
//! combined, or an exact copy.

use crate::error::{HireError, Result};
use crate::linalg::{check_dim, dot, matvec, ActivationKind, ScoreMatrix};
use crate::rng::SplitMix64;

pub use crate::svd::{fit_low_rank_svd, fit_low_rank_svd_with, SvdOptions};

// ── Int4 ─────────────────────────────────────────────────────────────────────

pub const INT4_MAX: i8 = 7;

/// Symmetric per-column int4 codes in `-7..=7`; entry `(i, j)` dequantizes to
/// `code[i, j] · scale[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedMatrix {
    rows: usize,
    cols: usize,
    codes: Vec<i8>,
    scales: Vec<f32>,
}

impl QuantizedMatrix {
    pub fn from_parts(rows: usize, cols: usize, codes: Vec<i8>, scales: Vec<f32>) -> Result<Self> {
        check_dim("quantized codes", rows * cols, codes.len())?;
        check_dim("quantized scales", cols, scales.len())?;
        if rows == 0 || cols == 0 {
            return Err(HireError::InvalidShape("quantized matrix must be non-empty".into()));
        }
        if codes.iter().any(|c| c.abs() > INT4_MAX) {
            return Err(HireError::Format("int4 code outside -7..=7".into()));
        }
        if scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(HireError::Format("quantization scale must be positive and finite".into()));
        }
        Ok(Self {
            rows,
            cols,
            codes,
            scales,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn codes(&self) -> &[i8] {
        &self.codes
    }

    pub fn column_codes(&self, j: usize) -> &[i8] {
        &self.codes[j * self.rows..(j + 1) * self.rows]
    }

    pub fn scales(&self) -> &[f32] {
        &self.scales
    }

    #[inline]
    pub fn dequantized(&self, i: usize, j: usize) -> f32 {
        self.codes[j * self.rows + i] as f32 * self.scales[j]
    }

    pub fn dequantize(&self) -> ScoreMatrix {
        let data = self
            .codes
            .chunks(self.rows)
            .zip(&self.scales)
            .flat_map(|(col, &s)| col.iter().map(move |&c| c as f32 * s))
            .collect();
        ScoreMatrix::from_col_major(self.rows, self.cols, data).expect("dequantized values are finite")
    }

    pub fn slice_columns(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.cols {
            return Err(HireError::InvalidShape(format!(
                "column range {start}..{end} out of 0..{}",
                self.cols
            )));
        }
        Self::from_parts(
            self.rows,
            end - start,
            self.codes[start * self.rows..end * self.rows].to_vec(),
            self.scales[start..end].to_vec(),
        )
    }

    /// Dequantized column `j` dotted with `x`, in ascending row order.
    #[inline]
    fn dequantized_dot(&self, j: usize, x: &[f32]) -> f32 {
        let s = self.scales[j];
        let mut acc = 0.0f32;
        for (&c, &xi) in self.column_codes(j).iter().zip(x) {
            acc += (c as f32 * s) * xi;
        }
        acc
    }

    /// Integer-domain dot with the column scale applied once at the end.
    #[inline]
    fn scaled_dot(&self, j: usize, x: &[f32]) -> f32 {
        let mut acc = 0.0f32;
        for (&c, &xi) in self.column_codes(j).iter().zip(x) {
            acc += c as f32 * xi;
        }
        acc * self.scales[j]
    }
}

/// Per-column symmetric int4: `scale = max|col| / 7` (1 for an all-zero
/// column), codes rounded half away from zero.
pub fn quantize_int4(z: &ScoreMatrix) -> QuantizedMatrix {
    let mut codes = Vec::with_capacity(z.rows() * z.cols());
    let mut scales = Vec::with_capacity(z.cols());
    for j in 0..z.cols() {
        let col = z.column(j);
        let max_abs = col.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        let scale = if max_abs == 0.0 { 1.0 } else { max_abs / INT4_MAX as f32 };
        let scale64 = scale as f64;
        for &v in col {
            let q = (v as f64 / scale64).round().clamp(-(INT4_MAX as f64), INT4_MAX as f64);
            codes.push(q as i8);
        }
        scales.push(scale);
    }
    QuantizedMatrix {
        rows: z.rows(),
        cols: z.cols(),
        codes,
        scales,
    }
}

// ── Low rank ─────────────────────────────────────────────────────────────────

/// `Z ≈ Z1 Z2ᵀ` with `Z1: d × r` and `Z2: l × r`.
///
/// `Z2` is held transposed (`r × l`) so that each output's coefficients are
/// one contiguous column.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankApprox {
    z1: ScoreMatrix,
    z2t: ScoreMatrix,
}

impl LowRankApprox {
    /// `z1` is `d × r`, `z2t` is `r × l`.
    pub fn new(z1: ScoreMatrix, z2t: ScoreMatrix) -> Result<Self> {
        check_dim("low-rank inner dimension", z1.cols(), z2t.rows())?;
        let r = z1.cols();
        if r > z1.rows().min(z2t.cols()) {
            return Err(HireError::InvalidShape(format!(
                "rank {r} exceeds min(d, l) = {}",
                z1.rows().min(z2t.cols())
            )));
        }
        Ok(Self { z1, z2t })
    }

    /// From `Z1 (d × r)` and `Z2 (l × r)` as stored on disk.
    pub fn from_factors(z1: ScoreMatrix, z2: &ScoreMatrix) -> Result<Self> {
        Self::new(z1, z2.transpose())
    }

    pub fn rank(&self) -> usize {
        self.z1.cols()
    }

    pub fn rows(&self) -> usize {
        self.z1.rows()
    }

    pub fn cols(&self) -> usize {
        self.z2t.cols()
    }

    pub fn z1(&self) -> &ScoreMatrix {
        &self.z1
    }

    pub fn z2t(&self) -> &ScoreMatrix {
        &self.z2t
    }

    /// `Z2` in its `l × r` orientation.
    pub fn z2(&self) -> ScoreMatrix {
        self.z2t.transpose()
    }

    fn slice_columns(&self, start: usize, end: usize) -> Result<Self> {
        Ok(Self {
            z1: self.z1.clone(),
            z2t: self.z2t.slice_columns(start, end)?,
        })
    }
}

/// Low-rank factors with each factor int4-quantized: `Z1` per column (one
/// scale per rank component), `Z2ᵀ` per column (one scale per output).
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLowRank {
    z1: QuantizedMatrix,
    z2t: QuantizedMatrix,
}

impl QuantizedLowRank {
    pub fn from_low_rank(lr: &LowRankApprox) -> Self {
        Self {
            z1: quantize_int4(lr.z1()),
            z2t: quantize_int4(lr.z2t()),
        }
    }

    pub fn rank(&self) -> usize {
        self.z1.cols()
    }

    pub fn z1(&self) -> &QuantizedMatrix {
        &self.z1
    }

    pub fn z2t(&self) -> &QuantizedMatrix {
        &self.z2t
    }

    /// Plain low-rank factors built from the dequantized codes.
    pub fn dequantize(&self) -> LowRankApprox {
        LowRankApprox {
            z1: self.z1.dequantize(),
            z2t: self.z2t.dequantize(),
        }
    }
}

/// Random projection baseline: `Z1 = G`, `Z2 = ZᵀG`, where `G` is a `d × r`
/// Gaussian sketch orthonormalized by modified Gram-Schmidt.
pub fn random_low_rank(z: &ScoreMatrix, r: usize, seed: u64) -> Result<LowRankApprox> {
    let (d, l) = (z.rows(), z.cols());
    if r == 0 || r > d.min(l) {
        return Err(HireError::InvalidParameter(format!(
            "rank {r} outside 1..={}",
            d.min(l)
        )));
    }
    let mut rng = SplitMix64::new(seed);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(r);
    while basis.len() < r {
        let mut g: Vec<f64> = (0..d).map(|_| rng.gaussian()).collect();
        for b in &basis {
            let p: f64 = g.iter().zip(b).map(|(x, y)| x * y).sum();
            g.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        // A draw that is numerically inside the current span is redrawn.
        if norm > 1e-6 {
            g.iter_mut().for_each(|v| *v /= norm);
            basis.push(g);
        }
    }
    let z1 = ScoreMatrix::from_col_major(
        d,
        r,
        basis.iter().flatten().map(|&v| v as f32).collect(),
    )?;
    let mut z2t = Vec::with_capacity(r * l);
    for j in 0..l {
        let col = z.column(j);
        for b in &basis {
            let p: f64 = col.iter().zip(b).map(|(&x, y)| x as f64 * y).sum();
            z2t.push(p as f32);
        }
    }
    LowRankApprox::new(z1, ScoreMatrix::from_col_major(r, l, z2t)?)
}

// ── Scorer ───────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScorerKind {
    ExactCopy,
    LowRank,
    Quantized,
    LowRankQuantized,
}

impl ScorerKind {
    pub fn name(self) -> &'static str {
        match self {
            ScorerKind::ExactCopy => "exact",
            ScorerKind::LowRank => "low-rank",
            ScorerKind::Quantized => "quantized",
            ScorerKind::LowRankQuantized => "low-rank-quantized",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ApproxScorer {
    ExactCopy(ScoreMatrix),
    LowRank(LowRankApprox),
    Quantized(QuantizedMatrix),
    LowRankQuantized(QuantizedLowRank),
}

impl ApproxScorer {
    pub fn kind(&self) -> ScorerKind {
        match self {
            ApproxScorer::ExactCopy(_) => ScorerKind::ExactCopy,
            ApproxScorer::LowRank(_) => ScorerKind::LowRank,
            ApproxScorer::Quantized(_) => ScorerKind::Quantized,
            ApproxScorer::LowRankQuantized(_) => ScorerKind::LowRankQuantized,
        }
    }

    /// Input dimension `d`.
    pub fn rows(&self) -> usize {
        match self {
            ApproxScorer::ExactCopy(z) => z.rows(),
            ApproxScorer::LowRank(lr) => lr.rows(),
            ApproxScorer::Quantized(q) => q.rows(),
            ApproxScorer::LowRankQuantized(lq) => lq.z1.rows(),
        }
    }

    /// Number of scored columns `l`.
    pub fn cols(&self) -> usize {
        match self {
            ApproxScorer::ExactCopy(z) => z.cols(),
            ApproxScorer::LowRank(lr) => lr.cols(),
            ApproxScorer::Quantized(q) => q.cols(),
            ApproxScorer::LowRankQuantized(lq) => lq.z2t.cols(),
        }
    }

    /// `phi(Z_approxᵀ x)`.
    ///
    /// Low-rank variants evaluate `Z1ᵀx` first and then `Z2 · (Z1ᵀx)`, so the
    /// cost is `O(r(d + l))`; the `d × l` product is never formed.
    pub fn approx_scores(&self, x: &[f32], phi: ActivationKind) -> Result<Vec<f32>> {
        check_dim("approx scorer input", self.rows(), x.len())?;
        Ok(match self {
            ApproxScorer::ExactCopy(z) => matvec(z, x, phi)?,
            ApproxScorer::LowRank(lr) => {
                let proj: Vec<f32> = (0..lr.rank()).map(|t| dot(lr.z1.column(t), x)).collect();
                (0..lr.cols())
                    .map(|j| phi.apply(dot(lr.z2t.column(j), &proj)))
                    .collect()
            }
            ApproxScorer::Quantized(q) => (0..q.cols).map(|j| phi.apply(q.scaled_dot(j, x))).collect(),
            ApproxScorer::LowRankQuantized(lq) => {
                let proj: Vec<f32> = (0..lq.rank()).map(|t| lq.z1.dequantized_dot(t, x)).collect();
                (0..lq.z2t.cols())
                    .map(|j| phi.apply(lq.z2t.dequantized_dot(j, &proj)))
                    .collect()
            }
        })
    }

    /// The scorer restricted to columns `start..end`, for sharding.
    pub fn slice_columns(&self, start: usize, end: usize) -> Result<Self> {
        Ok(match self {
            ApproxScorer::ExactCopy(z) => ApproxScorer::ExactCopy(z.slice_columns(start, end)?),
            ApproxScorer::LowRank(lr) => ApproxScorer::LowRank(lr.slice_columns(start, end)?),
            ApproxScorer::Quantized(q) => ApproxScorer::Quantized(q.slice_columns(start, end)?),
            ApproxScorer::LowRankQuantized(lq) => ApproxScorer::LowRankQuantized(QuantizedLowRank {
                z1: lq.z1.clone(),
                z2t: lq.z2t.slice_columns(start, end)?,
            }),
        })
    }
}

// ── bf16 ─────────────────────────────────────────────────────────────────────

/// Round every entry to the nearest bf16 value (ties to even) and widen back.
pub fn round_bf16(v: &[f32]) -> Vec<f32> {
    v.iter().map(|&x| half::bf16::from_f32(x).to_f32()).collect()
}
