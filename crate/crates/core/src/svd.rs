//! Truncated SVD through the Gram matrix of the smaller side.
//!
//! The Gram matrix (`ZZᵀ` when `d ≤ l`, else `ZᵀZ`) is accumulated in f64 and
//! diagonalized with cyclic Jacobi rotations. The rotations are accumulated
//! into an orthogonal basis, so the rank-`min(d, l)` reconstruction is exact up
//! to f32 storage of the factors no matter how far the sweeps got.

use crate::approx::LowRankApprox;
use crate::error::{HireError, Result};
use crate::linalg::ScoreMatrix;

#[derive(Debug, Clone, Copy)]
pub struct SvdOptions {
    pub max_sweeps: usize,
    /// Converged once the off-diagonal Frobenius norm of the rotated Gram
    /// matrix falls below `tolerance · ‖G‖_F`. Eigenvalue drift per further
    /// sweep is then O(tolerance²), far below the singular-value change bound.
    pub tolerance: f64,
}

impl Default for SvdOptions {
    fn default() -> Self {
        Self {
            max_sweeps: 1000,
            tolerance: 1e-9,
        }
    }
}

/// Eigen-decomposition of a symmetric `n × n` matrix (row-major or column-major,
/// it is symmetric). Returns eigenvalues in descending order and the matching
/// eigenvectors as columns of a column-major `n × n` array.
pub fn symmetric_eigen(mut a: Vec<f64>, n: usize, opts: SvdOptions) -> Result<(Vec<f64>, Vec<f64>)> {
    assert_eq!(a.len(), n * n);
    let mut v = vec![0.0f64; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let total: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let off = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for p in 0..n {
            for q in 0..n {
                if p != q {
                    s += a[p * n + q] * a[p * n + q];
                }
            }
        }
        s.sqrt()
    };

    let mut residual = off(&a);
    let mut sweeps = 0;
    while residual > opts.tolerance * total && total > 0.0 {
        if sweeps == opts.max_sweeps {
            return Err(HireError::NonConvergence { sweeps, residual });
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                // v is column-major: column p is v[p*n..], rotate columns p and q.
                for k in 0..n {
                    let vkp = v[p * n + k];
                    let vkq = v[q * n + k];
                    v[p * n + k] = c * vkp - s * vkq;
                    v[q * n + k] = s * vkp + c * vkq;
                }
            }
        }
        sweeps += 1;
        residual = off(&a);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let vectors = order
        .iter()
        .flat_map(|&i| v[i * n..(i + 1) * n].iter().copied())
        .collect();
    Ok((values, vectors))
}

/// Rank-`r` truncated SVD of `z` packaged as `Z1 = U_r Σ_r`, `Z2 = V_r`.
pub fn fit_low_rank_svd(z: &ScoreMatrix, r: usize) -> Result<LowRankApprox> {
    fit_low_rank_svd_with(z, r, SvdOptions::default())
}

pub fn fit_low_rank_svd_with(z: &ScoreMatrix, r: usize, opts: SvdOptions) -> Result<LowRankApprox> {
    let (d, l) = (z.rows(), z.cols());
    if r == 0 || r > d.min(l) {
        return Err(HireError::InvalidParameter(format!(
            "rank {r} outside 1..={}",
            d.min(l)
        )));
    }
    let col = |j: usize| z.column(j).iter().map(|&v| v as f64).collect::<Vec<_>>();
    let cols: Vec<Vec<f64>> = (0..l).map(col).collect();

    let mut z1 = vec![0.0f32; d * r];
    let mut z2t = vec![0.0f32; r * l];

    if d <= l {
        // G = Z Zᵀ, eigenvectors are left singular vectors.
        let mut g = vec![0.0f64; d * d];
        for c in &cols {
            for p in 0..d {
                let cp = c[p];
                if cp == 0.0 {
                    continue;
                }
                for q in 0..d {
                    g[p * d + q] += cp * c[q];
                }
            }
        }
        let (vals, vecs) = symmetric_eigen(g, d, opts)?;
        for t in 0..r {
            let u = &vecs[t * d..(t + 1) * d];
            let sigma = vals[t].max(0.0).sqrt();
            // Zero singular values keep the basis vector so Z1 Z2ᵀ = U_r U_rᵀ Z still holds.
            let (scale_u, inv_sigma) = if sigma > 0.0 { (sigma, 1.0 / sigma) } else { (1.0, 1.0) };
            for i in 0..d {
                z1[t * d + i] = (u[i] * scale_u) as f32;
            }
            for (j, c) in cols.iter().enumerate() {
                let proj: f64 = c.iter().zip(u).map(|(a, b)| a * b).sum();
                z2t[j * r + t] = (proj * inv_sigma) as f32;
            }
        }
    } else {
        // G = ZᵀZ, eigenvectors are right singular vectors.
        let mut g = vec![0.0f64; l * l];
        for p in 0..l {
            for q in p..l {
                let s: f64 = cols[p].iter().zip(&cols[q]).map(|(a, b)| a * b).sum();
                g[p * l + q] = s;
                g[q * l + p] = s;
            }
        }
        let (_, vecs) = symmetric_eigen(g, l, opts)?;
        for t in 0..r {
            let v = &vecs[t * l..(t + 1) * l];
            for i in 0..d {
                let s: f64 = (0..l).map(|j| cols[j][i] * v[j]).sum();
                z1[t * d + i] = s as f32;
            }
            for j in 0..l {
                z2t[j * r + t] = v[j] as f32;
            }
        }
    }

    LowRankApprox::new(
        ScoreMatrix::from_col_major(d, r, z1)?,
        ScoreMatrix::from_col_major(r, l, z2t)?,
    )
}

/// Relative Frobenius error ‖Z − Z1 Z2ᵀ‖_F / ‖Z‖_F, computed in f64.
pub fn relative_residual(z: &ScoreMatrix, lr: &LowRankApprox) -> f64 {
    residual_sq(z, lr).sqrt() / z.frobenius_norm().max(f64::MIN_POSITIVE)
}

/// ‖Z − Z1 Z2ᵀ‖_F², computed in f64.
pub fn residual_sq(z: &ScoreMatrix, lr: &LowRankApprox) -> f64 {
    let (z1, z2t) = (lr.z1(), lr.z2t());
    let r = lr.rank();
    let mut acc = 0.0f64;
    for j in 0..z.cols() {
        let coeffs = z2t.column(j);
        for i in 0..z.rows() {
            let approx: f64 = (0..r).map(|t| z1.get(i, t) as f64 * coeffs[t] as f64).sum();
            let diff = z.get(i, j) as f64 - approx;
            acc += diff * diff;
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn gaussian(d: usize, l: usize, seed: u64) -> ScoreMatrix {
        let mut rng = SplitMix64::new(seed);
        ScoreMatrix::from_fn(d, l, |_, _| rng.gaussian_f32()).unwrap()
    }

    #[test]
    fn jacobi_diagonalizes_small_matrix() {
        // [[2,1],[1,2]] has eigenvalues 3 and 1.
        let (vals, vecs) = symmetric_eigen(vec![2.0, 1.0, 1.0, 2.0], 2, SvdOptions::default()).unwrap();
        assert!((vals[0] - 3.0).abs() < 1e-12 && (vals[1] - 1.0).abs() < 1e-12);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((vecs[0].abs() - h).abs() < 1e-12 && (vecs[1].abs() - h).abs() < 1e-12);
    }

    #[test]
    fn rank_one_is_exact() {
        let a = [1.0f32, -2.0, 0.5, 3.0];
        let b = [0.3f32, 1.0, -1.5, 2.0, 0.25, -0.75];
        let z = ScoreMatrix::from_fn(4, 6, |i, j| a[i] * b[j]).unwrap();
        let lr = fit_low_rank_svd(&z, 1).unwrap();
        assert!(relative_residual(&z, &lr) <= 1e-6);
    }

    #[test]
    fn full_rank_is_exact_both_orientations() {
        for (d, l) in [(8, 32), (32, 8), (5, 5)] {
            let z = gaussian(d, l, 11);
            let lr = fit_low_rank_svd(&z, d.min(l)).unwrap();
            let rel = relative_residual(&z, &lr);
            assert!(rel <= 1e-6, "{d}x{l}: {rel}");
        }
    }

    #[test]
    fn residual_non_increasing_in_rank() {
        let z = gaussian(8, 32, 5);
        let res: Vec<f64> = (1..=8).map(|r| residual_sq(&z, &fit_low_rank_svd(&z, r).unwrap())).collect();
        for w in res.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-9, "{res:?}");
        }
    }

    #[test]
    fn rejects_bad_rank() {
        let z = gaussian(4, 6, 1);
        assert!(fit_low_rank_svd(&z, 0).is_err());
        assert!(fit_low_rank_svd(&z, 5).is_err());
    }

    #[test]
    fn sweep_cap_reports_residual() {
        let z = gaussian(6, 10, 2);
        let opts = SvdOptions {
            max_sweeps: 0,
            tolerance: 1e-9,
        };
        match fit_low_rank_svd_with(&z, 2, opts) {
            Err(HireError::NonConvergence { sweeps: 0, residual }) => assert!(residual > 0.0),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }
}
