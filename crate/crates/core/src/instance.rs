//! Seeded synthetic instances.
//!
//! All draws come from one [`SplitMix64`] stream seeded with the instance
//! seed, in this order:
//!
//! - `Flat`: `d·l` standard normals for `Z` in column-major order, then `d`
//!   normals for `x`.
//! - `Decaying`: with `n = min(d, l)`, `n` columns of `d` normals (left basis),
//!   then `n` columns of `l` normals (right basis), then `d` normals for `x`.
//!   Both bases are orthonormalized by modified Gram-Schmidt in f64 and
//!   `Z = Σ_i σ_i u_i v_iᵀ` with `σ_i = c / i`, where `c` is chosen so that
//!   `‖Z‖_F² = d·l` (the expected value for the flat instance).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::io;
use crate::linalg::{DenseVector, ScoreMatrix};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Spectrum {
    #[default]
    Flat,
    Decaying,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub z: ScoreMatrix,
    pub x: DenseVector,
}

pub fn gaussian_matrix(rows: usize, cols: usize, rng: &mut SplitMix64) -> Result<ScoreMatrix> {
    let data = (0..rows * cols).map(|_| rng.gaussian_f32()).collect();
    ScoreMatrix::from_col_major(rows, cols, data)
}

pub fn gaussian_vector(dim: usize, rng: &mut SplitMix64) -> Vec<f32> {
    (0..dim).map(|_| rng.gaussian_f32()).collect()
}

fn orthonormal_columns(rows: usize, count: usize, rng: &mut SplitMix64) -> Vec<Vec<f64>> {
    let mut cols: Vec<Vec<f64>> = (0..count)
        .map(|_| (0..rows).map(|_| rng.gaussian()).collect())
        .collect();
    for i in 0..count {
        for j in 0..i {
            let (head, tail) = cols.split_at_mut(i);
            let p: f64 = tail[0].iter().zip(&head[j]).map(|(a, b)| a * b).sum();
            tail[0].iter_mut().zip(&head[j]).for_each(|(a, b)| *a -= p * b);
        }
        let norm = cols[i].iter().map(|v| v * v).sum::<f64>().sqrt();
        cols[i].iter_mut().for_each(|v| *v /= norm);
    }
    cols
}

pub fn gen_instance(d: usize, l: usize, seed: u64, spectrum: Spectrum) -> Result<Instance> {
    let mut rng = SplitMix64::new(seed);
    let z = match spectrum {
        Spectrum::Flat => gaussian_matrix(d, l, &mut rng)?,
        Spectrum::Decaying => decaying_matrix(d, l, &mut rng)?,
    };
    let x = DenseVector::new(gaussian_vector(d, &mut rng))?;
    Ok(Instance { z, x })
}

fn decaying_matrix(d: usize, l: usize, rng: &mut SplitMix64) -> Result<ScoreMatrix> {
    let n = d.min(l);
    let left = orthonormal_columns(d, n, rng);
    let right = orthonormal_columns(l, n, rng);
    let harmonic: f64 = (1..=n).map(|i| 1.0 / (i * i) as f64).sum();
    let c = ((d * l) as f64 / harmonic).sqrt();
    let mut data = vec![0.0f64; d * l];
    for t in 0..n {
        let sigma = c / (t + 1) as f64;
        for (j, &vj) in right[t].iter().enumerate() {
            let w = sigma * vj;
            let col = &mut data[j * d..(j + 1) * d];
            for (entry, &ui) in col.iter_mut().zip(&left[t]) {
                *entry += ui * w;
            }
        }
    }
    ScoreMatrix::from_col_major(d, l, data.into_iter().map(|v| v as f32).collect())
}

/// Write `Z` as HIRM and `x` as HIRV.
pub fn write_instance(inst: &Instance, matrix_path: impl AsRef<Path>, vector_path: impl AsRef<Path>) -> Result<()> {
    io::save(matrix_path, |w| io::write_matrix(w, &inst.z))?;
    io::save(vector_path, |w| io::write_vector(w, &inst.x))
}
