//! Little-endian binary formats.
//!
//! | magic  | layout                                                              |
//! |--------|---------------------------------------------------------------------|
//! | `HIRM` | u32 rows, u32 cols, rows·cols f32 column-major                      |
//! | `HIRV` | u32 dim, dim f32                                                    |
//! | `HIRQ` | u32 d, u32 l, l f32 scales, ⌈d·l/2⌉ bytes of int4 codes             |
//! | `HIRL` | u32 d, u32 l, u32 r, Z1 (d×r) payload, Z2 (l×r) payload            |
//! | `HIRF` | u32 d, u32 m, u32 g, u32 m1, U (d×m) payload, V (d×m) payload      |
//!
//! Int4 codes are two's-complement nibbles, column-major, two per byte with
//! the low nibble first; an odd trailing nibble is padded with zero.
//!
//! A common-path bundle is two `HIRF` records back to back: the dense part
//! (`m = m1`, `g = 1`, no payload when `m1 = 0`) followed by the sparse part
//! (carrying the same `m1`).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::approx::{LowRankApprox, QuantizedMatrix};
use crate::error::{HireError, Result};
use crate::ffn::{CommonPathFFN, GroupedFFN};
use crate::linalg::{ActivationKind, DenseVector, ScoreMatrix};

pub const MATRIX_MAGIC: &[u8; 4] = b"HIRM";
pub const VECTOR_MAGIC: &[u8; 4] = b"HIRV";
pub const QUANTIZED_MAGIC: &[u8; 4] = b"HIRQ";
pub const LOW_RANK_MAGIC: &[u8; 4] = b"HIRL";
pub const FFN_MAGIC: &[u8; 4] = b"HIRF";

// ── Primitives ───────────────────────────────────────────────────────────────

fn write_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| HireError::Format(format!("dimension {v} exceeds u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn write_f32s(w: &mut impl Write, values: &[f32]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_f32s(r: &mut impl Read, n: usize) -> Result<Vec<f32>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn expect_magic(r: &mut impl Read, magic: &[u8; 4]) -> Result<()> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    if &b != magic {
        return Err(HireError::Format(format!(
            "expected magic {:?}, found {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(&b)
        )));
    }
    Ok(())
}

fn read_payload(r: &mut impl Read, rows: usize, cols: usize) -> Result<ScoreMatrix> {
    let data = read_f32s(r, rows * cols)?;
    ScoreMatrix::from_col_major(rows, cols, data)
}

// ── Matrix / vector ──────────────────────────────────────────────────────────

pub fn write_matrix(w: &mut impl Write, z: &ScoreMatrix) -> Result<()> {
    w.write_all(MATRIX_MAGIC)?;
    write_u32(w, z.rows())?;
    write_u32(w, z.cols())?;
    write_f32s(w, z.as_col_major())
}

pub fn read_matrix(r: &mut impl Read) -> Result<ScoreMatrix> {
    expect_magic(r, MATRIX_MAGIC)?;
    let rows = read_u32(r)?;
    let cols = read_u32(r)?;
    read_payload(r, rows, cols)
}

pub fn write_vector(w: &mut impl Write, v: &[f32]) -> Result<()> {
    w.write_all(VECTOR_MAGIC)?;
    write_u32(w, v.len())?;
    write_f32s(w, v)
}

pub fn read_vector(r: &mut impl Read) -> Result<DenseVector> {
    expect_magic(r, VECTOR_MAGIC)?;
    let dim = read_u32(r)?;
    DenseVector::new(read_f32s(r, dim)?)
}

// ── Quantized / low rank ─────────────────────────────────────────────────────

pub fn pack_int4(codes: &[i8]) -> Vec<u8> {
    codes
        .chunks(2)
        .map(|pair| {
            let lo = (pair[0] as u8) & 0x0F;
            let hi = pair.get(1).map_or(0, |&c| (c as u8) & 0x0F);
            lo | (hi << 4)
        })
        .collect()
}

pub fn unpack_int4(bytes: &[u8], n: usize) -> Vec<i8> {
    let sign_extend = |nibble: u8| ((nibble << 4) as i8) >> 4;
    bytes
        .iter()
        .flat_map(|&b| [sign_extend(b & 0x0F), sign_extend(b >> 4)])
        .take(n)
        .collect()
}

pub fn write_quantized(w: &mut impl Write, q: &QuantizedMatrix) -> Result<()> {
    w.write_all(QUANTIZED_MAGIC)?;
    write_u32(w, q.rows())?;
    write_u32(w, q.cols())?;
    write_f32s(w, q.scales())?;
    w.write_all(&pack_int4(q.codes()))?;
    Ok(())
}

pub fn read_quantized(r: &mut impl Read) -> Result<QuantizedMatrix> {
    expect_magic(r, QUANTIZED_MAGIC)?;
    let d = read_u32(r)?;
    let l = read_u32(r)?;
    let scales = read_f32s(r, l)?;
    let mut packed = vec![0u8; (d * l).div_ceil(2)];
    r.read_exact(&mut packed)?;
    QuantizedMatrix::from_parts(d, l, unpack_int4(&packed, d * l), scales)
}

pub fn write_low_rank(w: &mut impl Write, lr: &LowRankApprox) -> Result<()> {
    w.write_all(LOW_RANK_MAGIC)?;
    write_u32(w, lr.rows())?;
    write_u32(w, lr.cols())?;
    write_u32(w, lr.rank())?;
    write_f32s(w, lr.z1().as_col_major())?;
    write_f32s(w, lr.z2().as_col_major())
}

pub fn read_low_rank(r: &mut impl Read) -> Result<LowRankApprox> {
    expect_magic(r, LOW_RANK_MAGIC)?;
    let d = read_u32(r)?;
    let l = read_u32(r)?;
    let rank = read_u32(r)?;
    let z1 = read_payload(r, d, rank)?;
    let z2 = read_payload(r, l, rank)?;
    LowRankApprox::from_factors(z1, &z2)
}

// ── FFN ──────────────────────────────────────────────────────────────────────

fn write_ffn_record(w: &mut impl Write, d: usize, f: Option<&GroupedFFN>, g: usize, m1: usize) -> Result<()> {
    w.write_all(FFN_MAGIC)?;
    write_u32(w, d)?;
    write_u32(w, f.map_or(0, GroupedFFN::m))?;
    write_u32(w, g)?;
    write_u32(w, m1)?;
    if let Some(f) = f {
        write_f32s(w, f.u().as_col_major())?;
        write_f32s(w, f.v().as_col_major())?;
    }
    Ok(())
}

/// Returns the layer (absent when `m = 0`), `d` and `m1`.
fn read_ffn_record(r: &mut impl Read, phi: ActivationKind) -> Result<(Option<GroupedFFN>, usize, usize)> {
    expect_magic(r, FFN_MAGIC)?;
    let d = read_u32(r)?;
    let m = read_u32(r)?;
    let g = read_u32(r)?;
    let m1 = read_u32(r)?;
    if m == 0 {
        return Ok((None, d, m1));
    }
    let u = read_payload(r, d, m)?;
    let v = read_payload(r, d, m)?;
    Ok((Some(GroupedFFN::new(u, v, g, phi)?), d, m1))
}

pub fn write_ffn(w: &mut impl Write, f: &GroupedFFN) -> Result<()> {
    write_ffn_record(w, f.d(), Some(f), f.g(), 0)
}

pub fn read_ffn(r: &mut impl Read, phi: ActivationKind) -> Result<GroupedFFN> {
    match read_ffn_record(r, phi)? {
        (Some(f), _, _) => Ok(f),
        (None, ..) => Err(HireError::Format("FFN record has no hidden units".into())),
    }
}

pub fn write_common_path(w: &mut impl Write, c: &CommonPathFFN) -> Result<()> {
    let sparse = c.sparse_part();
    write_ffn_record(w, sparse.d(), c.dense_part(), 1, c.m1())?;
    write_ffn_record(w, sparse.d(), Some(sparse), sparse.g(), c.m1())
}

pub fn read_common_path(r: &mut impl Read, phi: ActivationKind) -> Result<CommonPathFFN> {
    let (dense, _, m1) = read_ffn_record(r, phi)?;
    let (sparse, _, m1_again) = read_ffn_record(r, phi)?;
    if m1 != m1_again || dense.as_ref().map_or(0, GroupedFFN::m) != m1 {
        return Err(HireError::Format("common-path records disagree on m1".into()));
    }
    let sparse = sparse.ok_or_else(|| HireError::Format("common-path sparse part is empty".into()))?;
    CommonPathFFN::new(dense, sparse)
}

// ── Paths ────────────────────────────────────────────────────────────────────

pub fn save<P: AsRef<Path>>(path: P, write: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load<P: AsRef<Path>, T>(path: P, read: impl FnOnce(&mut BufReader<File>) -> Result<T>) -> Result<T> {
    let mut r = BufReader::new(File::open(path)?);
    read(&mut r)
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<ScoreMatrix> {
    load(path, read_matrix)
}

pub fn load_vector(path: impl AsRef<Path>) -> Result<DenseVector> {
    load(path, read_vector)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::{fit_low_rank_svd, quantize_int4};
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    fn random(rows: usize, cols: usize, seed: u64) -> ScoreMatrix {
        let mut rng = SplitMix64::new(seed);
        ScoreMatrix::from_fn(rows, cols, |_, _| rng.gaussian_f32()).unwrap()
    }

    #[test]
    fn matrix_layout_is_bit_exact() {
        let z = ScoreMatrix::from_col_major(2, 1, vec![1.0, -2.0]).unwrap();
        let mut buf = Vec::new();
        write_matrix(&mut buf, &z).unwrap();
        let mut want = b"HIRM".to_vec();
        want.extend_from_slice(&[2, 0, 0, 0, 1, 0, 0, 0]);
        want.extend_from_slice(&1.0f32.to_le_bytes());
        want.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(buf, want);
        assert_eq!(read_matrix(&mut buf.as_slice()).unwrap(), z);
    }

    #[test]
    fn vector_round_trip_and_bad_magic() {
        let mut buf = Vec::new();
        write_vector(&mut buf, &[0.5, 1.5, -3.0]).unwrap();
        assert_eq!(&buf[..4], b"HIRV");
        assert_eq!(&*read_vector(&mut buf.as_slice()).unwrap(), &[0.5, 1.5, -3.0]);
        assert!(matches!(read_matrix(&mut buf.as_slice()), Err(HireError::Format(_))));
    }

    #[test]
    fn truncated_payload_is_io_error() {
        let mut buf = Vec::new();
        write_matrix(&mut buf, &random(3, 3, 1)).unwrap();
        buf.truncate(buf.len() - 2);
        assert!(matches!(read_matrix(&mut buf.as_slice()), Err(HireError::Io(_))));
    }

    #[test]
    fn nibble_packing_low_first() {
        assert_eq!(pack_int4(&[1, -1, 7]), vec![0xF1, 0x07]);
        assert_eq!(unpack_int4(&[0xF1, 0x07], 3), vec![1, -1, 7]);
    }

    #[test]
    fn quantized_and_low_rank_round_trip() {
        let z = random(5, 7, 2);
        let q = quantize_int4(&z);
        let mut buf = Vec::new();
        write_quantized(&mut buf, &q).unwrap();
        assert_eq!(buf.len(), 4 + 8 + 7 * 4 + 18);
        assert_eq!(read_quantized(&mut buf.as_slice()).unwrap(), q);

        let lr = fit_low_rank_svd(&z, 3).unwrap();
        let mut buf = Vec::new();
        write_low_rank(&mut buf, &lr).unwrap();
        assert_eq!(read_low_rank(&mut buf.as_slice()).unwrap(), lr);
    }

    #[test]
    fn ffn_bundles_round_trip() {
        let f = GroupedFFN::new(random(4, 16, 3), random(4, 16, 4), 8, ActivationKind::ReLU).unwrap();
        let mut buf = Vec::new();
        write_ffn(&mut buf, &f).unwrap();
        assert_eq!(read_ffn(&mut buf.as_slice(), ActivationKind::ReLU).unwrap(), f);

        for dense in [None, Some(GroupedFFN::new(random(4, 3, 5), random(4, 3, 6), 1, ActivationKind::ReLU).unwrap())] {
            let c = CommonPathFFN::new(dense, f.clone()).unwrap();
            let mut buf = Vec::new();
            write_common_path(&mut buf, &c).unwrap();
            assert_eq!(read_common_path(&mut buf.as_slice(), ActivationKind::ReLU).unwrap(), c);
        }
    }

    proptest! {
        #[test]
        fn int4_pack_round_trip(codes in prop::collection::vec(-7i8..=7, 0..40)) {
            let packed = pack_int4(&codes);
            prop_assert_eq!(packed.len(), codes.len().div_ceil(2));
            prop_assert_eq!(unpack_int4(&packed, codes.len()), codes);
        }

        #[test]
        fn matrix_round_trip(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
            let z = random(rows, cols, seed);
            let mut buf = Vec::new();
            write_matrix(&mut buf, &z).unwrap();
            prop_assert_eq!(read_matrix(&mut buf.as_slice()).unwrap(), z);
        }
    }
}
