//! Seeded synthetic instances, the binary instance container and CSV ingestion.
//!
//! # Generation
//!
//! `A` has i.i.d. standard normal entries, a support of size `s` is drawn
//! uniformly without replacement, the planted signal `x_orig` has standard
//! normal values on the support, and `b = A x_orig + 0.01 n` with `n`
//! standard normal. The random stream is xoshiro256++ seeded through
//! splitmix64 and is consumed in this order:
//!
//! 1. `A`, column-major (an all-zero column is redrawn immediately),
//! 2. the support, as the first `s` swaps of a Fisher-Yates shuffle of
//!    `0..n` with multiply-shift range reduction,
//! 3. `x_orig` values, in support draw order,
//! 4. the noise `n`.
//!
//! Normals come from the polar Box-Muller method; the second variate of each
//! accepted pair is cached and used by the next draw, across phases.
//!
//! # Container
//!
//! One JSON header line, then little-endian `f64` payloads (`A` column-major,
//! `b`, optional `x_orig`, optional noise), then a CRC32 of everything before
//! it as a little-endian `u32`.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_MAGIC: &str = "BDC1";
pub const FORMAT_VERSION: u64 = 1;

/// Scale of the additive measurement noise.
pub const NOISE_LEVEL: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub x_orig: Option<DVector<f64>>,
    /// Unscaled noise vector `n` (so `b = A x_orig + 0.01 n`).
    pub noise: Option<DVector<f64>>,
    pub s: usize,
    pub seed: u64,
}

impl ProblemInstance {
    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn cols(&self) -> usize {
        self.a.ncols()
    }

    /// `||x - x_orig|| / (1 + ||x_orig||)`, when the planted signal is known.
    pub fn recovery_error(&self, x: &DVector<f64>) -> Option<f64> {
        self.x_orig.as_ref().map(|xo| (x - xo).norm() / (1.0 + xo.norm()))
    }
}

/// Standard normal sampler over xoshiro256++.
pub struct NormalStream {
    rng: Xoshiro256PlusPlus,
    spare: Option<f64>,
}

impl NormalStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: Xoshiro256PlusPlus::seed_from_u64(seed),
            spare: None,
        }
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Integer in `0..range` via `(x * range) >> 64`.
    pub fn below(&mut self, range: usize) -> usize {
        ((self.rng.next_u64() as u128 * range as u128) >> 64) as usize
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        loop {
            let u = 2.0 * self.uniform() - 1.0;
            let v = 2.0 * self.uniform() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let f = (-2.0 * s.ln() / s).sqrt();
                self.spare = Some(v * f);
                return u * f;
            }
        }
    }
}

/// Deterministic synthetic instance for `(m, n, s, seed)`.
pub fn gen_instance(m: usize, n: usize, s: usize, seed: u64) -> Result<ProblemInstance> {
    if m == 0 || n == 0 || s == 0 || s > n {
        return Err(Error::InvalidParameter(format!(
            "need m >= 1, n >= 1 and 0 < s <= n, got m = {m}, n = {n}, s = {s}"
        )));
    }
    let mut rng = NormalStream::new(seed);
    let mut a = DMatrix::zeros(m, n);
    for j in 0..n {
        loop {
            for i in 0..m {
                a[(i, j)] = rng.normal();
            }
            if a.column(j).iter().any(|&x| x != 0.0) {
                break;
            }
        }
    }
    let mut perm: Vec<usize> = (0..n).collect();
    for i in 0..s {
        let j = i + rng.below(n - i);
        perm.swap(i, j);
    }
    let mut x_orig = DVector::zeros(n);
    for &idx in &perm[..s] {
        // a zero draw would shrink the support; probability ~2^-53
        let mut v = rng.normal();
        while v == 0.0 {
            v = rng.normal();
        }
        x_orig[idx] = v;
    }
    let noise = DVector::from_fn(m, |_, _| rng.normal());
    let b = &a * &x_orig + &noise * NOISE_LEVEL;
    Ok(ProblemInstance {
        a,
        b,
        x_orig: Some(x_orig),
        noise: Some(noise),
        s,
        seed,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    magic: String,
    version: u64,
    m: usize,
    n: usize,
    s: usize,
    seed: u64,
    layout: String,
    dtype: String,
    #[serde(default)]
    has_x_orig: bool,
    #[serde(default)]
    has_noise: bool,
}

fn push_f64s(buf: &mut Vec<u8>, values: &[f64]) {
    buf.reserve(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes `inst` to the container format.
pub fn encode_instance(inst: &ProblemInstance) -> Vec<u8> {
    let header = Header {
        magic: FORMAT_MAGIC.into(),
        version: FORMAT_VERSION,
        m: inst.rows(),
        n: inst.cols(),
        s: inst.s,
        seed: inst.seed,
        layout: "column-major".into(),
        dtype: "f64-le".into(),
        has_x_orig: inst.x_orig.is_some(),
        has_noise: inst.noise.is_some(),
    };
    let mut buf = serde_json::to_vec(&header).expect("header serializes");
    buf.push(b'\n');
    push_f64s(&mut buf, inst.a.as_slice());
    push_f64s(&mut buf, inst.b.as_slice());
    if let Some(x) = &inst.x_orig {
        push_f64s(&mut buf, x.as_slice());
    }
    if let Some(nz) = &inst.noise {
        push_f64s(&mut buf, nz.as_slice());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

/// Parses the container format.
pub fn decode_instance(bytes: &[u8]) -> Result<ProblemInstance> {
    let nl = bytes
        .iter()
        .position(|&c| c == b'\n')
        .ok_or_else(|| Error::Format("missing header line".into()))?;
    let header: Header =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| Error::Format(format!("bad header: {e}")))?;
    if header.magic != FORMAT_MAGIC {
        return Err(Error::Format(format!("bad magic '{}'", header.magic)));
    }
    if header.version != FORMAT_VERSION {
        return Err(Error::Version(header.version));
    }
    if header.layout != "column-major" || header.dtype != "f64-le" {
        return Err(Error::Format(format!(
            "unsupported layout/dtype {}/{}",
            header.layout, header.dtype
        )));
    }
    let (m, n) = (header.m, header.n);
    let count = m
        .checked_mul(n)
        .and_then(|mn| mn.checked_add(m))
        .and_then(|c| c.checked_add(if header.has_x_orig { n } else { 0 }))
        .and_then(|c| c.checked_add(if header.has_noise { m } else { 0 }))
        .ok_or_else(|| Error::Format("dimensions overflow".into()))?;
    let body_start = nl + 1;
    let expected_len = body_start + count * 8 + 4;
    if bytes.len() != expected_len {
        return Err(Error::Checksum);
    }
    let (content, tail) = bytes.split_at(expected_len - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4-byte tail"));
    if crc32fast::hash(content) != stored {
        return Err(Error::Checksum);
    }
    let mut floats = content[body_start..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let mut take = |len: usize| -> Vec<f64> { floats.by_ref().take(len).collect() };
    let a = DMatrix::from_vec(m, n, take(m * n));
    let b = DVector::from_vec(take(m));
    let x_orig = header.has_x_orig.then(|| DVector::from_vec(take(n)));
    let noise = header.has_noise.then(|| DVector::from_vec(take(m)));
    Ok(ProblemInstance {
        a,
        b,
        x_orig,
        noise,
        s: header.s,
        seed: header.seed,
    })
}

pub fn save_instance(inst: &ProblemInstance, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_instance(inst))?;
    f.sync_all()?;
    Ok(())
}

pub fn load_instance(path: impl AsRef<Path>) -> Result<ProblemInstance> {
    decode_instance(&fs::read(path)?)
}

fn read_csv_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let file = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Csv {
            file: file.clone(),
            row: 0,
            col: 0,
            msg: e.to_string(),
        })?;
    let mut rows = Vec::new();
    let mut width = None;
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| Error::Csv {
            file: file.clone(),
            row,
            col: 0,
            msg: e.to_string(),
        })?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if let Some(w) = width {
            if record.len() != w {
                return Err(Error::Csv {
                    file,
                    row,
                    col: record.len().min(w) + 1,
                    msg: format!("expected {w} fields, found {}", record.len()),
                });
            }
        } else {
            width = Some(record.len());
        }
        let values = record
            .iter()
            .enumerate()
            .map(|(c, field)| {
                field.parse::<f64>().map_err(|e| Error::Csv {
                    file: file.clone(),
                    row,
                    col: c + 1,
                    msg: format!("'{field}': {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(values);
    }
    Ok(rows)
}

/// Reads `A` (one matrix row per line) and `b` (one value per line, or a
/// single line) from comma-separated files.
pub fn load_csv_matrix(path_a: impl AsRef<Path>, path_b: impl AsRef<Path>) -> Result<ProblemInstance> {
    let rows = read_csv_rows(path_a.as_ref())?;
    let m = rows.len();
    if m == 0 {
        return Err(Error::Csv {
            file: path_a.as_ref().display().to_string(),
            row: 0,
            col: 0,
            msg: "empty matrix".into(),
        });
    }
    let n = rows[0].len();
    let a = DMatrix::from_fn(m, n, |i, j| rows[i][j]);
    let b_vals: Vec<f64> = read_csv_rows(path_b.as_ref())?.into_iter().flatten().collect();
    if b_vals.len() != m {
        return Err(Error::Csv {
            file: path_b.as_ref().display().to_string(),
            row: 0,
            col: 0,
            msg: format!("expected {m} values, found {}", b_vals.len()),
        });
    }
    Ok(ProblemInstance {
        a,
        b: DVector::from_vec(b_vals),
        x_orig: None,
        noise: None,
        s: 0,
        seed: 0,
    })
}
