//! Tensor-Train matrices.
//!
//! An `M x N` matrix with `M = m_1 ... m_d` and `N = n_1 ... n_d` is stored as
//! `d` cores. Core `k` has shape `(m_k, n_k, r_{k-1}, r_k)` in row-major order,
//! so `G_k[i, j]` is a contiguous `r_{k-1} x r_k` block. Element `(p, q)` is the
//! product of the slices selected by the multi-indices of `p` and `q`.
//!
//! ## Binary container
//!
//! ```text
//! "TTM1"                                  4 bytes
//! d                                       u64
//! m_1 .. m_d                              u64 each
//! n_1 .. n_d                              u64 each
//! r_0 .. r_d                              u64 each
//! bias flag (0 or 1)                      u64
//! core_1 .. core_d (row-major)            f64 each
//! bias (M entries, only if flag = 1)      f64 each
//! ```
//!
//! All integers and floats are little-endian.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor_core::{linear_to_multi, ModeDims};

pub const TT_MAGIC: &[u8; 4] = b"TTM1";

/// Default bound on the number of entries [`TtMatrix::to_dense`] will materialize.
pub const DENSE_CAP: usize = 1 << 24;

/// The seedable generator used everywhere randomness is needed (ChaCha with 8 rounds).
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Shape of a TT matrix: row modes, column modes and the rank chain.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TtSpec {
    row_modes: ModeDims,
    col_modes: ModeDims,
    ranks: Vec<usize>,
}

impl TtSpec {
    pub fn new(row_modes: ModeDims, col_modes: ModeDims, ranks: Vec<usize>) -> Result<Self> {
        let d = row_modes.len();
        if col_modes.len() != d {
            return Err(Error::Shape(format!(
                "{d} row modes but {} column modes",
                col_modes.len()
            )));
        }
        if ranks.len() != d + 1 {
            return Err(Error::Shape(format!(
                "expected {} ranks for d = {d}, got {}",
                d + 1,
                ranks.len()
            )));
        }
        if ranks[0] != 1 || ranks[d] != 1 {
            return Err(Error::Shape(format!("boundary ranks must be 1, got {ranks:?}")));
        }
        if ranks.contains(&0) {
            return Err(Error::Shape(format!("ranks must be positive, got {ranks:?}")));
        }
        Ok(TtSpec {
            row_modes,
            col_modes,
            ranks,
        })
    }

    /// Convenience constructor from plain slices.
    pub fn from_slices(rows: &[usize], cols: &[usize], ranks: &[usize]) -> Result<Self> {
        Self::new(
            ModeDims::new(rows.to_vec())?,
            ModeDims::new(cols.to_vec())?,
            ranks.to_vec(),
        )
    }

    /// Interior ranks all equal to `rank`.
    pub fn uniform(rows: &[usize], cols: &[usize], rank: usize) -> Result<Self> {
        let mut ranks = vec![rank; rows.len() + 1];
        ranks[0] = 1;
        ranks[rows.len()] = 1;
        Self::from_slices(rows, cols, &ranks)
    }

    pub fn d(&self) -> usize {
        self.row_modes.len()
    }

    pub fn row_modes(&self) -> &ModeDims {
        &self.row_modes
    }

    pub fn col_modes(&self) -> &ModeDims {
        &self.col_modes
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    pub fn max_rank(&self) -> usize {
        self.ranks.iter().copied().max().unwrap_or(1)
    }

    /// `M`, the number of rows.
    pub fn rows(&self) -> usize {
        self.row_modes.total()
    }

    /// `N`, the number of columns.
    pub fn cols(&self) -> usize {
        self.col_modes.total()
    }

    pub fn core_shape(&self, k: usize) -> (usize, usize, usize, usize) {
        (
            self.row_modes.as_slice()[k],
            self.col_modes.as_slice()[k],
            self.ranks[k],
            self.ranks[k + 1],
        )
    }

    pub fn param_count(&self, include_bias: bool) -> usize {
        tt_param_count(self, include_bias)
    }
}

/// `sum_k m_k n_k r_{k-1} r_k`, plus `M` for the bias.
pub fn tt_param_count(spec: &TtSpec, include_bias: bool) -> usize {
    let cores: usize = (0..spec.d())
        .map(|k| {
            let (m, n, rl, rr) = spec.core_shape(k);
            m * n * rl * rr
        })
        .sum();
    if include_bias {
        cores + spec.rows()
    } else {
        cores
    }
}

/// Standard deviation of the Glorot-style normal init for one core.
pub fn glorot_sigma(m: usize, n: usize, rank_left: usize, rank_right: usize) -> f64 {
    (2.0 / ((n * rank_right) as f64 + (m * rank_left) as f64)).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TtMatrix {
    spec: TtSpec,
    cores: Vec<Array4<f64>>,
    bias: Option<Array1<f64>>,
}

impl TtMatrix {
    pub fn new(spec: TtSpec, cores: Vec<Array4<f64>>, bias: Option<Array1<f64>>) -> Result<Self> {
        if cores.len() != spec.d() {
            return Err(Error::Shape(format!(
                "spec has d = {} but {} cores were given",
                spec.d(),
                cores.len()
            )));
        }
        for (k, core) in cores.iter().enumerate() {
            if core.dim() != spec.core_shape(k) {
                return Err(Error::Shape(format!(
                    "core {} has shape {:?}, expected {:?}",
                    k + 1,
                    core.dim(),
                    spec.core_shape(k)
                )));
            }
            if !core.is_standard_layout() {
                return Err(Error::Shape(format!("core {} is not row-major", k + 1)));
            }
        }
        if let Some(b) = &bias {
            if b.len() != spec.rows() {
                return Err(Error::Shape(format!(
                    "bias has length {}, expected {}",
                    b.len(),
                    spec.rows()
                )));
            }
        }
        Ok(TtMatrix { spec, cores, bias })
    }

    /// All cores zero, no bias.
    pub fn zeros(spec: TtSpec) -> Self {
        let cores = (0..spec.d()).map(|k| Array4::zeros(spec.core_shape(k))).collect();
        TtMatrix {
            spec,
            cores,
            bias: None,
        }
    }

    pub fn spec(&self) -> &TtSpec {
        &self.spec
    }

    pub fn cores(&self) -> &[Array4<f64>] {
        &self.cores
    }

    pub fn cores_mut(&mut self) -> &mut [Array4<f64>] {
        &mut self.cores
    }

    pub fn bias(&self) -> Option<&Array1<f64>> {
        self.bias.as_ref()
    }

    pub fn bias_mut(&mut self) -> Option<&mut Array1<f64>> {
        self.bias.as_mut()
    }

    pub fn with_bias(mut self, bias: Option<Array1<f64>>) -> Result<Self> {
        if let Some(b) = &bias {
            if b.len() != self.spec.rows() {
                return Err(Error::Shape(format!(
                    "bias has length {}, expected {}",
                    b.len(),
                    self.spec.rows()
                )));
            }
        }
        self.bias = bias;
        Ok(self)
    }

    pub fn rows(&self) -> usize {
        self.spec.rows()
    }

    pub fn cols(&self) -> usize {
        self.spec.cols()
    }

    /// Element `(p, q)` of the represented matrix, 1-based. Bias is not included.
    pub fn element(&self, p: usize, q: usize) -> Result<f64> {
        let i = linear_to_multi(p, self.spec.row_modes())?;
        let j = linear_to_multi(q, self.spec.col_modes())?;
        let i0: Vec<usize> = i.as_slice().iter().map(|v| v - 1).collect();
        let j0: Vec<usize> = j.as_slice().iter().map(|v| v - 1).collect();
        Ok(self.element_zero(&i0, &j0))
    }

    /// Row-vector times slice chain, starting from the 1x1 identity.
    fn element_zero(&self, i: &[usize], j: &[usize]) -> f64 {
        let mut acc = vec![1.0];
        for (k, core) in self.cores.iter().enumerate() {
            let (_, _, rl, rr) = self.spec.core_shape(k);
            let mut next = vec![0.0; rr];
            for (a, &left) in acc.iter().enumerate().take(rl) {
                for (b, slot) in next.iter_mut().enumerate() {
                    *slot += left * core[[i[k], j[k], a, b]];
                }
            }
            acc = next;
        }
        acc[0]
    }

    /// Materializes the `M x N` weight matrix (bias excluded).
    pub fn to_dense(&self) -> Result<Array2<f64>> {
        self.to_dense_capped(DENSE_CAP)
    }

    pub fn to_dense_capped(&self, cap: usize) -> Result<Array2<f64>> {
        let (rows, cols) = (self.rows(), self.cols());
        let requested = rows as u128 * cols as u128;
        if requested > cap as u128 {
            return Err(Error::Size { requested, cap });
        }
        let rm = self.spec.row_modes().as_slice();
        let cm = self.spec.col_modes().as_slice();
        let mut out = Array2::zeros((rows, cols));
        for p in 0..rows {
            let i = crate::tensor_core::linear_to_multi_zero(p, rm);
            for q in 0..cols {
                let j = crate::tensor_core::linear_to_multi_zero(q, cm);
                out[[p, q]] = self.element_zero(&i, &j);
            }
        }
        Ok(out)
    }

    /// Serializes into the `TTM1` container.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(TT_MAGIC)?;
        let d = self.spec.d();
        write_u64(w, d as u64)?;
        for &m in self.spec.row_modes().as_slice() {
            write_u64(w, m as u64)?;
        }
        for &n in self.spec.col_modes().as_slice() {
            write_u64(w, n as u64)?;
        }
        for &r in self.spec.ranks() {
            write_u64(w, r as u64)?;
        }
        write_u64(w, self.bias.is_some() as u64)?;
        for core in &self.cores {
            for &v in core.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        if let Some(b) = &self.bias {
            for &v in b.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic, "TTM1 magic")?;
        if &magic != TT_MAGIC {
            return Err(Error::format("TTM1 magic", format!("found {magic:?}")));
        }
        let d = read_u64(r, "d")? as usize;
        if d == 0 || d > 64 {
            return Err(Error::format("d", format!("implausible core count {d}")));
        }
        let mut read_list = |len: usize, what: &str| -> Result<Vec<usize>> {
            (0..len).map(|_| read_u64(r, what).map(|v| v as usize)).collect()
        };
        let rows = read_list(d, "row modes")?;
        let cols = read_list(d, "column modes")?;
        let ranks = read_list(d + 1, "ranks")?;
        let spec = TtSpec::from_slices(&rows, &cols, &ranks)?;
        let has_bias = match read_u64(r, "bias flag")? {
            0 => false,
            1 => true,
            other => return Err(Error::format("bias flag", format!("expected 0 or 1, got {other}"))),
        };
        let mut cores = Vec::with_capacity(d);
        for k in 0..d {
            let shape = spec.core_shape(k);
            let len = shape.0 * shape.1 * shape.2 * shape.3;
            let data = read_f64s(r, len, &format!("core {}", k + 1))?;
            cores.push(Array4::from_shape_vec(shape, data).expect("length checked"));
        }
        let bias = if has_bias {
            Some(Array1::from(read_f64s(r, spec.rows(), "bias")?))
        } else {
            None
        };
        TtMatrix::new(spec, cores, bias)
    }
}

/// Draws every core from `N(0, sigma_k^2)` with the Glorot-style sigma; bias is zero.
pub fn glorot_init(spec: &TtSpec, seed: u64) -> TtMatrix {
    let mut rng = seeded_rng(seed);
    glorot_init_with(spec, &mut rng)
}

pub fn glorot_init_with<R: rand::Rng>(spec: &TtSpec, rng: &mut R) -> TtMatrix {
    let cores = (0..spec.d())
        .map(|k| {
            let (m, n, rl, rr) = spec.core_shape(k);
            let normal = Normal::new(0.0, glorot_sigma(m, n, rl, rr)).expect("finite sigma");
            Array4::from_shape_simple_fn((m, n, rl, rr), || normal.sample(rng))
        })
        .collect();
    TtMatrix {
        spec: spec.clone(),
        cores,
        bias: Some(Array1::zeros(spec.rows())),
    }
}

pub(crate) fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::format(what, "truncated input"),
        _ => Error::Io(e),
    })
}

pub(crate) fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64> {
    let mut buf = [0u8; 8];
    read_exact(r, &mut buf, what)?;
    Ok(u64::from_le_bytes(buf))
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, len: usize, what: &str) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; len.checked_mul(8).ok_or_else(|| Error::format(what, "length overflow"))?];
    read_exact(r, &mut bytes, what)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}
