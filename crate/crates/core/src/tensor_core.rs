//! Multi-index arithmetic for mode factorizations.
//!
//! A matrix dimension `M = m_1 * ... * m_d` is addressed either by a linear
//! index or by a multi-index `(i_1, .., i_d)`. The bijection between the two is
//! row-major: the last mode varies fastest. Indices are 1-based at this API
//! boundary; the `*_zero` helpers are the 0-based forms used internally.

use std::fmt;

use crate::error::{Error, Result};

/// Mode sizes `(n_1, .., n_d)` of a factorized dimension.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ModeDims(Vec<usize>);

impl ModeDims {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Shape("mode list must contain at least one mode".into()));
        }
        if let Some(k) = dims.iter().position(|&n| n == 0) {
            return Err(Error::Shape(format!("mode {} has size 0", k + 1)));
        }
        dims.iter()
            .try_fold(1u64, |acc, &n| acc.checked_mul(n as u64))
            .ok_or_else(|| Error::Shape(format!("product of modes {dims:?} overflows u64")))?;
        Ok(ModeDims(dims))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Product of all modes.
    pub fn total(&self) -> usize {
        self.0.iter().product()
    }

    pub fn max_mode(&self) -> usize {
        self.0.iter().copied().max().unwrap_or(1)
    }
}

impl fmt::Display for ModeDims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|n| n.to_string()).collect();
        f.write_str(&parts.join("x"))
    }
}

/// A 1-based multi-index `(j_1, .., j_d)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MultiIndex(pub Vec<usize>);

impl MultiIndex {
    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

/// Maps a 1-based linear index to its 1-based multi-index.
pub fn linear_to_multi(p: usize, dims: &ModeDims) -> Result<MultiIndex> {
    let total = dims.total();
    if p == 0 || p > total {
        return Err(Error::Range(format!("linear index {p} outside 1..={total}")));
    }
    let mut idx = linear_to_multi_zero(p - 1, dims.as_slice());
    idx.iter_mut().for_each(|i| *i += 1);
    Ok(MultiIndex(idx))
}

/// Inverse of [`linear_to_multi`].
pub fn multi_to_linear(idx: &MultiIndex, dims: &ModeDims) -> Result<usize> {
    if idx.0.len() != dims.len() {
        return Err(Error::Range(format!(
            "multi-index has {} entries, dims have {}",
            idx.0.len(),
            dims.len()
        )));
    }
    let mut p = 0usize;
    for (k, (&i, &n)) in idx.0.iter().zip(dims.as_slice()).enumerate() {
        if i == 0 || i > n {
            return Err(Error::Range(format!("entry {} = {i} outside 1..={n}", k + 1)));
        }
        p = p * n + (i - 1);
    }
    Ok(p + 1)
}

/// 0-based row-major decomposition.
pub fn linear_to_multi_zero(mut p: usize, dims: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; dims.len()];
    for (slot, &n) in idx.iter_mut().zip(dims).rev() {
        *slot = p % n;
        p /= n;
    }
    idx
}

pub fn multi_to_linear_zero(idx: &[usize], dims: &[usize]) -> usize {
    idx.iter().zip(dims).fold(0, |p, (&i, &n)| p * n + i)
}
