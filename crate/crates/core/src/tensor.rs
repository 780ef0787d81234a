//! Dense multi-way tensors with row-major (last axis fastest) storage.
//!
//! Folding a vector or matrix into a tensor never moves data: with row-major
//! linearization on both sides, the mixed-radix digits of a matrix row index
//! over `(m1..md)` followed by the digits of the column index over
//! `(n1..nd)` give exactly the tensor's linear offset.

use crate::error::{Error, Result};
use crate::gemm::{gemm, Trans};

#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if let Some(axis) = shape.iter().position(|&n| n == 0) {
            return Err(Error::size(format!("axis {axis} has length 0 in {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::size(format!(
                "shape {shape:?} holds {len} entries, got {}",
                data.len()
            )));
        }
        probe::record(data.len());
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let len = shape.iter().product();
        Self::new(shape.to_vec(), vec![0.0; len])
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: Vec::new(), data: vec![value] }
    }

    /// Folds a flat vector into `shape`; the row-major linearization of the
    /// result is the input.
    pub fn fold(vector: &[f64], shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), vector.to_vec())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.data.clone()
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn strides(&self) -> Vec<usize> {
        row_major_strides(&self.shape)
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &n)| {
                assert!(i < n, "index {i} out of bounds for axis of length {n}");
                acc * n + i
            })
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let at = self.offset(index);
        self.data[at] = value;
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data)
    }

    pub fn scale(&self, alpha: f64) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|x| alpha * x).collect() }
    }

    /// Reorders axes so that axis `k` of the result is axis `perm[k]` of `self`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let nd = self.ndim();
        if perm.len() != nd {
            return Err(Error::size(format!("permutation {perm:?} for {nd}-way tensor")));
        }
        let mut seen = vec![false; nd];
        for &p in perm {
            if p >= nd {
                return Err(Error::Axis { axis: p, ndim: nd });
            }
            if std::mem::replace(&mut seen[p], true) {
                return Err(Error::size(format!("repeated axis {p} in permutation")));
            }
        }
        if perm.iter().enumerate().all(|(k, &p)| k == p) {
            return Ok(self.clone());
        }
        let src_strides = self.strides();
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let walk: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
        let mut out = Vec::with_capacity(self.len());
        let mut idx = vec![0usize; nd];
        let mut src = 0usize;
        for _ in 0..self.len() {
            out.push(self.data[src]);
            for ax in (0..nd).rev() {
                idx[ax] += 1;
                src += walk[ax];
                if idx[ax] < out_shape[ax] {
                    break;
                }
                src -= walk[ax] * out_shape[ax];
                idx[ax] = 0;
            }
        }
        Self::new(out_shape, out)
    }

    /// Sums products over the paired axes. The result's axes are the unpaired
    /// axes of `a` followed by the unpaired axes of `b`, each in original order.
    /// An empty pair list gives the outer product.
    pub fn contract(a: &Self, b: &Self, pairs: &[(usize, usize)]) -> Result<Self> {
        let (na, nb) = (a.ndim(), b.ndim());
        let mut used_a = vec![false; na];
        let mut used_b = vec![false; nb];
        for &(i, j) in pairs {
            if i >= na {
                return Err(Error::Axis { axis: i, ndim: na });
            }
            if j >= nb {
                return Err(Error::Axis { axis: j, ndim: nb });
            }
            if std::mem::replace(&mut used_a[i], true) || std::mem::replace(&mut used_b[j], true) {
                return Err(Error::size(format!("duplicate axis in contraction pairs {pairs:?}")));
            }
            if a.shape[i] != b.shape[j] {
                return Err(Error::size(format!(
                    "paired axes ({i},{j}) have lengths {} and {}",
                    a.shape[i], b.shape[j]
                )));
            }
        }
        let free_a: Vec<usize> = (0..na).filter(|&i| !used_a[i]).collect();
        let free_b: Vec<usize> = (0..nb).filter(|&j| !used_b[j]).collect();
        let perm_a: Vec<usize> = free_a.iter().copied().chain(pairs.iter().map(|p| p.0)).collect();
        let perm_b: Vec<usize> = pairs.iter().map(|p| p.1).chain(free_b.iter().copied()).collect();

        let rows: usize = free_a.iter().map(|&i| a.shape[i]).product();
        let cols: usize = free_b.iter().map(|&j| b.shape[j]).product();
        let inner: usize = pairs.iter().map(|p| a.shape[p.0]).product();

        let ap = a.permute(&perm_a)?;
        let bp = b.permute(&perm_b)?;
        let mut out = vec![0.0; rows * cols];
        gemm(rows, cols, inner, 1.0, ap.data(), Trans::No, bp.data(), Trans::No, 0.0, &mut out);

        let shape = free_a
            .iter()
            .map(|&i| a.shape[i])
            .chain(free_b.iter().map(|&j| b.shape[j]))
            .collect();
        Self::new(shape, out)
    }

    /// Folds an `M×N` row-major matrix into the `2d`-way tensor
    /// `(m1..md, n1..nd)`.
    pub fn fold_matrix(matrix: &[f64], row_factors: &[usize], col_factors: &[usize]) -> Result<Self> {
        let shape: Vec<usize> = row_factors.iter().chain(col_factors).copied().collect();
        Self::fold(matrix, &shape)
    }

    /// Inverse of [`DenseTensor::fold_matrix`]: the first `d` axes become the
    /// row index, the last `d` the column index. Returns a `[M, N]` tensor.
    pub fn unfold_matrix(&self, d: usize) -> Result<Self> {
        if self.ndim() != 2 * d || d == 0 {
            return Err(Error::size(format!(
                "unfold with d={d} needs a {}-way tensor, got shape {:?}",
                2 * d,
                self.shape
            )));
        }
        let rows: usize = self.shape[..d].iter().product();
        let cols: usize = self.shape[d..].iter().product();
        Self::new(vec![rows, cols], self.data.clone())
    }
}

pub fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for k in (0..shape.len().saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * shape[k + 1];
    }
    strides
}

/// Mixed-radix digits of `index` over `radices`, most significant first.
pub fn unravel(mut index: usize, radices: &[usize]) -> Vec<usize> {
    let mut digits = vec![0; radices.len()];
    for k in (0..radices.len()).rev() {
        digits[k] = index % radices[k];
        index /= radices[k];
    }
    digits
}

/// Scratch buffers for the batched kernels.
///
/// Tracks the largest buffer handed out on the current thread, so tests can
/// assert that a computation never materializes an array above some size.
/// Large buffers given back through [`recycle`] are reused by later calls,
/// which saves faulting in fresh pages on every training step.
pub mod probe {
    use std::cell::{Cell, RefCell};

    /// Buffers below this many elements go straight to the allocator.
    const POOLED_MIN: usize = 1 << 15;
    const POOL_BYTES: usize = 1 << 30;

    thread_local! {
        static PEAK: Cell<usize> = const { Cell::new(0) };
        static POOL: RefCell<Vec<Vec<f64>>> = const { RefCell::new(Vec::new()) };
    }

    pub fn reset() {
        PEAK.with(|p| p.set(0));
    }

    pub fn peak() -> usize {
        PEAK.with(|p| p.get())
    }

    pub(crate) fn record(len: usize) {
        PEAK.with(|p| {
            if len > p.get() {
                p.set(len)
            }
        });
    }

    /// Zeroed scratch buffer, registered with the probe.
    pub(crate) fn buffer(len: usize) -> Vec<f64> {
        record(len);
        if len >= POOLED_MIN {
            let reused = POOL.with(|pool| {
                let mut pool = pool.borrow_mut();
                let best = (0..pool.len())
                    .filter(|&i| (len..=2 * len).contains(&pool[i].capacity()))
                    .min_by_key(|&i| pool[i].capacity())?;
                Some(pool.swap_remove(best))
            });
            if let Some(mut v) = reused {
                v.clear();
                v.resize(len, 0.0);
                return v;
            }
        }
        vec![0.0; len]
    }

    /// Hands a buffer back for reuse; small buffers are simply dropped, as
    /// is anything past the pool's size limit.
    pub(crate) fn recycle(v: Vec<f64>) {
        if v.capacity() < POOLED_MIN {
            return;
        }
        POOL.with(|pool| {
            let mut pool = pool.borrow_mut();
            let held: usize = pool.iter().map(|b| b.capacity() * 8).sum();
            if held + v.capacity() * 8 <= POOL_BYTES {
                pool.push(v);
            }
        });
    }
}
