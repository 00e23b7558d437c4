//! Dense third-order tensors, unfoldings, Khatri-Rao products and CPD
//! reconstruction.
//!
//! Storage is a flat vector with element `(i, j, k)` of an `n x m x s`
//! tensor at offset `i + j*n + k*n*m` (zero-based, first index fastest).
//! Unfoldings follow the Kolda-Bader convention: mode-k fibers become
//! columns and the remaining indices are ordered with the lower mode
//! varying fastest.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Unfolding mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    One,
    Two,
    Three,
}

impl TryFrom<usize> for Mode {
    type Error = Error;

    fn try_from(mode: usize) -> Result<Self> {
        match mode {
            1 => Ok(Mode::One),
            2 => Ok(Mode::Two),
            3 => Ok(Mode::Three),
            other => Err(Error::InvalidMode(other)),
        }
    }
}

/// Dense real tensor of order three.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    dims: (usize, usize, usize),
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(n: usize, m: usize, s: usize) -> Self {
        Self {
            dims: (n, m, s),
            data: vec![0.0; n * m * s],
        }
    }

    /// Wraps `data` laid out in the documented index order.
    pub fn from_vec(dims: (usize, usize, usize), data: Vec<f64>) -> Result<Self> {
        let (n, m, s) = dims;
        if n == 0 || m == 0 || s == 0 {
            return Err(Error::Shape(format!(
                "tensor dimensions must be positive, got {n}x{m}x{s}"
            )));
        }
        if data.len() != n * m * s {
            return Err(Error::Shape(format!(
                "expected {} entries for a {n}x{m}x{s} tensor, got {}",
                n * m * s,
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn from_fn(
        n: usize,
        m: usize,
        s: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut t = Self::zeros(n, m, s);
        for k in 0..s {
            for j in 0..m {
                for i in 0..n {
                    t.data[i + j * n + k * n * m] = f(i, j, k);
                }
            }
        }
        t
    }

    /// Stacks equally sized `n x m` matrices as frontal slices.
    pub fn from_slices(slices: &[DMatrix<f64>]) -> Result<Self> {
        let first = slices
            .first()
            .ok_or_else(|| Error::Shape("no frontal slices given".into()))?;
        let (n, m) = first.shape();
        let mut data = Vec::with_capacity(n * m * slices.len());
        for (k, slice) in slices.iter().enumerate() {
            if slice.shape() != (n, m) {
                return Err(Error::Shape(format!(
                    "slice {k} is {:?}, expected {:?}",
                    slice.shape(),
                    (n, m)
                )));
            }
            // nalgebra storage is column-major, which matches i-fastest order.
            data.extend_from_slice(slice.as_slice());
        }
        Self::from_vec((n, m, slices.len()), data)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        let (n, m, _) = self.dims;
        i + j * n + k * n * m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.offset(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, value: f64) {
        let idx = self.offset(i, j, k);
        self.data[idx] = value;
    }

    /// Frontal slice `k` as an `n x m` matrix.
    pub fn frontal_slice(&self, k: usize) -> DMatrix<f64> {
        let (n, m, _) = self.dims;
        let start = k * n * m;
        DMatrix::from_column_slice(n, m, &self.data[start..start + n * m])
    }

    pub fn unfold(&self, mode: Mode) -> DMatrix<f64> {
        let (n, m, s) = self.dims;
        match mode {
            // column j + k*m; a column-major n x (m*s) matrix is exactly our layout
            Mode::One => DMatrix::from_column_slice(n, m * s, &self.data),
            Mode::Two => DMatrix::from_fn(m, n * s, |j, col| {
                let (i, k) = (col % n, col / n);
                self.get(i, j, k)
            }),
            Mode::Three => DMatrix::from_fn(s, n * m, |k, col| {
                let (i, j) = (col % n, col / n);
                self.get(i, j, k)
            }),
        }
    }

    /// Sum of squared entries.
    pub fn frob_norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            dims: self.dims,
            data: self.data.iter().map(|v| alpha * v).collect(),
        }
    }

    /// Squared Frobenius norm of `self - other`.
    pub fn distance_sq(&self, other: &Tensor3) -> Result<f64> {
        if self.dims != other.dims {
            return Err(Error::Shape(format!(
                "tensor dims {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Squared Frobenius norm of a matrix.
pub fn frob_norm_sq(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum()
}

/// Columnwise Kronecker product: column `j` of the result is
/// `kron(x[:, j], y[:, j])`, so row `a*q + b` holds `x[a, j] * y[b, j]`.
pub fn khatri_rao(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.ncols() != y.ncols() {
        return Err(Error::Shape(format!(
            "khatri-rao column mismatch: {} vs {}",
            x.ncols(),
            y.ncols()
        )));
    }
    let q = y.nrows();
    Ok(DMatrix::from_fn(x.nrows() * q, x.ncols(), |row, col| {
        x[(row / q, col)] * y[(row % q, col)]
    }))
}

/// Factor matrices of a rank-`r` CPD `[[A, B, C]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CpdFactors {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
}

impl CpdFactors {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let r = a.ncols();
        if r == 0 || b.ncols() != r || c.ncols() != r {
            return Err(Error::Shape(format!(
                "factor column counts differ or are zero: {}, {}, {}",
                a.ncols(),
                b.ncols(),
                c.ncols()
            )));
        }
        if a.nrows() == 0 || b.nrows() == 0 || c.nrows() == 0 {
            return Err(Error::Shape("factor matrices must have rows".into()));
        }
        Ok(Self { a, b, c })
    }

    pub fn rank(&self) -> usize {
        self.a.ncols()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    /// Frontal slice `k` is `A * diag(C[k, :]) * B^T`.
    pub fn reconstruct(&self) -> Tensor3 {
        let (n, m, s, r) = (self.a.nrows(), self.b.nrows(), self.c.nrows(), self.rank());
        let mut t = Tensor3::zeros(n, m, s);
        let mut scaled = DMatrix::<f64>::zeros(n, r);
        for k in 0..s {
            for l in 0..r {
                let ck = self.c[(k, l)];
                for i in 0..n {
                    scaled[(i, l)] = self.a[(i, l)] * ck;
                }
            }
            let slice = &scaled * self.b.transpose();
            let start = k * n * m;
            t.data[start..start + n * m].copy_from_slice(slice.as_slice());
        }
        t
    }
}
