//! Dense row-major vectors and matrices.
//!
//! Everything in the model is a rank-1 or rank-2 `f64` array: inputs, expanded
//! vectors, fabricated weight matrices and parameter vectors. Batches are
//! handled by looping over rank-1 inputs, so no higher ranks are needed.

use std::fmt;

use crate::error::{shape, Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}{:?}", self.shape, self.data)
    }
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 2 {
            return shape_err(format!("rank {} unsupported", shape.len()));
        }
        if shape.iter().product::<usize>() != data.len() {
            return shape_err(format!(
                "shape {:?} needs {} entries, got {}",
                shape,
                shape.iter().product::<usize>(),
                data.len()
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(&[rows, cols], data)
    }

    /// Builds a matrix from nested rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return shape_err("ragged rows");
        }
        Self::matrix(rows.len(), cols, rows.concat())
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            shape: vec![rows, cols],
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Column count; a vector is treated as a single row.
    pub fn cols(&self) -> usize {
        if self.rank() == 2 {
            self.shape[1]
        } else {
            self.shape[0]
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.shape[1];
        &self.data[i * c..(i + 1) * c]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape, self.data.clone())
    }

    pub fn flatten(&self) -> Self {
        Self::vector(self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, alpha: f64) -> Self {
        self.map(|v| alpha * v)
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        self.zip(other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Tensor) -> Result<Self> {
        self.zip(other, |a, b| a * b)
    }

    fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return shape_err(format!("{:?} vs {:?}", self.shape, other.shape));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.dims2("transpose")?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self::matrix(c, r, out)
    }

    fn dims2(&self, op: &str) -> Result<(usize, usize)> {
        if self.rank() != 2 {
            return shape_err(format!("{op} expects a matrix, got shape {:?}", self.shape));
        }
        Ok((self.shape[0], self.shape[1]))
    }

    /// Kronecker product: `out[i*s + k, j*t + l] = a[i, j] * b[k, l]`.
    pub fn kron(&self, other: &Tensor) -> Result<Self> {
        let (p, q) = self.dims2("kron")?;
        let (s, t) = other.dims2("kron")?;
        let cols = q * t;
        let mut out = vec![0.0; p * s * cols];
        for i in 0..p {
            for j in 0..q {
                let a = self.data[i * q + j];
                if a == 0.0 {
                    continue;
                }
                for k in 0..s {
                    let dst = (i * s + k) * cols + j * t;
                    let src = &other.data[k * t..(k + 1) * t];
                    for (o, &b) in out[dst..dst + t].iter_mut().zip(src) {
                        *o = a * b;
                    }
                }
            }
        }
        Self::matrix(p * s, cols, out)
    }

    /// `W v` for an `n x D` matrix and a length-`D` vector.
    pub fn matvec(&self, v: &Tensor) -> Result<Self> {
        let (n, d) = self.dims2("matvec")?;
        if v.len() != d {
            return shape_err(format!("matvec: {n}x{d} matrix with length-{} vector", v.len()));
        }
        Ok(Self::vector(matvec(&self.data, n, d, &v.data)))
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Self> {
        let (n, k) = self.dims2("matmul")?;
        let (k2, m) = other.dims2("matmul")?;
        if k != k2 {
            return shape_err(format!("matmul: {n}x{k} by {k2}x{m}"));
        }
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let src = &other.data[p * m..(p + 1) * m];
                for (o, &b) in out[i * m..(i + 1) * m].iter_mut().zip(src) {
                    *o += a * b;
                }
            }
        }
        Self::matrix(n, m, out)
    }

    /// Concatenates rank-1 tensors end to end.
    pub fn concat(parts: &[Tensor]) -> Result<Self> {
        if parts.iter().any(|p| p.rank() != 1) {
            return shape_err("concat expects vectors");
        }
        Ok(Self::vector(
            parts.iter().flat_map(|p| p.data.iter().copied()).collect(),
        ))
    }
}

fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    shape(msg)
}

/// Row-major `n x d` matrix times vector on raw slices.
pub fn matvec(w: &[f64], n: usize, d: usize, v: &[f64]) -> Vec<f64> {
    (0..n).map(|i| dot(&w[i * d..(i + 1) * d], v)).collect()
}

/// `Wᵀ g` for a row-major `n x d` matrix and a length-`n` vector.
pub fn matvec_t(w: &[f64], n: usize, d: usize, g: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for (i, &gi) in g.iter().enumerate().take(n) {
        if gi == 0.0 {
            continue;
        }
        axpy(gi, &w[i * d..(i + 1) * d], &mut out);
    }
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Kronecker product of two vectors.
pub fn kron_vec(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for &x in a {
        out.extend(b.iter().map(|&y| x * y));
    }
    out
}

impl From<Vec<f64>> for Tensor {
    fn from(v: Vec<f64>) -> Self {
        Self::vector(v)
    }
}

impl TryFrom<&[Vec<f64>]> for Tensor {
    type Error = Error;
    fn try_from(rows: &[Vec<f64>]) -> Result<Self> {
        Self::from_rows(rows)
    }
}
