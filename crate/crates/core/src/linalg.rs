//! Dense row-major matrices, class moments and symmetric matrix functions.
//!
//! Heavy lifting (products, symmetric eigensolver) is delegated to nalgebra;
//! [`Matrix`] is the row-major exchange type used everywhere else.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Dense real matrix, row-major, f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix, rejecting wrong lengths and non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Shape(format!("non-finite entry at index {i}")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diag(d: &[f64]) -> Self {
        let n = d.len();
        let mut m = Self::zeros(n, n);
        for (i, v) in d.iter().enumerate() {
            m.data[i * n + i] = *v;
        }
        m
    }

    /// Stacks equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Shape(format!("ragged rows: {} vs {cols}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix { rows: idx.len(), cols: self.cols, data }
    }

    /// Vertical concatenation.
    pub fn vstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::Shape(format!("vstack {} vs {} columns", self.cols, other.cols)));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Matrix { rows: self.rows + other.rows, cols: self.cols, data })
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Matrix::from_na(&(self.to_na() * other.to_na())))
    }

    /// `self · v`.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if self.cols != v.len() {
            return Err(Error::Shape(format!("matvec {} columns vs {}", self.cols, v.len())));
        }
        Ok(self.iter_rows().map(|r| dot(r, v)).collect())
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip(other, |a, b| a - b)
    }

    fn zip(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Shape(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    /// Largest `|m_ij - m_ji|`; `None` when not square.
    pub fn max_asymmetry(&self) -> Option<f64> {
        if self.rows != self.cols {
            return None;
        }
        let n = self.rows;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        Some(worst)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub(crate) fn to_na(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub(crate) fn from_na(m: &DMatrix<f64>) -> Matrix {
        let (rows, cols) = m.shape();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(m[(i, j)]);
            }
        }
        Matrix { rows, cols, data }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub_vec(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Per-class mean and biased (divide-by-n) covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMoments {
    pub mean: Vec<f64>,
    pub covariance: Matrix,
    pub count: usize,
}

/// Moments of the rows where `row_mask` is true.
pub fn compute_moments(embeddings: &Matrix, row_mask: &[bool]) -> Result<ClassMoments> {
    if row_mask.len() != embeddings.rows() {
        return Err(Error::Shape(format!(
            "mask of length {} for {} rows",
            row_mask.len(),
            embeddings.rows()
        )));
    }
    if embeddings.cols() == 0 {
        return Err(Error::Shape("zero-dimensional embeddings".into()));
    }
    let idx: Vec<usize> = (0..row_mask.len()).filter(|&i| row_mask[i]).collect();
    if idx.len() < 2 {
        return Err(Error::DegenerateSample(format!("{} selected rows, need 2", idx.len())));
    }
    let d = embeddings.cols();
    let n = idx.len() as f64;
    let mut mean = vec![0.0; d];
    for &i in &idx {
        for (m, v) in mean.iter_mut().zip(embeddings.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut centered = DMatrix::<f64>::zeros(idx.len(), d);
    for (r, &i) in idx.iter().enumerate() {
        for (j, v) in embeddings.row(i).iter().enumerate() {
            centered[(r, j)] = v - mean[j];
        }
    }
    let cov = centered.tr_mul(&centered) / n;
    let mut covariance = Matrix::from_na(&cov);
    symmetrize(&mut covariance);
    Ok(ClassMoments { mean, covariance, count: idx.len() })
}

fn symmetrize(m: &mut Matrix) {
    let n = m.rows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m.get(i, j) + m.get(j, i));
            m.set(i, j, v);
            m.set(j, i, v);
        }
    }
}

/// Default ridge for empirical covariances: `1e-8 * trace / D`.
pub fn default_ridge(m: &Matrix) -> f64 {
    1e-8 * m.trace().max(0.0) / m.rows().max(1) as f64
}

/// Eigendecomposition of a symmetric matrix.
///
/// Eigenvalues come back in descending order; eigenvectors are the columns
/// of the second matrix, in matching order.
pub fn sym_eigen(m: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let asym = m
        .max_asymmetry()
        .ok_or_else(|| Error::Shape(format!("{}x{} is not square", m.rows(), m.cols())))?;
    if asym > 1e-8 * m.max_abs().max(f64::MIN_POSITIVE) {
        return Err(Error::NotSymmetric(asym));
    }
    let n = m.rows();
    if n == 0 {
        return Ok((Vec::new(), Matrix::zeros(0, 0)));
    }
    let mut sym = m.clone();
    symmetrize(&mut sym);
    let eig = nalgebra::SymmetricEigen::new(sym.to_na());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (c, &k) in order.iter().enumerate() {
        for r in 0..n {
            vectors.set(r, c, eig.eigenvectors[(r, k)]);
        }
    }
    Ok((values, vectors))
}

/// `V diag(f(λ)) Vᵀ`.
fn spectral_map(values: &[f64], vectors: &Matrix, f: impl Fn(f64) -> f64) -> Matrix {
    let n = values.len();
    let fv: Vec<f64> = values.iter().map(|&l| f(l)).collect();
    let mut scaled = vectors.clone();
    for r in 0..n {
        for c in 0..n {
            let v = scaled.get(r, c) * fv[c];
            scaled.set(r, c, v);
        }
    }
    let mut out = Matrix::from_na(&(scaled.to_na() * vectors.to_na().transpose()));
    symmetrize(&mut out);
    out
}

fn check_psd(values: &[f64], m: &Matrix) -> Result<()> {
    let n = values.len().max(1) as f64;
    let scale = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let tol = 1e-8 * m.trace().abs() / n + 1e-12 * scale;
    match values.last() {
        Some(&low) if low < -tol => Err(Error::NotPsd(low)),
        _ => Ok(()),
    }
}

/// Principal square root of a symmetric PSD matrix.
pub fn psd_sqrt(m: &Matrix) -> Result<Matrix> {
    let (values, vectors) = sym_eigen(m)?;
    check_psd(&values, m)?;
    Ok(spectral_map(&values, &vectors, |l| l.max(0.0).sqrt()))
}

/// Inverse square root with eigenvalues clamped to `max(λ, ridge)`.
///
/// With `ridge == 0` this is the pseudo-inverse square root: eigenvalues that
/// are numerically zero map to zero.
pub fn psd_inv_sqrt(m: &Matrix, ridge: f64) -> Result<Matrix> {
    if !(ridge >= 0.0) {
        return Err(Error::Parameter(format!("ridge must be >= 0, got {ridge}")));
    }
    let (values, vectors) = sym_eigen(m)?;
    check_psd(&values, m)?;
    let cutoff = rank_cutoff(&values);
    Ok(spectral_map(&values, &vectors, |l| {
        let l = l.max(ridge);
        if ridge == 0.0 && l <= cutoff {
            0.0
        } else {
            1.0 / l.sqrt()
        }
    }))
}

/// Square root and inverse square root from one eigendecomposition, both
/// computed from the clamped spectrum `max(λ, ridge)` so that they are exact
/// inverses of each other whenever `ridge > 0`.
pub fn psd_sqrt_pair(m: &Matrix, ridge: f64) -> Result<(Matrix, Matrix)> {
    if !(ridge > 0.0) {
        return Err(Error::Parameter(format!("paired roots need ridge > 0, got {ridge}")));
    }
    let (values, vectors) = sym_eigen(m)?;
    check_psd(&values, m)?;
    let root = spectral_map(&values, &vectors, |l| l.max(ridge).sqrt());
    let inv = spectral_map(&values, &vectors, |l| 1.0 / l.max(ridge).sqrt());
    Ok((root, inv))
}

/// Pseudo-inverse with eigenvalues clamped at `ridge`.
pub fn psd_inverse(m: &Matrix, ridge: f64) -> Result<Matrix> {
    let (values, vectors) = sym_eigen(m)?;
    check_psd(&values, m)?;
    let cutoff = rank_cutoff(&values);
    Ok(spectral_map(&values, &vectors, |l| {
        let l = l.max(ridge);
        if l <= cutoff || l <= 0.0 {
            0.0
        } else {
            1.0 / l
        }
    }))
}

fn rank_cutoff(values: &[f64]) -> f64 {
    let top = values.first().copied().unwrap_or(0.0).max(0.0);
    1e-10 * top
}
