//! Dense `f64` matrices and vectors plus the seeded random streams used by
//! every stochastic component.

mod rng;

pub use rng::{bernoulli_vector, streams, RngStream};

use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};

/// Tolerance used wherever a layer operator norm is needed.
pub const SPECTRAL_TOL: f64 = 1e-9;
pub const SPECTRAL_MAX_ITER: usize = 1000;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(data: Vec<f64>) -> Self {
        Vector(data)
    }

    pub fn zeros(len: usize) -> Self {
        Vector(vec![0.0; len])
    }

    pub fn filled(len: usize, value: f64) -> Self {
        Vector(vec![value; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        self.0.iter().zip(other).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|a| a * a).sum()
    }

    /// Squared Euclidean distance; panics on length mismatch.
    pub fn dist_sq(&self, other: &[f64]) -> f64 {
        assert_eq!(self.len(), other.len(), "dist_sq length mismatch");
        self.0
            .iter()
            .zip(other)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn add(&self, other: &Vector) -> Result<Vector> {
        if self.len() != other.len() {
            return Err(Error::dim("vector add", self.len(), other.len()));
        }
        Ok(Vector(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect()))
    }

    pub fn hadamard(&self, other: &[f64]) -> Result<Vector> {
        if self.len() != other.len() {
            return Err(Error::dim("hadamard", self.len(), other.len()));
        }
        Ok(Vector(self.0.iter().zip(other).map(|(a, b)| a * b).collect()))
    }

    pub fn scaled(&self, s: f64) -> Vector {
        Vector(self.0.iter().map(|a| a * s).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Index of the largest entry, ties resolved toward the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.0.iter().enumerate() {
            if v > self.0[best] {
                best = i;
            }
        }
        best
    }
}

impl Deref for Vector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Vector(v)
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim("matrix from_vec", rows * cols, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("matrix entries must be finite".into()));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::dim("matrix from_rows", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Matrix::from_vec(rows.len(), cols, data)
    }

    pub fn diag(entries: &[f64]) -> Self {
        let n = entries.len();
        let mut m = Matrix::zeros(n, n);
        for (i, &e) in entries.iter().enumerate() {
            m.data[i * n + i] = e;
        }
        m
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

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// `self · v`
    pub fn matvec(&self, v: &[f64]) -> Result<Vector> {
        if v.len() != self.cols {
            return Err(Error::dim("matvec", self.cols, v.len()));
        }
        Ok(Vector(
            self.data
                .chunks_exact(self.cols.max(1))
                .take(self.rows)
                .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
                .collect(),
        ))
    }

    /// `selfᵀ · v`
    pub fn matvec_t(&self, v: &[f64]) -> Result<Vector> {
        if v.len() != self.rows {
            return Err(Error::dim("matvec_t", self.rows, v.len()));
        }
        let mut out = vec![0.0; self.cols];
        for (r, &vr) in v.iter().enumerate() {
            if vr == 0.0 {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(r)) {
                *o += a * vr;
            }
        }
        Ok(Vector(out))
    }

    /// `self += scale · u vᵀ`
    pub fn add_outer(&mut self, scale: f64, u: &[f64], v: &[f64]) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for (r, &ur) in u.iter().enumerate() {
            let s = scale * ur;
            if s == 0.0 {
                continue;
            }
            for (a, &vc) in self.row_mut(r).iter_mut().zip(v) {
                *a += s * vc;
            }
        }
    }
}

/// Free-function form of [`Matrix::matvec`].
pub fn matvec(m: &Matrix, v: &Vector) -> Result<Vector> {
    m.matvec(v)
}

/// Largest singular value by power iteration on `MᵀM`.
///
/// Starts from the normalized all-ones vector, so the result is
/// deterministic. Stops once the relative change of the estimate falls below
/// `tol`. If the iterate vanishes (start orthogonal to the row space) the
/// iteration restarts from the standard basis vectors in order.
pub fn spectral_norm(m: &Matrix, tol: f64, max_iter: usize) -> Result<f64> {
    if m.rows == 0 || m.cols == 0 {
        return Err(Error::Domain("spectral norm of an empty matrix".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance must be positive, got {tol}")));
    }
    let n = m.cols;
    let starts = std::iter::once(None).chain((0..n).map(Some));
    for start in starts {
        let mut v = match start {
            None => vec![1.0 / (n as f64).sqrt(); n],
            Some(j) => {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                e
            }
        };
        let mut prev = f64::NAN;
        let mut sigma = 0.0;
        let mut vanished = false;
        for _ in 0..max_iter {
            let u = m.matvec(&v)?;
            sigma = u.norm();
            let w = m.matvec_t(&u)?;
            let wn = w.norm();
            if wn == 0.0 {
                vanished = true;
                break;
            }
            v = w.iter().map(|x| x / wn).collect();
            if (sigma - prev).abs() <= tol * sigma {
                return Ok(sigma);
            }
            prev = sigma;
        }
        if !vanished {
            return Err(Error::NoConvergence {
                iterations: max_iter,
                last: sigma,
            });
        }
    }
    // every basis vector maps to zero
    Ok(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matvec() {
        let v = Matrix::identity(2).matvec(&[3.0, 4.0]).unwrap();
        assert_eq!(v.as_slice(), &[3.0, 4.0]);
    }

    #[test]
    fn small_matvec() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let v = matvec(&m, &Vector::new(vec![1.0, 1.0])).unwrap();
        assert_eq!(v.as_slice(), &[3.0, 7.0]);
    }

    #[test]
    fn matvec_dimension_error() {
        let m = Matrix::zeros(2, 3);
        assert!(matches!(
            m.matvec(&[1.0, 2.0]),
            Err(Error::Dimension { expected: 3, got: 2, .. })
        ));
    }

    #[test]
    fn transpose_product_matches_explicit_transpose() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 2.0]]).unwrap();
        let t = Matrix::from_rows(&[vec![1.0, -1.0], vec![2.0, 0.5], vec![3.0, 2.0]]).unwrap();
        assert_eq!(m.matvec_t(&[0.3, -0.7]).unwrap(), t.matvec(&[0.3, -0.7]).unwrap());
    }

    #[test]
    fn spectral_norm_diagonal() {
        let s = spectral_norm(&Matrix::diag(&[3.0, 4.0]), 1e-9, 1000).unwrap();
        assert!((s - 4.0).abs() < 1e-8, "{s}");
    }

    #[test]
    fn spectral_norm_nilpotent() {
        let m = Matrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let s = spectral_norm(&m, 1e-9, 1000).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spectral_norm_start_orthogonal_to_row_space() {
        // all-ones lies in the null space
        let m = Matrix::from_rows(&[vec![1.0, -1.0], vec![2.0, -2.0]]).unwrap();
        let s = spectral_norm(&m, 1e-9, 1000).unwrap();
        assert!((s - 10f64.sqrt()).abs() < 1e-9, "{s}");
        assert_eq!(spectral_norm(&Matrix::zeros(3, 2), 1e-9, 10).unwrap(), 0.0);
    }

    #[test]
    fn spectral_norm_reports_non_convergence() {
        let m = Matrix::diag(&[1.0, 0.999]);
        match spectral_norm(&m, 1e-15, 3) {
            Err(Error::NoConvergence { iterations: 3, last }) => assert!(last > 0.99),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(Vector::new(vec![0.25, 0.5, 0.5]).argmax(), 1);
    }
}
