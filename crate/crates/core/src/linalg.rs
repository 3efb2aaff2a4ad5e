//! Small dense matrices: the 2x2 quadratic-form matrices of the value
//! function and the m x m control-curvature matrices.

use std::ops::{Add, Mul, Sub};

/// Pivots smaller than this in absolute value are treated as singular.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

/// A 2x2 matrix acting on the state pair `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2(pub [[f64; 2]; 2]);

impl Mat2 {
    pub const ZERO: Mat2 = Mat2([[0.0, 0.0], [0.0, 0.0]]);
    pub const IDENTITY: Mat2 = Mat2([[1.0, 0.0], [0.0, 1.0]]);

    /// The surplus weight `[[1, -1], [-1, 1]]`, i.e. `(x - y)^2`.
    pub const SURPLUS: Mat2 = Mat2([[1.0, -1.0], [-1.0, 1.0]]);

    pub fn symmetric(xx: f64, xy: f64, yy: f64) -> Self {
        Mat2([[xx, xy], [xy, yy]])
    }

    pub fn diag(a: f64, b: f64) -> Self {
        Mat2([[a, 0.0], [0.0, b]])
    }

    #[inline]
    pub fn xx(&self) -> f64 {
        self.0[0][0]
    }

    #[inline]
    pub fn xy(&self) -> f64 {
        self.0[0][1]
    }

    #[inline]
    pub fn yx(&self) -> f64 {
        self.0[1][0]
    }

    #[inline]
    pub fn yy(&self) -> f64 {
        self.0[1][1]
    }

    pub fn transpose(&self) -> Self {
        Mat2([[self.xx(), self.yx()], [self.xy(), self.yy()]])
    }

    /// `(P + P')/2`.
    pub fn symmetrize(&self) -> Self {
        let off = 0.5 * (self.xy() + self.yx());
        Mat2::symmetric(self.xx(), off, self.yy())
    }

    pub fn max_abs(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    /// Symmetric up to `tol * (1 + max|entry|)`.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        (self.xy() - self.yx()).abs() <= tol * (1.0 + self.max_abs())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }

    /// `(x, y) P (x, y)'`.
    #[inline]
    pub fn quad(&self, x: f64, y: f64) -> f64 {
        self.xx() * x * x + (self.xy() + self.yx()) * x * y + self.yy() * y * y
    }
}

impl Add for Mat2 {
    type Output = Mat2;
    fn add(self, rhs: Mat2) -> Mat2 {
        let mut out = self.0;
        for (row, r) in out.iter_mut().zip(rhs.0.iter()) {
            for (a, b) in row.iter_mut().zip(r.iter()) {
                *a += b;
            }
        }
        Mat2(out)
    }
}

impl Sub for Mat2 {
    type Output = Mat2;
    fn sub(self, rhs: Mat2) -> Mat2 {
        let mut out = self.0;
        for (row, r) in out.iter_mut().zip(rhs.0.iter()) {
            for (a, b) in row.iter_mut().zip(r.iter()) {
                *a -= b;
            }
        }
        Mat2(out)
    }
}

impl Mul<f64> for Mat2 {
    type Output = Mat2;
    fn mul(self, s: f64) -> Mat2 {
        Mat2(self.0.map(|row| row.map(|v| v * s)))
    }
}

/// Row-major square matrix of small dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        SquareMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn scalar(v: f64) -> Self {
        SquareMatrix { n: 1, data: vec![v] }
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, v) in diag.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    /// Builds from row-major data; panics if `data.len() != n * n`.
    pub fn from_rows(n: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * n, "expected {} entries", n * n);
        SquareMatrix { n, data }
    }

    /// `v v'`.
    pub fn outer(v: &[f64]) -> Self {
        let n = v.len();
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = v[i] * v[j];
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn scale(&self, s: f64) -> Self {
        SquareMatrix {
            n: self.n,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &SquareMatrix) -> Self {
        assert_eq!(self.n, other.n);
        SquareMatrix {
            n: self.n,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn matmul(&self, other: &SquareMatrix) -> Self {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                for j in 0..n {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.n, v.len());
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self[(i, j)] * v[j]).sum())
            .collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self[(i, i)]).sum()
    }

    /// `trace(self * other)` without forming the product.
    pub fn trace_product(&self, other: &SquareMatrix) -> f64 {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let mut acc = 0.0;
        for i in 0..n {
            for k in 0..n {
                acc += self[(i, k)] * other[(k, i)];
            }
        }
        acc
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let scale = 1.0 + self.data.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        (0..self.n).all(|i| {
            (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol * scale)
        })
    }

    pub fn symmetrize(&self) -> Self {
        let mut out = self.clone();
        for i in 0..self.n {
            for j in 0..i {
                let v = 0.5 * (self[(i, j)] + self[(j, i)]);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        out
    }

    /// Inverse and determinant by Gauss-Jordan elimination with partial
    /// pivoting. Returns `None` when a pivot falls below [`PIVOT_TOLERANCE`].
    pub fn inverse_and_det(&self) -> Option<(SquareMatrix, f64)> {
        let n = self.n;
        let mut a = self.clone();
        let mut inv = Self::identity(n);
        let mut det = 1.0;
        for col in 0..n {
            let pivot_row = (col..n)
                .max_by(|&r, &s| a[(r, col)].abs().total_cmp(&a[(s, col)].abs()))
                .expect("non-empty pivot range");
            let pivot = a[(pivot_row, col)];
            if !(pivot.abs() >= PIVOT_TOLERANCE) {
                return None;
            }
            if pivot_row != col {
                a.swap_rows(pivot_row, col);
                inv.swap_rows(pivot_row, col);
                det = -det;
            }
            det *= pivot;
            let inv_pivot = 1.0 / pivot;
            for j in 0..n {
                a[(col, j)] *= inv_pivot;
                inv[(col, j)] *= inv_pivot;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let factor = a[(r, col)];
                if factor == 0.0 {
                    continue;
                }
                for j in 0..n {
                    a[(r, j)] -= factor * a[(col, j)];
                    inv[(r, j)] -= factor * inv[(col, j)];
                }
            }
        }
        Some((inv, det))
    }

    pub fn inverse(&self) -> Option<SquareMatrix> {
        self.inverse_and_det().map(|(inv, _)| inv)
    }

    /// Lower Cholesky factor; `None` unless symmetric positive definite.
    pub fn cholesky(&self) -> Option<SquareMatrix> {
        if !self.is_symmetric(1e-12) {
            return None;
        }
        let n = self.n;
        let mut l = Self::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let mut sum = self[(i, j)];
                for k in 0..j {
                    sum -= l[(i, k)] * l[(j, k)];
                }
                if i == j {
                    if !(sum > 0.0) {
                        return None;
                    }
                    l[(i, i)] = sum.sqrt();
                } else {
                    l[(i, j)] = sum / l[(j, j)];
                }
            }
        }
        Some(l)
    }

    pub fn is_positive_definite(&self) -> bool {
        self.cholesky().is_some()
    }

    /// `ln |self|` for a symmetric positive definite matrix.
    pub fn log_det_spd(&self) -> Option<f64> {
        let l = self.cholesky()?;
        Some((0..self.n).map(|i| 2.0 * l[(i, i)].ln()).sum())
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        for j in 0..self.n {
            self.data.swap(a * self.n + j, b * self.n + j);
        }
    }
}

impl std::ops::Index<(usize, usize)> for SquareMatrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for SquareMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}
