//! Dense row-major matrix kernels shared by the autodiff ops and the
//! gradient-free code paths (task generation, sampling).

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix buffer length");
        Matrix { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn column(data: Vec<T>) -> Self {
        let rows = data.len();
        Matrix {
            rows,
            cols: 1,
            data,
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn transpose(&self) -> Self {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, rhs: &Matrix<T>) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::dim("matmul", self.shape(), rhs.shape()));
        }
        let (n, k, m) = (self.rows, self.cols, rhs.cols);
        let mut out = vec![T::zero(); n * m];
        for i in 0..n {
            let row = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == T::zero() {
                    continue;
                }
                let rrow = &rhs.data[p * m..(p + 1) * m];
                for (o, &b) in row.iter_mut().zip(rrow) {
                    *o = *o + a * b;
                }
            }
        }
        Ok(Matrix::new(n, m, out))
    }

    /// Lower Cholesky factor of `self + jitter * I`; reads the lower triangle only.
    pub fn cholesky(&self, jitter: T) -> Result<Self> {
        if self.rows != self.cols {
            return Err(Error::dim("cholesky", self.shape(), [self.cols, self.rows]));
        }
        let n = self.rows;
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = self.get(j, j) + jitter;
            for p in 0..j {
                let v = l.get(j, p);
                d = d - v * v;
            }
            if !(d > T::zero()) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: j });
            }
            let djj = d.sqrt();
            l.set(j, j, djj);
            for i in (j + 1)..n {
                let mut s = self.get(i, j);
                for p in 0..j {
                    s = s - l.get(i, p) * l.get(j, p);
                }
                l.set(i, j, s / djj);
            }
        }
        Ok(l)
    }

    /// Solves `L X = B` for lower-triangular `L = self`.
    pub fn solve_lower(&self, b: &Matrix<T>) -> Result<Self> {
        if self.rows != self.cols || self.rows != b.rows {
            return Err(Error::dim("solve_triangular", self.shape(), b.shape()));
        }
        let n = self.rows;
        let mut x = b.clone();
        for c in 0..b.cols {
            for i in 0..n {
                let mut s = x.get(i, c);
                for p in 0..i {
                    s = s - self.get(i, p) * x.get(p, c);
                }
                x.set(i, c, s / self.get(i, i));
            }
        }
        Ok(x)
    }

    /// Solves `Lᵀ X = B` for lower-triangular `L = self`.
    pub fn solve_lower_transposed(&self, b: &Matrix<T>) -> Result<Self> {
        if self.rows != self.cols || self.rows != b.rows {
            return Err(Error::dim("solve_triangular", self.shape(), b.shape()));
        }
        let n = self.rows;
        let mut x = b.clone();
        for c in 0..b.cols {
            for i in (0..n).rev() {
                let mut s = x.get(i, c);
                for p in (i + 1)..n {
                    s = s - self.get(p, i) * x.get(p, c);
                }
                x.set(i, c, s / self.get(i, i));
            }
        }
        Ok(x)
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        self.rows == self.cols
            && (0..self.rows)
                .all(|i| (0..i).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= tol))
    }
}
