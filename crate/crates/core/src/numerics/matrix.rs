use serde::{Deserialize, Serialize};

use super::{Real, ShapeError};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, ShapeError> {
        if data.len() != rows * cols {
            return Err(ShapeError::mismatch("Matrix::from_vec", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, ShapeError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(ShapeError::mismatch("Matrix::from_rows", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn map_inplace(&mut self, f: impl Fn(T) -> T) {
        for x in &mut self.data {
            *x = f(*x);
        }
    }

    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| U::from_f64(x.as_f64())).collect(),
        }
    }

    /// Rows gathered by index.
    pub fn select_rows(&self, idx: &[u32]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i as usize));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// `[self | other]` column-wise.
    pub fn hcat(&self, other: &Self) -> Result<Self, ShapeError> {
        if self.rows != other.rows {
            return Err(ShapeError::mismatch("hcat", self.rows, other.rows));
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Ok(Self {
            rows: self.rows,
            cols,
            data,
        })
    }

    /// Columns `start..start + width` as a new matrix.
    pub fn col_slice(&self, start: usize, width: usize) -> Self {
        let mut data = Vec::with_capacity(self.rows * width);
        for i in 0..self.rows {
            data.extend_from_slice(&self.row(i)[start..start + width]);
        }
        Self {
            rows: self.rows,
            cols: width,
            data,
        }
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<(), ShapeError> {
        if self.shape() != other.shape() {
            return Err(ShapeError::mismatch(
                "add_assign",
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        for x in &mut self.data {
            *x *= s;
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// `x · w + bias`, accumulating each output in input-column order.
pub(crate) fn affine<T: Real>(x: &Matrix<T>, w: &Matrix<T>, bias: &[T]) -> Result<Matrix<T>, ShapeError> {
    if x.cols != w.rows {
        return Err(ShapeError::mismatch("affine", format!("x cols {}", w.rows), x.cols));
    }
    if bias.len() != w.cols {
        return Err(ShapeError::mismatch("affine bias", w.cols, bias.len()));
    }
    let (n, k, m) = (x.rows, x.cols, w.cols);
    let mut out = Matrix::zeros(n, m);
    for i in 0..n {
        let xr = &x.data[i * k..(i + 1) * k];
        let or = &mut out.data[i * m..(i + 1) * m];
        or.copy_from_slice(bias);
        for (kk, &xv) in xr.iter().enumerate() {
            if xv == T::zero() {
                continue;
            }
            let wr = &w.data[kk * m..(kk + 1) * m];
            for (o, &wv) in or.iter_mut().zip(wr) {
                *o += xv * wv;
            }
        }
    }
    Ok(out)
}

/// `dw += xᵀ · dy`, `db += Σ_rows dy`.
pub(crate) fn affine_param_grads<T: Real>(x: &Matrix<T>, dy: &Matrix<T>, dw: &mut Matrix<T>, db: &mut [T]) {
    let (k, m) = (x.cols, dy.cols);
    for i in 0..x.rows {
        let xr = x.row(i);
        let dr = dy.row(i);
        for (b, &g) in db.iter_mut().zip(dr) {
            *b += g;
        }
        for (kk, &xv) in xr.iter().enumerate() {
            if xv == T::zero() {
                continue;
            }
            let wr = &mut dw.data[kk * m..(kk + 1) * m];
            for (w, &g) in wr.iter_mut().zip(dr) {
                *w += xv * g;
            }
        }
    }
    debug_assert_eq!(dw.rows, k);
}

/// `dy · wᵀ`.
pub(crate) fn affine_input_grad<T: Real>(dy: &Matrix<T>, w: &Matrix<T>) -> Matrix<T> {
    let (n, k, m) = (dy.rows, w.rows, w.cols);
    let mut dx = Matrix::zeros(n, k);
    for i in 0..n {
        let dr = dy.row(i);
        let xr = &mut dx.data[i * k..(i + 1) * k];
        for (kk, x) in xr.iter_mut().enumerate() {
            let wr = &w.data[kk * m..(kk + 1) * m];
            let mut acc = T::zero();
            for (&a, &b) in dr.iter().zip(wr) {
                acc += a * b;
            }
            *x = acc;
        }
    }
    dx
}
