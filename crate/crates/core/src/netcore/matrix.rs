use serde::{Deserialize, Serialize};

/// Dense row-major matrix. Batches are stored one sample per row.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn row_vector(v: &[f64]) -> Self {
        Self::from_vec(1, v.len(), v.to_vec())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hcat(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "hcat row count");
        let cols = self.cols + other.cols;
        let mut out = Matrix::zeros(self.rows, cols);
        for r in 0..self.rows {
            let dst = out.row_mut(r);
            dst[..self.cols].copy_from_slice(self.row(r));
            dst[self.cols..].copy_from_slice(other.row(r));
        }
        out
    }

    /// Copy of columns `start..end`.
    pub fn columns(&self, start: usize, end: usize) -> Matrix {
        assert!(start <= end && end <= self.cols);
        let mut out = Matrix::zeros(self.rows, end - start);
        for r in 0..self.rows {
            out.row_mut(r).copy_from_slice(&self.row(r)[start..end]);
        }
        out
    }

    /// Rows selected by `idx`, in order.
    pub fn gather_rows(&self, idx: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(idx.len(), self.cols);
        for (dst, &i) in idx.iter().enumerate() {
            out.row_mut(dst).copy_from_slice(self.row(i));
        }
        out
    }
}

/// `out = a · wᵀ + bias`, with `w` an `m × k` row-major block.
pub(crate) fn affine_nt(a: &Matrix, w: &[f64], bias: &[f64], out: &mut Matrix) {
    let (n, k) = (a.rows, a.cols);
    let m = bias.len();
    debug_assert_eq!(w.len(), m * k);
    debug_assert_eq!((out.rows, out.cols), (n, m));
    for r in 0..n {
        out.row_mut(r).copy_from_slice(bias);
    }
    if n == 0 || m == 0 || k == 0 {
        return;
    }
    // SAFETY: pointers and strides describe in-bounds row-major blocks of the
    // stated shapes; `out` does not alias the inputs.
    unsafe {
        matrixmultiply::dgemm(
            n,
            k,
            m,
            1.0,
            a.data.as_ptr(),
            k as isize,
            1,
            w.as_ptr(),
            1,
            k as isize,
            1.0,
            out.data.as_mut_ptr(),
            m as isize,
            1,
        );
    }
}

/// `dw += deltaᵀ · a` where `delta` is `n × m` and `a` is `n × k`.
pub(crate) fn accumulate_tn(delta: &Matrix, a: &Matrix, dw: &mut [f64]) {
    let (n, m) = (delta.rows, delta.cols);
    let k = a.cols;
    debug_assert_eq!(a.rows, n);
    debug_assert_eq!(dw.len(), m * k);
    if n == 0 || m == 0 || k == 0 {
        return;
    }
    // SAFETY: see `affine_nt`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            n,
            k,
            1.0,
            delta.data.as_ptr(),
            1,
            m as isize,
            a.data.as_ptr(),
            k as isize,
            1,
            1.0,
            dw.as_mut_ptr(),
            k as isize,
            1,
        );
    }
}

/// `out = delta · w` where `delta` is `n × m` and `w` is `m × k`.
pub(crate) fn matmul_nn(delta: &Matrix, w: &[f64], k: usize) -> Matrix {
    let (n, m) = (delta.rows, delta.cols);
    debug_assert_eq!(w.len(), m * k);
    let mut out = Matrix::zeros(n, k);
    if n == 0 || m == 0 || k == 0 {
        return out;
    }
    // SAFETY: see `affine_nt`.
    unsafe {
        matrixmultiply::dgemm(
            n,
            m,
            k,
            1.0,
            delta.data.as_ptr(),
            m as isize,
            1,
            w.as_ptr(),
            k as isize,
            1,
            0.0,
            out.data.as_mut_ptr(),
            k as isize,
            1,
        );
    }
    out
}
