//! Dense row-major `f64` matrices.
//!
//! This is deliberately a small hand-rolled type rather than a tensor
//! library: every model in this crate fits in a few thousand entries, and
//! keeping the representation to `Vec<f64>` + explicit loops makes the
//! gradient code in [`crate::tape`] auditable against the math.
//!
//! Empty dimensions are legal everywhere (a `1x0 · 0x1` product is the empty
//! contraction and yields `[[0.0]]`).

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
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

    /// Builds from row-major data; errors unless `data.len() == rows*cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Input(format!(
                "matrix data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds from explicit rows; all rows must share one length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::Input(format!(
                    "ragged rows: expected {} columns, found {}",
                    c,
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix { rows: r, cols: c, data })
    }

    /// A single-row matrix (the common shape for feature vectors and biases).
    pub fn row(values: &[f64]) -> Self {
        Matrix {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    /// A single-column matrix.
    pub fn column(values: &[f64]) -> Self {
        Matrix {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row_slice(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    fn shape_err(op: &'static str, a: &Matrix, b: &Matrix) -> Error {
        Error::Shape {
            op,
            lhs_rows: a.rows,
            lhs_cols: a.cols,
            rhs_rows: b.rows,
            rhs_cols: b.cols,
        }
    }

    /// Standard product; inner dimensions must agree.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Self::shape_err("matmul", self, other));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        // i-k-j order keeps both the `other` row and the output row hot.
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with("add", other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with("sub", other, |a, b| a - b)
    }

    /// Elementwise (Hadamard) product.
    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with("hadamard", other, |a, b| a * b)
    }

    fn zip_with(
        &self,
        op: &'static str,
        other: &Matrix,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Self::shape_err(op, self, other));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, c: f64) -> Matrix {
        self.map(|x| x * c)
    }

    /// Adds a `1 x cols` row vector to every row.
    pub fn add_row_broadcast(&self, row: &Matrix) -> Result<Matrix> {
        if row.rows != 1 || row.cols != self.cols {
            return Err(Self::shape_err("add_row_broadcast", self, row));
        }
        let mut out = self.clone();
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[i * self.cols + j] += row.data[j];
            }
        }
        Ok(out)
    }

    /// Multiplies every row elementwise by a `1 x cols` row vector.
    pub fn mul_row_broadcast(&self, row: &Matrix) -> Result<Matrix> {
        if row.rows != 1 || row.cols != self.cols {
            return Err(Self::shape_err("mul_row_broadcast", self, row));
        }
        let mut out = self.clone();
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[i * self.cols + j] *= row.data[j];
            }
        }
        Ok(out)
    }

    /// Row-wise softmax, stabilized by subtracting each row's maximum so the
    /// exponentials never overflow. Rows of width 0 stay empty.
    pub fn softmax_rows(&self) -> Matrix {
        let mut out = self.clone();
        for i in 0..self.rows {
            let row = &mut out.data[i * self.cols..(i + 1) * self.cols];
            softmax_in_place(row);
        }
        out
    }

    /// Mean over all entries (0 for an empty matrix).
    pub fn mean_all(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.data.iter().sum::<f64>() / self.data.len() as f64
        }
    }

    pub fn sum_all(&self) -> f64 {
        self.data.iter().sum()
    }

    /// `1 x cols` mean over rows; errors on zero rows.
    pub fn row_mean(&self) -> Result<Matrix> {
        if self.rows == 0 {
            return Err(Error::Input("row_mean of a 0-row matrix".into()));
        }
        let mut out = Matrix::zeros(1, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j] += self.data[i * self.cols + j];
            }
        }
        let inv = 1.0 / self.rows as f64;
        for v in &mut out.data {
            *v *= inv;
        }
        Ok(out)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// In-place stabilized softmax over one slice.
pub fn softmax_in_place(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

/// Index of the largest entry, ties resolved toward the lower index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.gen_range(-2.0..2.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn identity_is_neutral() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_matrix(&mut rng, 4, 4);
        let prod = Matrix::identity(4).matmul(&a).unwrap();
        assert_eq!(prod, a);
    }

    #[test]
    fn hand_product() {
        // [[1,2],[3,4]] * [[5],[6]] worked by hand:
        // row 0: 1*5 + 2*6 = 17; row 1: 3*5 + 4*6 = 39.
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix::column(&[5.0, 6.0]);
        let p = a.matmul(&b).unwrap();
        assert_eq!(p.data(), &[17.0, 39.0]);
    }

    #[test]
    fn empty_contraction_yields_zero() {
        let a = Matrix::zeros(1, 0);
        let b = Matrix::zeros(0, 1);
        let p = a.matmul(&b).unwrap();
        assert_eq!(p.shape(), (1, 1));
        assert_eq!(p.get(0, 0), 0.0);
    }

    #[test]
    fn mismatch_reports_both_shapes() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(4, 2);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("4x2"), "message: {msg}");
    }

    #[test]
    fn matmul_associativity() {
        // (A*B)*C and A*(B*C) agree to relative 1e-9 over random instances.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let (m, k, n, p) = (
                rng.gen_range(1..6),
                rng.gen_range(1..6),
                rng.gen_range(1..6),
                rng.gen_range(1..6),
            );
            let a = random_matrix(&mut rng, m, k);
            let b = random_matrix(&mut rng, k, n);
            let c = random_matrix(&mut rng, n, p);
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            for (x, y) in left.data().iter().zip(right.data()) {
                let denom = x.abs().max(y.abs()).max(1.0);
                assert!((x - y).abs() / denom < 1e-9);
            }
        }
    }

    #[test]
    fn softmax_matches_direct_formula() {
        let m = Matrix::row(&[1.0, 2.0, 3.0]);
        let s = m.softmax_rows();
        // Direct evaluation of exp(x_i)/sum_j exp(x_j), no stabilization.
        let z = 1f64.exp() + 2f64.exp() + 3f64.exp();
        for (i, &x) in [1.0, 2.0, 3.0].iter().enumerate() {
            assert!((s.get(0, i) - (x as f64).exp() / z).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_uniform_row() {
        let s = Matrix::row(&[0.7; 5]).softmax_rows();
        for j in 0..5 {
            assert!((s.get(0, j) - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_shift_invariance() {
        // softmax([c, c+d]) depends only on d: equals [sigma(-d), sigma(d)].
        for &(c, d) in &[(0.0, 1.0), (100.0, 1.0), (-57.0, 3.5), (1e6, 0.25)] {
            let s = Matrix::row(&[c, c + d]).softmax_rows();
            let sig = 1.0 / (1.0 + (-d as f64).exp());
            assert!((s.get(0, 0) - (1.0 - sig)).abs() < 1e-12);
            assert!((s.get(0, 1) - sig).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_and_preserve_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let (r, c) = (rng.gen_range(1..5), rng.gen_range(1..7));
            let m = random_matrix(&mut rng, r, c);
            let s = m.softmax_rows();
            for i in 0..m.rows() {
                let sum: f64 = s.row_slice(i).iter().sum();
                assert!((sum - 1.0).abs() < 1e-9);
                assert_eq!(argmax(m.row_slice(i)), argmax(s.row_slice(i)));
            }
        }
    }

    #[test]
    fn argmax_ties_break_low() {
        assert_eq!(argmax(&[0.25, 0.25, 0.25, 0.25]), 0);
        assert_eq!(argmax(&[0.1, 0.4, 0.4, 0.1]), 1);
    }

    #[test]
    fn row_broadcasts() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix::row(&[10.0, 20.0]);
        let a = m.add_row_broadcast(&b).unwrap();
        assert_eq!(a.data(), &[11.0, 22.0, 13.0, 24.0]);
        let h = m.mul_row_broadcast(&b).unwrap();
        assert_eq!(h.data(), &[10.0, 40.0, 30.0, 80.0]);
    }
}
