//! Row-major dense matrices and the handful of kernels the models need.

use rand::Rng;
use rand_distr_like::normal;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: F) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor data length mismatch");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<F>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn scalar(v: F) -> Self {
        Self::from_vec(1, 1, vec![v])
    }

    /// Gaussian init with the given standard deviation.
    pub fn randn<R: Rng>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols).map(|_| F::of(normal(rng) * std)).collect();
        Self { rows, cols, data }
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
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[F] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> F {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: F) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [F] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn item(&self) -> F {
        assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// `self @ other`
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(
            self.cols, other.rows,
            "matmul shape mismatch: {:?} @ {:?}",
            self.shape(),
            other.shape()
        );
        let mut out = Self::zeros(self.rows, other.cols);
        matmul_acc(
            &self.data,
            &other.data,
            &mut out.data,
            self.rows,
            self.cols,
            other.cols,
        );
        out
    }

    /// `self @ other^T`
    pub fn matmul_t(&self, other: &Self) -> Self {
        assert_eq!(
            self.cols, other.cols,
            "matmul_t shape mismatch: {:?} @ {:?}^T",
            self.shape(),
            other.shape()
        );
        self.matmul(&other.transpose())
    }

    /// `self^T @ other`
    pub fn t_matmul(&self, other: &Self) -> Self {
        assert_eq!(
            self.rows, other.rows,
            "t_matmul shape mismatch: {:?}^T @ {:?}",
            self.shape(),
            other.shape()
        );
        self.transpose().matmul(other)
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape(), other.shape(), "add shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&self, s: F) -> Self {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> F {
        self.data.iter().copied().sum()
    }

    /// Index of the maximum of row `r`; the lowest index wins ties.
    pub fn argmax_row(&self, r: usize) -> usize {
        let row = self.row(r);
        let mut best = 0;
        for (i, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = i;
            }
        }
        best
    }

    pub fn max_row(&self, r: usize) -> F {
        self.row(r).iter().copied().fold(F::neg_infinity(), F::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `out[m×n] += a[m×k] @ b[k×n]`, i-k-j order so the inner loop vectorizes.
pub(crate) fn matmul_acc<F: Scalar>(a: &[F], b: &[F], out: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            if av == F::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let m = row.iter().copied().fold(F::neg_infinity(), F::max);
        let mut z = F::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    out
}

/// Row-wise log-softmax.
pub fn log_softmax_rows<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let m = row.iter().copied().fold(F::neg_infinity(), F::max);
        let lse = row.iter().map(|&v| (v - m).exp()).sum::<F>().ln() + m;
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}

mod rand_distr_like {
    use rand::Rng;

    /// Standard normal draw via Box-Muller.
    pub fn normal<R: Rng>(rng: &mut R) -> f64 {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = Tensor::<f64>::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let b = Tensor::<f64>::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]);
        assert_eq!(a.matmul(&b).data(), &[19.0, 22.0, 43.0, 50.0]);
        assert_eq!(a.matmul_t(&b).data(), &[17.0, 23.0, 39.0, 53.0]);
        assert_eq!(a.t_matmul(&b).data(), &[26.0, 30.0, 38.0, 44.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::<f64>::from_rows(&[vec![1.0, 2.0, 3.0], vec![1000.0, 1000.0, -5.0]]);
        let p = softmax_rows(&x);
        for r in 0..2 {
            assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let lp = log_softmax_rows(&x);
        for (a, b) in lp.data().iter().zip(p.data()) {
            assert!((a.exp() - b).abs() < 1e-12);
        }
    }

    #[test]
    fn argmax_prefers_first_on_ties() {
        let x = Tensor::<f64>::from_rows(&[vec![0.2, 0.2, 0.2], vec![0.1, 0.5, 0.5]]);
        assert_eq!(x.argmax_row(0), 0);
        assert_eq!(x.argmax_row(1), 1);
    }
}
