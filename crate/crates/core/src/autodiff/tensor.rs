use crate::autodiff::scalar::Real;
use crate::error::{Error, Result};

/// Dense row-major 2-D array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f64> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn full(rows: usize, cols: usize, v: T) -> Self {
        Tensor { rows, cols, data: vec![v; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::dim(
                "tensor",
                format!("{rows}x{cols} needs {} values, got {}", rows * cols, data.len()),
            ));
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Tensor { rows, cols, data }
    }

    /// 1×n row vector.
    pub fn row_vector(values: Vec<T>) -> Self {
        Tensor { rows: 1, cols: values.len(), data: values }
    }

    pub fn scalar(v: T) -> Self {
        Tensor { rows: 1, cols: 1, data: vec![v] }
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

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Single value of a 1×1 tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn convert<U: Real>(&self, f: impl Fn(T) -> U) -> Tensor<U> {
        Tensor { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        debug_assert_eq!(self.shape(), other.shape());
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Position of the first non-finite entry.
    pub fn first_non_finite(&self) -> Option<(usize, usize)> {
        self.data
            .iter()
            .position(|v| !v.is_finite())
            .map(|i| (i / self.cols.max(1), i % self.cols.max(1)))
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Tensor { rows: idx.len(), cols: self.cols, data }
    }

    /// Stack tensors with equal column counts on top of each other.
    pub fn vstack(parts: &[&Tensor<T>]) -> Result<Self> {
        let cols = parts.first().map_or(0, |p| p.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols != cols {
                return Err(Error::dim("vstack", format!("{} vs {} columns", p.cols, cols)));
            }
            data.extend_from_slice(&p.data);
            rows += p.rows;
        }
        Ok(Tensor { rows, cols, data })
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::dim(
                "matmul",
                format!("{}x{} · {}x{}", self.rows, self.cols, other.rows, other.cols),
            ));
        }
        let mut out = Tensor::zeros(self.rows, other.cols);
        T::gemm(
            self.rows,
            self.cols,
            other.cols,
            &self.data,
            self.cols as isize,
            1,
            &other.data,
            other.cols as isize,
            1,
            &mut out.data,
            false,
        );
        Ok(out)
    }

    pub fn transpose(&self) -> Self {
        Tensor::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.value().abs()))
    }
}

/// `aᵀ · b`, accumulated into `out` (a is k×m, b is k×n).
pub(crate) fn gemm_tn<T: Real>(a: &Tensor<T>, b: &Tensor<T>, out: &mut Tensor<T>) {
    T::gemm(a.cols, a.rows, b.cols, &a.data, 1, a.cols as isize, &b.data, b.cols as isize, 1, &mut out.data, true);
}

/// `a · bᵀ`, accumulated into `out` (a is m×k, b is n×k).
pub(crate) fn gemm_nt<T: Real>(a: &Tensor<T>, b: &Tensor<T>, out: &mut Tensor<T>) {
    T::gemm(a.rows, a.cols, b.rows, &a.data, a.cols as isize, 1, &b.data, 1, b.cols as isize, &mut out.data, true);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::<f64>::from_vec(2, 3, vec![0.0; 6]).is_ok());
        assert!(Tensor::<f64>::from_vec(2, 3, vec![0.0; 5]).is_err());
    }

    #[test]
    fn transposed_products_agree() {
        let a = Tensor::from_fn(3, 2, |r, c| (r * 2 + c) as f64 - 2.0);
        let b = Tensor::from_fn(3, 4, |r, c| (r as f64 + 1.0) * (c as f64 - 1.5));
        let mut tn = Tensor::zeros(2, 4);
        gemm_tn(&a, &b, &mut tn);
        assert_eq!(tn, a.transpose().matmul(&b).unwrap());
        let c = Tensor::from_fn(4, 2, |r, c| (r + c) as f64 * 0.25);
        let mut nt = Tensor::zeros(3, 4);
        gemm_nt(&a, &c, &mut nt);
        assert_eq!(nt, a.matmul(&c.transpose()).unwrap());
    }
}
