use crate::error::{Error, Result};

/// Dense row-major 2-D array of f64. Row vectors are [1, c], scalars [1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "tensor dims must be positive");
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        assert!(rows > 0 && cols > 0, "tensor dims must be positive");
        Tensor {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::shape(
                "from_vec",
                format!("{} values for {}x{}", data.len(), rows, cols),
            ));
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut t = Tensor::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                t.data[i * cols + j] = f(i, j);
            }
        }
        t
    }

    pub fn row_vec(data: Vec<f64>) -> Result<Self> {
        let cols = data.len();
        Tensor::from_vec(1, cols, data)
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// Value of a [1, 1] tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_tensor(&self, i: usize) -> Tensor {
        Tensor {
            rows: 1,
            cols: self.cols,
            data: self.row(i).to_vec(),
        }
    }

    pub fn is_all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// self += scale * other, shapes must match.
    pub fn add_scaled(&mut self, other: &Tensor, scale: f64) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }

    /// C = A . B with A [m, k], B [k, n].
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols != other.rows {
            return Err(Error::shape(
                "matmul",
                format!("{:?} . {:?}", self.shape(), other.shape()),
            ));
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = Tensor::zeros(m, n);
        for i in 0..m {
            let a_row = self.row(i);
            let o_row = &mut out.data[i * n..(i + 1) * n];
            for (p, &a) in a_row.iter().enumerate().take(k) {
                if a == 0.0 {
                    continue;
                }
                let b_row = other.row(p);
                for j in 0..n {
                    o_row[j] += a * b_row[j];
                }
            }
        }
        Ok(out)
    }

    /// out += A . B^T with A [m, k], B [n, k]. Used by matmul backward.
    pub fn add_matmul_nt(&mut self, a: &Tensor, b: &Tensor) {
        debug_assert_eq!(a.cols, b.cols);
        debug_assert_eq!(self.shape(), (a.rows, b.rows));
        let (m, k, n) = (a.rows, a.cols, b.rows);
        for i in 0..m {
            let a_row = a.row(i);
            let o_row = &mut self.data[i * n..(i + 1) * n];
            for (j, o) in o_row.iter_mut().enumerate() {
                let b_row = b.row(j);
                let mut acc = 0.0;
                for p in 0..k {
                    acc += a_row[p] * b_row[p];
                }
                *o += acc;
            }
        }
    }

    /// out += A^T . B with A [k, m], B [k, n]. Used by matmul backward.
    pub fn add_matmul_tn(&mut self, a: &Tensor, b: &Tensor) {
        debug_assert_eq!(a.rows, b.rows);
        debug_assert_eq!(self.shape(), (a.cols, b.cols));
        let (k, m, n) = (a.rows, a.cols, b.cols);
        for p in 0..k {
            let a_row = a.row(p);
            let b_row = b.row(p);
            for (i, &av) in a_row.iter().enumerate().take(m) {
                if av == 0.0 {
                    continue;
                }
                let o_row = &mut self.data[i * n..(i + 1) * n];
                for j in 0..n {
                    o_row[j] += av * b_row[j];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_matches_hand_computation() {
        let a = Tensor::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn matmul_rejects_mismatched_inner_dims() {
        let a = Tensor::zeros(2, 3);
        let b = Tensor::zeros(2, 2);
        assert!(a.matmul(&b).is_err());
    }

    #[test]
    fn transposed_products_match_explicit_transpose() {
        let a = Tensor::from_fn(3, 4, |i, j| (i * 7 + j) as f64 * 0.3 - 1.0);
        let b = Tensor::from_fn(5, 4, |i, j| (i * 3 + j) as f64 * 0.1);
        let bt = Tensor::from_fn(4, 5, |i, j| b.get(j, i));
        let want = a.matmul(&bt).unwrap();
        let mut got = Tensor::zeros(3, 5);
        got.add_matmul_nt(&a, &b);
        for (x, y) in got.data().iter().zip(want.data()) {
            assert!((x - y).abs() < 1e-12);
        }

        let c = Tensor::from_fn(4, 3, |i, j| (i + 2 * j) as f64 * 0.2 - 0.5);
        let ct = Tensor::from_fn(3, 4, |i, j| c.get(j, i));
        let d = Tensor::from_fn(4, 5, |i, j| (2 * i + j) as f64 * 0.05);
        let want = ct.matmul(&d).unwrap();
        let mut got = Tensor::zeros(3, 5);
        got.add_matmul_tn(&c, &d);
        for (x, y) in got.data().iter().zip(want.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
