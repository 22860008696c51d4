use crate::error::{Error, Result};

/// Dense row-major f32 matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2 {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self [m x k] * other [k x n]`, accumulated in the ikj order so the
    /// inner loop runs over contiguous rows of `other`.
    pub fn matmul(&self, other: &Tensor2) -> Result<Tensor2> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "matmul {}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = Tensor2::zeros(m, n);
        for i in 0..m {
            let a_row = self.row(i);
            let o_row = &mut out.data[i * n..(i + 1) * n];
            for p in 0..k {
                let a = a_row[p];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for j in 0..n {
                    o_row[j] += a * b_row[j];
                }
            }
        }
        Ok(out)
    }

    /// `self^T [m x k]^T=[k x m] -- returns self^T * other` where
    /// `self [m x k]`, `other [m x n]`, result `[k x n]`.
    pub fn matmul_at_b(&self, other: &Tensor2) -> Result<Tensor2> {
        if self.rows != other.rows {
            return Err(Error::Shape(format!(
                "matmul_at_b {}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = Tensor2::zeros(k, n);
        for r in 0..m {
            let a_row = self.row(r);
            let b_row = other.row(r);
            for i in 0..k {
                let a = a_row[i];
                if a == 0.0 {
                    continue;
                }
                let o_row = &mut out.data[i * n..(i + 1) * n];
                for j in 0..n {
                    o_row[j] += a * b_row[j];
                }
            }
        }
        Ok(out)
    }

    /// `self [m x k] * other^T` where `other [n x k]`, result `[m x n]`.
    pub fn matmul_a_bt(&self, other: &Tensor2) -> Result<Tensor2> {
        if self.cols != other.cols {
            return Err(Error::Shape(format!(
                "matmul_a_bt {}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let (m, k, n) = (self.rows, self.cols, other.rows);
        let mut out = Tensor2::zeros(m, n);
        for i in 0..m {
            let a_row = self.row(i);
            let o_row = &mut out.data[i * n..(i + 1) * n];
            for j in 0..n {
                let b_row = other.row(j);
                let mut acc = 0.0f32;
                for p in 0..k {
                    acc += a_row[p] * b_row[p];
                }
                o_row[j] = acc;
            }
        }
        Ok(out)
    }

    pub fn add_row_vector(&mut self, v: &[f32]) -> Result<()> {
        if v.len() != self.cols {
            return Err(Error::Shape(format!(
                "row vector length {} vs cols {}",
                v.len(),
                self.cols
            )));
        }
        for r in 0..self.rows {
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (x, b) in row.iter_mut().zip(v) {
                *x += b;
            }
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor2 {
        Tensor2 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn same_shape(&self, other: &Tensor2) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }
}
