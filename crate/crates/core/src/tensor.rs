//! Dense 2-D row-major tensor of f64.
//!
//! Everything in this crate is at most two-dimensional: a batch of feature
//! vectors (B x d), a weight matrix, a bias row, or a 1 x 1 scalar.
//! Elementwise binary operations broadcast in four patterns: identical
//! shapes, a 1 x 1 scalar against anything, a 1 x C row against B x C, and
//! a B x 1 column against B x C.

use crate::error::{EvibError, Result};

/// Row-major matrix of f64. A scalar is represented as 1 x 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor from row-major data. Panics if the length mismatches.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "data length {} does not fill {rows}x{cols}",
            data.len()
        );
        Tensor { rows, cols, data }
    }

    /// All-zeros tensor.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// All-`v` tensor.
    pub fn full(rows: usize, cols: usize, v: f64) -> Self {
        Tensor { rows, cols, data: vec![v; rows * cols] }
    }

    /// 1 x 1 scalar tensor.
    pub fn scalar(v: f64) -> Self {
        Tensor { rows: 1, cols: 1, data: vec![v] }
    }

    /// Single row from a slice.
    pub fn row(values: &[f64]) -> Self {
        Tensor { rows: 1, cols: values.len(), data: values.to_vec() }
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

    /// The single element of a 1 x 1 tensor. Panics otherwise.
    pub fn item(&self) -> f64 {
        assert_eq!(self.shape(), (1, 1), "item() requires a 1x1 tensor");
        self.data[0]
    }

    /// One row as a slice.
    pub fn row_slice(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Applies `f` elementwise into a new tensor.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// True when every entry is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Elementwise binary op under the supported broadcast patterns.
    pub fn broadcast_zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (rows, cols) = broadcast_shape(self.shape(), other.shape()).ok_or_else(|| {
            EvibError::Dimension(format!(
                "cannot broadcast {:?} with {:?}",
                self.shape(),
                other.shape()
            ))
        })?;
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                out.push(f(self.bget(r, c), other.bget(r, c)));
            }
        }
        Ok(Tensor { rows, cols, data: out })
    }

    /// Broadcast-aware element access (valid for shapes that broadcast to
    /// a containing shape).
    fn bget(&self, r: usize, c: usize) -> f64 {
        let rr = if self.rows == 1 { 0 } else { r };
        let cc = if self.cols == 1 { 0 } else { c };
        self.data[rr * self.cols + cc]
    }

    /// Matrix product self (m x k) times other (k x n).
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols != other.rows {
            return Err(EvibError::Dimension(format!(
                "matmul inner dimensions disagree: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += a * brow[j];
                }
            }
        }
        Ok(Tensor { rows: m, cols: n, data: out })
    }

    /// Transpose.
    pub fn transpose(&self) -> Tensor {
        let mut out = vec![0.0; self.data.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        Tensor { rows: self.cols, cols: self.rows, data: out }
    }

    /// Sum of every element, as f64.
    pub fn sum_all(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Per-row sums: B x C -> B x 1.
    pub fn row_sums(&self) -> Tensor {
        let mut out = Vec::with_capacity(self.rows);
        for r in 0..self.rows {
            out.push(self.row_slice(r).iter().sum());
        }
        Tensor { rows: self.rows, cols: 1, data: out }
    }

    /// Per-column sums: B x C -> 1 x C.
    pub fn col_sums(&self) -> Tensor {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[c] += self.data[r * self.cols + c];
            }
        }
        Tensor { rows: 1, cols: self.cols, data: out }
    }

    /// Reduces this tensor to `shape` by summing over broadcast axes;
    /// the inverse of broadcasting for gradient accumulation.
    pub fn reduce_to(&self, rows: usize, cols: usize) -> Tensor {
        let mut t = self.clone();
        if rows == 1 && t.rows > 1 {
            t = t.col_sums();
        }
        if cols == 1 && t.cols > 1 {
            t = t.row_sums();
        }
        assert_eq!(t.shape(), (rows, cols), "reduce_to target is not a broadcast source");
        t
    }

    /// In-place elementwise add (shapes must match exactly).
    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape(), other.shape(), "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Squared L2 norm of all entries.
    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    /// Scales every entry in place.
    pub fn scale_assign(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }
}

/// Shape of the broadcast result, or None when incompatible.
/// Supported: equal shapes; 1 x 1 anywhere; a 1 x C row against B x C;
/// a B x 1 column against B x C.
fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> Option<(usize, usize)> {
    let rows = combine_dim(a.0, b.0)?;
    let cols = combine_dim(a.1, b.1)?;
    Some((rows, cols))
}

fn combine_dim(a: usize, b: usize) -> Option<usize> {
    if a == b {
        Some(a)
    } else if a == 1 {
        Some(b)
    } else if b == 1 {
        Some(a)
    } else {
        None
    }
}
