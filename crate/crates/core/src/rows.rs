//! Dense row-major storage for per-frame feature vectors.

use nalgebra::DMatrix;

/// `len()` rows of `dim()` reals, one row per frame, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRows {
    dim: usize,
    data: Vec<f64>,
}

impl FeatureRows {
    /// Panics if `data.len()` is not a multiple of `dim`, or `dim == 0`.
    pub fn new(dim: usize, data: Vec<f64>) -> Self {
        assert!(dim > 0, "feature dimension must be positive");
        assert_eq!(data.len() % dim, 0, "data length is not a multiple of dim");
        Self { dim, data }
    }

    pub fn zeros(len: usize, dim: usize) -> Self {
        Self::new(dim, vec![0.0; len * dim])
    }

    /// Builds from explicit rows. Panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let dim = rows.first().map_or(1, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            assert_eq!(r.as_ref().len(), dim, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self::new(dim, data)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Per-dimension mean over all rows.
    pub fn column_means(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        if self.is_empty() {
            return mean;
        }
        for row in self.rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        let n = self.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// Subtracts the per-dimension mean from every row.
    pub fn center(&mut self) {
        let mean = self.column_means();
        for row in self.data.chunks_exact_mut(self.dim) {
            for (v, m) in row.iter_mut().zip(&mean) {
                *v -= m;
            }
        }
    }

    /// Right-multiplies every row by `matrix` (`dim × out`), i.e. returns `self · matrix`.
    pub fn matmul(&self, matrix: &DMatrix<f64>) -> FeatureRows {
        assert_eq!(matrix.nrows(), self.dim, "inner dimensions disagree");
        let out_dim = matrix.ncols();
        if self.is_empty() {
            return FeatureRows::new(out_dim, Vec::new());
        }
        // Row-major (len × dim) is column-major (dim × len); compute (matrixᵀ · selfᵀ)
        // so the column-major result is the row-major product.
        let cols = DMatrix::from_column_slice(self.dim, self.len(), &self.data);
        let product = matrix.transpose() * cols;
        FeatureRows::new(out_dim, product.as_slice().to_vec())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
