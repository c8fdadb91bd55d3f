use crate::error::{Error, Result};

/// A batch of equally sized row-major matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct MatBatch {
    batch: usize,
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl MatBatch {
    pub fn new(batch: usize, rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != batch * rows * cols {
            return Err(Error::shape(format!(
                "matrix batch {batch}x{rows}x{cols} needs {} values, got {}",
                batch * rows * cols,
                data.len()
            )));
        }
        Ok(Self {
            batch,
            rows,
            cols,
            data,
        })
    }

    pub fn zeros(batch: usize, rows: usize, cols: usize) -> Self {
        Self {
            batch,
            rows,
            cols,
            data: vec![0.0; batch * rows * cols],
        }
    }

    pub fn identity(batch: usize, n: usize) -> Self {
        let mut m = Self::zeros(batch, n, n);
        for b in 0..batch {
            for i in 0..n {
                m.data[(b * n + i) * n + i] = 1.0;
            }
        }
        m
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, b: usize, r: usize, c: usize) -> f32 {
        self.data[(b * self.rows + r) * self.cols + c]
    }

    /// Row `r` of matrix `b`.
    pub fn row(&self, b: usize, r: usize) -> &[f32] {
        let start = (b * self.rows + r) * self.cols;
        &self.data[start..start + self.cols]
    }

    pub(crate) fn row_mut(&mut self, b: usize, r: usize) -> &mut [f32] {
        let start = (b * self.rows + r) * self.cols;
        &mut self.data[start..start + self.cols]
    }

    pub fn transpose(&self) -> MatBatch {
        let mut out = MatBatch::zeros(self.batch, self.cols, self.rows);
        for b in 0..self.batch {
            for r in 0..self.rows {
                for c in 0..self.cols {
                    out.data[(b * self.cols + c) * self.rows + r] = self.get(b, r, c);
                }
            }
        }
        out
    }
}

/// Per-batch matrix product `a[b] · b[b]`. Dot products accumulate in `f64`.
pub fn matmul_batched(a: &MatBatch, b: &MatBatch) -> Result<MatBatch> {
    if a.batch != b.batch || a.cols != b.rows {
        return Err(Error::shape(format!(
            "cannot multiply {}x{}x{} by {}x{}x{}",
            a.batch, a.rows, a.cols, b.batch, b.rows, b.cols
        )));
    }
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut out = MatBatch::zeros(a.batch, m, n);
    let mut acc = vec![0f64; n];
    for bi in 0..a.batch {
        for i in 0..m {
            acc.iter_mut().for_each(|v| *v = 0.0);
            let arow = a.row(bi, i);
            for (p, &av) in arow.iter().enumerate().take(k) {
                let av = av as f64;
                for (slot, &bv) in acc.iter_mut().zip(b.row(bi, p)) {
                    *slot += av * bv as f64;
                }
            }
            for (o, v) in out.row_mut(bi, i).iter_mut().zip(&acc) {
                *o = *v as f32;
            }
        }
    }
    Ok(out)
}
