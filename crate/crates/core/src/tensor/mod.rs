//! Dense NCHW arrays and the handful of kernels the fusion pipeline needs.
//!
//! Storage is `f32`. Reductions that feed normalisations (softmax, sigmoid,
//! means) accumulate in `f64` and round once on the way out. Every kernel is
//! a pure function with a fixed accumulation order, so identical inputs give
//! bit-identical outputs.

mod layer;
mod matrix;
mod ops;
mod rng;

use std::ops::Range;

pub(crate) use layer::join;
pub use layer::{Conv, Parameters};
pub use matrix::{matmul_batched, MatBatch};
pub(crate) use ops::softmax_slice;
pub use ops::{
    add, avg_pool2d, concat, conv2d, init_params, mean_axis, mul, relu, scale, sigmoid, softmax, upsample_nearest,
};
pub use rng::Rng;

use crate::error::{Error, Result};

/// Axis names for [`Tensor4`] dimensions.
pub const BATCH: usize = 0;
pub const CHANNEL: usize = 1;
pub const HEIGHT: usize = 2;
pub const WIDTH: usize = 3;

/// Row-major `(batch, channel, height, width)` array of finite `f32` values.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4 {
    dims: [usize; 4],
    data: Vec<f32>,
}

impl Tensor4 {
    /// Builds a tensor, rejecting length mismatches and non-finite values.
    pub fn new(dims: [usize; 4], data: Vec<f32>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return Err(Error::shape(format!(
                "dims {dims:?} need {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite value {} at flat index {i}",
                data[i]
            )));
        }
        Ok(Self { dims, data })
    }

    /// Caller guarantees the length; used by kernels whose outputs are finite
    /// by construction.
    pub(crate) fn from_raw(dims: [usize; 4], data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), dims.iter().product::<usize>());
        Self { dims, data }
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Self::full(dims, 0.0)
    }

    pub fn full(dims: [usize; 4], value: f32) -> Self {
        assert!(value.is_finite(), "fill value must be finite");
        Self::from_raw(dims, vec![value; dims.iter().product()])
    }

    /// Evaluates `f(b, c, y, x)` at every position.
    pub fn from_fn(dims: [usize; 4], mut f: impl FnMut(usize, usize, usize, usize) -> f32) -> Result<Self> {
        let [n, c, h, w] = dims;
        let mut data = Vec::with_capacity(n * c * h * w);
        for b in 0..n {
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f(b, ch, y, x));
                    }
                }
            }
        }
        Self::new(dims, data)
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn batch(&self) -> usize {
        self.dims[BATCH]
    }

    pub fn channels(&self) -> usize {
        self.dims[CHANNEL]
    }

    pub fn height(&self) -> usize {
        self.dims[HEIGHT]
    }

    pub fn width(&self) -> usize {
        self.dims[WIDTH]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    fn offset(&self, b: usize, c: usize, y: usize, x: usize) -> usize {
        let [_, cs, hs, ws] = self.dims;
        ((b * cs + c) * hs + y) * ws + x
    }

    pub fn at(&self, b: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.offset(b, c, y, x)]
    }

    /// One `H×W` plane.
    pub fn plane(&self, b: usize, c: usize) -> &[f32] {
        let hw = self.height() * self.width();
        let start = self.offset(b, c, 0, 0);
        &self.data[start..start + hw]
    }

    pub(crate) fn plane_mut(&mut self, b: usize, c: usize) -> &mut [f32] {
        let hw = self.height() * self.width();
        let start = self.offset(b, c, 0, 0);
        &mut self.data[start..start + hw]
    }

    /// Copy of batch element `b` as a `(1, C, H, W)` tensor.
    pub fn batch_item(&self, b: usize) -> Result<Tensor4> {
        if b >= self.batch() {
            return Err(Error::shape(format!(
                "batch index {b} out of range for batch {}",
                self.batch()
            )));
        }
        let per = self.channels() * self.height() * self.width();
        Ok(Self::from_raw(
            [1, self.channels(), self.height(), self.width()],
            self.data[b * per..(b + 1) * per].to_vec(),
        ))
    }

    /// Copy of a contiguous channel range.
    pub fn channel_range(&self, range: Range<usize>) -> Result<Tensor4> {
        if range.start > range.end || range.end > self.channels() {
            return Err(Error::shape(format!(
                "channel range {range:?} out of bounds for {} channels",
                self.channels()
            )));
        }
        let [n, c, h, w] = self.dims;
        let hw = h * w;
        let picked = range.end - range.start;
        let mut data = Vec::with_capacity(n * picked * hw);
        for b in 0..n {
            let base = b * c * hw;
            data.extend_from_slice(&self.data[base + range.start * hw..base + range.end * hw]);
        }
        Ok(Self::from_raw([n, picked, h, w], data))
    }

    /// Elementwise map. `f` must keep finite values finite.
    pub(crate) fn map(&self, f: impl Fn(f32) -> f32) -> Tensor4 {
        Self::from_raw(self.dims, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn max_abs_diff(&self, other: &Tensor4) -> Result<f32> {
        if self.dims != other.dims {
            return Err(Error::shape(format!(
                "cannot compare {:?} with {:?}",
                self.dims, other.dims
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }

    pub fn min_max(&self) -> Option<(f32, f32)> {
        let mut it = self.data.iter().copied();
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_length_mismatch_and_nan() {
        assert!(matches!(Tensor4::new([1, 1, 2, 2], vec![0.0; 3]), Err(Error::Shape(_))));
        assert!(matches!(
            Tensor4::new([1, 1, 1, 2], vec![0.0, f32::NAN]),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn channel_range_and_batch_item() {
        let t = Tensor4::from_fn([2, 3, 2, 2], |b, c, y, x| (b * 100 + c * 10 + y * 2 + x) as f32).unwrap();
        let mid = t.channel_range(1..3).unwrap();
        assert_eq!(mid.dims(), [2, 2, 2, 2]);
        assert_eq!(mid.at(1, 0, 1, 1), 113.0);
        let second = t.batch_item(1).unwrap();
        assert_eq!(second.at(0, 2, 0, 1), 121.0);
        assert!(t.batch_item(2).is_err());
        assert!(t.channel_range(2..4).is_err());
    }
}
