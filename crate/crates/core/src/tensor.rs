//! Dense row-major `f64` arrays and the handful of kernels the networks need.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{input_err, Result};

/// A dense row-major array of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![0.0; len] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(input_err!("shape {:?} needs {} values, got {}", shape, len, data.len()));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; len] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Size of the leading (batch) axis.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Number of values per leading-axis entry.
    pub fn row_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.row_len();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.row_len();
        &mut self.data[i * w..(i + 1) * w]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != self.data.len() {
            return Err(input_err!("cannot reshape {:?} into {:?}", self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stacks rows `indices` of `self` along a new leading axis.
    pub fn gather_rows(&self, indices: &[usize]) -> Self {
        let w = self.row_len();
        let mut data = Vec::with_capacity(indices.len() * w);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Self { shape, data }
    }

    /// Concatenates two `[n, a]` and `[n, b]` matrices into `[n, a + b]`.
    pub fn concat_cols(a: &Tensor, b: &Tensor) -> Result<Self> {
        if a.shape.len() != 2 || b.shape.len() != 2 || a.rows() != b.rows() {
            return Err(input_err!("cannot concatenate {:?} and {:?}", a.shape, b.shape));
        }
        let (n, wa, wb) = (a.rows(), a.shape[1], b.shape[1]);
        let mut data = Vec::with_capacity(n * (wa + wb));
        for i in 0..n {
            data.extend_from_slice(a.row(i));
            data.extend_from_slice(b.row(i));
        }
        Ok(Self { shape: vec![n, wa + wb], data })
    }

    /// Inverse of [`Tensor::concat_cols`].
    pub fn split_cols(&self, left: usize) -> (Self, Self) {
        let (n, w) = (self.rows(), self.row_len());
        let right = w - left;
        let mut a = Vec::with_capacity(n * left);
        let mut b = Vec::with_capacity(n * right);
        for i in 0..n {
            let r = self.row(i);
            a.extend_from_slice(&r[..left]);
            b.extend_from_slice(&r[left..]);
        }
        (Self { shape: vec![n, left], data: a }, Self { shape: vec![n, right], data: b })
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    /// FNV-1a over the bit patterns of shape and values.
    pub fn fingerprint(&self, mut hash: u64) -> u64 {
        for &d in &self.shape {
            hash = fnv1a(hash, d as u64);
        }
        for v in &self.data {
            hash = fnv1a(hash, v.to_bits());
        }
        hash
    }
}

pub(crate) const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;

fn fnv1a(mut hash: u64, word: u64) -> u64 {
    for byte in word.to_le_bytes() {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Row-major matrix view with explicit strides, so transposes cost nothing.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: isize,
    pub col_stride: isize,
}

impl<'a> MatRef<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        debug_assert!(data.len() >= rows * cols);
        Self { data, rows, cols, row_stride: cols as isize, col_stride: 1 }
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }
}

/// `out = a · b + beta · out`, with `out` a contiguous `[a.rows, b.cols]` buffer.
pub(crate) fn gemm(a: MatRef<'_>, b: MatRef<'_>, beta: f64, out: &mut [f64]) {
    assert_eq!(a.cols, b.rows, "inner dimensions differ");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert!(out.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in &mut out[..m * n] {
            *v *= beta;
        }
        return;
    }
    // SAFETY: the strides describe in-bounds element offsets of `a.data`,
    // `b.data` and `out` as asserted above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a square-kernel 2-D convolution over NHWC data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.channels
    }

    pub fn out_positions(&self) -> usize {
        self.batch * self.out_height() * self.out_width()
    }

    /// Visits every (output position, patch column, input offset) triple whose
    /// input pixel lies inside the image.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (oh, ow) = (self.out_height(), self.out_width());
        let (h, w, c, k) = (self.height, self.width, self.channels, self.kernel);
        let pl = self.patch_len();
        for n in 0..self.batch {
            for oy in 0..oh {
                for ox in 0..ow {
                    let row = ((n * oh + oy) * ow + ox) * pl;
                    for ky in 0..k {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let src = ((n * h + iy as usize) * w + ix as usize) * c;
                            f(row + (ky * k + kx) * c, src, c);
                        }
                    }
                }
            }
        }
    }

    /// Unfolds `input` (`[batch, height, width, channels]`) into patch rows.
    pub fn im2col(&self, input: &[f64]) -> Vec<f64> {
        let mut cols = vec![0.0; self.out_positions() * self.patch_len()];
        self.for_each_tap(|dst, src, c| {
            cols[dst..dst + c].copy_from_slice(&input[src..src + c]);
        });
        cols
    }

    /// Adjoint of [`ConvGeometry::im2col`]: scatter-adds patch rows back.
    pub fn col2im(&self, cols: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.batch * self.height * self.width * self.channels];
        self.for_each_tap(|dst, src, c| {
            for (o, v) in out[src..src + c].iter_mut().zip(&cols[dst..dst + c]) {
                *o += v;
            }
        });
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    out[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        out
    }

    #[test]
    fn gemm_matches_naive_product_and_transposes() {
        let a: Vec<f64> = (0..6).map(|v| v as f64 - 2.0).collect();
        let b: Vec<f64> = (0..12).map(|v| (v as f64) * 0.5).collect();
        let mut out = vec![0.0; 8];
        gemm(MatRef::new(&a, 2, 3), MatRef::new(&b, 3, 4), 0.0, &mut out);
        assert_eq!(out, naive(&a, &b, 2, 3, 4));

        // (aᵀ)ᵀ == a
        let at: Vec<f64> = (0..3).flat_map(|j| (0..2).map(move |i| (i * 3 + j) as f64 - 2.0)).collect();
        let mut out2 = vec![0.0; 8];
        gemm(MatRef::new(&at, 3, 2).t(), MatRef::new(&b, 3, 4), 0.0, &mut out2);
        assert_eq!(out, out2);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeometry { batch: 2, height: 5, width: 4, channels: 3, kernel: 3, stride: 2, pad: 1 };
        let x: Vec<f64> = (0..2 * 5 * 4 * 3).map(|v| ((v * 7) % 11) as f64 - 5.0).collect();
        let y: Vec<f64> = (0..g.out_positions() * g.patch_len()).map(|v| ((v * 5) % 13) as f64 - 6.0).collect();
        let lhs: f64 = g.im2col(&x).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&g.col2im(&y)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
        assert_eq!((g.out_height(), g.out_width()), (3, 2));
    }

    #[test]
    fn concat_then_split_restores_both_halves() {
        let a = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(&[2, 1], vec![5.0, 6.0]).unwrap();
        let c = Tensor::concat_cols(&a, &b).unwrap();
        assert_eq!(c.data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let (a2, b2) = c.split_cols(2);
        assert_eq!((a2, b2), (a, b));
    }
}
