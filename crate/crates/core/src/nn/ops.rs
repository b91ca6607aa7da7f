//! Forward kernels for each layer kind. Images are `H×W×C` row-major, conv
//! weights `kh×kw×C×F`, dense weights `n×m`.

use crate::error::{ensure, Result};
use crate::{Scalar, Tensor};

use super::Padding;

/// Resolved geometry of one convolution: input/output extents and the
/// top-left padding offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub filters: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

fn axis(input: usize, kernel: usize, stride: usize, padding: Padding, name: &str) -> Result<(usize, usize)> {
    match padding {
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            Ok((out, total / 2))
        }
        Padding::Valid => {
            ensure!(
                input >= kernel,
                "{name}: input extent {input} smaller than kernel {kernel} under valid padding"
            );
            Ok(((input - kernel) / stride + 1, 0))
        }
    }
}

impl ConvGeometry {
    pub fn new(
        input_shape: &[usize],
        kernel_h: usize,
        kernel_w: usize,
        filters: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        ensure!(input_shape.len() == 3, "conv2d input must be H×W×C, got shape {input_shape:?}");
        ensure!(kernel_h > 0 && kernel_w > 0, "conv2d kernel dims must be positive");
        ensure!(filters > 0, "conv2d filter count must be positive");
        ensure!(stride >= 1, "conv2d stride must be at least 1");
        let (in_h, in_w, in_c) = (input_shape[0], input_shape[1], input_shape[2]);
        let (out_h, pad_top) = axis(in_h, kernel_h, stride, padding, "height")?;
        let (out_w, pad_left) = axis(in_w, kernel_w, stride, padding, "width")?;
        Ok(Self { in_h, in_w, in_c, kernel_h, kernel_w, filters, stride, out_h, out_w, pad_top, pad_left })
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.kernel_h, self.kernel_w, self.in_c, self.filters]
    }

    pub fn output_shape(&self) -> [usize; 3] {
        [self.out_h, self.out_w, self.filters]
    }

    /// Input row/column for kernel tap `k` of output position `o`, or `None`
    /// when the tap lands in padding.
    #[inline]
    pub fn input_row(&self, out_y: usize, ky: usize) -> Option<usize> {
        (out_y * self.stride + ky).checked_sub(self.pad_top).filter(|&y| y < self.in_h)
    }

    #[inline]
    pub fn input_col(&self, out_x: usize, kx: usize) -> Option<usize> {
        (out_x * self.stride + kx).checked_sub(self.pad_left).filter(|&x| x < self.in_w)
    }

    pub(crate) fn check(&self, input: &[usize], weights: &[usize], bias_len: usize) -> Result<()> {
        ensure!(
            input == [self.in_h, self.in_w, self.in_c],
            "conv2d input shape {input:?} does not match geometry {:?}",
            [self.in_h, self.in_w, self.in_c]
        );
        ensure!(
            weights == self.weight_shape(),
            "conv2d weight shape {weights:?} does not match kh×kw×C×F {:?}",
            self.weight_shape()
        );
        ensure!(bias_len == self.filters, "conv2d bias length {bias_len} != filter count {}", self.filters);
        Ok(())
    }
}

pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    ensure!(input.rank() == 3, "conv2d input must be H×W×C, got shape {:?}", input.shape());
    ensure!(weights.rank() == 4, "conv2d weights must be kh×kw×C×F, got shape {:?}", weights.shape());
    let ws = weights.shape();
    ensure!(
        ws[2] == input.shape()[2],
        "conv2d channel mismatch: input has {} channels, weights expect {}",
        input.shape()[2],
        ws[2]
    );
    let geo = ConvGeometry::new(input.shape(), ws[0], ws[1], ws[3], stride, padding)?;
    conv2d_with_geometry(&geo, input, weights, bias)
}

pub(crate) fn conv2d_with_geometry<T: Scalar>(
    geo: &ConvGeometry,
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    geo.check(input.shape(), weights.shape(), bias.len())?;
    let (c, f) = (geo.in_c, geo.filters);
    let x = input.data();
    let w = weights.data();
    let mut out = vec![T::zero(); geo.out_h * geo.out_w * f];
    for oy in 0..geo.out_h {
        for ox in 0..geo.out_w {
            let acc = &mut out[(oy * geo.out_w + ox) * f..][..f];
            for ky in 0..geo.kernel_h {
                let Some(iy) = geo.input_row(oy, ky) else { continue };
                for kx in 0..geo.kernel_w {
                    let Some(ix) = geo.input_col(ox, kx) else { continue };
                    let pixel = &x[(iy * geo.in_w + ix) * c..][..c];
                    let taps = &w[(ky * geo.kernel_w + kx) * c * f..][..c * f];
                    for (ci, &a) in pixel.iter().enumerate() {
                        for (o, &wv) in acc.iter_mut().zip(&taps[ci * f..(ci + 1) * f]) {
                            *o += a * wv;
                        }
                    }
                }
            }
            for (o, &b) in acc.iter_mut().zip(bias.data()) {
                *o += b;
            }
        }
    }
    Tensor::new(geo.output_shape().to_vec(), out)
}

/// 2×2 max pooling with stride 2. Returns the pooled tensor and, per output
/// element, the flat input index of the winning element (first in row-major
/// order on ties). Odd trailing rows/columns are dropped.
pub fn maxpool2d_forward<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    ensure!(input.rank() == 3, "maxpool2d input must be H×W×C, got shape {:?}", input.shape());
    let (h, w, c) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    ensure!(h >= 2, "maxpool2d height {h} is smaller than the 2×2 window");
    ensure!(w >= 2, "maxpool2d width {w} is smaller than the 2×2 window");
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(oh * ow * c);
    let mut argmax = Vec::with_capacity(oh * ow * c);
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best = ((2 * oy) * w + 2 * ox) * c + ch;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = ((2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![oh, ow, c], out)?, argmax))
}

pub fn relu_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn dense_forward<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    ensure!(weights.rank() == 2, "dense weights must be n×m, got shape {:?}", weights.shape());
    let (n, m) = (weights.shape()[0], weights.shape()[1]);
    ensure!(input.rank() == 1, "dense input must be a vector, got shape {:?}", input.shape());
    ensure!(input.len() == n, "dense input length {} != weight rows {n}", input.len());
    ensure!(bias.len() == m, "dense bias length {} != weight columns {m}", bias.len());
    let w = weights.data();
    let mut out = vec![T::zero(); m];
    for (i, &a) in input.data().iter().enumerate() {
        for (o, &wv) in out.iter_mut().zip(&w[i * m..(i + 1) * m]) {
            *o += a * wv;
        }
    }
    for (o, &b) in out.iter_mut().zip(bias.data()) {
        *o += b;
    }
    Tensor::vector(out)
}

/// Softmax over all elements, shifted by the maximum so large logits do not
/// overflow.
pub fn softmax_forward<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let max = logits.data().iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.data().iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    Tensor::new(logits.shape().to_vec(), exps.into_iter().map(|e| e / total).collect())
        .expect("softmax preserves shape")
}
