//! Direct (naive) 2-D convolution kernels over NCHW buffers.
//!
//! The loops are ordered so that the innermost loop walks one output row,
//! which keeps 1x1 convolutions close to an axpy over the spatial plane.

use super::TensorError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub out_h: usize,
    pub out_w: usize,
}

/// Output extent of a convolution along one axis.
pub fn conv_output_len(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

impl ConvGeometry {
    pub fn new(
        input: &[usize],
        kernel: &[usize],
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Self, TensorError> {
        let mismatch = || TensorError::ShapeMismatch {
            op: "conv2d",
            left: input.to_vec(),
            right: kernel.to_vec(),
        };
        if input.len() != 4 || kernel.len() != 4 {
            return Err(mismatch());
        }
        if stride == 0 || groups == 0 {
            return Err(TensorError::InvalidArgument(format!(
                "conv2d stride and groups must be >= 1 (stride {stride}, groups {groups})"
            )));
        }
        let (batch, in_channels, in_h, in_w) = (input[0], input[1], input[2], input[3]);
        let (out_channels, per_group, kernel_h, kernel_w) = (kernel[0], kernel[1], kernel[2], kernel[3]);
        if in_channels % groups != 0 || out_channels % groups != 0 || in_channels / groups != per_group {
            return Err(mismatch());
        }
        let out_h = conv_output_len(in_h, kernel_h, stride, padding).ok_or_else(mismatch)?;
        let out_w = conv_output_len(in_w, kernel_w, stride, padding).ok_or_else(mismatch)?;
        Ok(Self {
            batch,
            in_channels,
            in_h,
            in_w,
            out_channels,
            kernel_h,
            kernel_w,
            stride,
            padding,
            groups,
            out_h,
            out_w,
        })
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.batch, self.out_channels, self.out_h, self.out_w]
    }

    fn in_per_group(&self) -> usize {
        self.in_channels / self.groups
    }

    fn out_per_group(&self) -> usize {
        self.out_channels / self.groups
    }

    /// Half-open range of output positions whose input tap `k` lands inside `[0, len)`.
    fn valid_range(&self, k: usize, len: usize, out_len: usize) -> (usize, usize) {
        let s = self.stride as i64;
        let p = self.padding as i64;
        let k = k as i64;
        // i = o*s + k - p  must satisfy 0 <= i < len
        let lo = (p - k).max(0);
        let lo = (lo + s - 1) / s;
        let hi_num = len as i64 - 1 + p - k;
        if hi_num < 0 {
            return (0, 0);
        }
        let hi = (hi_num / s + 1).min(out_len as i64);
        if lo >= hi {
            (0, 0)
        } else {
            (lo as usize, hi as usize)
        }
    }

    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize, usize, usize, usize, usize, usize)) {
        // f(n, oc, ic, weight_index, ki, kj, in_plane, out_plane)
        let ipg = self.in_per_group();
        let opg = self.out_per_group();
        let in_plane = self.in_h * self.in_w;
        let out_plane = self.out_h * self.out_w;
        for n in 0..self.batch {
            for oc in 0..self.out_channels {
                let g = oc / opg;
                for icg in 0..ipg {
                    let ic = g * ipg + icg;
                    for ki in 0..self.kernel_h {
                        for kj in 0..self.kernel_w {
                            let widx = ((oc * ipg + icg) * self.kernel_h + ki) * self.kernel_w + kj;
                            f(
                                n,
                                oc,
                                ic,
                                widx,
                                ki,
                                kj,
                                (n * self.in_channels + ic) * in_plane,
                                (n * self.out_channels + oc) * out_plane,
                            );
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward(geom: &ConvGeometry, input: &[f64], kernel: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; geom.output_shape().iter().product()];
    let (s, p) = (geom.stride, geom.padding);
    geom.for_each_tap(|_, _, _, widx, ki, kj, in_base, out_base| {
        let w = kernel[widx];
        let (oh_lo, oh_hi) = geom.valid_range(ki, geom.in_h, geom.out_h);
        let (ow_lo, ow_hi) = geom.valid_range(kj, geom.in_w, geom.out_w);
        for oh in oh_lo..oh_hi {
            let ih = oh * s + ki - p;
            let in_row = &input[in_base + ih * geom.in_w..in_base + (ih + 1) * geom.in_w];
            let out_row = &mut out[out_base + oh * geom.out_w..out_base + (oh + 1) * geom.out_w];
            if s == 1 {
                let off = kj as isize - p as isize;
                for ow in ow_lo..ow_hi {
                    out_row[ow] += w * in_row[(ow as isize + off) as usize];
                }
            } else {
                for ow in ow_lo..ow_hi {
                    out_row[ow] += w * in_row[ow * s + kj - p];
                }
            }
        }
    });
    out
}

/// Returns `(grad_input, grad_kernel)` for upstream gradient `grad_out`.
pub fn conv2d_backward(
    geom: &ConvGeometry,
    input: &[f64],
    kernel: &[f64],
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let mut grad_in = vec![0.0; input.len()];
    let mut grad_k = vec![0.0; kernel.len()];
    let (s, p) = (geom.stride, geom.padding);
    geom.for_each_tap(|_, _, _, widx, ki, kj, in_base, out_base| {
        let w = kernel[widx];
        let (oh_lo, oh_hi) = geom.valid_range(ki, geom.in_h, geom.out_h);
        let (ow_lo, ow_hi) = geom.valid_range(kj, geom.in_w, geom.out_w);
        let mut acc = 0.0;
        for oh in oh_lo..oh_hi {
            let ih = oh * s + ki - p;
            let in_off = in_base + ih * geom.in_w;
            let go_row = &grad_out[out_base + oh * geom.out_w..out_base + (oh + 1) * geom.out_w];
            for ow in ow_lo..ow_hi {
                let iw = ow * s + kj - p;
                let go = go_row[ow];
                acc += go * input[in_off + iw];
                grad_in[in_off + iw] += w * go;
            }
        }
        grad_k[widx] += acc;
    });
    (grad_in, grad_k)
}
