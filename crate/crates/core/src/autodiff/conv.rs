//! Strided 2-D convolution and its transpose over `[batch, height, width,
//! channels]` tensors. Kernels are laid out `[k, k, in, out]`.

use super::{ops::dot, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Resolved extents of one convolution call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    /// Output extent of a forward convolution, or `None` if the stride does
    /// not tile the padded input exactly.
    pub fn conv_out(extent: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
        let padded = extent + 2 * pad;
        if padded < kernel || (padded - kernel) % stride != 0 {
            return None;
        }
        Some((padded - kernel) / stride + 1)
    }

    pub fn transpose_out(extent: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
        ((extent - 1) * stride + kernel).checked_sub(2 * pad).filter(|&e| e > 0)
    }
}

fn kernel_dims(op: &'static str, x: &Tensor, k: &Tensor) -> Result<(usize, usize, usize, usize, usize, usize)> {
    if x.rank() != 4 {
        return Err(Error::dim(op, format!("input must be [n,h,w,c], got {:?}", x.shape())));
    }
    if k.rank() != 4 || k.shape()[0] != k.shape()[1] {
        return Err(Error::dim(op, format!("kernel must be [k,k,in,out], got {:?}", k.shape())));
    }
    let (n, h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if k.shape()[2] != c {
        return Err(Error::dim(
            op,
            format!("kernel expects {} input channels, input has {c}", k.shape()[2]),
        ));
    }
    Ok((n, h, w, c, k.shape()[0], k.shape()[3]))
}

/// Visits every (input pixel, kernel tap, output pixel) triple that a
/// forward convolution connects. `up == false` is a strided convolution,
/// `up == true` its transpose.
fn for_each_tap(geom: &ConvGeometry, up: bool, mut f: impl FnMut(usize, usize, usize)) {
    let g = geom;
    let (small_h, small_w) = if up { (g.in_h, g.in_w) } else { (g.out_h, g.out_w) };
    let (big_h, big_w) = if up { (g.out_h, g.out_w) } else { (g.in_h, g.in_w) };
    for b in 0..g.batch {
        for sy in 0..small_h {
            for sx in 0..small_w {
                let small = (b * small_h + sy) * small_w + sx;
                for ky in 0..g.kernel {
                    let Some(by) = (sy * g.stride + ky).checked_sub(g.pad).filter(|&v| v < big_h) else {
                        continue;
                    };
                    for kx in 0..g.kernel {
                        let Some(bx) = (sx * g.stride + kx).checked_sub(g.pad).filter(|&v| v < big_w) else {
                            continue;
                        };
                        let big = (b * big_h + by) * big_w + bx;
                        let tap = ky * g.kernel + kx;
                        if up {
                            f(small, tap, big);
                        } else {
                            f(big, tap, small);
                        }
                    }
                }
            }
        }
    }
}

/// Forward kernel shared by both directions: `out[o, :] += x[i, ci] * K[tap, ci, :]`.
fn forward_kernel(geom: &ConvGeometry, up: bool, x: &[f64], k: &[f64], out: &mut [f64]) {
    let (ci_n, co_n) = (geom.in_c, geom.out_c);
    for_each_tap(geom, up, |i, tap, o| {
        let xin = &x[i * ci_n..(i + 1) * ci_n];
        let orow = &mut out[o * co_n..(o + 1) * co_n];
        for (ci, &xv) in xin.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let krow = &k[(tap * ci_n + ci) * co_n..(tap * ci_n + ci + 1) * co_n];
            for (ov, kv) in orow.iter_mut().zip(krow) {
                *ov += xv * kv;
            }
        }
    });
}

fn backward_kernel(
    tape: &Tape,
    grads: &mut [Option<Tensor>],
    x: Var,
    kernel: Var,
    geom: &ConvGeometry,
    up: bool,
    g: &Tensor,
) {
    let (ci_n, co_n) = (geom.in_c, geom.out_c);
    let xv = tape.value(x).data();
    let kv = tape.value(kernel).data();
    if let Some(slot) = tape.grad_slot(grads, x) {
        let dx = slot.data_mut();
        for_each_tap(geom, up, |i, tap, o| {
            let grow = &g.data()[o * co_n..(o + 1) * co_n];
            for ci in 0..ci_n {
                let krow = &kv[(tap * ci_n + ci) * co_n..(tap * ci_n + ci + 1) * co_n];
                dx[i * ci_n + ci] += dot(grow, krow);
            }
        });
    }
    if let Some(slot) = tape.grad_slot(grads, kernel) {
        let dk = slot.data_mut();
        for_each_tap(geom, up, |i, tap, o| {
            let grow = &g.data()[o * co_n..(o + 1) * co_n];
            for ci in 0..ci_n {
                let xval = xv[i * ci_n + ci];
                if xval == 0.0 {
                    continue;
                }
                let drow = &mut dk[(tap * ci_n + ci) * co_n..(tap * ci_n + ci + 1) * co_n];
                for (d, gv) in drow.iter_mut().zip(grow) {
                    *d += xval * gv;
                }
            }
        });
    }
}

pub(super) fn conv2d_backward(
    tape: &Tape,
    grads: &mut [Option<Tensor>],
    x: Var,
    kernel: Var,
    geom: &ConvGeometry,
    g: &Tensor,
) {
    backward_kernel(tape, grads, x, kernel, geom, false, g);
}

pub(super) fn conv_transpose2d_backward(
    tape: &Tape,
    grads: &mut [Option<Tensor>],
    x: Var,
    kernel: Var,
    geom: &ConvGeometry,
    g: &Tensor,
) {
    backward_kernel(tape, grads, x, kernel, geom, true, g);
}

impl Tape {
    /// Strided cross-correlation with symmetric zero padding.
    pub fn conv2d(&mut self, x: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        let (n, h, w, c, k, co) = kernel_dims("conv2d", self.value(x), self.value(kernel))?;
        let (Some(oh), Some(ow)) = (
            ConvGeometry::conv_out(h, k, stride, pad),
            ConvGeometry::conv_out(w, k, stride, pad),
        ) else {
            return Err(Error::dim(
                "conv2d",
                format!("{h}x{w} input does not tile with kernel {k}, stride {stride}, pad {pad}"),
            ));
        };
        let geom = ConvGeometry {
            batch: n,
            in_h: h,
            in_w: w,
            in_c: c,
            out_h: oh,
            out_w: ow,
            out_c: co,
            kernel: k,
            stride,
            pad,
        };
        let mut out = vec![0.0; n * oh * ow * co];
        forward_kernel(&geom, false, self.value(x).data(), self.value(kernel).data(), &mut out);
        let value = Tensor::new([n, oh, ow, co], out)?;
        self.push("conv2d", value, Op::Conv2d { x, kernel, geom }, &[x, kernel])
    }

    /// Adjoint of [`Tape::conv2d`] up to a swap of the kernel's channel axes:
    /// upsamples each spatial extent by `stride`.
    pub fn conv_transpose2d(&mut self, x: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        let (n, h, w, c, k, co) = kernel_dims("conv_transpose2d", self.value(x), self.value(kernel))?;
        let (Some(oh), Some(ow)) = (
            ConvGeometry::transpose_out(h, k, stride, pad),
            ConvGeometry::transpose_out(w, k, stride, pad),
        ) else {
            return Err(Error::dim("conv_transpose2d", format!("{h}x{w} input too small")));
        };
        let geom = ConvGeometry {
            batch: n,
            in_h: h,
            in_w: w,
            in_c: c,
            out_h: oh,
            out_w: ow,
            out_c: co,
            kernel: k,
            stride,
            pad,
        };
        let mut out = vec![0.0; n * oh * ow * co];
        forward_kernel(&geom, true, self.value(x).data(), self.value(kernel).data(), &mut out);
        let value = Tensor::new([n, oh, ow, co], out)?;
        self.push("conv_transpose2d", value, Op::ConvTranspose2d { x, kernel, geom }, &[x, kernel])
    }
}
