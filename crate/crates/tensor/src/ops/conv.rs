//! Direct (non-im2col) 2-D convolution kernels.
//!
//! Every output element is accumulated in a fixed loop order, so results are
//! bit-reproducible.

use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::tape::Var;
use crate::tensor::Tensor;

/// Indices `o` in `[0, count)` with `0 <= o*stride + offset - pad < bound`,
/// returned as a half-open range.
fn valid_range(count: usize, bound: usize, stride: usize, pad: usize, offset: usize) -> (usize, usize) {
    let lo = if pad > offset {
        (pad - offset).div_ceil(stride)
    } else {
        0
    };
    let top = bound + pad;
    if top <= offset {
        return (0, 0);
    }
    let hi = ((top - offset - 1) / stride + 1).min(count);
    (lo.min(hi), hi)
}

#[derive(Clone, Copy)]
struct Geom {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
}

pub fn conv2d_output_len(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    (kernel <= input + 2 * pad && stride > 0).then(|| (input + 2 * pad - kernel) / stride + 1)
}

pub fn conv_transpose2d_output_len(
    input: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    output_padding: usize,
) -> Option<usize> {
    ((input - 1) * stride + kernel + output_padding).checked_sub(2 * pad).filter(|&v| v > 0)
}

fn check_bias(op: &'static str, bias: &Var, channels: usize) -> Result<()> {
    if bias.shape() != [channels] {
        return Err(TensorError::dim(
            op,
            "bias",
            format!("expected [{channels}], got {:?}", bias.shape()),
        ));
    }
    Ok(())
}

impl Var {
    /// 2-D cross-correlation. `weight` is `[K, C, kh, kw]`.
    pub fn conv2d(
        &self,
        weight: &Var,
        bias: &Var,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Var> {
        const OP: &str = "conv2d";
        let (n, c, h, w) = self.value.dims4(OP)?;
        let (k, wc, kh, kw) = weight.value.dims4(OP)?;
        if wc != c {
            return Err(TensorError::dim(
                OP,
                "channels",
                format!("input has {c}, weight expects {wc}"),
            ));
        }
        check_bias(OP, bias, k)?;
        if stride.0 == 0 || stride.1 == 0 {
            return Err(TensorError::param(OP, "stride must be positive"));
        }
        let oh = conv2d_output_len(h, kh, stride.0, padding.0).ok_or_else(|| {
            TensorError::dim(OP, "height", format!("kernel {kh} exceeds padded input {}", h + 2 * padding.0))
        })?;
        let ow = conv2d_output_len(w, kw, stride.1, padding.1).ok_or_else(|| {
            TensorError::dim(OP, "width", format!("kernel {kw} exceeds padded input {}", w + 2 * padding.1))
        })?;
        let g = Geom {
            n,
            cin: c,
            h,
            w,
            cout: k,
            kh,
            kw,
            oh,
            ow,
            sh: stride.0,
            sw: stride.1,
            ph: padding.0,
            pw: padding.1,
        };
        let out = conv_forward(&g, self.value.data(), weight.value.data(), bias.value.data());
        let x = Rc::clone(&self.value);
        let wt = Rc::clone(&weight.value);
        self.tape.record(
            OP,
            Tensor::raw(vec![n, k, oh, ow], out),
            &[self, weight, bias],
            Box::new(move |gout, need| {
                let go = gout.data();
                let gx = need[0].then(|| Tensor::raw(vec![g.n, g.cin, g.h, g.w], conv_grad_input(&g, go, wt.data())));
                let gw = need[1].then(|| Tensor::raw(vec![g.cout, g.cin, g.kh, g.kw], conv_grad_weight(&g, go, x.data())));
                let gb = need[2].then(|| Tensor::raw(vec![g.cout], bias_grad(go, g.n, g.cout, g.oh * g.ow)));
                vec![gx, gw, gb]
            }),
        )
    }

    /// 2-D transposed convolution. `weight` is `[C_in, C_out, kh, kw]`;
    /// output size is `(H-1)*s - 2p + k + output_padding`.
    pub fn conv_transpose2d(
        &self,
        weight: &Var,
        bias: &Var,
        stride: (usize, usize),
        padding: (usize, usize),
        output_padding: (usize, usize),
    ) -> Result<Var> {
        const OP: &str = "conv_transpose2d";
        let (n, c, h, w) = self.value.dims4(OP)?;
        let (wc, k, kh, kw) = weight.value.dims4(OP)?;
        if wc != c {
            return Err(TensorError::dim(
                OP,
                "channels",
                format!("input has {c}, weight expects {wc}"),
            ));
        }
        check_bias(OP, bias, k)?;
        if stride.0 == 0 || stride.1 == 0 {
            return Err(TensorError::param(OP, "stride must be positive"));
        }
        if output_padding.0 >= stride.0 || output_padding.1 >= stride.1 {
            return Err(TensorError::param(
                OP,
                format!("output_padding {output_padding:?} must be smaller than stride {stride:?}"),
            ));
        }
        let oh = conv_transpose2d_output_len(h, kh, stride.0, padding.0, output_padding.0)
            .ok_or_else(|| TensorError::dim(OP, "height", "non-positive output size"))?;
        let ow = conv_transpose2d_output_len(w, kw, stride.1, padding.1, output_padding.1)
            .ok_or_else(|| TensorError::dim(OP, "width", "non-positive output size"))?;
        let g = Geom {
            n,
            cin: c,
            h,
            w,
            cout: k,
            kh,
            kw,
            oh,
            ow,
            sh: stride.0,
            sw: stride.1,
            ph: padding.0,
            pw: padding.1,
        };
        let out = convt_forward(&g, self.value.data(), weight.value.data(), bias.value.data());
        let x = Rc::clone(&self.value);
        let wt = Rc::clone(&weight.value);
        self.tape.record(
            OP,
            Tensor::raw(vec![n, k, oh, ow], out),
            &[self, weight, bias],
            Box::new(move |gout, need| {
                let go = gout.data();
                let gx = need[0].then(|| Tensor::raw(vec![g.n, g.cin, g.h, g.w], convt_grad_input(&g, go, wt.data())));
                let gw = need[1].then(|| Tensor::raw(vec![g.cin, g.cout, g.kh, g.kw], convt_grad_weight(&g, go, x.data())));
                let gb = need[2].then(|| Tensor::raw(vec![g.cout], bias_grad(go, g.n, g.cout, g.oh * g.ow)));
                vec![gx, gw, gb]
            }),
        )
    }

    /// Applies one fixed `[kh, kw]` kernel to every channel independently
    /// (valid padding). The kernel is a constant.
    pub fn depthwise_filter(&self, kernel: &Tensor) -> Result<Var> {
        const OP: &str = "depthwise_filter";
        let (n, c, h, w) = self.value.dims4(OP)?;
        let (kh, kw) = match *kernel.shape() {
            [kh, kw] => (kh, kw),
            _ => return Err(TensorError::dim(OP, "kernel rank", format!("{:?}", kernel.shape()))),
        };
        if kh > h || kw > w {
            return Err(TensorError::dim(OP, "spatial", format!("kernel {kh}x{kw} exceeds input {h}x{w}")));
        }
        let (oh, ow) = (h - kh + 1, w - kw + 1);
        let kd = kernel.data().to_vec();
        let x = self.value.data();
        let mut out = vec![0.0; n * c * oh * ow];
        for plane in 0..n * c {
            let xp = &x[plane * h * w..][..h * w];
            let op = &mut out[plane * oh * ow..][..oh * ow];
            for i in 0..kh {
                for j in 0..kw {
                    let wv = kd[i * kw + j];
                    for y in 0..oh {
                        let src = &xp[(y + i) * w + j..][..ow];
                        for (o, s) in op[y * ow..][..ow].iter_mut().zip(src) {
                            *o += wv * s;
                        }
                    }
                }
            }
        }
        self.tape.record(
            OP,
            Tensor::raw(vec![n, c, oh, ow], out),
            &[self],
            Box::new(move |gout, _| {
                let go = gout.data();
                let mut gx = vec![0.0; n * c * h * w];
                for plane in 0..n * c {
                    let gp = &go[plane * oh * ow..][..oh * ow];
                    let xp = &mut gx[plane * h * w..][..h * w];
                    for i in 0..kh {
                        for j in 0..kw {
                            let wv = kd[i * kw + j];
                            for y in 0..oh {
                                let dst = &mut xp[(y + i) * w + j..][..ow];
                                for (d, s) in dst.iter_mut().zip(&gp[y * ow..][..ow]) {
                                    *d += wv * s;
                                }
                            }
                        }
                    }
                }
                vec![Some(Tensor::raw(vec![n, c, h, w], gx))]
            }),
        )
    }
}

fn bias_grad(go: &[f64], n: usize, k: usize, plane: usize) -> Vec<f64> {
    let mut gb = vec![0.0; k];
    for ni in 0..n {
        for (ki, b) in gb.iter_mut().enumerate() {
            *b += go[(ni * k + ki) * plane..][..plane].iter().sum::<f64>();
        }
    }
    gb
}

/// `dst[o*stride + off] op= src[o]` style strided axpy used by all kernels.
#[inline]
fn axpy_scatter(dst: &mut [f64], src: &[f64], alpha: f64, stride: usize, start: usize, lo: usize, hi: usize) {
    if stride == 1 {
        let len = hi - lo;
        for (d, s) in dst[lo.wrapping_add(start)..][..len].iter_mut().zip(&src[lo..hi]) {
            *d += alpha * s;
        }
    } else {
        for o in lo..hi {
            dst[(o * stride).wrapping_add(start)] += alpha * src[o];
        }
    }
}

#[inline]
fn axpy_gather(dst: &mut [f64], src: &[f64], alpha: f64, stride: usize, start: usize, lo: usize, hi: usize) {
    if stride == 1 {
        let len = hi - lo;
        for (d, s) in dst[lo..hi].iter_mut().zip(&src[lo.wrapping_add(start)..][..len]) {
            *d += alpha * s;
        }
    } else {
        for o in lo..hi {
            dst[o] += alpha * src[(o * stride).wrapping_add(start)];
        }
    }
}

#[inline]
fn dot_strided(dense: &[f64], strided: &[f64], stride: usize, start: usize, lo: usize, hi: usize) -> f64 {
    if stride == 1 {
        let len = hi - lo;
        dense[lo..hi].iter().zip(&strided[lo.wrapping_add(start)..][..len]).map(|(a, b)| a * b).sum()
    } else {
        (lo..hi).map(|o| dense[o] * strided[(o * stride).wrapping_add(start)]).sum()
    }
}

// `start` is `offset - pad` in wrapping arithmetic; every visited index is
// in range by construction of `valid_range`.

fn conv_forward(g: &Geom, x: &[f64], wt: &[f64], bias: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; g.n * g.cout * g.oh * g.ow];
    for ni in 0..g.n {
        for ki in 0..g.cout {
            let op = &mut out[(ni * g.cout + ki) * g.oh * g.ow..][..g.oh * g.ow];
            op.fill(bias[ki]);
            for ci in 0..g.cin {
                let xp = &x[(ni * g.cin + ci) * g.h * g.w..][..g.h * g.w];
                for i in 0..g.kh {
                    let (ylo, yhi) = valid_range(g.oh, g.h, g.sh, g.ph, i);
                    for j in 0..g.kw {
                        let wv = wt[((ki * g.cin + ci) * g.kh + i) * g.kw + j];
                        let (xlo, xhi) = valid_range(g.ow, g.w, g.sw, g.pw, j);
                        for oy in ylo..yhi {
                            let iy = oy * g.sh + i - g.ph;
                            let xrow = &xp[iy * g.w..][..g.w];
                            let orow = &mut op[oy * g.ow..][..g.ow];
                            axpy_gather(orow, xrow, wv, g.sw, j.wrapping_sub(g.pw), xlo, xhi);
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv_grad_input(g: &Geom, go: &[f64], wt: &[f64]) -> Vec<f64> {
    let mut gx = vec![0.0; g.n * g.cin * g.h * g.w];
    for ni in 0..g.n {
        for ci in 0..g.cin {
            let gxp = &mut gx[(ni * g.cin + ci) * g.h * g.w..][..g.h * g.w];
            for ki in 0..g.cout {
                let gp = &go[(ni * g.cout + ki) * g.oh * g.ow..][..g.oh * g.ow];
                for i in 0..g.kh {
                    let (ylo, yhi) = valid_range(g.oh, g.h, g.sh, g.ph, i);
                    for j in 0..g.kw {
                        let wv = wt[((ki * g.cin + ci) * g.kh + i) * g.kw + j];
                        let (xlo, xhi) = valid_range(g.ow, g.w, g.sw, g.pw, j);
                        for oy in ylo..yhi {
                            let iy = oy * g.sh + i - g.ph;
                            let dst = &mut gxp[iy * g.w..][..g.w];
                            axpy_scatter(dst, &gp[oy * g.ow..][..g.ow], wv, g.sw, j.wrapping_sub(g.pw), xlo, xhi);
                        }
                    }
                }
            }
        }
    }
    gx
}

fn conv_grad_weight(g: &Geom, go: &[f64], x: &[f64]) -> Vec<f64> {
    let mut gw = vec![0.0; g.cout * g.cin * g.kh * g.kw];
    for ni in 0..g.n {
        for ki in 0..g.cout {
            let gp = &go[(ni * g.cout + ki) * g.oh * g.ow..][..g.oh * g.ow];
            for ci in 0..g.cin {
                let xp = &x[(ni * g.cin + ci) * g.h * g.w..][..g.h * g.w];
                for i in 0..g.kh {
                    let (ylo, yhi) = valid_range(g.oh, g.h, g.sh, g.ph, i);
                    for j in 0..g.kw {
                        let (xlo, xhi) = valid_range(g.ow, g.w, g.sw, g.pw, j);
                        let mut acc = 0.0;
                        for oy in ylo..yhi {
                            let iy = oy * g.sh + i - g.ph;
                            acc += dot_strided(&gp[oy * g.ow..][..g.ow], &xp[iy * g.w..][..g.w], g.sw, j.wrapping_sub(g.pw), xlo, xhi);
                        }
                        gw[((ki * g.cin + ci) * g.kh + i) * g.kw + j] += acc;
                    }
                }
            }
        }
    }
    gw
}

fn convt_forward(g: &Geom, x: &[f64], wt: &[f64], bias: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; g.n * g.cout * g.oh * g.ow];
    for ni in 0..g.n {
        for ki in 0..g.cout {
            let op = &mut out[(ni * g.cout + ki) * g.oh * g.ow..][..g.oh * g.ow];
            op.fill(bias[ki]);
            for ci in 0..g.cin {
                let xp = &x[(ni * g.cin + ci) * g.h * g.w..][..g.h * g.w];
                for i in 0..g.kh {
                    let (ylo, yhi) = valid_range(g.h, g.oh, g.sh, g.ph, i);
                    for j in 0..g.kw {
                        let wv = wt[((ci * g.cout + ki) * g.kh + i) * g.kw + j];
                        let (xlo, xhi) = valid_range(g.w, g.ow, g.sw, g.pw, j);
                        for iy in ylo..yhi {
                            let oy = iy * g.sh + i - g.ph;
                            let orow = &mut op[oy * g.ow..][..g.ow];
                            axpy_scatter(orow, &xp[iy * g.w..][..g.w], wv, g.sw, j.wrapping_sub(g.pw), xlo, xhi);
                        }
                    }
                }
            }
        }
    }
    out
}

fn convt_grad_input(g: &Geom, go: &[f64], wt: &[f64]) -> Vec<f64> {
    let mut gx = vec![0.0; g.n * g.cin * g.h * g.w];
    for ni in 0..g.n {
        for ci in 0..g.cin {
            let gxp = &mut gx[(ni * g.cin + ci) * g.h * g.w..][..g.h * g.w];
            for ki in 0..g.cout {
                let gp = &go[(ni * g.cout + ki) * g.oh * g.ow..][..g.oh * g.ow];
                for i in 0..g.kh {
                    let (ylo, yhi) = valid_range(g.h, g.oh, g.sh, g.ph, i);
                    for j in 0..g.kw {
                        let wv = wt[((ci * g.cout + ki) * g.kh + i) * g.kw + j];
                        let (xlo, xhi) = valid_range(g.w, g.ow, g.sw, g.pw, j);
                        for iy in ylo..yhi {
                            let oy = iy * g.sh + i - g.ph;
                            let dst = &mut gxp[iy * g.w..][..g.w];
                            axpy_gather(dst, &gp[oy * g.ow..][..g.ow], wv, g.sw, j.wrapping_sub(g.pw), xlo, xhi);
                        }
                    }
                }
            }
        }
    }
    gx
}

fn convt_grad_weight(g: &Geom, go: &[f64], x: &[f64]) -> Vec<f64> {
    let mut gw = vec![0.0; g.cin * g.cout * g.kh * g.kw];
    for ni in 0..g.n {
        for ci in 0..g.cin {
            let xp = &x[(ni * g.cin + ci) * g.h * g.w..][..g.h * g.w];
            for ki in 0..g.cout {
                let gp = &go[(ni * g.cout + ki) * g.oh * g.ow..][..g.oh * g.ow];
                for i in 0..g.kh {
                    let (ylo, yhi) = valid_range(g.h, g.oh, g.sh, g.ph, i);
                    for j in 0..g.kw {
                        let (xlo, xhi) = valid_range(g.w, g.ow, g.sw, g.pw, j);
                        let mut acc = 0.0;
                        for iy in ylo..yhi {
                            let oy = iy * g.sh + i - g.ph;
                            acc += dot_strided(&xp[iy * g.w..][..g.w], &gp[oy * g.ow..][..g.ow], g.sw, j.wrapping_sub(g.pw), xlo, xhi);
                        }
                        gw[((ci * g.cout + ki) * g.kh + i) * g.kw + j] += acc;
                    }
                }
            }
        }
    }
    gw
}
