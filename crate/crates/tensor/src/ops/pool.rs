use crate::error::{Result, TensorError};
use crate::tape::Var;
use crate::tensor::Tensor;

fn pooled_len(op: &'static str, axis: &str, input: usize, kernel: usize, stride: usize) -> Result<usize> {
    if kernel == 0 || stride == 0 {
        return Err(TensorError::param(op, "kernel and stride must be positive"));
    }
    if kernel > input {
        return Err(TensorError::dim(op, axis, format!("kernel {kernel} exceeds input {input}")));
    }
    Ok((input - kernel) / stride + 1)
}

impl Var {
    /// Max pooling without padding. Ties resolve to the first element of the
    /// window in row-major order.
    pub fn max_pool2d(&self, kernel: (usize, usize), stride: (usize, usize)) -> Result<Var> {
        const OP: &str = "max_pool2d";
        let (n, c, h, w) = self.value.dims4(OP)?;
        let oh = pooled_len(OP, "height", h, kernel.0, stride.0)?;
        let ow = pooled_len(OP, "width", w, kernel.1, stride.1)?;
        let x = self.value.data();
        let mut out = vec![0.0; n * c * oh * ow];
        let mut arg = vec![0usize; n * c * oh * ow];
        for plane in 0..n * c {
            let xp = &x[plane * h * w..][..h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut at = 0;
                    for i in 0..kernel.0 {
                        let row = (oy * stride.0 + i) * w + ox * stride.1;
                        for j in 0..kernel.1 {
                            if xp[row + j] > best {
                                best = xp[row + j];
                                at = row + j;
                            }
                        }
                    }
                    let slot = (plane * oh + oy) * ow + ox;
                    out[slot] = best;
                    arg[slot] = at;
                }
            }
        }
        self.tape.note_branch(arg.iter().map(|&a| a as u64));
        self.tape.record(
            OP,
            Tensor::raw(vec![n, c, oh, ow], out),
            &[self],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; n * c * h * w];
                let plane_out = oh * ow;
                for (slot, gv) in g.data().iter().enumerate() {
                    gx[(slot / plane_out) * h * w + arg[slot]] += gv;
                }
                vec![Some(Tensor::raw(vec![n, c, h, w], gx))]
            }),
        )
    }

    /// Average pooling without padding.
    pub fn avg_pool2d(&self, kernel: (usize, usize), stride: (usize, usize)) -> Result<Var> {
        const OP: &str = "avg_pool2d";
        let (n, c, h, w) = self.value.dims4(OP)?;
        let oh = pooled_len(OP, "height", h, kernel.0, stride.0)?;
        let ow = pooled_len(OP, "width", w, kernel.1, stride.1)?;
        let scale = 1.0 / (kernel.0 * kernel.1) as f64;
        let x = self.value.data();
        let mut out = vec![0.0; n * c * oh * ow];
        for plane in 0..n * c {
            let xp = &x[plane * h * w..][..h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for i in 0..kernel.0 {
                        let row = (oy * stride.0 + i) * w + ox * stride.1;
                        acc += xp[row..][..kernel.1].iter().sum::<f64>();
                    }
                    out[(plane * oh + oy) * ow + ox] = acc * scale;
                }
            }
        }
        self.tape.record(
            OP,
            Tensor::raw(vec![n, c, oh, ow], out),
            &[self],
            Box::new(move |g, _| {
                let g = g.data();
                let mut gx = vec![0.0; n * c * h * w];
                for plane in 0..n * c {
                    let gp = &mut gx[plane * h * w..][..h * w];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let gv = g[(plane * oh + oy) * ow + ox] * scale;
                            for i in 0..kernel.0 {
                                let row = (oy * stride.0 + i) * w + ox * stride.1;
                                for d in &mut gp[row..][..kernel.1] {
                                    *d += gv;
                                }
                            }
                        }
                    }
                }
                vec![Some(Tensor::raw(vec![n, c, h, w], gx))]
            }),
        )
    }

    /// Mean over the spatial axes, `[N,C,H,W] -> [N,C,1,1]`.
    pub fn avg_pool_global(&self) -> Result<Var> {
        let (n, c, h, w) = self.value.dims4("avg_pool_global")?;
        self.reshape([n, c, h * w])?.mean_axis(2, true)?.reshape([n, c, 1, 1])
    }

    /// Max over the spatial axes, `[N,C,H,W] -> [N,C,1,1]`.
    pub fn max_pool_global(&self) -> Result<Var> {
        let (n, c, h, w) = self.value.dims4("max_pool_global")?;
        self.reshape([n, c, h * w])?.max_axis(2, true)?.reshape([n, c, 1, 1])
    }
}
