use crate::error::{Result, TensorError};
use crate::tape::Var;
use crate::tensor::Tensor;

/// Splits `shape` around `axis` into `(outer, len, inner)`.
fn split(op: &'static str, shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(TensorError::dim(
            op,
            format!("axis {axis}"),
            format!("out of range for shape {shape:?}"),
        ));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

fn reduced_shape(shape: &[usize], axis: usize, keepdim: bool) -> Vec<usize> {
    let mut s = shape.to_vec();
    if keepdim {
        s[axis] = 1;
    } else {
        s.remove(axis);
    }
    s
}

impl Var {
    /// Sum of all elements as a rank-0 scalar.
    pub fn sum(&self) -> Result<Var> {
        let shape = self.shape().to_vec();
        self.tape.record(
            "sum",
            Tensor::scalar(self.value.sum()),
            &[self],
            Box::new(move |g, _| vec![Some(Tensor::full(shape.clone(), g.item()))]),
        )
    }

    pub fn mean(&self) -> Result<Var> {
        let n = self.value.numel() as f64;
        let shape = self.shape().to_vec();
        self.tape.record(
            "mean",
            Tensor::scalar(self.value.sum() / n),
            &[self],
            Box::new(move |g, _| vec![Some(Tensor::full(shape.clone(), g.item() / n))]),
        )
    }

    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Result<Var> {
        self.axis_linear("sum_axis", axis, keepdim, 1.0)
    }

    pub fn mean_axis(&self, axis: usize, keepdim: bool) -> Result<Var> {
        let len = self.shape().get(axis).copied().unwrap_or(1);
        self.axis_linear("mean_axis", axis, keepdim, 1.0 / len as f64)
    }

    fn axis_linear(&self, op: &'static str, axis: usize, keepdim: bool, scale: f64) -> Result<Var> {
        let (outer, len, inner) = split(op, self.shape(), axis)?;
        let x = self.value.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..len {
                let src = &x[(o * len + k) * inner..][..inner];
                let dst = &mut out[o * inner..][..inner];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        for v in &mut out {
            *v *= scale;
        }
        let in_shape = self.shape().to_vec();
        self.tape.record(
            op,
            Tensor::raw(reduced_shape(&in_shape, axis, keepdim), out),
            &[self],
            Box::new(move |g, _| {
                let g = g.data();
                let mut gx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for k in 0..len {
                        let dst = &mut gx[(o * len + k) * inner..][..inner];
                        for (d, s) in dst.iter_mut().zip(&g[o * inner..][..inner]) {
                            *d = s * scale;
                        }
                    }
                }
                vec![Some(Tensor::raw(in_shape.clone(), gx))]
            }),
        )
    }

    /// Maximum along `axis`. Ties resolve to the lowest index, which also
    /// receives the whole gradient.
    pub fn max_axis(&self, axis: usize, keepdim: bool) -> Result<Var> {
        let (outer, len, inner) = split("max_axis", self.shape(), axis)?;
        let x = self.value.data();
        let mut out = vec![f64::NEG_INFINITY; outer * inner];
        let mut arg = vec![0usize; outer * inner];
        for o in 0..outer {
            for k in 0..len {
                for i in 0..inner {
                    let v = x[(o * len + k) * inner + i];
                    let slot = o * inner + i;
                    if v > out[slot] {
                        out[slot] = v;
                        arg[slot] = k;
                    }
                }
            }
        }
        self.tape.note_branch(arg.iter().map(|&a| a as u64));
        let in_shape = self.shape().to_vec();
        self.tape.record(
            "max_axis",
            Tensor::raw(reduced_shape(&in_shape, axis, keepdim), out),
            &[self],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        let slot = o * inner + i;
                        gx[(o * len + arg[slot]) * inner + i] = g.data()[slot];
                    }
                }
                vec![Some(Tensor::raw(in_shape.clone(), gx))]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;

    #[test]
    fn axis_sums_and_means() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::new([2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        assert_eq!(x.sum_axis(0, false).unwrap().value().data(), &[5.0, 7.0, 9.0]);
        assert_eq!(x.mean_axis(1, true).unwrap().value().data(), &[2.0, 5.0]);
        assert_eq!(x.mean_axis(1, true).unwrap().shape(), &[2, 1]);
        assert_eq!(x.mean().unwrap().value().item(), 3.5);
    }

    #[test]
    fn max_axis_ties_take_lowest_index() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::new([1, 3], vec![2.0, 2.0, 1.0]).unwrap(), true);
        let m = x.max_axis(1, false).unwrap();
        assert_eq!(m.value().data(), &[2.0]);
        let g = m.sum().unwrap().backward().unwrap();
        assert_eq!(g.get(&x).unwrap().data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn axis_out_of_range() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::ones([2]));
        assert!(x.sum_axis(1, false).is_err());
    }
}
