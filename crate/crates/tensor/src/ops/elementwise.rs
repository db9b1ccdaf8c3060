use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::tape::Var;
use crate::tensor::Tensor;

/// Numpy-style broadcast of two shapes.
pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(TensorError::dim(
                    op,
                    format!("axis {i}"),
                    format!("cannot broadcast {a:?} with {b:?}"),
                ));
            }
        };
    }
    Ok(out)
}

/// Materializes `t` broadcast to `out_shape`.
pub(crate) fn expand(t: &Tensor, out_shape: &[usize]) -> Vec<f64> {
    if t.shape() == out_shape {
        return t.data().to_vec();
    }
    let strides = broadcast_strides(t.shape(), out_shape);
    let n: usize = out_shape.iter().product();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; out_shape.len()];
    let mut offset = 0usize;
    for _ in 0..n {
        out.push(t.data()[offset]);
        // odometer increment
        for d in (0..out_shape.len()).rev() {
            idx[d] += 1;
            offset += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            offset -= strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    out
}

/// Sums a gradient of shape `from` down to the broadcast source shape `to`.
pub(crate) fn reduce_to(grad: &[f64], from: &[usize], to: &[usize]) -> Tensor {
    if from == to {
        return Tensor::raw(to.to_vec(), grad.to_vec());
    }
    let strides = broadcast_strides(to, from);
    let mut out = vec![0.0; to.iter().product()];
    let mut idx = vec![0usize; from.len()];
    let mut offset = 0usize;
    for &g in grad {
        out[offset] += g;
        for d in (0..from.len()).rev() {
            idx[d] += 1;
            offset += strides[d];
            if idx[d] < from[d] {
                break;
            }
            offset -= strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    Tensor::raw(to.to_vec(), out)
}

/// Strides of `src` when viewed as `out`; broadcast axes get stride 0.
fn broadcast_strides(src: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for i in (0..src.len()).rev() {
        let d = rank - src.len() + i;
        strides[d] = if src[i] == 1 { 0 } else { acc };
        acc *= src[i];
    }
    strides
}

#[derive(Clone, Copy)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryKind {
    fn name(self) -> &'static str {
        match self {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
        }
    }

    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryKind::Add => a + b,
            BinaryKind::Sub => a - b,
            BinaryKind::Mul => a * b,
            BinaryKind::Div => a / b,
        }
    }
}

impl Var {
    fn binary(&self, other: &Var, kind: BinaryKind) -> Result<Var> {
        let op = kind.name();
        let out_shape = broadcast_shape(op, self.shape(), other.shape())?;
        let a = Rc::new(expand(&self.value, &out_shape));
        let b = Rc::new(expand(&other.value, &out_shape));
        let data: Vec<f64> = a.iter().zip(b.iter()).map(|(&x, &y)| kind.apply(x, y)).collect();
        let a_shape = self.shape().to_vec();
        let b_shape = other.shape().to_vec();
        let shape = out_shape.clone();
        self.tape.record(
            op,
            Tensor::raw(out_shape, data),
            &[self, other],
            Box::new(move |g, need| {
                let g = g.data();
                let ga = need[0].then(|| {
                    let local: Vec<f64> = match kind {
                        BinaryKind::Add | BinaryKind::Sub => g.to_vec(),
                        BinaryKind::Mul => g.iter().zip(b.iter()).map(|(g, y)| g * y).collect(),
                        BinaryKind::Div => g.iter().zip(b.iter()).map(|(g, y)| g / y).collect(),
                    };
                    reduce_to(&local, &shape, &a_shape)
                });
                let gb = need[1].then(|| {
                    let local: Vec<f64> = match kind {
                        BinaryKind::Add => g.to_vec(),
                        BinaryKind::Sub => g.iter().map(|g| -g).collect(),
                        BinaryKind::Mul => g.iter().zip(a.iter()).map(|(g, x)| g * x).collect(),
                        BinaryKind::Div => g
                            .iter()
                            .zip(a.iter().zip(b.iter()))
                            .map(|(g, (x, y))| -g * x / (y * y))
                            .collect(),
                    };
                    reduce_to(&local, &shape, &b_shape)
                });
                vec![ga, gb]
            }),
        )
    }

    pub fn add(&self, other: &Var) -> Result<Var> {
        self.binary(other, BinaryKind::Add)
    }

    pub fn sub(&self, other: &Var) -> Result<Var> {
        self.binary(other, BinaryKind::Sub)
    }

    /// Elementwise (broadcasting) product.
    pub fn mul(&self, other: &Var) -> Result<Var> {
        self.binary(other, BinaryKind::Mul)
    }

    pub fn div(&self, other: &Var) -> Result<Var> {
        self.binary(other, BinaryKind::Div)
    }

    /// Elementwise map with derivative `df(x, y)` where `y = f(x)`.
    fn unary(
        &self,
        op: &'static str,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Result<Var> {
        let out = self.tape.prepare(op, self.value.map(f))?;
        let input = Rc::clone(&self.value);
        let output = Rc::clone(&out);
        self.tape.push(
            out,
            &[self],
            Box::new(move |g, _| {
                let data = g
                    .data()
                    .iter()
                    .zip(input.data().iter().zip(output.data()))
                    .map(|(g, (&x, &y))| g * df(x, y))
                    .collect();
                vec![Some(Tensor::raw(g.shape().to_vec(), data))]
            }),
        )
    }

    pub fn add_scalar(&self, c: f64) -> Result<Var> {
        self.unary("add_scalar", move |x| x + c, |_, _| 1.0)
    }

    pub fn mul_scalar(&self, c: f64) -> Result<Var> {
        self.unary("mul_scalar", move |x| x * c, move |_, _| c)
    }

    pub fn neg(&self) -> Result<Var> {
        self.mul_scalar(-1.0)
    }

    /// ReLU; the subgradient at 0 is taken as 0.
    pub fn relu(&self) -> Result<Var> {
        self.tape
            .note_branch(self.value.data().iter().map(|&x| (x > 0.0) as u64));
        self.unary("relu", |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(&self) -> Result<Var> {
        self.unary("sigmoid", sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn square(&self) -> Result<Var> {
        self.unary("square", |x| x * x, |x, _| 2.0 * x)
    }

    /// Square root; the derivative is undefined at 0 and reported as an error
    /// through the non-finite check when a zero input reaches backward.
    pub fn sqrt(&self) -> Result<Var> {
        if let Some(i) = self.value.data().iter().position(|&x| x < 0.0) {
            return Err(TensorError::param("sqrt", format!("negative input at flat index {i}")));
        }
        self.unary("sqrt", f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn abs(&self) -> Result<Var> {
        self.tape
            .note_branch(self.value.data().iter().map(|&x| (x >= 0.0) as u64));
        self.unary("abs", f64::abs, |x, _| if x >= 0.0 { 1.0 } else { -1.0 })
    }

    /// `x^p` for strictly positive inputs.
    pub fn pow_scalar(&self, p: f64) -> Result<Var> {
        if let Some(i) = self.value.data().iter().position(|&x| x <= 0.0) {
            return Err(TensorError::param(
                "pow_scalar",
                format!("non-positive base at flat index {i}"),
            ));
        }
        self.unary("pow_scalar", move |x| x.powf(p), move |x, y| p * y / x)
    }

    /// `max(x, c)`, gradient 1 where `x > c`.
    pub fn clamp_min(&self, c: f64) -> Result<Var> {
        self.tape
            .note_branch(self.value.data().iter().map(|&x| (x > c) as u64));
        self.unary("clamp_min", move |x| x.max(c), move |x, _| if x > c { 1.0 } else { 0.0 })
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
