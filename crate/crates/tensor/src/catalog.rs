//! Reference gradient-check cases, one per differentiable primitive.

use rand::RngExt;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::gradcheck::CheckMode;
use crate::tape::Var;
use crate::tensor::Tensor;

pub struct OpCase {
    pub name: &'static str,
    pub mode: CheckMode,
    pub sample: fn(&mut ChaCha8Rng) -> Vec<Tensor>,
    pub f: fn(&[Var]) -> Result<Var>,
}

fn u(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

fn pos(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(0.2..2.0))
}

/// Bounded away from zero with random sign.
fn away(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.random_range(0.5..2.0);
        if rng.random_range(0..2) == 0 { m } else { -m }
    })
}

/// Random linear functional of `y`, so every output coordinate matters.
fn head(y: &Var, w: &Var) -> Result<Var> {
    y.mul(w)?.sum()
}

macro_rules! case {
    ($name:expr, $mode:expr, |$r:ident| $sample:expr, |$v:ident| $f:expr) => {
        OpCase {
            name: $name,
            mode: $mode,
            sample: |$r: &mut ChaCha8Rng| $sample,
            f: |$v: &[Var]| $f,
        }
    };
}

use CheckMode::Coordinate as C;

pub fn primitive_cases() -> Vec<OpCase> {
    vec![
        case!("add", C, |r| vec![u(r, &[2, 3, 4]), u(r, &[3, 1]), u(r, &[2, 3, 4])], |v| head(&v[0].add(&v[1])?, &v[2])),
        case!("sub", C, |r| vec![u(r, &[2, 1, 4]), u(r, &[3, 4]), u(r, &[2, 3, 4])], |v| head(&v[0].sub(&v[1])?, &v[2])),
        case!("mul", C, |r| vec![u(r, &[2, 3, 4]), u(r, &[2, 3, 1]), u(r, &[2, 3, 4])], |v| head(&v[0].mul(&v[1])?, &v[2])),
        case!("div", C, |r| vec![u(r, &[3, 4]), away(r, &[4]), u(r, &[3, 4])], |v| head(&v[0].div(&v[1])?, &v[2])),
        case!("affine_scalar", C, |r| vec![u(r, &[5]), u(r, &[5])], |v| head(&v[0].mul_scalar(1.7)?.add_scalar(0.3)?.neg()?, &v[1])),
        case!("relu", C, |r| vec![u(r, &[2, 8]), u(r, &[2, 8])], |v| head(&v[0].relu()?, &v[1])),
        case!("sigmoid", C, |r| vec![u(r, &[2, 8]).map(|x| 4.0 * x), u(r, &[2, 8])], |v| head(&v[0].sigmoid()?, &v[1])),
        case!("square", C, |r| vec![u(r, &[6]), u(r, &[6])], |v| head(&v[0].square()?, &v[1])),
        case!("sqrt", C, |r| vec![pos(r, &[6]), u(r, &[6])], |v| head(&v[0].sqrt()?, &v[1])),
        case!("abs", C, |r| vec![u(r, &[6]), u(r, &[6])], |v| head(&v[0].abs()?, &v[1])),
        case!("pow_scalar", C, |r| vec![pos(r, &[6]), u(r, &[6])], |v| head(&v[0].pow_scalar(0.3)?, &v[1])),
        case!("clamp_min", C, |r| vec![u(r, &[8]), u(r, &[8])], |v| head(&v[0].clamp_min(0.1)?, &v[1])),
        case!("sum", C, |r| vec![u(r, &[3, 4])], |v| v[0].square()?.sum()),
        case!("mean", C, |r| vec![u(r, &[3, 4])], |v| v[0].square()?.mean()),
        case!("sum_axis", C, |r| vec![u(r, &[2, 3, 4]), u(r, &[2, 4])], |v| head(&v[0].sum_axis(1, false)?, &v[1])),
        case!("mean_axis", C, |r| vec![u(r, &[2, 3, 4]), u(r, &[2, 3, 1])], |v| head(&v[0].mean_axis(2, true)?, &v[1])),
        case!("max_axis", C, |r| vec![u(r, &[2, 5, 3]), u(r, &[2, 3])], |v| head(&v[0].max_axis(1, false)?, &v[1])),
        case!("reshape", C, |r| vec![u(r, &[2, 6]), u(r, &[3, 4])], |v| head(&v[0].reshape([3, 4])?, &v[1])),
        case!("concat", C, |r| vec![u(r, &[2, 1, 3]), u(r, &[2, 2, 3]), u(r, &[2, 3, 3])], |v| head(&Var::concat(&[&v[0], &v[1]], 1)?, &v[2])),
        case!("matmul", C, |r| vec![u(r, &[4, 5]), u(r, &[5, 3]), u(r, &[4, 3])], |v| head(&v[0].matmul(&v[1])?, &v[2])),
        case!("fully_connected", C, |r| vec![u(r, &[2, 6]), u(r, &[6, 4]), u(r, &[4]), u(r, &[2, 4])], |v| head(&v[0].linear(&v[1], &v[2])?, &v[3])),
        case!(
            "conv2d",
            C,
            |r| vec![u(r, &[2, 3, 8, 8]), u(r, &[4, 3, 3, 3]), u(r, &[4]), u(r, &[2, 4, 4, 4])],
            |v| head(&v[0].conv2d(&v[1], &v[2], (2, 2), (1, 1))?, &v[3])
        ),
        case!(
            "conv2d_asymmetric",
            C,
            |r| vec![u(r, &[1, 2, 7, 8]), u(r, &[3, 2, 3, 2]), u(r, &[3]), u(r, &[1, 3, 3, 5])],
            |v| head(&v[0].conv2d(&v[1], &v[2], (2, 2), (0, 1))?, &v[3])
        ),
        case!(
            "conv_transpose2d",
            C,
            |r| vec![u(r, &[1, 3, 4, 4]), u(r, &[3, 2, 5, 5]), u(r, &[2]), u(r, &[1, 2, 8, 8])],
            |v| head(&v[0].conv_transpose2d(&v[1], &v[2], (2, 2), (2, 2), (1, 1))?, &v[3])
        ),
        case!(
            "conv_transpose2d_stride1",
            C,
            |r| vec![u(r, &[1, 2, 5, 5]), u(r, &[2, 3, 5, 5]), u(r, &[3]), u(r, &[1, 3, 5, 5])],
            |v| head(&v[0].conv_transpose2d(&v[1], &v[2], (1, 1), (2, 2), (0, 0))?, &v[3])
        ),
        case!(
            "max_pool2d",
            C,
            |r| vec![u(r, &[2, 2, 8, 7]), u(r, &[2, 2, 2, 3])],
            |v| head(&v[0].max_pool2d((5, 3), (3, 2))?, &v[1])
        ),
        case!(
            "avg_pool2d",
            C,
            |r| vec![u(r, &[1, 2, 8, 8]), u(r, &[1, 2, 4, 4])],
            |v| head(&v[0].avg_pool2d((2, 2), (2, 2))?, &v[1])
        ),
        case!("avg_pool_global", C, |r| vec![u(r, &[2, 3, 4, 5]), u(r, &[2, 3, 1, 1])], |v| head(&v[0].avg_pool_global()?, &v[1])),
        case!("max_pool_global", C, |r| vec![u(r, &[2, 3, 4, 5]), u(r, &[2, 3, 1, 1])], |v| head(&v[0].max_pool_global()?, &v[1])),
        case!(
            "depthwise_filter",
            C,
            |r| vec![u(r, &[1, 2, 6, 7]), u(r, &[1, 2, 4, 5])],
            |v| {
                let k = Tensor::new([3, 3], vec![0.05, 0.1, 0.05, 0.1, 0.4, 0.1, 0.05, 0.1, 0.05])?;
                head(&v[0].depthwise_filter(&k)?, &v[1])
            }
        ),
        case!("cross_entropy", C, |r| vec![u(r, &[4, 3]).map(|x| 3.0 * x)], |v| v[0].cross_entropy(&[0, 2, 1, 2])),
        case!(
            "composed_conv_pool_fc",
            C,
            |r| vec![u(r, &[2, 2, 8, 8]), u(r, &[3, 2, 3, 3]).map(|w| 0.3 * w), u(r, &[3]), u(r, &[12, 4]).map(|w| 0.3 * w), u(r, &[4])],
            |v| {
                let y = v[0].conv2d(&v[1], &v[2], (1, 1), (1, 1))?.relu()?.max_pool2d((4, 4), (4, 4))?;
                let flat = y.reshape([2, 12])?;
                flat.linear(&v[3], &v[4])?.cross_entropy(&[1, 3])
            }
        ),
    ]
}
