use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::tape::Var;
use crate::tensor::Tensor;

/// `c[m,n] += a[m,k] * b[k,n]`, row-major.
pub(crate) fn gemm_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let c_row = &mut c[i * n..][..n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (cv, bv) in c_row.iter_mut().zip(&b[p * n..][..n]) {
                *cv += av * bv;
            }
        }
    }
}

impl Var {
    /// Matrix product of `[M,K]` and `[K,N]`.
    pub fn matmul(&self, rhs: &Var) -> Result<Var> {
        let (m, k) = match *self.shape() {
            [m, k] => (m, k),
            _ => return Err(TensorError::dim("matmul", "lhs rank", format!("{:?}", self.shape()))),
        };
        let (k2, n) = match *rhs.shape() {
            [k2, n] => (k2, n),
            _ => return Err(TensorError::dim("matmul", "rhs rank", format!("{:?}", rhs.shape()))),
        };
        if k != k2 {
            return Err(TensorError::dim(
                "matmul",
                "inner",
                format!("{:?} x {:?}", self.shape(), rhs.shape()),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(self.value.data(), rhs.value.data(), &mut out, m, k, n);
        let a = Rc::clone(&self.value);
        let b = Rc::clone(&rhs.value);
        self.tape.record(
            "matmul",
            Tensor::raw(vec![m, n], out),
            &[self, rhs],
            Box::new(move |g, need| {
                let g = g.data();
                // dA = G · Bᵀ
                let ga = need[0].then(|| {
                    let bd = b.data();
                    let mut ga = vec![0.0; m * k];
                    for i in 0..m {
                        let g_row = &g[i * n..][..n];
                        for p in 0..k {
                            ga[i * k + p] = g_row.iter().zip(&bd[p * n..][..n]).map(|(x, y)| x * y).sum();
                        }
                    }
                    Tensor::raw(vec![m, k], ga)
                });
                // dB = Aᵀ · G
                let gb = need[1].then(|| {
                    let ad = a.data();
                    let mut gb = vec![0.0; k * n];
                    for i in 0..m {
                        let g_row = &g[i * n..][..n];
                        for p in 0..k {
                            let av = ad[i * k + p];
                            for (d, gv) in gb[p * n..][..n].iter_mut().zip(g_row) {
                                *d += av * gv;
                            }
                        }
                    }
                    Tensor::raw(vec![k, n], gb)
                });
                vec![ga, gb]
            }),
        )
    }

    /// Fully connected layer: `x[N,D] · w[D,E] + b[E]`.
    pub fn linear(&self, weight: &Var, bias: &Var) -> Result<Var> {
        let e = weight.shape().get(1).copied().unwrap_or(0);
        if bias.shape() != [e] {
            return Err(TensorError::dim(
                "linear",
                "bias",
                format!("expected [{e}], got {:?}", bias.shape()),
            ));
        }
        self.matmul(weight)?.add(bias)
    }
}
