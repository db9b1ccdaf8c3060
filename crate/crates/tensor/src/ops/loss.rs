use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::tape::Var;
use crate::tensor::Tensor;

impl Var {
    /// Mean softmax cross-entropy of `[N, K]` logits against class labels.
    pub fn cross_entropy(&self, labels: &[usize]) -> Result<Var> {
        const OP: &str = "cross_entropy";
        let (n, k) = match *self.shape() {
            [n, k] => (n, k),
            _ => return Err(TensorError::dim(OP, "rank", format!("{:?}", self.shape()))),
        };
        if labels.len() != n {
            return Err(TensorError::dim(OP, "batch", format!("{n} rows, {} labels", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(TensorError::param(OP, format!("label {bad} out of range for {k} classes")));
        }
        let x = self.value.data();
        let mut probs = vec![0.0; n * k];
        let mut loss = 0.0;
        for r in 0..n {
            let row = &x[r * k..][..k];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            for (p, v) in probs[r * k..][..k].iter_mut().zip(row) {
                *p = (v - m).exp() / z;
            }
            loss += z.ln() + m - row[labels[r]];
        }
        let probs = Rc::new(probs);
        let labels = labels.to_vec();
        self.tape.record(
            OP,
            Tensor::scalar(loss / n as f64),
            &[self],
            Box::new(move |g, _| {
                let s = g.item() / n as f64;
                let mut gx: Vec<f64> = probs.iter().map(|p| p * s).collect();
                for (r, &l) in labels.iter().enumerate() {
                    gx[r * k + l] -= s;
                }
                vec![Some(Tensor::raw(vec![n, k], gx))]
            }),
        )
    }
}
