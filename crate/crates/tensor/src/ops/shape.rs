use crate::error::{Result, TensorError};
use crate::tape::Var;
use crate::tensor::Tensor;

impl Var {
    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value.reshape(shape)?;
        let in_shape = self.shape().to_vec();
        self.tape.record(
            "reshape",
            value,
            &[self],
            Box::new(move |g, _| vec![Some(Tensor::raw(in_shape.clone(), g.data().to_vec()))]),
        )
    }

    /// Concatenates along `axis`. All other axes must agree.
    pub fn concat(parts: &[&Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::param("concat", "no inputs"))?;
        let rank = first.shape().len();
        if axis >= rank {
            return Err(TensorError::dim("concat", format!("axis {axis}"), "out of range"));
        }
        for p in parts {
            let s = p.shape();
            if s.len() != rank
                || s.iter()
                    .zip(first.shape())
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(TensorError::dim(
                    "concat",
                    format!("axis {axis}"),
                    format!("{:?} vs {:?}", first.shape(), s),
                ));
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let lens: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = lens.iter().sum();

        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &len) in parts.iter().zip(&lens) {
                data.extend_from_slice(&p.value().data()[o * len * inner..][..len * inner]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        let shapes: Vec<Vec<usize>> = parts.iter().map(|p| p.shape().to_vec()).collect();

        first.tape.record(
            "concat",
            Tensor::raw(shape, data),
            parts,
            Box::new(move |g, need| {
                let g = g.data();
                let mut offset = 0;
                let mut out = Vec::with_capacity(lens.len());
                for (k, &len) in lens.iter().enumerate() {
                    if need[k] {
                        let mut part = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            part.extend_from_slice(&g[(o * total + offset) * inner..][..len * inner]);
                        }
                        out.push(Some(Tensor::raw(shapes[k].clone(), part)));
                    } else {
                        out.push(None);
                    }
                    offset += len;
                }
                out
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;

    #[test]
    fn concat_channels_and_split_gradient() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::new([1, 1, 2], vec![1.0, 2.0]).unwrap(), true);
        let b = tape.leaf(Tensor::new([1, 2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap(), true);
        let c = Var::concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.shape(), &[1, 3, 2]);
        assert_eq!(c.value().data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let w = tape.constant(Tensor::new([1, 3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let g = c.mul(&w).unwrap().sum().unwrap().backward().unwrap();
        assert_eq!(g.get(&a).unwrap().data(), &[1.0, 2.0]);
        assert_eq!(g.get(&b).unwrap().data(), &[3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn reshape_checks_numel() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::ones([2, 3]));
        assert!(a.reshape([3, 2]).is_ok());
        assert!(a.reshape([4]).is_err());
    }
}
