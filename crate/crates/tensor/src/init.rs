use rand::{Rng, RngExt};

use crate::tensor::Tensor;

/// He-style uniform initialization: `U(-b, b)` with `b = sqrt(6 / fan_in)`.
/// Values are rounded to the nearest `f32` so that 32-bit checkpoints
/// reproduce them exactly.
pub fn he_uniform(shape: impl Into<Vec<usize>>, fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-bound..bound) as f32 as f64)
}

/// Uniform `U(-b, b)` rounded to `f32`.
pub fn uniform(shape: impl Into<Vec<usize>>, bound: f64, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-bound..bound) as f32 as f64)
}

pub fn round_to_f32(t: &mut Tensor) {
    for v in t.data_mut() {
        *v = *v as f32 as f64;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn seeded_and_bounded() {
        let a = he_uniform([16, 3, 3, 3], 27, &mut ChaCha8Rng::seed_from_u64(1));
        let b = he_uniform([16, 3, 3, 3], 27, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
        let bound = (6.0f64 / 27.0).sqrt();
        assert!(a.data().iter().all(|v| v.abs() <= bound));
        assert!(a.data().iter().all(|&v| v as f32 as f64 == v));
    }
}
