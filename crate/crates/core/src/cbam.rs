//! Channel-then-spatial attention.

use portrait_tensor::{Tensor, Var};

use crate::error::{CoreError, Result};
use crate::params::Bound;

#[derive(Clone, Debug)]
pub struct CbamVars {
    pub mlp1_w: Var,
    pub mlp1_b: Var,
    pub mlp2_w: Var,
    pub mlp2_b: Var,
    pub spatial_w: Var,
    pub spatial_b: Var,
}

pub fn check_cbam(channels: usize, reduction: usize, kernel: usize) -> Result<()> {
    if reduction == 0 || channels % reduction != 0 {
        return Err(CoreError::Parameter(format!(
            "reduction ratio {reduction} does not divide {channels} channels"
        )));
    }
    if kernel % 2 == 0 {
        return Err(CoreError::Parameter(format!("spatial kernel {kernel} must be odd")));
    }
    Ok(())
}

/// `(suffix, shape, fan_in, zero_init)` for every CBAM parameter.
pub(crate) fn cbam_param_shapes(
    c: usize,
    reduction: usize,
    kernel: usize,
) -> Vec<(&'static str, Vec<usize>, usize, bool)> {
    let hidden = (c / reduction.max(1)).max(1);
    vec![
        ("mlp1.weight", vec![c, hidden], c, false),
        ("mlp1.bias", vec![hidden], c, true),
        ("mlp2.weight", vec![hidden, c], hidden, false),
        ("mlp2.bias", vec![c], hidden, true),
        ("spatial.weight", vec![1, 2, kernel, kernel], 2 * kernel * kernel, false),
        ("spatial.bias", vec![1], 2 * kernel * kernel, true),
    ]
}

impl CbamVars {
    pub fn from_bound(b: &Bound, base: &str) -> Result<Self> {
        let g = |s: &str| b.get(&format!("{base}.{s}")).cloned();
        Ok(CbamVars {
            mlp1_w: g("mlp1.weight")?,
            mlp1_b: g("mlp1.bias")?,
            mlp2_w: g("mlp2.weight")?,
            mlp2_b: g("mlp2.bias")?,
            spatial_w: g("spatial.weight")?,
            spatial_b: g("spatial.bias")?,
        })
    }

    fn channels(&self) -> usize {
        self.mlp1_w.shape()[0]
    }

    fn kernel(&self) -> usize {
        self.spatial_w.shape()[2]
    }

    fn mlp(&self, v: &Var) -> Result<Var> {
        Ok(v.linear(&self.mlp1_w, &self.mlp1_b)?
            .relu()?
            .linear(&self.mlp2_w, &self.mlp2_b)?)
    }
}

/// `sigmoid(MLP(avgpool(x)) + MLP(maxpool(x)))`, shape `[N,C,1,1]`.
pub fn channel_attention(x: &Var, p: &CbamVars) -> Result<Var> {
    let (n, c) = (x.shape()[0], x.shape()[1]);
    if c != p.channels() {
        return Err(CoreError::Parameter(format!(
            "attention built for {} channels, input has {c}",
            p.channels()
        )));
    }
    let hidden = p.mlp1_w.shape()[1];
    if c % hidden != 0 {
        return Err(CoreError::Parameter(format!("hidden width {hidden} does not divide {c} channels")));
    }
    let avg = x.avg_pool_global()?.reshape([n, c])?;
    let max = x.max_pool_global()?.reshape([n, c])?;
    Ok(p.mlp(&avg)?.add(&p.mlp(&max)?)?.sigmoid()?.reshape([n, c, 1, 1])?)
}

/// `sigmoid(conv([mean_c(x); max_c(x)]))` with same padding, shape `[N,1,H,W]`.
pub fn spatial_attention(x: &Var, p: &CbamVars) -> Result<Var> {
    let k = p.kernel();
    check_cbam(1, 1, k)?;
    let pooled = Var::concat(&[&x.mean_axis(1, true)?, &x.max_axis(1, true)?], 1)?;
    Ok(pooled
        .conv2d(&p.spatial_w, &p.spatial_b, (1, 1), (k / 2, k / 2))?
        .sigmoid()?)
}

pub fn cbam(x: &Var, p: &CbamVars) -> Result<Var> {
    let x1 = x.mul(&channel_attention(x, p)?)?;
    Ok(x1.mul(&spatial_attention(&x1, p)?)?)
}

/// Spatial gate applied first, for order comparisons.
pub fn cbam_spatial_first(x: &Var, p: &CbamVars) -> Result<Var> {
    let x1 = x.mul(&spatial_attention(x, p)?)?;
    Ok(x1.mul(&channel_attention(&x1, p)?)?)
}

/// Plain CBAM weights, for building standalone blocks.
pub fn cbam_tensors(
    c: usize,
    reduction: usize,
    kernel: usize,
    rng: &mut impl rand::Rng,
) -> Result<Vec<(String, Tensor)>> {
    check_cbam(c, reduction, kernel)?;
    Ok(cbam_param_shapes(c, reduction, kernel)
        .into_iter()
        .map(|(s, shape, fan, zero)| {
            let t = if zero {
                Tensor::zeros(shape)
            } else {
                portrait_tensor::init::he_uniform(shape, fan, rng)
            };
            (s.to_string(), t)
        })
        .collect())
}
