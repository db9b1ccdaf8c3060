//! Declarative layer lists with a symbolic shape trace and a generic
//! executor.

use std::fmt;

use portrait_tensor::init::he_uniform;
use portrait_tensor::{Param, Tensor, Var, conv2d_output_len, conv_transpose2d_output_len};
use rand::Rng;

use crate::cbam::{CbamVars, cbam, cbam_param_shapes, check_cbam};
use crate::error::{CoreError, Result};
use crate::params::{Bound, ParamSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Act {
    Relu,
    Sigmoid,
    Linear,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv {
        out: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
        act: Act,
    },
    ConvTranspose {
        out: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
        output_padding: (usize, usize),
        act: Act,
    },
    MaxPool {
        kernel: (usize, usize),
        stride: (usize, usize),
    },
    AvgPool {
        kernel: (usize, usize),
        stride: (usize, usize),
    },
    Cbam {
        reduction: usize,
        kernel: usize,
    },
    GlobalAvgPool,
    /// Fully connected; a feature map input is flattened first.
    Fc {
        out: usize,
        act: Act,
        bias: bool,
    },
    Reshape {
        c: usize,
        h: usize,
        w: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
}

/// Per-sample activation dims.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dims {
    Map { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl Dims {
    pub fn numel(self) -> usize {
        match self {
            Dims::Map { c, h, w } => c * h * w,
            Dims::Flat(d) => d,
        }
    }

    pub fn batch_shape(self, n: usize) -> Vec<usize> {
        match self {
            Dims::Map { c, h, w } => vec![n, c, h, w],
            Dims::Flat(d) => vec![n, d],
        }
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dims::Map { c, h, w } => write!(f, "{c}x{h}x{w}"),
            Dims::Flat(d) => write!(f, "{d}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceRow {
    pub layer: String,
    pub dims: Dims,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkSpec {
    pub name: String,
    pub layers: Vec<Layer>,
}

struct ParamShape {
    name: String,
    shape: Vec<usize>,
    fan_in: usize,
    zero: bool,
}

fn dim_err(layer: &str, detail: impl Into<String>) -> CoreError {
    CoreError::Dimension {
        layer: layer.to_string(),
        detail: detail.into(),
    }
}

fn map_dims(layer: &str, d: Dims) -> Result<(usize, usize, usize)> {
    match d {
        Dims::Map { c, h, w } => Ok((c, h, w)),
        Dims::Flat(n) => Err(dim_err(layer, format!("expected a feature map, got a flat vector of {n}"))),
    }
}

fn apply_act(x: Var, act: Act) -> Result<Var> {
    Ok(match act {
        Act::Relu => x.relu()?,
        Act::Sigmoid => x.sigmoid()?,
        Act::Linear => x,
    })
}

impl Layer {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        Layer { name: name.into(), kind }
    }

    /// Output dims for input `d`.
    pub fn output_dims(&self, d: Dims) -> Result<Dims> {
        let name = self.name.as_str();
        Ok(match self.kind {
            LayerKind::Conv { out, kernel, stride, padding, .. } => {
                let (_, h, w) = map_dims(name, d)?;
                let oh = conv2d_output_len(h, kernel.0, stride.0, padding.0)
                    .ok_or_else(|| dim_err(name, format!("kernel height {} exceeds padded height {}", kernel.0, h + 2 * padding.0)))?;
                let ow = conv2d_output_len(w, kernel.1, stride.1, padding.1)
                    .ok_or_else(|| dim_err(name, format!("kernel width {} exceeds padded width {}", kernel.1, w + 2 * padding.1)))?;
                Dims::Map { c: out, h: oh, w: ow }
            }
            LayerKind::ConvTranspose { out, kernel, stride, padding, output_padding, .. } => {
                let (_, h, w) = map_dims(name, d)?;
                if output_padding.0 >= stride.0 || output_padding.1 >= stride.1 {
                    return Err(dim_err(name, "output padding must be smaller than stride"));
                }
                let oh = conv_transpose2d_output_len(h, kernel.0, stride.0, padding.0, output_padding.0)
                    .ok_or_else(|| dim_err(name, "non-positive output height"))?;
                let ow = conv_transpose2d_output_len(w, kernel.1, stride.1, padding.1, output_padding.1)
                    .ok_or_else(|| dim_err(name, "non-positive output width"))?;
                Dims::Map { c: out, h: oh, w: ow }
            }
            LayerKind::MaxPool { kernel, stride } | LayerKind::AvgPool { kernel, stride } => {
                let (c, h, w) = map_dims(name, d)?;
                if kernel.0 > h || kernel.1 > w {
                    return Err(dim_err(
                        name,
                        format!("pool kernel {}x{} larger than input {h}x{w}", kernel.0, kernel.1),
                    ));
                }
                Dims::Map {
                    c,
                    h: (h - kernel.0) / stride.0 + 1,
                    w: (w - kernel.1) / stride.1 + 1,
                }
            }
            LayerKind::Cbam { reduction, kernel } => {
                let (c, _, _) = map_dims(name, d)?;
                check_cbam(c, reduction, kernel).map_err(|e| dim_err(name, e.to_string()))?;
                d
            }
            LayerKind::GlobalAvgPool => {
                let (c, _, _) = map_dims(name, d)?;
                Dims::Map { c, h: 1, w: 1 }
            }
            LayerKind::Fc { out, .. } => Dims::Flat(out),
            LayerKind::Reshape { c, h, w } => {
                if d.numel() != c * h * w {
                    return Err(dim_err(name, format!("cannot reshape {d} to {c}x{h}x{w}")));
                }
                Dims::Map { c, h, w }
            }
        })
    }

    fn param_shapes(&self, prefix: &str, d: Dims) -> Result<Vec<ParamShape>> {
        let base = format!("{prefix}.{}", self.name);
        let p = |suffix: &str, shape: Vec<usize>, fan_in: usize, zero: bool| ParamShape {
            name: format!("{base}.{suffix}"),
            shape,
            fan_in,
            zero,
        };
        Ok(match self.kind {
            LayerKind::Conv { out, kernel, .. } => {
                let (c, _, _) = map_dims(&self.name, d)?;
                let fan = c * kernel.0 * kernel.1;
                vec![p("weight", vec![out, c, kernel.0, kernel.1], fan, false), p("bias", vec![out], fan, true)]
            }
            LayerKind::ConvTranspose { out, kernel, stride, .. } => {
                let (c, _, _) = map_dims(&self.name, d)?;
                // each output pixel sees about c*kh*kw/(sh*sw) inputs
                let fan = (c * kernel.0 * kernel.1 / (stride.0 * stride.1)).max(1);
                vec![p("weight", vec![c, out, kernel.0, kernel.1], fan, false), p("bias", vec![out], fan, true)]
            }
            LayerKind::Cbam { reduction, kernel } => {
                let (c, _, _) = map_dims(&self.name, d)?;
                cbam_param_shapes(c, reduction, kernel)
                    .into_iter()
                    .map(|(suffix, shape, fan_in, zero)| p(suffix, shape, fan_in, zero))
                    .collect()
            }
            LayerKind::Fc { out, bias, .. } => {
                let fan = d.numel();
                let mut v = vec![p("weight", vec![fan, out], fan, false)];
                if bias {
                    v.push(p("bias", vec![out], fan, true));
                }
                v
            }
            _ => Vec::new(),
        })
    }
}

impl NetworkSpec {
    pub fn new(name: impl Into<String>, layers: Vec<Layer>) -> Self {
        NetworkSpec { name: name.into(), layers }
    }

    /// Symbolic per-layer output dims. Allocates no activations.
    pub fn trace(&self, input: Dims) -> Result<Vec<TraceRow>> {
        let mut d = input;
        let mut rows = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            d = layer.output_dims(d)?;
            rows.push(TraceRow {
                layer: layer.name.clone(),
                dims: d,
            });
        }
        Ok(rows)
    }

    pub fn output_dims(&self, input: Dims) -> Result<Dims> {
        Ok(self.trace(input)?.last().map_or(input, |r| r.dims))
    }

    fn all_param_shapes(&self, prefix: &str, input: Dims) -> Result<Vec<ParamShape>> {
        let mut d = input;
        let mut out = Vec::new();
        for layer in &self.layers {
            out.extend(layer.param_shapes(prefix, d)?);
            d = layer.output_dims(d)?;
        }
        Ok(out)
    }

    /// Exact number of scalar parameters, computed from the layer list.
    pub fn param_count(&self, input: Dims) -> Result<usize> {
        Ok(self
            .all_param_shapes("p", input)?
            .iter()
            .map(|s| s.shape.iter().product::<usize>())
            .sum())
    }

    /// He-uniform weights and zero biases, names `{prefix}.{layer}.{weight|bias}`.
    pub fn init(&self, prefix: &str, input: Dims, rng: &mut impl Rng) -> Result<ParamSet> {
        let mut set = ParamSet::new();
        for s in self.all_param_shapes(prefix, input)? {
            let value = if s.zero {
                Tensor::zeros(s.shape)
            } else {
                he_uniform(s.shape, s.fan_in, rng)
            };
            set.push(Param::new(s.name, value))?;
        }
        Ok(set)
    }

    /// Runs layers `range` on a batch.
    pub fn forward_range(&self, b: &Bound, prefix: &str, x: &Var, range: std::ops::Range<usize>) -> Result<Var> {
        let mut x = x.clone();
        for layer in &self.layers[range] {
            x = self.apply(layer, b, prefix, &x)?;
        }
        Ok(x)
    }

    pub fn forward(&self, b: &Bound, prefix: &str, x: &Var) -> Result<Var> {
        self.forward_range(b, prefix, x, 0..self.layers.len())
    }

    fn apply(&self, layer: &Layer, b: &Bound, prefix: &str, x: &Var) -> Result<Var> {
        let base = format!("{prefix}.{}", layer.name);
        let w = || b.get(&format!("{base}.weight"));
        let bias = || b.get(&format!("{base}.bias"));
        let wrap = |e: portrait_tensor::TensorError| dim_err(&layer.name, e.to_string());
        Ok(match layer.kind {
            LayerKind::Conv { stride, padding, act, .. } => {
                apply_act(x.conv2d(w()?, bias()?, stride, padding).map_err(wrap)?, act)?
            }
            LayerKind::ConvTranspose { stride, padding, output_padding, act, .. } => apply_act(
                x.conv_transpose2d(w()?, bias()?, stride, padding, output_padding).map_err(wrap)?,
                act,
            )?,
            LayerKind::MaxPool { kernel, stride } => x.max_pool2d(kernel, stride).map_err(wrap)?,
            LayerKind::AvgPool { kernel, stride } => x.avg_pool2d(kernel, stride).map_err(wrap)?,
            LayerKind::Cbam { .. } => cbam(x, &CbamVars::from_bound(b, &base)?)?,
            LayerKind::GlobalAvgPool => x.avg_pool_global().map_err(wrap)?,
            LayerKind::Fc { act, bias: has_bias, .. } => {
                let n = x.shape()[0];
                let flat = if x.shape().len() == 2 {
                    x.clone()
                } else {
                    x.reshape([n, x.value().numel() / n])?
                };
                let y = flat.matmul(w()?).map_err(wrap)?;
                let y = if has_bias { y.add(bias()?)? } else { y };
                apply_act(y, act)?
            }
            LayerKind::Reshape { c, h, w } => {
                let n = x.shape()[0];
                x.reshape([n, c, h, w]).map_err(wrap)?
            }
        })
    }
}
