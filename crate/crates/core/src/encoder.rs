//! Speech encoder and residual prior fusion.

use std::fmt;
use std::str::FromStr;

use portrait_tensor::init::round_to_f32;
use portrait_tensor::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::Spectrogram;
use crate::error::{CoreError, Result, state};
use crate::feature::FeatureVec;
use crate::network::{Act, Dims, Layer, LayerKind, NetworkSpec};
use crate::params::{Bound, ParamSet};
use crate::preset::Preset;
use crate::prior::PriorFeature;

pub const SE_PREFIX: &str = "se";
pub const FUSION_WEIGHT: &str = "fusion.weight";
pub const FUSION_BIAS: &str = "fusion.bias";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FusionMode {
    None,
    Sum,
    SumFc,
}

impl FusionMode {
    pub fn name(self) -> &'static str {
        match self {
            FusionMode::None => "none",
            FusionMode::Sum => "sum",
            FusionMode::SumFc => "sum_fc",
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionMode {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(FusionMode::None),
            "sum" => Ok(FusionMode::Sum),
            "sum_fc" => Ok(FusionMode::SumFc),
            other => Err(CoreError::Input(format!("unknown fusion mode {other:?}"))),
        }
    }
}

fn conv(name: &str, out: usize, k: usize, s: usize, p: usize) -> Layer {
    Layer::new(
        name,
        LayerKind::Conv {
            out,
            kernel: (k, k),
            stride: (s, s),
            padding: (p, p),
            act: Act::Relu,
        },
    )
}

fn pool(name: &str, kernel: (usize, usize), stride: (usize, usize)) -> Layer {
    Layer::new(name, LayerKind::MaxPool { kernel, stride })
}

pub fn se_spec(preset: Preset) -> NetworkSpec {
    let d = preset.width_divisor();
    let (r, k) = preset.cbam();
    NetworkSpec::new(
        "speech-encoder",
        vec![
            conv("conv1", 64 / d, 7, 2, 1),
            pool("maxpool1", (3, 3), (2, 2)),
            conv("conv2", 128 / d, 5, 2, 1),
            pool("maxpool2", (3, 3), (2, 2)),
            conv("conv3", 256 / d, 3, 1, 1),
            conv("conv4", 512 / d, 3, 1, 1),
            conv("conv5", 512 / d, 3, 1, 1),
            pool("maxpool3", (5, 3), (3, 2)),
            Layer::new("cbam", LayerKind::Cbam { reduction: r, kernel: k }),
            conv("fc1", preset.feature_dim(), 1, 1, 0),
            Layer::new("avgpool1", LayerKind::GlobalAvgPool),
            Layer::new(
                "fc2",
                LayerKind::Fc {
                    out: preset.feature_dim(),
                    act: Act::Linear,
                    bias: true,
                },
            ),
        ],
    )
}

pub fn se_input(preset: Preset) -> Dims {
    let (f, t) = preset.spectrogram_dims();
    Dims::Map { c: 1, h: f, w: t }
}

/// Combines `S_f` with the prior: `none` passes through, `sum` adds the
/// prior, `sum_fc` adds it and applies the fusion layer.
pub fn fuse_prior(s_f: &Var, prior: Option<&Var>, mode: FusionMode, fc: Option<(&Var, &Var)>) -> Result<Var> {
    if mode == FusionMode::None {
        return Ok(s_f.clone());
    }
    let prior = prior.ok_or_else(|| state(format!("fusion mode {mode} requires a prior feature")))?;
    let d = *s_f.shape().last().unwrap_or(&0);
    if prior.shape().last() != Some(&d) {
        return Err(CoreError::Dimension {
            layer: "fusion".into(),
            detail: format!("feature dim {d} vs prior {:?}", prior.shape()),
        });
    }
    let sum = s_f.add(prior)?;
    match mode {
        FusionMode::Sum => Ok(sum),
        _ => {
            let (w, b) = fc.ok_or_else(|| state("sum_fc fusion requires the fusion fc layer"))?;
            Ok(sum.linear(w, b)?)
        }
    }
}

/// Value-level fusion of one feature.
pub fn fuse_features(
    s_f: &FeatureVec,
    prior: Option<&PriorFeature>,
    mode: FusionMode,
    fc: Option<(&Tensor, &Tensor)>,
) -> Result<FeatureVec> {
    let tape = Tape::new();
    let s = tape.constant(s_f.to_row());
    let p = prior.map(|p| tape.constant(p.vec.to_row()));
    let fc = fc.map(|(w, b)| (tape.constant(w.clone()), tape.constant(b.clone())));
    let out = fuse_prior(&s, p.as_ref(), mode, fc.as_ref().map(|(w, b)| (w, b)))?;
    FeatureVec::from_row(out.value(), 0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpeechEncoder {
    pub preset: Preset,
    pub fusion: FusionMode,
    pub spec: NetworkSpec,
    pub params: ParamSet,
}

impl SpeechEncoder {
    pub fn new(preset: Preset, fusion: FusionMode, rng: &mut impl Rng) -> Result<Self> {
        let spec = se_spec(preset);
        let mut params = spec.init(SE_PREFIX, se_input(preset), rng)?;
        if fusion == FusionMode::SumFc {
            let d = preset.feature_dim();
            params.insert(FUSION_WEIGHT, Tensor::from_fn([d, d], |i| if i % (d + 1) == 0 { 1.0 } else { 0.0 }))?;
            params.insert(FUSION_BIAS, Tensor::zeros([d]))?;
        }
        for p in params.iter_mut() {
            round_to_f32(&mut p.value);
        }
        Ok(SpeechEncoder { preset, fusion, spec, params })
    }

    /// Rebuilds an encoder around loaded parameters, checking every name
    /// and shape against a fresh layout.
    pub fn from_params(preset: Preset, fusion: FusionMode, params: ParamSet) -> Result<Self> {
        let template = Self::new(preset, fusion, &mut ChaCha8Rng::seed_from_u64(0))?;
        check_layout(&template.params, &params)?;
        Ok(SpeechEncoder { params, ..template })
    }

    pub fn input_dims(&self) -> Dims {
        se_input(self.preset)
    }

    /// `S_f` for a `[N, 1, F, T]` batch.
    pub fn forward(&self, b: &Bound, x: &Var) -> Result<Var> {
        let want = se_input(self.preset).batch_shape(x.shape()[0]);
        if x.shape() != want {
            return Err(CoreError::Dimension {
                layer: "input".into(),
                detail: format!("expected {want:?}, got {:?}", x.shape()),
            });
        }
        self.spec.forward(b, SE_PREFIX, x)
    }

    /// Final face feature for a batch, after prior fusion.
    pub fn final_feature(&self, b: &Bound, x: &Var, prior: Option<&Var>) -> Result<Var> {
        let s_f = self.forward(b, x)?;
        let fc = if self.fusion == FusionMode::SumFc {
            Some((b.get(FUSION_WEIGHT)?, b.get(FUSION_BIAS)?))
        } else {
            None
        };
        fuse_prior(&s_f, prior, self.fusion, fc)
    }

    pub fn encode(&self, spec: &Spectrogram) -> Result<FeatureVec> {
        let tape = Tape::new();
        let b = self.params.bind(&tape);
        let out = self.forward(&b, &tape.constant(spec.to_batch()))?;
        FeatureVec::from_row(out.value(), 0)
    }

    pub fn encode_final(&self, spec: &Spectrogram, prior: Option<&PriorFeature>) -> Result<FeatureVec> {
        let tape = Tape::new();
        let b = self.params.bind(&tape);
        let p = prior.map(|p| tape.constant(p.vec.to_row()));
        let out = self.final_feature(&b, &tape.constant(spec.to_batch()), p.as_ref())?;
        FeatureVec::from_row(out.value(), 0)
    }
}

pub(crate) fn check_layout(template: &ParamSet, actual: &ParamSet) -> Result<()> {
    if template.len() != actual.len() {
        return Err(CoreError::Format(format!(
            "expected {} parameters, found {}",
            template.len(),
            actual.len()
        )));
    }
    for t in template.iter() {
        let a = actual
            .get(&t.name)
            .ok_or_else(|| CoreError::Format(format!("missing parameter {}", t.name)))?;
        if a.value.shape() != t.value.shape() {
            return Err(CoreError::Format(format!(
                "parameter {} has shape {:?}, expected {:?}",
                t.name,
                a.value.shape(),
                t.value.shape()
            )));
        }
    }
    Ok(())
}
