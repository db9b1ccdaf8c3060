//! Face decoder: feature vector to RGB image.

use portrait_tensor::init::round_to_f32;
use portrait_tensor::{Tape, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::check_layout;
use crate::error::{CoreError, Result};
use crate::feature::{FaceImage, FeatureVec};
use crate::network::{Act, Dims, Layer, LayerKind, NetworkSpec, TraceRow};
use crate::params::{Bound, ParamSet};
use crate::preset::Preset;

pub const FD_PREFIX: &str = "fd";

/// `(out channels, stride-2)` for ConvTrans1..11 followed by the added
/// fifth upsampling stage.
const STAGES: [(usize, bool); 12] = [
    (512, true),
    (512, false),
    (512, false),
    (512, false),
    (512, false),
    (256, true),
    (256, false),
    (256, false),
    (64, true),
    (64, false),
    (32, true),
    (64, true),
];

pub fn fd_spec(preset: Preset) -> NetworkSpec {
    let div = preset.width_divisor();
    let (c, h, w) = preset.decoder_start();
    let (r, k) = preset.cbam();
    let mut layers = vec![
        Layer::new(
            "fc1",
            LayerKind::Fc {
                out: preset.decoder_fc1(),
                act: Act::Relu,
                bias: true,
            },
        ),
        Layer::new(
            "fc2",
            LayerKind::Fc {
                out: c * h * w,
                act: Act::Relu,
                bias: true,
            },
        ),
        Layer::new("reshape", LayerKind::Reshape { c, h, w }),
    ];
    for (i, &(out, up)) in STAGES.iter().enumerate() {
        let (stride, op) = if up { (2, 1) } else { (1, 0) };
        layers.push(Layer::new(
            format!("convtrans{}", i + 1),
            LayerKind::ConvTranspose {
                out: out / div,
                kernel: (5, 5),
                stride: (stride, stride),
                padding: (2, 2),
                output_padding: (op, op),
                act: Act::Relu,
            },
        ));
        if i + 1 == 8 {
            layers.push(Layer::new("cbam", LayerKind::Cbam { reduction: r, kernel: k }));
        }
    }
    layers.push(Layer::new(
        "conv1",
        LayerKind::Conv {
            out: 3,
            kernel: (1, 1),
            stride: (1, 1),
            padding: (0, 0),
            act: Act::Sigmoid,
        },
    ));
    NetworkSpec::new("face-decoder", layers)
}

pub fn fd_input(preset: Preset) -> Dims {
    Dims::Flat(preset.feature_dim())
}

pub fn fd_shape_trace(preset: Preset, input: Dims) -> Result<Vec<TraceRow>> {
    fd_spec(preset).trace(input)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FaceDecoder {
    pub preset: Preset,
    pub spec: NetworkSpec,
    pub params: ParamSet,
    /// Optimizer steps taken; zero means untrained.
    pub trained_steps: u64,
}

impl FaceDecoder {
    pub fn new(preset: Preset, rng: &mut impl Rng) -> Result<Self> {
        let spec = fd_spec(preset);
        let mut params = spec.init(FD_PREFIX, fd_input(preset), rng)?;
        for p in params.iter_mut() {
            round_to_f32(&mut p.value);
        }
        Ok(FaceDecoder { preset, spec, params, trained_steps: 0 })
    }

    pub fn from_params(preset: Preset, params: ParamSet) -> Result<Self> {
        let template = Self::new(preset, &mut ChaCha8Rng::seed_from_u64(0))?;
        check_layout(&template.params, &params)?;
        Ok(FaceDecoder { params, ..template })
    }

    /// `[N, D]` features to `[N, 3, H, W]` images.
    pub fn forward(&self, b: &Bound, feat: &Var) -> Result<Var> {
        let d = self.preset.feature_dim();
        if feat.shape().len() != 2 || feat.shape()[1] != d {
            return Err(CoreError::Dimension {
                layer: "input".into(),
                detail: format!("expected [N, {d}], got {:?}", feat.shape()),
            });
        }
        self.spec.forward(b, FD_PREFIX, feat)
    }

    /// Output of the first fc layer (after its ReLU).
    pub fn fc1(&self, b: &Bound, feat: &Var) -> Result<Var> {
        self.spec.forward_range(b, FD_PREFIX, feat, 0..1)
    }

    pub fn decode(&self, feat: &FeatureVec) -> Result<FaceImage> {
        let tape = Tape::new();
        let b = self.params.bind(&tape);
        let out = self.forward(&b, &tape.constant(feat.to_row()))?;
        FaceImage::from_batch(out.value(), 0)
    }
}
