//! Frozen toy face embedder standing in for VGGFace.

use portrait_tensor::init::round_to_f32;
use portrait_tensor::{Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::feature::{FaceImage, FeatureVec};
use crate::network::{Act, Dims, Layer, LayerKind, NetworkSpec};
use crate::params::{Bound, ParamSet};
use crate::preset::Preset;

pub const EMBEDDER_PREFIX: &str = "vgg";

pub fn embedder_spec(preset: Preset) -> NetworkSpec {
    let widths = match preset {
        Preset::Full => [32, 64, 128],
        Preset::Tiny => [4, 8, 16],
    };
    let conv = |name: &str, out| {
        Layer::new(
            name,
            LayerKind::Conv {
                out,
                kernel: (3, 3),
                stride: (2, 2),
                padding: (1, 1),
                act: Act::Relu,
            },
        )
    };
    let mut layers = vec![conv("conv1", widths[0]), conv("conv2", widths[1]), conv("conv3", widths[2])];
    if preset == Preset::Full {
        layers.push(Layer::new("avgpool1", LayerKind::AvgPool { kernel: (7, 7), stride: (7, 7) }));
    }
    let d = preset.feature_dim();
    layers.push(Layer::new("fc1", LayerKind::Fc { out: d, act: Act::Relu, bias: true }));
    layers.push(Layer::new("fc2", LayerKind::Fc { out: d, act: Act::Linear, bias: true }));
    NetworkSpec::new("face-embedder", layers)
}

fn head_spec(preset: Preset) -> NetworkSpec {
    NetworkSpec::new(
        "identity-head",
        vec![Layer::new(
            "fc3",
            LayerKind::Fc {
                out: preset.identity_classes(),
                act: Act::Linear,
                bias: false,
            },
        )],
    )
}

pub fn embedder_input(preset: Preset) -> Dims {
    let s = preset.image_size();
    Dims::Map { c: 3, h: s, w: s }
}

/// Seeded network with every parameter frozen.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceEmbedder {
    pub preset: Preset,
    spec: NetworkSpec,
    head: NetworkSpec,
    params: ParamSet,
}

impl FaceEmbedder {
    pub fn new(preset: Preset, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = embedder_spec(preset);
        let head = head_spec(preset);
        let mut params = spec.init(EMBEDDER_PREFIX, embedder_input(preset), &mut rng)?;
        params.extend(head.init(EMBEDDER_PREFIX, Dims::Flat(preset.feature_dim()), &mut rng)?)?;
        for p in params.iter_mut() {
            round_to_f32(&mut p.value);
        }
        params.set_frozen(true);
        Ok(FaceEmbedder { preset, spec, head, params })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn bind(&self, tape: &Tape) -> Bound {
        self.params.bind(tape)
    }

    /// `[N, 3, H, W]` to `[N, D]`.
    pub fn forward(&self, b: &Bound, images: &Var) -> Result<Var> {
        self.spec.forward(b, EMBEDDER_PREFIX, images)
    }

    /// Identity head `[N, D]` to `[N, classes]`.
    pub fn fc3(&self, b: &Bound, feat: &Var) -> Result<Var> {
        self.head.forward(b, EMBEDDER_PREFIX, feat)
    }

    pub fn embed(&self, image: &FaceImage) -> Result<FeatureVec> {
        let t = self.embed_batch(&image.to_batch())?;
        FeatureVec::from_row(&t, 0)
    }

    pub fn embed_batch(&self, images: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let b = self.bind(&tape);
        Ok(self.forward(&b, &tape.constant(images.clone()))?.value().clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frozen_and_deterministic() {
        let a = FaceEmbedder::new(Preset::Tiny, 7).unwrap();
        let b = FaceEmbedder::new(Preset::Tiny, 7).unwrap();
        assert!(a.params().all_frozen());
        let img = FaceImage::new(Tensor::from_fn([3, 32, 32], |i| (i % 17) as f64 / 16.0)).unwrap();
        let fa = a.embed(&img).unwrap();
        assert_eq!(fa, b.embed(&img).unwrap());
        assert_eq!(fa.dim(), 512);
    }

    #[test]
    fn full_dims() {
        let trace = embedder_spec(Preset::Full).trace(embedder_input(Preset::Full)).unwrap();
        assert_eq!(trace[3].dims, Dims::Map { c: 128, h: 4, w: 4 });
        assert_eq!(trace.last().unwrap().dims, Dims::Flat(4096));
    }

    #[test]
    fn frozen_params_receive_no_gradient() {
        let e = FaceEmbedder::new(Preset::Tiny, 1).unwrap();
        let tape = Tape::new();
        let b = e.bind(&tape);
        let x = tape.leaf(Tensor::full([1, 3, 32, 32], 0.5), true);
        let g = e.fc3(&b, &e.forward(&b, &x).unwrap()).unwrap().sum().unwrap().backward().unwrap();
        assert!(g.get(&x).is_some());
        assert_eq!(g.param_names().count(), 0);
    }
}
