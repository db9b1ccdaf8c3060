//! Lightweight speech gender classifier: five convs, three max pools and
//! two fc layers.

use portrait_tensor::{Tape, Tensor, Var, init::round_to_f32};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::Spectrogram;
use crate::encoder::{check_layout, se_input, se_spec};
use crate::error::{CoreError, Result, input, state};
use crate::network::{Act, Layer, LayerKind, NetworkSpec};
use crate::optim::{Adam, AdamConfig};
use crate::params::{Bound, ParamSet};
use crate::preset::Preset;
use crate::prior::Gender;

pub const GENDER_PREFIX: &str = "gc";

pub fn gender_spec(preset: Preset) -> NetworkSpec {
    let mut layers: Vec<Layer> = se_spec(preset)
        .layers
        .into_iter()
        .take_while(|l| l.name != "cbam")
        .collect();
    layers.push(Layer::new("avgpool1", LayerKind::GlobalAvgPool));
    layers.push(Layer::new(
        "fc1",
        LayerKind::Fc {
            out: 512 / preset.width_divisor(),
            act: Act::Relu,
            bias: true,
        },
    ));
    layers.push(Layer::new("fc2", LayerKind::Fc { out: 2, act: Act::Linear, bias: true }));
    NetworkSpec::new("gender-classifier", layers)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenderClassifier {
    pub preset: Preset,
    pub spec: NetworkSpec,
    pub params: ParamSet,
    pub trained_steps: u64,
}

impl GenderClassifier {
    pub fn new(preset: Preset, rng: &mut impl Rng) -> Result<Self> {
        let spec = gender_spec(preset);
        let mut params = spec.init(GENDER_PREFIX, se_input(preset), rng)?;
        for p in params.iter_mut() {
            round_to_f32(&mut p.value);
        }
        Ok(GenderClassifier { preset, spec, params, trained_steps: 0 })
    }

    pub fn from_params(preset: Preset, params: ParamSet) -> Result<Self> {
        let template = Self::new(preset, &mut ChaCha8Rng::seed_from_u64(0))?;
        check_layout(&template.params, &params)?;
        Ok(GenderClassifier { params, ..template })
    }

    /// `[N, 1, F, T]` to `[N, 2]` logits, male first.
    pub fn logits(&self, b: &Bound, x: &Var) -> Result<Var> {
        self.spec.forward(b, GENDER_PREFIX, x)
    }

    /// Trains with mean cross-entropy; returns the per-epoch mean loss.
    pub fn train(
        &mut self,
        specs: &[Tensor],
        labels: &[Gender],
        epochs: usize,
        batch: usize,
        lr: f64,
        seed: u64,
    ) -> Result<Vec<f64>> {
        if specs.is_empty() || specs.len() != labels.len() {
            return Err(input(format!("{} spectrograms for {} labels", specs.len(), labels.len())));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut adam = Adam::new(AdamConfig::default());
        let mut order: Vec<usize> = (0..specs.len()).collect();
        let mut means = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            order.shuffle(&mut rng);
            let mut sum = 0.0;
            let mut count = 0;
            for chunk in order.chunks(batch.max(1)) {
                let x = stack(chunk.iter().map(|&i| &specs[i]))?;
                let y: Vec<usize> = chunk.iter().map(|&i| labels[i].label()).collect();
                let tape = Tape::new();
                let b = self.params.bind(&tape);
                let loss = self.logits(&b, &tape.constant(x))?.cross_entropy(&y)?;
                let g = loss.backward()?;
                adam.step(&mut self.params, &g, lr)?;
                sum += loss.value().item() * chunk.len() as f64;
                count += chunk.len();
            }
            means.push(sum / count as f64);
        }
        self.trained_steps += adam.steps();
        Ok(means)
    }

    /// Predicted gender and its softmax probability. Exact ties go to male.
    pub fn classify(&self, spec: &Spectrogram) -> Result<(Gender, f64)> {
        if self.trained_steps == 0 {
            return Err(state("gender classifier is untrained"));
        }
        let tape = Tape::new();
        let b = self.params.bind(&tape);
        let z = self.logits(&b, &tape.constant(spec.to_batch()))?;
        Ok(decide(z.value().data()[0], z.value().data()[1]))
    }
}

/// Softmax decision over `(male, female)` logits.
pub fn decide(male: f64, female: f64) -> (Gender, f64) {
    let p_female = portrait_tensor::sigmoid(female - male);
    if female > male {
        (Gender::Female, p_female)
    } else {
        (Gender::Male, 1.0 - p_female)
    }
}

/// Stacks same-shaped tensors along a new leading axis.
pub fn stack<'a>(items: impl IntoIterator<Item = &'a Tensor>) -> Result<Tensor> {
    let mut shape: Option<Vec<usize>> = None;
    let mut data = Vec::new();
    let mut n = 0;
    for t in items {
        match &shape {
            None => shape = Some(t.shape().to_vec()),
            Some(s) if s.as_slice() != t.shape() => {
                return Err(CoreError::Dimension {
                    layer: "batch".into(),
                    detail: format!("{s:?} vs {:?}", t.shape()),
                });
            }
            _ => {}
        }
        data.extend_from_slice(t.data());
        n += 1;
    }
    let mut s = shape.ok_or_else(|| input("cannot stack an empty batch"))?;
    s.insert(0, n);
    Ok(Tensor::new(s, data)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tie_goes_to_male() {
        assert_eq!(decide(0.3, 0.3), (Gender::Male, 0.5));
        assert_eq!(decide(0.0, 2.0).0, Gender::Female);
    }

    #[test]
    fn untrained_is_state_error() {
        let g = GenderClassifier::new(Preset::Tiny, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let spec = Spectrogram { values: Tensor::zeros([1, 97, 100]), params: Preset::Tiny.stft() };
        assert!(matches!(g.classify(&spec), Err(CoreError::State(_))));
    }

    #[test]
    fn layer_counts() {
        let s = gender_spec(Preset::Full);
        let count = |f: fn(&LayerKind) -> bool| s.layers.iter().filter(|l| f(&l.kind)).count();
        assert_eq!(count(|k| matches!(k, LayerKind::Conv { .. })), 5);
        assert_eq!(count(|k| matches!(k, LayerKind::MaxPool { .. })), 3);
        assert_eq!(count(|k| matches!(k, LayerKind::Fc { .. })), 2);
    }
}
