//! Two-stage training: the face decoder first, then the speech encoder
//! against the frozen decoder.

use std::fmt::Write as _;
use std::str::FromStr;

use portrait_tensor::{Tape, Tensor, TensorError, Var};
use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::data::SyntheticPair;
use crate::decoder::FaceDecoder;
use crate::embedder::FaceEmbedder;
use crate::encoder::{FusionMode, SpeechEncoder};
use crate::error::{CoreError, Result, input, state};
use crate::gender::{GenderClassifier, stack};
use crate::losses::{LossWeights, fd_total_loss_with_target, se_tri_loss};
use crate::optim::{Adam, AdamConfig, lr_at};
use crate::preset::Preset;
use crate::prior::{Gender, PriorBank, PriorMode, select_prior};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub preset: Preset,
    pub seed: u64,
    pub lr: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub fusion: FusionMode,
    pub prior: PriorMode,
    pub weights: LossWeights,
    /// Synthetic dataset size for commands that generate data.
    pub samples: usize,
    pub embedder_seed: u64,
}

impl TrainConfig {
    pub fn new(preset: Preset) -> Self {
        TrainConfig {
            preset,
            seed: 0,
            lr: 0.001,
            lr_decay: 0.9,
            decay_every: 2,
            epochs: 50,
            batch_size: 16,
            adam: AdamConfig::default(),
            fusion: FusionMode::SumFc,
            prior: PriorMode::Neutral,
            weights: LossWeights::for_preset(preset),
            samples: 200,
            embedder_seed: 1,
        }
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| input(format!("config {key}: cannot parse {v:?}")))
        }
        match key {
            "preset" => {
                self.preset = value.parse()?;
                self.weights.ms_ssim = self.preset.ms_ssim();
            }
            "seed" => self.seed = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "lr_decay" => self.lr_decay = num(key, value)?,
            "decay_every" => self.decay_every = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "beta1" => self.adam.beta1 = num(key, value)?,
            "beta2" => self.adam.beta2 = num(key, value)?,
            "eps" => self.adam.eps = num(key, value)?,
            "fusion" => self.fusion = value.parse()?,
            "prior" => {
                self.prior = match value {
                    "neutral" => PriorMode::Neutral,
                    "gender" => PriorMode::Gender,
                    v => return Err(input(format!("config prior: expected neutral or gender, got {v:?}"))),
                }
            }
            "alpha" => self.weights.alpha = num(key, value)?,
            "lambda1" => self.weights.lambda1 = num(key, value)?,
            "lambda2" => self.weights.lambda2 = num(key, value)?,
            "lambda3" => self.weights.lambda3 = num(key, value)?,
            "samples" => self.samples = num(key, value)?,
            "embedder_seed" => self.embedder_seed = num(key, value)?,
            k => return Err(input(format!("unknown config key {k:?}"))),
        }
        Ok(())
    }

    /// Applies a line-based `key=value` file. Blank lines and `#` comments
    /// are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| input(format!("config line {}: expected key=value", no + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("lr_decay", self.lr_decay),
            ("beta1", self.adam.beta1),
            ("beta2", self.adam.beta2),
            ("eps", self.adam.eps),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CoreError::Parameter(format!("{name} must be positive, got {v}")));
            }
        }
        if self.adam.beta1 >= 1.0 || self.adam.beta2 >= 1.0 {
            return Err(CoreError::Parameter("Adam betas must be below 1".into()));
        }
        for (name, v) in [
            ("decay_every", self.decay_every),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("samples", self.samples),
        ] {
            if v == 0 {
                return Err(CoreError::Parameter(format!("{name} must be positive")));
            }
        }
        self.weights.validate()
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        lr_at(self.lr, self.lr_decay, self.decay_every, epoch)
    }
}

/// Preprocessed training tensors.
#[derive(Clone, Debug)]
pub struct TrainSet {
    pub preset: Preset,
    /// `[1, F, T]` each.
    pub specs: Vec<Tensor>,
    /// `[3, H, W]` each.
    pub faces: Vec<Tensor>,
    pub genders: Vec<Gender>,
}

impl TrainSet {
    pub fn from_pairs(pairs: &[SyntheticPair], preset: Preset) -> Result<Self> {
        let mut set = TrainSet {
            preset,
            specs: Vec::with_capacity(pairs.len()),
            faces: Vec::with_capacity(pairs.len()),
            genders: Vec::with_capacity(pairs.len()),
        };
        for p in pairs {
            if p.face.height() != preset.image_size() {
                return Err(CoreError::Contract(format!(
                    "pair {} has {}px faces, preset {preset} needs {}",
                    p.index,
                    p.face.height(),
                    preset.image_size()
                )));
            }
            set.specs.push(p.spectrogram(preset)?.values);
            set.faces.push(p.face.pixels.clone());
            set.genders.push(p.gender);
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.faces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    /// Samples whose gender is `g`.
    pub fn filter_gender(&self, g: Gender) -> TrainSet {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| self.genders[i] == g).collect();
        TrainSet {
            preset: self.preset,
            specs: keep.iter().map(|&i| self.specs[i].clone()).collect(),
            faces: keep.iter().map(|&i| self.faces[i].clone()).collect(),
            genders: keep.iter().map(|&i| self.genders[i]).collect(),
        }
    }

    pub fn spec_batch(&self, idx: &[usize]) -> Result<Tensor> {
        stack(idx.iter().map(|&i| &self.specs[i]))
    }

    pub fn face_batch(&self, idx: &[usize]) -> Result<Tensor> {
        stack(idx.iter().map(|&i| &self.faces[i]))
    }

    /// Embedder features of every face, `[N, D]`.
    pub fn face_features(&self, embedder: &FaceEmbedder) -> Result<Tensor> {
        let d = self.preset.feature_dim();
        let mut data = Vec::with_capacity(self.len() * d);
        let all: Vec<usize> = (0..self.len()).collect();
        for chunk in all.chunks(32) {
            data.extend_from_slice(embedder.embed_batch(&self.face_batch(chunk)?)?.data());
        }
        Ok(Tensor::new([self.len(), d], data)?)
    }
}

fn rows(t: &Tensor, idx: &[usize]) -> Tensor {
    let d = t.shape()[1];
    let mut data = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        data.extend_from_slice(&t.data()[i * d..][..d]);
    }
    Tensor::new([idx.len(), d], data).expect("row gather")
}

fn diverged(step: usize, e: CoreError) -> CoreError {
    match e {
        CoreError::Tensor(TensorError::NonFinite { .. }) => CoreError::Divergence {
            step,
            detail: e.to_string(),
        },
        e => e,
    }
}

fn check_finite(step: usize, name: &str, v: &Var) -> Result<f64> {
    let x = v.value().item();
    if !x.is_finite() {
        return Err(CoreError::Divergence {
            step,
            detail: format!("{name} is {x}"),
        });
    }
    Ok(x)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FdLogRow {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub image: f64,
    pub cs: f64,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct FdRun {
    /// Trained decoder with every parameter frozen.
    pub decoder: FaceDecoder,
    pub log: Vec<FdLogRow>,
    pub epoch_means: Vec<f64>,
}

pub fn fd_log_csv(log: &[FdLogRow]) -> String {
    let mut s = String::from("step,L_image,L_CS,L_total,epoch,lr\n");
    for r in log {
        let _ = writeln!(s, "{},{},{},{},{},{}", r.step, r.image, r.cs, r.total, r.epoch, r.lr);
    }
    s
}

/// Mean of `values` grouped by `epochs`, in epoch order.
fn epoch_means(epochs: impl Iterator<Item = (usize, f64)>) -> Vec<f64> {
    let mut means: Vec<(f64, usize)> = Vec::new();
    for (e, v) in epochs {
        if means.len() <= e {
            means.resize(e + 1, (0.0, 0));
        }
        means[e].0 += v;
        means[e].1 += 1;
    }
    means.into_iter().map(|(s, n)| s / n.max(1) as f64).collect()
}

pub fn train_fd(cfg: &TrainConfig, data: &TrainSet, embedder: &FaceEmbedder) -> Result<FdRun> {
    train_fd_from(cfg, data, embedder, None)
}

/// Trains a decoder, optionally continuing from `init`.
pub fn train_fd_from(
    cfg: &TrainConfig,
    data: &TrainSet,
    embedder: &FaceEmbedder,
    init: Option<FaceDecoder>,
) -> Result<FdRun> {
    cfg.validate()?;
    if !embedder.params().all_frozen() {
        return Err(state("face embedder must be frozen"));
    }
    check_preset(cfg, data, embedder.preset)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut fd = match init {
        Some(fd) => fd,
        None => FaceDecoder::new(cfg.preset, &mut rng)?,
    };
    fd.params.set_frozen(false);
    let targets = data.face_features(embedder)?;
    let mut adam = Adam::new(cfg.adam);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::new();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        for idx in order.chunks(cfg.batch_size) {
            step += 1;
            let tape = Tape::new();
            let bfd = fd.params.bind(&tape);
            let bemb = embedder.bind(&tape);
            let run = || -> Result<_> {
                let feat = tape.constant(rows(&targets, idx));
                let faces = tape.constant(data.face_batch(idx)?);
                let gen_img = fd.forward(&bfd, &feat)?;
                let loss = fd_total_loss_with_target(&gen_img, &faces, &feat, embedder, &bemb, &cfg.weights)?;
                let g = loss.total.backward()?;
                Ok((loss, g))
            };
            let (loss, g) = run().map_err(|e| diverged(step, e))?;
            let row = FdLogRow {
                step,
                epoch,
                lr,
                image: check_finite(step, "L_image", &loss.image)?,
                cs: check_finite(step, "L_CS", &loss.cs)?,
                total: check_finite(step, "L_total", &loss.total)?,
            };
            drop(bfd);
            adam.step(&mut fd.params, &g, lr)?;
            log.push(row);
        }
    }
    fd.trained_steps += step as u64;
    fd.params.set_frozen(true);
    let epoch_means = epoch_means(log.iter().map(|r| (r.epoch, r.total)));
    Ok(FdRun { decoder: fd, log, epoch_means })
}

fn check_preset(cfg: &TrainConfig, data: &TrainSet, other: Preset) -> Result<()> {
    if cfg.preset != data.preset || cfg.preset != other {
        return Err(CoreError::Contract(format!(
            "preset mismatch: config {}, data {}, model {other}",
            cfg.preset, data.preset
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeLogRow {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub terms: [f64; 3],
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct SeRun {
    pub encoder: SpeechEncoder,
    pub log: Vec<SeLogRow>,
    pub epoch_means: Vec<f64>,
    pub fd_hash_before: String,
    pub fd_hash_after: String,
}

pub fn se_log_csv(log: &[SeLogRow]) -> String {
    let mut s = String::from("step,L_unit,L_fc1,L_fc3,L_total,epoch,lr\n");
    for r in log {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.step, r.terms[0], r.terms[1], r.terms[2], r.total, r.epoch, r.lr
        );
    }
    s
}

/// Where the prior of each training sample comes from.
pub enum PriorSource<'a> {
    Labels,
    Classifier(&'a GenderClassifier),
}

/// Per-sample prior rows `[N, D]` for fusion, or `None` without fusion.
pub fn prior_rows(
    fusion: FusionMode,
    mode: PriorMode,
    bank: &PriorBank,
    genders: &[Gender],
) -> Result<Option<Tensor>> {
    if fusion == FusionMode::None {
        return Ok(None);
    }
    let mut data = Vec::new();
    for &g in genders {
        data.extend_from_slice(select_prior(bank, mode, g)?.vec.data());
    }
    let d = data.len() / genders.len().max(1);
    Ok(Some(Tensor::new([genders.len(), d], data)?))
}

/// Predicted (or labelled) gender of every sample.
pub fn sample_genders(data: &TrainSet, source: &PriorSource<'_>) -> Result<Vec<Gender>> {
    match source {
        PriorSource::Labels => Ok(data.genders.clone()),
        PriorSource::Classifier(c) => data
            .specs
            .iter()
            .map(|s| {
                let sp = crate::audio::Spectrogram {
                    values: s.clone(),
                    params: data.preset.stft(),
                };
                Ok(c.classify(&sp)?.0)
            })
            .collect(),
    }
}

/// Trains a speech encoder against a trained, frozen decoder.
pub fn train_se(
    cfg: &TrainConfig,
    data: &TrainSet,
    fd: &FaceDecoder,
    bank: &PriorBank,
    embedder: &FaceEmbedder,
    source: &PriorSource<'_>,
) -> Result<SeRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let se = SpeechEncoder::new(cfg.preset, cfg.fusion, &mut rng)?;
    train_se_from(cfg, data, fd, bank, embedder, source, se, rng)
}

#[allow(clippy::too_many_arguments)]
fn train_se_from(
    cfg: &TrainConfig,
    data: &TrainSet,
    fd: &FaceDecoder,
    bank: &PriorBank,
    embedder: &FaceEmbedder,
    source: &PriorSource<'_>,
    mut se: SpeechEncoder,
    mut rng: ChaCha8Rng,
) -> Result<SeRun> {
    cfg.validate()?;
    if fd.trained_steps == 0 || !fd.params.all_frozen() {
        return Err(state("encoder training needs a trained decoder checkpoint with frozen parameters"));
    }
    if !embedder.params().all_frozen() {
        return Err(state("face embedder must be frozen"));
    }
    check_preset(cfg, data, fd.preset)?;
    check_preset(cfg, data, embedder.preset)?;
    let fd_hash_before = fd.params.hash();
    let emb_hash_before = embedder.params().hash();
    let targets = data.face_features(embedder)?;
    let genders = sample_genders(data, source)?;
    let priors = prior_rows(cfg.fusion, cfg.prior, bank, &genders)?;
    let mut adam = Adam::new(cfg.adam);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::new();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        for idx in order.chunks(cfg.batch_size) {
            step += 1;
            let tape = Tape::new();
            let bse = se.params.bind(&tape);
            let bfd = fd.params.bind(&tape);
            let bemb = embedder.bind(&tape);
            let run = || -> Result<_> {
                let x = tape.constant(data.spec_batch(idx)?);
                let f = tape.constant(rows(&targets, idx));
                let p = priors.as_ref().map(|p| tape.constant(rows(p, idx)));
                let s = se.final_feature(&bse, &x, p.as_ref())?;
                let loss = se_tri_loss(&f, &s, |v| fd.fc1(&bfd, v), |v| embedder.fc3(&bemb, v), &cfg.weights)?;
                let g = loss.total.backward()?;
                Ok((loss, g))
            };
            let (loss, g) = run().map_err(|e| diverged(step, e))?;
            let mut terms = [0.0; 3];
            for (t, v) in terms.iter_mut().zip(&loss.terms) {
                *t = check_finite(step, "tri-loss term", v)?;
            }
            let row = SeLogRow {
                step,
                epoch,
                lr,
                terms,
                total: check_finite(step, "L_total", &loss.total)?,
            };
            if let Some(name) = g.param_names().find(|n| !n.starts_with(crate::encoder::SE_PREFIX) && !n.starts_with("fusion.")) {
                return Err(CoreError::FrozenMutation(name.to_string()));
            }
            drop(bse);
            adam.step(&mut se.params, &g, lr)?;
            log.push(row);
        }
    }
    let fd_hash_after = fd.params.hash();
    if fd_hash_after != fd_hash_before {
        return Err(CoreError::FrozenMutation("face decoder".into()));
    }
    if embedder.params().hash() != emb_hash_before {
        return Err(CoreError::FrozenMutation("face embedder".into()));
    }
    let epoch_means = epoch_means(log.iter().map(|r| (r.epoch, r.total)));
    Ok(SeRun {
        encoder: se,
        log,
        epoch_means,
        fd_hash_before,
        fd_hash_after,
    })
}

/// First step (1-based) whose loss is at most `threshold`.
pub fn steps_to_threshold(losses: &[f64], threshold: f64) -> Option<usize> {
    losses.iter().position(|&l| l <= threshold).map(|i| i + 1)
}

/// The seven ablation variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    NonPrior,
    Neutral,
    NeutralFc,
    GenderPrior,
    GenderFc,
    Female,
    Male,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::NonPrior,
        Variant::Neutral,
        Variant::NeutralFc,
        Variant::GenderPrior,
        Variant::GenderFc,
        Variant::Female,
        Variant::Male,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Variant::NonPrior => "non-prior",
            Variant::Neutral => "neutral",
            Variant::NeutralFc => "neutral+fc",
            Variant::GenderPrior => "gender",
            Variant::GenderFc => "gender+fc",
            Variant::Female => "female",
            Variant::Male => "male",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.tag() == tag)
            .ok_or_else(|| input(format!("unknown model tag {tag:?}")))
    }

    pub fn fusion(self) -> FusionMode {
        match self {
            Variant::NonPrior => FusionMode::None,
            Variant::Neutral | Variant::GenderPrior => FusionMode::Sum,
            _ => FusionMode::SumFc,
        }
    }

    pub fn prior(self) -> PriorMode {
        match self {
            Variant::NonPrior | Variant::Neutral | Variant::NeutralFc => PriorMode::Neutral,
            _ => PriorMode::Gender,
        }
    }

    /// Gender the variant is restricted to, if any.
    pub fn cohort(self) -> Option<Gender> {
        match self {
            Variant::Female => Some(Gender::Female),
            Variant::Male => Some(Gender::Male),
            _ => None,
        }
    }

    /// `cfg` with this variant's fusion and prior mode.
    pub fn configure(self, cfg: &TrainConfig) -> TrainConfig {
        TrainConfig {
            fusion: self.fusion(),
            prior: self.prior(),
            ..cfg.clone()
        }
    }
}
