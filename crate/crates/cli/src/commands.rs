use std::path::Path;

use portrait_core::audio::{preprocess, read_wav};
use portrait_core::checkpoint::Checkpoint;
use portrait_core::data::{SyntheticPair, generate_dataset, load_dataset, write_dataset};
use portrait_core::decoder::FaceDecoder;
use portrait_core::embedder::FaceEmbedder;
use portrait_core::encoder::FusionMode;
use portrait_core::error::{CoreError, Result};
use portrait_core::gender::GenderClassifier;
use portrait_core::metrics::{EvalSample, MetricOptions, ablation_csv, evaluate_model, face_to_face_benchmark};
use portrait_core::prior::{Gender, PriorBank, PriorMode, convergence_csv, prior_convergence_table, select_prior};
use portrait_core::train::{PriorSource, TrainConfig, TrainSet, Variant, fd_log_csv, se_log_csv, train_fd, train_se};
use portrait_core::Preset;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Cli, Command};

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = TrainConfig::new(Preset::Tiny);
    if let Some(path) = &cli.config {
        cfg.apply_text(&std::fs::read_to_string(path)?)?;
    }
    if let Some(p) = &cli.preset {
        cfg.set("preset", p)?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    match cli.command {
        Command::GenData(a) => {
            let pairs = generate_dataset(cfg.seed, a.n.unwrap_or(cfg.samples), cfg.preset)?;
            write_dataset(&a.out, cfg.seed, cfg.preset, &pairs)?;
            println!("wrote {} pairs to {}", pairs.len(), a.out.display());
        }
        Command::TrainFd(a) => {
            let (_, data) = dataset(&a.data, &cfg)?;
            if let Some(e) = a.epochs {
                cfg.epochs = e;
            }
            let embedder = FaceEmbedder::new(cfg.preset, cfg.embedder_seed)?;
            let run = train_fd(&cfg, &data, &embedder)?;
            Checkpoint::from_decoder(&run.decoder).save(&a.out)?;
            if let Some(log) = &a.log {
                std::fs::write(log, fd_log_csv(&run.log))?;
            }
            println!(
                "trained decoder for {} steps, final epoch L_total {:.6}",
                run.decoder.trained_steps,
                run.epoch_means.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::TrainSe(a) => {
            let variant = Variant::from_tag(&a.variant)?;
            if let Some(e) = a.epochs {
                cfg.epochs = e;
            }
            let cfg = variant.configure(&cfg);
            let (_, mut data) = dataset(&a.data, &cfg)?;
            if let Some(g) = variant.cohort() {
                data = data.filter_gender(g);
                if data.is_empty() {
                    return Err(CoreError::Input(format!("dataset has no {g:?} samples")));
                }
            }
            let fd = decoder(&a.fd, cfg.preset)?;
            let bank = PriorBank::read_dir(&a.priors)?;
            let embedder = FaceEmbedder::new(cfg.preset, cfg.embedder_seed)?;
            let classifier = a.gender_model.as_deref().map(|p| gender_model(p, cfg.preset)).transpose()?;
            let source = match &classifier {
                Some(c) => PriorSource::Classifier(c),
                None => PriorSource::Labels,
            };
            let run = train_se(&cfg, &data, &fd, &bank, &embedder, &source)?;
            Checkpoint::from_encoder(&run.encoder, variant.tag(), run.log.len() as u64).save(&a.out)?;
            if let Some(log) = &a.log {
                std::fs::write(log, se_log_csv(&run.log))?;
            }
            println!(
                "trained {} encoder for {} steps, decoder hash {}",
                variant.tag(),
                run.log.len(),
                run.fd_hash_after
            );
        }
        Command::TrainGender(a) => {
            let (_, data) = dataset(&a.data, &cfg)?;
            let mut g = GenderClassifier::new(cfg.preset, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
            let losses = g.train(
                &data.specs,
                &data.genders,
                a.epochs.unwrap_or(cfg.epochs),
                cfg.batch_size,
                cfg.lr,
                cfg.seed,
            )?;
            Checkpoint::from_gender(&g).save(&a.out)?;
            println!("final epoch cross-entropy {:.6}", losses.last().copied().unwrap_or(f64::NAN));
        }
        Command::Eval(a) => {
            let (pairs, _) = dataset(&a.data, &cfg)?;
            let fd = decoder(&a.fd, cfg.preset)?;
            let bank = PriorBank::read_dir(&a.priors)?;
            let embedder = FaceEmbedder::new(cfg.preset, cfg.embedder_seed)?;
            let classifier = a.gender_model.as_deref().map(|p| gender_model(p, cfg.preset)).transpose()?;
            let opts = MetricOptions { unitized: a.unitized };
            let specs = pairs
                .iter()
                .map(|p| p.spectrogram(cfg.preset))
                .collect::<Result<Vec<_>>>()?;
            let genders = specs
                .iter()
                .zip(&pairs)
                .map(|(s, p)| match &classifier {
                    Some(c) => Ok(c.classify(s)?.0),
                    None => Ok(p.gender),
                })
                .collect::<Result<Vec<Gender>>>()?;
            let samples: Vec<EvalSample> = pairs
                .iter()
                .zip(&specs)
                .zip(&genders)
                .map(|((p, s), &gender)| EvalSample { spec: s, face: &p.face, gender })
                .collect();
            let mut reports = Vec::new();
            for path in &a.se {
                let ck = Checkpoint::load(path)?;
                let tag = ck.tag.clone();
                let se = ck.into_encoder()?;
                let mode = Variant::from_tag(&tag).map(Variant::prior).unwrap_or(PriorMode::Neutral);
                reports.push(evaluate_model(&tag, &se, mode, &bank, &fd, &embedder, &samples, opts)?);
            }
            if a.face_to_face {
                let faces: Vec<_> = pairs.iter().map(|p| p.face.clone()).collect();
                reports.push(face_to_face_benchmark(&embedder, &fd, &faces, opts)?);
            }
            emit(a.out.as_deref(), &ablation_csv(&reports)?)?;
        }
        Command::PriorBuild(a) => {
            let (pairs, _) = dataset(&a.data, &cfg)?;
            let embedder = FaceEmbedder::new(cfg.preset, cfg.embedder_seed)?;
            let feats = pairs
                .iter()
                .map(|p| Ok((embedder.embed(&p.face)?, p.gender)))
                .collect::<Result<Vec<_>>>()?;
            let bank = PriorBank::from_features(&feats)?;
            bank.write_dir(&a.out)?;
            println!("wrote priors from {} faces to {}", feats.len(), a.out.display());
        }
        Command::PriorTable(a) => {
            let (pairs, _) = dataset(&a.data, &cfg)?;
            let embedder = FaceEmbedder::new(cfg.preset, cfg.embedder_seed)?;
            let images: Vec<_> = pairs.into_iter().map(|p| (p.face, p.gender)).collect();
            let rows = prior_convergence_table(&embedder, &images, &a.ns)?;
            emit(a.out.as_deref(), &convergence_csv(&rows))?;
        }
        Command::FaceToFace(a) => {
            let (pairs, _) = dataset(&a.data, &cfg)?;
            let fd = decoder(&a.fd, cfg.preset)?;
            let embedder = FaceEmbedder::new(cfg.preset, cfg.embedder_seed)?;
            let faces: Vec<_> = pairs.into_iter().map(|p| p.face).collect();
            let report = face_to_face_benchmark(&embedder, &fd, &faces, MetricOptions { unitized: a.unitized })?;
            emit(a.out.as_deref(), &ablation_csv(&[report])?)?;
        }
        Command::Infer(a) => {
            let ck = Checkpoint::load(&a.se)?;
            let preset = ck.preset;
            let tag = ck.tag.clone();
            let se = ck.into_encoder()?;
            let fd = decoder(&a.fd, preset)?;
            let spec = preprocess(&read_wav(&a.audio)?, &preset.stft())?;
            let prior = if se.fusion == FusionMode::None {
                None
            } else {
                let dir = a
                    .priors
                    .as_deref()
                    .ok_or_else(|| CoreError::State(format!("model {tag} needs --priors")))?;
                let bank = PriorBank::read_dir(dir)?;
                let mode = Variant::from_tag(&tag).map(Variant::prior).unwrap_or(PriorMode::Neutral);
                let gender = match (&a.gender_model, mode) {
                    (_, PriorMode::Neutral) => Gender::Male,
                    (Some(p), PriorMode::Gender) => gender_model(p, preset)?.classify(&spec)?.0,
                    (None, PriorMode::Gender) => {
                        return Err(CoreError::State(format!("model {tag} needs --gender-model")));
                    }
                };
                Some(select_prior(&bank, mode, gender)?.clone())
            };
            let feat = se.encode_final(&spec, prior.as_ref())?;
            fd.decode(&feat)?.write_png(&a.out)?;
            println!("wrote {}", a.out.display());
        }
    }
    Ok(())
}

fn dataset(dir: &Path, cfg: &TrainConfig) -> Result<(Vec<SyntheticPair>, TrainSet)> {
    let (preset, pairs) = load_dataset(dir)?;
    if preset != cfg.preset {
        return Err(CoreError::Contract(format!(
            "dataset {} was generated for preset {preset}, config uses {}",
            dir.display(),
            cfg.preset
        )));
    }
    let set = TrainSet::from_pairs(&pairs, preset)?;
    Ok((pairs, set))
}

fn decoder(path: &Path, preset: Preset) -> Result<FaceDecoder> {
    let fd = Checkpoint::load(path)?.into_decoder()?;
    if fd.preset != preset {
        return Err(CoreError::Contract(format!(
            "decoder {} is {}, expected {preset}",
            path.display(),
            fd.preset
        )));
    }
    Ok(fd)
}

fn gender_model(path: &Path, preset: Preset) -> Result<GenderClassifier> {
    let g = Checkpoint::load(path)?.into_gender()?;
    if g.preset != preset {
        return Err(CoreError::Contract(format!(
            "gender model {} is {}, expected {preset}",
            path.display(),
            g.preset
        )));
    }
    Ok(g)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => Ok(std::fs::write(p, text)?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
