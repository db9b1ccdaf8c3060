//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use portrait_core::audio::{AudioClip, SAMPLE_RATE, StftParams, normalize_clip, spectrogram};
use portrait_core::cbam::{CbamVars, cbam, cbam_tensors};
use portrait_core::checkpoint::Checkpoint;
use portrait_core::data::generate_dataset;
use portrait_core::decoder::{FaceDecoder, fd_input, fd_shape_trace};
use portrait_core::embedder::FaceEmbedder;
use portrait_core::encoder::{FusionMode, SpeechEncoder, se_input, se_spec};
use portrait_core::feature::FeatureVec;
use portrait_core::losses::{
    LossWeights, MsSsimConfig, cosine_loss, fd_total_loss, image_loss, ms_ssim, se_tri_loss,
};
use portrait_core::metrics::{
    EvalSample, MetricOptions, REPORT_HEADER, ablation_csv, cos_deg, evaluate_model, feature_metrics, l1_l2,
};
use portrait_core::network::Dims;
use portrait_core::params::{Bound, ParamSet};
use portrait_core::prior::{PRIOR_LADDER, PriorBank, PriorKind, PriorMode, convergence_rows};
use portrait_core::train::{
    FdRun, PriorSource, TrainConfig, TrainSet, Variant, steps_to_threshold, train_fd, train_se,
};
use portrait_core::{CoreError, Preset};
use portrait_tensor::catalog::primitive_cases;
use portrait_tensor::gradcheck::{CheckMode, GradCheck};
use portrait_tensor::{Tape, Tensor, TensorError, Var};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Check = Result<(bool, String), CoreError>;

fn tr<T>(r: portrait_core::Result<T>) -> portrait_tensor::Result<T> {
    r.map_err(|e| match e {
        CoreError::Tensor(t) => t,
        e => TensorError::Contract(e.to_string()),
    })
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

fn head(y: &Var, w: &Var) -> portrait_tensor::Result<Var> {
    y.mul(w)?.sum()
}

struct Case {
    name: String,
    mode: CheckMode,
    sample: Box<dyn FnMut(&mut ChaCha8Rng) -> Vec<Tensor>>,
    f: Box<dyn Fn(&[Var]) -> portrait_tensor::Result<Var>>,
}

fn case(
    name: &str,
    mode: CheckMode,
    sample: impl FnMut(&mut ChaCha8Rng) -> Vec<Tensor> + 'static,
    f: impl Fn(&[Var]) -> portrait_tensor::Result<Var> + 'static,
) -> Case {
    Case {
        name: name.into(),
        mode,
        sample: Box::new(sample),
        f: Box::new(f),
    }
}

/// Names and values of a parameter set, in order.
fn unpack(ps: &ParamSet) -> (Vec<String>, Vec<Tensor>) {
    ps.iter().map(|p| (p.name.clone(), p.value.clone())).unzip()
}

fn bind_vars(names: &[String], vars: &[Var]) -> Bound {
    Bound::from_vars(names.iter().cloned().zip(vars.iter().cloned()))
}

fn model_cases() -> Vec<Case> {
    let mut cases = Vec::new();
    let small = LossWeights {
        ms_ssim: MsSsimConfig::truncated(2, 7, 1.0),
        ..LossWeights::for_preset(Preset::Tiny)
    };
    let image_pair = |r: &mut ChaCha8Rng| {
        let x = uniform(r, &[1, 3, 16, 16], 0.0, 1.0);
        let y = x.zip_map(&uniform(r, &[1, 3, 16, 16], 0.0, 1.0), |a, b| 0.6 * a + 0.4 * b);
        vec![x, y]
    };
    let cfg = small.ms_ssim.clone();
    cases.push(case("ms_ssim", CheckMode::Directional, image_pair, move |v| {
        tr(ms_ssim(&v[0], &v[1], &cfg))
    }));
    let w = small.clone();
    cases.push(case("image_loss", CheckMode::Directional, image_pair, move |v| {
        tr(image_loss(&v[0], &v[1], &w))
    }));
    cases.push(case(
        "cosine_loss",
        CheckMode::Coordinate,
        |r| vec![uniform(r, &[3, 6], -1.0, 1.0), uniform(r, &[3, 6], -1.0, 1.0)],
        |v| tr(cosine_loss(&v[0], &v[1])),
    ));

    let emb = FaceEmbedder::new(Preset::Tiny, 1).unwrap();
    let w = LossWeights::for_preset(Preset::Tiny);
    let e2 = emb.clone();
    cases.push(case(
        "fd_total_loss",
        CheckMode::Directional,
        |r| {
            let x = uniform(r, &[2, 3, 32, 32], 0.0, 1.0);
            let y = x.zip_map(&uniform(r, &[2, 3, 32, 32], 0.0, 1.0), |a, b| 0.6 * a + 0.4 * b);
            vec![x, y]
        },
        move |v| {
            let b = e2.bind(v[0].tape());
            Ok(tr(fd_total_loss(&v[0], &v[1], &e2, &b, &w))?.total)
        },
    ));

    let w = LossWeights::for_preset(Preset::Tiny);
    cases.push(case(
        "se_tri_loss",
        CheckMode::Coordinate,
        |r| {
            vec![
                uniform(r, &[2, 6], -1.0, 1.0),
                uniform(r, &[2, 6], -1.0, 1.0),
                uniform(r, &[6, 5], -1.0, 1.0),
                uniform(r, &[5], -0.3, 0.3),
                uniform(r, &[6, 4], -1.0, 1.0),
            ]
        },
        move |v| {
            let t = tr(se_tri_loss(
                &v[0],
                &v[1],
                |x| Ok(x.linear(&v[2], &v[3])?.relu()?),
                |x| Ok(x.matmul(&v[4])?),
                &w,
            ))?;
            Ok(t.total)
        },
    ));

    let fd = FaceDecoder::new(Preset::Tiny, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let (fd2, emb2) = (fd.clone(), emb.clone());
    let w = LossWeights::for_preset(Preset::Tiny);
    cases.push(case(
        "se_tri_loss_tiny",
        CheckMode::Directional,
        |r| vec![uniform(r, &[2, 512], -1.0, 1.0), uniform(r, &[2, 512], -1.0, 1.0)],
        move |v| {
            let bfd = fd2.params.bind(v[0].tape());
            let bemb = emb2.bind(v[0].tape());
            let t = tr(se_tri_loss(&v[0], &v[1], |x| fd2.fc1(&bfd, x), |x| emb2.fc3(&bemb, x), &w))?;
            Ok(t.total)
        },
    ));

    cases.push(case(
        "cbam",
        CheckMode::Coordinate,
        |r| {
            let mut v = vec![uniform(r, &[1, 4, 3, 3], -1.0, 1.0)];
            v.extend(cbam_tensors(4, 2, 3, r).unwrap().into_iter().map(|(_, t)| t));
            v.push(uniform(r, &[1, 4, 3, 3], -1.0, 1.0));
            v
        },
        |v| {
            let names: Vec<String> = ["mlp1.weight", "mlp1.bias", "mlp2.weight", "mlp2.bias", "spatial.weight", "spatial.bias"]
                .iter()
                .map(|s| format!("b.{s}"))
                .collect();
            let b = bind_vars(&names, &v[1..7]);
            let p = tr(CbamVars::from_bound(&b, "b"))?;
            head(&tr(cbam(&v[0], &p))?, &v[7])
        },
    ));

    let se = SpeechEncoder::new(Preset::Tiny, FusionMode::None, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let (names, values) = unpack(&se.params);
    let n = names.len();
    cases.push(case(
        "se_forward_tiny",
        CheckMode::Directional,
        move |r| {
            let mut v = vec![uniform(r, &[1, 1, 97, 100], 0.0, 2.0)];
            v.extend(values.iter().cloned());
            v.push(uniform(r, &[1, 512], -1.0, 1.0));
            v
        },
        move |v| {
            let b = bind_vars(&names, &v[1..=n]);
            head(&tr(se.forward(&b, &v[0]))?, &v[n + 1])
        },
    ));

    let (names, values) = unpack(&fd.params);
    let n = names.len();
    cases.push(case(
        "fd_forward_tiny",
        CheckMode::Directional,
        move |r| {
            let mut v = vec![uniform(r, &[1, 512], -1.0, 1.0)];
            v.extend(values.iter().cloned());
            v.push(uniform(r, &[1, 3, 32, 32], -1.0, 1.0));
            v
        },
        move |v| {
            let b = bind_vars(&names, &v[1..=n]);
            head(&tr(fd.forward(&b, &v[0]))?, &v[n + 1])
        },
    ));
    cases
}

fn gradient_suite() -> Check {
    let start = Instant::now();
    let mut worst = (0.0f64, String::new());
    let mut failed = Vec::new();
    let mut count = 0;
    let mut run = |name: &str, mode: CheckMode, seed: u64, sample: &mut dyn FnMut(&mut ChaCha8Rng) -> Vec<Tensor>, f: &dyn Fn(&[Var]) -> portrait_tensor::Result<Var>| {
        let gc = GradCheck { mode, ..GradCheck::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        count += 1;
        match gc.run(&mut rng, |r| sample(r), f) {
            Ok(rep) => {
                if rep.max_rel_err > worst.0 {
                    worst = (rep.max_rel_err, name.to_string());
                }
                if !rep.passed(gc.tol) || rep.trials != 100 {
                    failed.push(format!("{name} ({:.2e})", rep.max_rel_err));
                }
            }
            Err(e) => failed.push(format!("{name} ({e})")),
        }
    };
    for (i, c) in primitive_cases().into_iter().enumerate() {
        let mut s = c.sample;
        run(c.name, c.mode, 1000 + i as u64, &mut s, &c.f);
    }
    for (i, mut c) in model_cases().into_iter().enumerate() {
        run(&c.name, c.mode, 2000 + i as u64, &mut c.sample, &*c.f);
    }
    let elapsed = start.elapsed();
    let ok = failed.is_empty() && elapsed < Duration::from_secs(300);
    Ok((
        ok,
        format!(
            "{count} cases x 100 trials, worst rel err {:.2e} ({}), {:.1}s{}",
            worst.0,
            worst.1,
            elapsed.as_secs_f64(),
            if failed.is_empty() { String::new() } else { format!(", failed: {}", failed.join(", ")) }
        ),
    ))
}

fn shape_conformance() -> Check {
    let start = Instant::now();
    let map = |c, h, w| Dims::Map { c, h, w };
    let se_want = [
        ("conv1", map(64, 127, 297)),
        ("maxpool1", map(64, 63, 148)),
        ("conv2", map(128, 31, 73)),
        ("maxpool2", map(128, 15, 36)),
        ("conv3", map(256, 15, 36)),
        ("conv4", map(512, 15, 36)),
        ("conv5", map(512, 15, 36)),
        ("maxpool3", map(512, 4, 17)),
        ("cbam", map(512, 4, 17)),
        ("fc1", map(4096, 4, 17)),
        ("avgpool1", map(4096, 1, 1)),
        ("fc2", Dims::Flat(4096)),
    ];
    let mut fd_want = vec![
        ("fc1", Dims::Flat(1000)),
        ("fc2", Dims::Flat(25088)),
        ("reshape", map(512, 7, 7)),
    ];
    let ct = [
        (512, 14), (512, 14), (512, 14), (512, 14), (512, 14),
        (256, 28), (256, 28), (256, 28), (64, 56), (64, 56), (32, 112), (64, 224),
    ];
    let names: Vec<String> = (1..=12).map(|i| format!("convtrans{i}")).collect();
    for (i, &(c, s)) in ct.iter().enumerate() {
        fd_want.push((names[i].as_str(), map(c, s, s)));
        if i == 7 {
            fd_want.push(("cbam", map(256, 28, 28)));
        }
    }
    fd_want.push(("conv1", map(3, 224, 224)));
    assert_eq!(se_input(Preset::Full), map(1, 257, 598));
    let se = se_spec(Preset::Full).trace(se_input(Preset::Full))?;
    let fd = fd_shape_trace(Preset::Full, fd_input(Preset::Full))?;
    assert_eq!(fd_input(Preset::Full), Dims::Flat(4096));
    let matches = |got: &[portrait_core::network::TraceRow], want: &[(&str, Dims)]| {
        got.len() == want.len() && got.iter().zip(want).all(|(g, (n, d))| g.layer == *n && g.dims == *d)
    };
    let ok_se = matches(&se, &se_want);
    let ok_fd = matches(&fd, &fd_want);
    let elapsed = start.elapsed();
    Ok((
        ok_se && ok_fd && elapsed < Duration::from_secs(1),
        format!(
            "SE {} rows {}, FD {} rows {}, {:.1} ms",
            se.len(),
            if ok_se { "match" } else { "MISMATCH" },
            fd.len(),
            if ok_fd { "match" } else { "MISMATCH" },
            elapsed.as_secs_f64() * 1e3
        ),
    ))
}

fn loss_identities() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let tape = Tape::new();
    let w = LossWeights::for_preset(Preset::Tiny);
    let wf = LossWeights::for_preset(Preset::Full);
    let constants = [w.alpha, w.lambda1, w.lambda2, w.lambda3] == [0.84, 1.0, 0.04, 1.2]
        && [wf.alpha, wf.lambda1, wf.lambda2, wf.lambda3] == [0.84, 1.0, 0.04, 1.2];
    let x = tape.constant(uniform(&mut rng, &[2, 3, 32, 32], 0.0, 1.0));
    let il = image_loss(&x, &x, &w)?.value().item();
    let ms = ms_ssim(&x, &x, &w.ms_ssim)?.value().item();
    let a = tape.constant(uniform(&mut rng, &[3, 512], -1.0, 1.0));
    let cs_same = cosine_loss(&a, &a)?.value().item();
    let cs_neg = cosine_loss(&a, &a.neg()?)?.value().item();

    let emb = FaceEmbedder::new(Preset::Tiny, 1)?;
    let fd = FaceDecoder::new(Preset::Tiny, &mut ChaCha8Rng::seed_from_u64(5))?;
    let bfd = fd.params.bind(&tape);
    let bemb = emb.bind(&tape);
    let f = tape.constant(uniform(&mut rng, &[3, 512], -1.0, 1.0));
    let s = tape.constant(uniform(&mut rng, &[3, 512], -1.0, 1.0));
    let same = se_tri_loss(&f, &f, |v| fd.fc1(&bfd, v), |v| emb.fc3(&bemb, v), &w)?.total.value().item();
    let tri = se_tri_loss(&f, &s, |v| fd.fc1(&bfd, v), |v| emb.fc3(&bemb, v), &w)?;

    // independent recomputation from plain values
    let rows = |t: &Tensor| -> Vec<Vec<f64>> {
        let d = t.shape()[1];
        t.data().chunks(d).map(|c| c.to_vec()).collect()
    };
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (fr, sr) = (rows(f.value()), rows(s.value()));
    let h_f = rows(fd.fc1(&bfd, &f)?.value());
    let h_s = rows(fd.fc1(&bfd, &s)?.value());
    let v_f = rows(emb.fc3(&bemb, &f)?.value());
    let v_s = rows(emb.fc3(&bemb, &s)?.value());
    let n = fr.len() as f64;
    let mut t = [0.0; 3];
    for i in 0..fr.len() {
        let (nf, ns) = (norm(&fr[i]), norm(&sr[i]));
        t[0] += fr[i].iter().zip(&sr[i]).map(|(a, b)| (a / nf - b / ns).powi(2)).sum::<f64>() / n;
        t[1] += h_f[i].iter().zip(&h_s[i]).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
        let dot: f64 = v_f[i].iter().zip(&v_s[i]).map(|(a, b)| a * b).sum();
        t[2] += (1.0 - dot / (norm(&v_f[i]) * norm(&v_s[i]))) / n;
    }
    let want = 1.0 * t[0] + 0.04 * t[1] + 1.2 * t[2];
    let oracle_err = (tri.total.value().item() - want)
        .abs()
        .max((0..3).map(|k| (tri.terms[k].value().item() - t[k]).abs()).fold(0.0, f64::max));
    let checks = [
        il.abs() <= 1e-12,
        (ms - 1.0).abs() <= 1e-12,
        cs_same.abs() <= 1e-12,
        (cs_neg - 2.0).abs() <= 1e-12,
        same.abs() <= 1e-12,
        oracle_err <= 1e-12,
        constants,
    ];
    Ok((
        checks.iter().all(|&c| c),
        format!(
            "image_loss(x,x)={il:e}, ms_ssim(x,x)={ms}, cos(a,a)={cs_same:e}, cos(a,-a)={cs_neg}, tri(F,F)={same:e}, oracle diff {oracle_err:.1e}, constants {}",
            if constants { "wired" } else { "WRONG" }
        ),
    ))
}

struct Smoke {
    embedder: FaceEmbedder,
    fd_run: FdRun,
    bank: PriorBank,
    se: SpeechEncoder,
    se_epoch_means: Vec<f64>,
    fd_bytes_hash: String,
    fd_hash_after_se: String,
    fd_internal: (String, String),
    elapsed: Duration,
}

fn bank_for(data: &TrainSet, emb: &FaceEmbedder) -> portrait_core::Result<PriorBank> {
    let feats = data.face_features(emb)?;
    let fv = (0..data.len())
        .map(|i| Ok((FeatureVec::from_row(&feats, i)?, data.genders[i])))
        .collect::<portrait_core::Result<Vec<_>>>()?;
    PriorBank::from_features(&fv)
}

fn smoke_run() -> portrait_core::Result<Smoke> {
    let start = Instant::now();
    let pairs = generate_dataset(2024, 200, Preset::Tiny)?;
    let data = TrainSet::from_pairs(&pairs, Preset::Tiny)?;
    drop(pairs);
    let embedder = FaceEmbedder::new(Preset::Tiny, 1)?;
    let cfg = TrainConfig::new(Preset::Tiny);
    let fd_run = train_fd(&cfg, &data, &embedder)?;
    // stage two loads the decoder from its serialized checkpoint
    let ck = Checkpoint::from_decoder(&fd_run.decoder);
    let fd_bytes_hash = ck.hash();
    let fd = Checkpoint::from_bytes(&ck.to_bytes())?.into_decoder()?;
    let bank = bank_for(&data, &embedder)?;
    let se_cfg = Variant::NonPrior.configure(&cfg);
    let run = train_se(&se_cfg, &data, &fd, &bank, &embedder, &PriorSource::Labels)?;
    let fd_hash_after_se = Checkpoint::from_decoder(&fd).hash();
    Ok(Smoke {
        embedder,
        fd_run,
        bank,
        se: run.encoder,
        se_epoch_means: run.epoch_means,
        fd_bytes_hash,
        fd_hash_after_se,
        fd_internal: (run.fd_hash_before, run.fd_hash_after),
        elapsed: start.elapsed(),
    })
}

fn training_smoke(s: &Smoke) -> Check {
    let fd = &s.fd_run.epoch_means;
    let se = &s.se_epoch_means;
    let fd_ratio = fd.last().unwrap() / fd[0];
    let se_ratio = se.last().unwrap() / se[0];
    Ok((
        fd.len() == 50 && fd_ratio < 0.5 && se_ratio <= 0.5 && s.elapsed < Duration::from_secs(1800),
        format!(
            "FD epoch mean {:.4} -> {:.4} (x{fd_ratio:.3}) over {} epochs; SE {:.4} -> {:.4} (x{se_ratio:.3}); {:.0}s",
            fd[0],
            fd.last().unwrap(),
            fd.len(),
            se[0],
            se.last().unwrap(),
            s.elapsed.as_secs_f64()
        ),
    ))
}

fn frozen_fd(s: &Smoke) -> Check {
    let ok = s.fd_bytes_hash == s.fd_hash_after_se && s.fd_internal.0 == s.fd_internal.1;
    Ok((ok, format!("checkpoint sha256 {} before and {} after", &s.fd_bytes_hash[..16], &s.fd_hash_after_se[..16])))
}

fn residual_fusion() -> Check {
    let mut se = SpeechEncoder::new(Preset::Tiny, FusionMode::Sum, &mut ChaCha8Rng::seed_from_u64(6))?;
    for name in ["se.fc2.weight", "se.fc2.bias"] {
        let p = se.params.get_mut(name).expect("fc2 params");
        p.value = Tensor::zeros(p.value.shape().to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let prior_vec = FeatureVec::new((0..512).map(|_| rng.random_range(-2.0..2.0)).collect())?;
    let prior = portrait_core::prior::PriorFeature::from_vec(prior_vec.clone(), PriorKind::Neutral, 10);
    let spec = portrait_core::audio::Spectrogram {
        values: uniform(&mut rng, &[1, 97, 100], 0.0, 2.0),
        params: Preset::Tiny.stft(),
    };
    let s_f = se.encode(&spec)?;
    let fused = se.encode_final(&spec, Some(&prior))?;
    let exact = s_f.data().iter().all(|&v| v == 0.0) && fused == prior_vec;

    let seeds = 20;
    let steps = PRIOR_LADDER.len() - 2;
    let mut non_increasing = vec![0; steps];
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let feats = (0..PRIOR_LADDER[PRIOR_LADDER.len() - 1])
            .map(|_| FeatureVec::new((0..512).map(|_| rng.sample(StandardNormal)).collect()))
            .collect::<portrait_core::Result<Vec<_>>>()?;
        let rows = convergence_rows(&feats, &PRIOR_LADDER, PriorKind::Neutral)?;
        for k in 0..steps {
            if rows[k + 1].l1 <= rows[k].l1 {
                non_increasing[k] += 1;
            }
        }
    }
    let majority = non_increasing.iter().all(|&c| 2 * c > seeds as usize);
    Ok((
        exact && majority,
        format!(
            "zero S_f gives prior {}; non-increasing seeds per ladder step {non_increasing:?} of {seeds}",
            if exact { "exactly" } else { "INEXACTLY" }
        ),
    ))
}

fn convergence_proxy(s: &Smoke) -> Check {
    let pairs = generate_dataset(99, 64, Preset::Tiny)?;
    let data = TrainSet::from_pairs(&pairs, Preset::Tiny)?;
    drop(pairs);
    let fd = &s.fd_run.decoder;
    let mut wins = 0;
    let mut detail = Vec::new();
    let mut slowest = Duration::ZERO;
    for seed in 0..10u64 {
        let base = TrainConfig {
            seed,
            epochs: 6,
            ..TrainConfig::new(Preset::Tiny)
        };
        let mut totals = Vec::new();
        for v in [Variant::NonPrior, Variant::NeutralFc] {
            let t = Instant::now();
            let run = train_se(&v.configure(&base), &data, fd, &s.bank, &s.embedder, &PriorSource::Labels)?;
            slowest = slowest.max(t.elapsed());
            totals.push(run.log.iter().map(|r| r.total).collect::<Vec<f64>>());
        }
        let threshold = 0.15 * totals[0][0];
        let plain = steps_to_threshold(&totals[0], threshold);
        let prior = steps_to_threshold(&totals[1], threshold);
        let win = match (prior, plain) {
            (Some(p), Some(q)) => p <= q,
            (Some(_), None) => true,
            _ => false,
        };
        wins += win as usize;
        let show = |x: Option<usize>| x.map_or("-".to_string(), |v| v.to_string());
        detail.push(format!("{}/{}", show(prior), show(plain)));
    }
    Ok((
        wins >= 7 && slowest < Duration::from_secs(600),
        format!(
            "neutral+fc no slower on {wins}/10 seeds (steps prior/non-prior: {}), slowest run {:.1}s",
            detail.join(" "),
            slowest.as_secs_f64()
        ),
    ))
}

fn metrics_suite(s: &Smoke) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut violations = 0;
    for _ in 0..1000 {
        let v: Vec<Vec<f64>> = (0..3).map(|_| (0..16).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let (ab1, ab2) = l1_l2(&v[0], &v[1])?;
        let (ba1, ba2) = l1_l2(&v[1], &v[0])?;
        let (bc1, bc2) = l1_l2(&v[1], &v[2])?;
        let (ac1, ac2) = l1_l2(&v[0], &v[2])?;
        let (aa1, aa2) = l1_l2(&v[0], &v[0])?;
        let ok = ab1 == ba1
            && ab2 == ba2
            && aa1 == 0.0
            && aa2 == 0.0
            && ab1 > 0.0
            && ab2 > 0.0
            && ac1 <= ab1 + bc1 + 1e-12
            && ac2 <= ab2 + bc2 + 1e-12;
        let c = cos_deg(&v[0], &v[1])?;
        let scaled: Vec<f64> = v[1].iter().map(|x| 3.5 * x).collect();
        let ok = ok && (0.0..=180.0).contains(&c) && (cos_deg(&v[0], &scaled)? - c).abs() < 1e-9;
        violations += !ok as usize;
    }
    let e1 = FeatureVec::new(vec![1.0, 0.0])?;
    let e2 = FeatureVec::new(vec![0.0, 1.0])?;
    let ne1 = FeatureVec::new(vec![-1.0, 0.0])?;
    let fixtures = feature_metrics(&e1, &e2)?[2] == 90.0 && feature_metrics(&e1, &ne1)?[2] == 180.0;

    let pairs = generate_dataset(404, 4, Preset::Tiny)?;
    let specs = pairs.iter().map(|p| p.spectrogram(Preset::Tiny)).collect::<portrait_core::Result<Vec<_>>>()?;
    let samples: Vec<EvalSample> = pairs
        .iter()
        .zip(&specs)
        .map(|(p, sp)| EvalSample { spec: sp, face: &p.face, gender: p.gender })
        .collect();
    let report = || -> portrait_core::Result<String> {
        let r = evaluate_model(
            "non-prior",
            &s.se,
            PriorMode::Neutral,
            &s.bank,
            &s.fd_run.decoder,
            &s.embedder,
            &samples,
            MetricOptions::default(),
        )?;
        ablation_csv(&[r])
    };
    let (a, b) = (report()?, report()?);
    let layout = a.lines().next() == Some(REPORT_HEADER) && a.lines().nth(1).is_some_and(|l| l.split(',').count() == 8);
    let deterministic = a == b;
    Ok((
        violations == 0 && fixtures && layout && deterministic,
        format!(
            "{violations} axiom violations in 1000 triples, fixtures 90/180 deg {}, header {}, repeat {}",
            if fixtures { "exact" } else { "WRONG" },
            if layout { "matches" } else { "WRONG" },
            if deterministic { "identical" } else { "DIFFERS" }
        ),
    ))
}

fn audio_pipeline() -> Check {
    let tone = |secs: f64, hz: f64| {
        let n = (secs * SAMPLE_RATE as f64) as usize;
        AudioClip::mono(
            (0..n).map(|i| (2.0 * PI * hz * i as f64 / SAMPLE_RATE as f64).sin()).collect(),
            SAMPLE_RATE,
        )
    };
    let params = StftParams::default();
    let spec = spectrogram(&tone(6.0, 1000.0), &params)?;
    let dims = (spec.freq_bins(), spec.frames());
    let t = dims.1;
    let mid = t / 2;
    let peak = (0..dims.0)
        .max_by(|&a, &b| spec.values.data()[a * t + mid].total_cmp(&spec.values.data()[b * t + mid]))
        .unwrap_or(0);
    let short = tone(4.0, 440.0);
    let tiled = normalize_clip(&short, 6.0)?;
    let tiling = tiled.samples.len() == 96_000
        && tiled.samples.iter().enumerate().all(|(i, &v)| v == short.samples[i % 64_000]);
    let long = tone(10.0, 440.0);
    let cut = normalize_clip(&long, 6.0)?;
    let trunc = cut.samples.len() == 96_000 && cut.samples[..] == long.samples[..96_000];
    Ok((
        dims == (257, 598) && peak == 32 && tiling && trunc,
        format!(
            "6 s clip -> {}x{}, 1 kHz peak bin {peak}, 4 s tiling {}, 10 s truncation {}",
            dims.0,
            dims.1,
            if tiling { "ok" } else { "WRONG" },
            if trunc { "ok" } else { "WRONG" }
        ),
    ))
}

fn main() {
    let mut results: Vec<(&str, Check)> = Vec::new();
    results.push(("gradient suite", gradient_suite()));
    results.push(("shape conformance", shape_conformance()));
    results.push(("loss identities", loss_identities()));
    let smoke = smoke_run();
    match &smoke {
        Ok(s) => {
            results.push(("frozen decoder contract", frozen_fd(s)));
            results.push(("residual fusion and prior convergence", residual_fusion()));
            results.push(("convergence acceleration proxy", convergence_proxy(s)));
            results.push(("training smoke", training_smoke(s)));
            results.push(("metrics suite", metrics_suite(s)));
        }
        Err(e) => {
            for name in ["frozen decoder contract", "convergence acceleration proxy", "training smoke", "metrics suite"] {
                results.push((name, Err(CoreError::State(format!("training run failed: {e}")))));
            }
            results.push(("residual fusion and prior convergence", residual_fusion()));
        }
    }
    results.push(("audio pipeline", audio_pipeline()));

    let mut failures = 0;
    for (name, r) in &results {
        let (ok, detail) = match r {
            Ok((ok, d)) => (*ok, d.clone()),
            Err(e) => (false, format!("error: {e}")),
        };
        failures += !ok as usize;
        println!("[{}] {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
    println!("acceptance: {} of {} criteria passed", results.len() - failures, results.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
