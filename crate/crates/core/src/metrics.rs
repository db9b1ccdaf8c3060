//! Feature-space evaluation: L1, L2 and angular distance, model reports
//! and the Face-to-Face benchmark.

use std::fmt::Write as _;

use crate::audio::Spectrogram;
use crate::decoder::FaceDecoder;
use crate::embedder::FaceEmbedder;
use crate::encoder::SpeechEncoder;
use crate::error::{CoreError, Result, input, state};
use crate::feature::{FaceImage, FeatureVec};
use crate::preset::Preset;
use crate::prior::{Gender, PriorBank, PriorMode, select_prior};

pub fn l1_l2(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() != b.len() {
        return Err(input(format!("feature dims {} and {} differ", a.len(), b.len())));
    }
    let l1 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
    let l2 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    Ok((l1, l2))
}

/// Angle between `a` and `b` in degrees.
pub fn cos_deg(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(input(format!("feature dims {} and {} differ", a.len(), b.len())));
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(input("cosine of a zero vector is undefined"));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0).acos().to_degrees())
}

/// `(l1, l2, cos_deg)`.
pub fn feature_metrics(a: &FeatureVec, b: &FeatureVec) -> Result<[f64; 3]> {
    let (l1, l2) = l1_l2(a.data(), b.data())?;
    Ok([l1, l2, cos_deg(a.data(), b.data())?])
}

fn unit(v: &FeatureVec) -> Result<FeatureVec> {
    let n = v.norm();
    if n == 0.0 {
        return Err(input("cannot unitize a zero vector"));
    }
    FeatureVec::new(v.data().iter().map(|x| x / n).collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricOptions {
    /// Compare unit-normalized features for L1 and L2.
    pub unitized: bool,
}

impl MetricOptions {
    pub fn measure(&self, a: &FeatureVec, b: &FeatureVec) -> Result<[f64; 3]> {
        if self.unitized {
            feature_metrics(&unit(a)?, &unit(b)?)
        } else {
            feature_metrics(a, b)
        }
    }
}

/// Arithmetic mean of per-sample metric triples.
pub fn average(rows: &[[f64; 3]]) -> Option<[f64; 3]> {
    if rows.is_empty() {
        return None;
    }
    let mut s = [0.0; 3];
    for r in rows {
        for k in 0..3 {
            s[k] += r[k];
        }
    }
    Some(s.map(|v| v / rows.len() as f64))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub model_tag: String,
    pub preset: Preset,
    /// Encoder feature against the ground-truth face feature.
    pub se: Option<[f64; 3]>,
    /// Feature of the regenerated face against the ground-truth feature.
    pub generated: Option<[f64; 3]>,
    pub sample_count: usize,
}

/// One evaluation sample.
pub struct EvalSample<'a> {
    pub spec: &'a Spectrogram,
    pub face: &'a FaceImage,
    pub gender: Gender,
}

/// Evaluates an encoder (with its prior fusion) and the decoder on `samples`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_model(
    tag: &str,
    se: &SpeechEncoder,
    prior_mode: PriorMode,
    bank: &PriorBank,
    fd: &FaceDecoder,
    embedder: &FaceEmbedder,
    samples: &[EvalSample<'_>],
    opts: MetricOptions,
) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(input("no evaluation samples"));
    }
    if se.preset != fd.preset || se.preset != embedder.preset {
        return Err(CoreError::Contract(format!(
            "preset mismatch: encoder {}, decoder {}, embedder {}",
            se.preset, fd.preset, embedder.preset
        )));
    }
    let with_prior = se.fusion != crate::encoder::FusionMode::None;
    let mut se_rows = Vec::with_capacity(samples.len());
    let mut gen_rows = Vec::with_capacity(samples.len());
    for s in samples {
        let truth = embedder.embed(s.face)?;
        let prior = if with_prior { Some(select_prior(bank, prior_mode, s.gender)?) } else { None };
        let feat = se.encode_final(s.spec, prior)?;
        se_rows.push(opts.measure(&feat, &truth)?);
        let regen = embedder.embed(&fd.decode(&feat)?)?;
        gen_rows.push(opts.measure(&regen, &truth)?);
    }
    Ok(MetricsReport {
        model_tag: tag.into(),
        preset: se.preset,
        se: average(&se_rows),
        generated: average(&gen_rows),
        sample_count: samples.len(),
    })
}

/// Round-trip report from ground-truth and regenerated features.
pub fn round_trip_report(
    tag: &str,
    preset: Preset,
    truth: &[FeatureVec],
    regenerated: &[FeatureVec],
    opts: MetricOptions,
) -> Result<MetricsReport> {
    if truth.is_empty() || truth.len() != regenerated.len() {
        return Err(input(format!("{} truths for {} regenerations", truth.len(), regenerated.len())));
    }
    let rows = truth
        .iter()
        .zip(regenerated)
        .map(|(t, r)| opts.measure(r, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport {
        model_tag: tag.into(),
        preset,
        se: None,
        generated: average(&rows),
        sample_count: truth.len(),
    })
}

/// Embed, decode and re-embed every image.
pub fn face_to_face_benchmark(
    embedder: &FaceEmbedder,
    fd: &FaceDecoder,
    images: &[FaceImage],
    opts: MetricOptions,
) -> Result<MetricsReport> {
    if fd.trained_steps == 0 {
        return Err(state("face-to-face benchmark needs a trained decoder"));
    }
    let mut truth = Vec::with_capacity(images.len());
    let mut regen = Vec::with_capacity(images.len());
    for img in images {
        let f = embedder.embed(img)?;
        regen.push(embedder.embed(&fd.decode(&f)?)?);
        truth.push(f);
    }
    round_trip_report("face-to-face", fd.preset, &truth, &regen, opts)
}

pub const REPORT_HEADER: &str = "model,l1,l2,cos_deg,l1p,l2p,cos_deg_p,n";

/// CSV with one row per report; all reports must share a preset.
pub fn ablation_csv(reports: &[MetricsReport]) -> Result<String> {
    if let Some(first) = reports.first() {
        if let Some(r) = reports.iter().find(|r| r.preset != first.preset) {
            return Err(CoreError::Contract(format!(
                "model {} uses preset {}, {} uses {}",
                r.model_tag, r.preset, first.model_tag, first.preset
            )));
        }
    }
    let mut s = format!("{REPORT_HEADER}\n");
    for r in reports {
        s.push_str(&r.model_tag);
        for block in [r.se, r.generated] {
            match block {
                Some(m) => {
                    for v in m {
                        let _ = write!(s, ",{v}");
                    }
                }
                None => s.push_str(",,,"),
            }
        }
        let _ = writeln!(s, ",{}", r.sample_count);
    }
    Ok(s)
}
