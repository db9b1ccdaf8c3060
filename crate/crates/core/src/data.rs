//! Synthetic latent-linked face/voice pairs.
//!
//! Each pair is driven by an 8-dim latent in `[-1, 1]^8`. The face is a
//! rendered toy portrait and the voice a harmonic stack whose pitch,
//! formants and modulation depend on the same latent.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use portrait_tensor::Tensor;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{AudioClip, CLIP_SAMPLES, SAMPLE_RATE, Spectrogram, preprocess, write_wav};
use crate::error::{Result, format_err, input};
use crate::feature::FaceImage;
use crate::preset::Preset;
use crate::prior::Gender;

pub const LATENT_DIM: usize = 8;

pub type Latent = [f64; LATENT_DIM];

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticPair {
    pub index: usize,
    pub latent: Latent,
    pub gender: Gender,
    pub face: FaceImage,
    pub audio: AudioClip,
}

impl SyntheticPair {
    pub fn from_latent(index: usize, latent: Latent, preset: Preset) -> Result<Self> {
        Ok(SyntheticPair {
            index,
            latent,
            gender: gender_of(&latent),
            face: render_face(&latent, preset.image_size())?,
            audio: synthesize_voice(&latent),
        })
    }

    pub fn spectrogram(&self, preset: Preset) -> Result<Spectrogram> {
        preprocess(&self.audio, &preset.stft())
    }
}

pub fn gender_of(z: &Latent) -> Gender {
    if z[0] >= 0.0 { Gender::Female } else { Gender::Male }
}

/// Latent of pair `index`, independent of how many pairs are generated.
pub fn latent_for(seed: u64, index: usize) -> Latent {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    std::array::from_fn(|_| rng.random_range(-1.0..=1.0))
}

pub fn generate_dataset(seed: u64, n: usize, preset: Preset) -> Result<Vec<SyntheticPair>> {
    if n == 0 {
        return Err(input("dataset size must be at least 1"));
    }
    (0..n)
        .map(|i| SyntheticPair::from_latent(i, latent_for(seed, i), preset))
        .collect()
}

/// Soft coverage of an axis-aligned ellipse at pixel scale `px`.
fn ellipse(u: f64, v: f64, cx: f64, cy: f64, rx: f64, ry: f64, px: f64) -> f64 {
    let d = (((u - cx) / rx).powi(2) + ((v - cy) / ry).powi(2)).sqrt();
    let sd = (d - 1.0) * rx.min(ry);
    (0.5 - sd / px).clamp(0.0, 1.0)
}

fn blend(dst: &mut [f64; 3], src: [f64; 3], a: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * (s - *d);
    }
}

pub fn render_face(z: &Latent, size: usize) -> Result<FaceImage> {
    if size < 8 {
        return Err(input(format!("image size {size} is too small")));
    }
    let px = 1.5 / size as f64;
    let female = gender_of(z) == Gender::Female;
    let tone = 0.5 + 0.5 * z[3];
    let skin = [0.55 + 0.35 * tone, 0.42 + 0.3 * tone, 0.32 + 0.25 * tone];
    let h = 0.5 + 0.5 * z[4];
    let hair = [0.12 + 0.3 * h, 0.08 + 0.2 * h, 0.05 + 0.08 * h];
    let bg = [0.2 + 0.1 * z[7], 0.25 + 0.05 * z[6], 0.32];
    let (rx, ry) = (0.27 + 0.05 * z[1], 0.34 + 0.04 * z[2]);
    let (fx, fy) = (0.5, 0.55);
    let eye_y = 0.5 + 0.04 * z[5];
    let eye_dx = 0.11 + 0.03 * z[6];
    let mouth_y = 0.74 + 0.03 * z[2];
    let mouth_rx = 0.08 + 0.04 * z[7];

    let mut data = vec![0.0; 3 * size * size];
    for i in 0..size {
        for j in 0..size {
            let (u, v) = ((j as f64 + 0.5) / size as f64, (i as f64 + 0.5) / size as f64);
            let mut c = bg;
            if female {
                blend(&mut c, hair, ellipse(u, v, fx, fy - 0.03, rx + 0.09, ry + 0.12, px));
            } else {
                let cap = ellipse(u, v, fx, fy - 0.06, rx + 0.03, ry + 0.02, px);
                blend(&mut c, hair, cap * (0.5 - (v - 0.42) / px).clamp(0.0, 1.0));
            }
            blend(&mut c, skin, ellipse(u, v, fx, fy, rx, ry, px));
            for side in [-1.0, 1.0] {
                blend(&mut c, [0.1, 0.1, 0.15], ellipse(u, v, fx + side * eye_dx, eye_y, 0.035, 0.03, px));
            }
            blend(&mut c, [0.7, 0.25, 0.3], ellipse(u, v, fx, mouth_y, mouth_rx, 0.025, px));
            for (ch, val) in c.iter().enumerate() {
                data[(ch * size + i) * size + j] = val.clamp(0.0, 1.0);
            }
        }
    }
    FaceImage::new(Tensor::new([3, size, size], data)?)
}

/// Fundamental frequency in Hz.
pub fn pitch_of(z: &Latent) -> f64 {
    let base = match gender_of(z) {
        Gender::Male => 115.0,
        Gender::Female => 205.0,
    };
    base * (1.0 + 0.1 * z[1])
}

/// Six seconds of 16 kHz harmonic voice.
pub fn synthesize_voice(z: &Latent) -> AudioClip {
    let fs = SAMPLE_RATE as f64;
    let f0 = pitch_of(z);
    let shift = if gender_of(z) == Gender::Female { 1.15 } else { 1.0 };
    let formants = [
        (600.0 + 200.0 * z[2]) * shift,
        (1500.0 + 400.0 * z[3]) * shift,
        (2700.0 + 400.0 * z[4]) * shift,
    ];
    let tilt = 2000.0 + 800.0 * z[5];
    let rate = 2.5 + 1.5 * z[6];
    let depth = 0.35 + 0.25 * z[7];

    let partials: Vec<(f64, f64)> = (1..)
        .map(|k| k as f64 * f0)
        .take_while(|&f| f < 7500.0)
        .map(|f| {
            let env: f64 = formants.iter().map(|&fm| (-((f - fm) / 250.0).powi(2)).exp()).sum();
            (f, (0.05 + env) * (-f / tilt).exp())
        })
        .collect();

    // Each partial is a phasor rotated once per sample.
    let mut phasors: Vec<(f64, f64, f64, f64, f64)> = partials
        .iter()
        .enumerate()
        .map(|(k, &(f, a))| {
            let phase = 0.7 * (k * k) as f64;
            let step = 2.0 * PI * f / fs;
            (phase.cos(), phase.sin(), step.cos(), step.sin(), a)
        })
        .collect();
    let mut out = vec![0.0; CLIP_SAMPLES];
    for (t, o) in out.iter_mut().enumerate() {
        let mut s = 0.0;
        for p in phasors.iter_mut() {
            s += p.4 * p.1;
            let (c, sn) = (p.0 * p.2 - p.1 * p.3, p.1 * p.2 + p.0 * p.3);
            p.0 = c;
            p.1 = sn;
        }
        if t % 4096 == 4095 {
            for p in phasors.iter_mut() {
                let r = (p.0 * p.0 + p.1 * p.1).sqrt();
                p.0 /= r;
                p.1 /= r;
            }
        }
        let m = 1.0 - depth * (0.5 + 0.5 * (2.0 * PI * rate * t as f64 / fs).sin());
        *o = m * s;
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        for v in &mut out {
            *v *= 0.5 / peak;
        }
    }
    AudioClip::mono(out, SAMPLE_RATE)
}

pub fn manifest_csv(seed: u64, preset: Preset, pairs: &[SyntheticPair]) -> String {
    let mut s = format!("# seed={seed} preset={preset}\nindex,gender");
    for k in 0..LATENT_DIM {
        let _ = write!(s, ",z{k}");
    }
    s.push('\n');
    for p in pairs {
        let g = match p.gender {
            Gender::Male => "male",
            Gender::Female => "female",
        };
        let _ = write!(s, "{},{g}", p.index);
        for v in p.latent {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

/// Parses a manifest back into `(preset, latents)`.
pub fn parse_manifest(text: &str) -> Result<(Preset, Vec<(usize, Latent)>)> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| format_err("empty manifest"))?;
    let preset = header
        .split_whitespace()
        .find_map(|t| t.strip_prefix("preset="))
        .ok_or_else(|| format_err("manifest header lacks preset"))?
        .parse()?;
    lines.next();
    let mut out = Vec::new();
    for (no, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 2 + LATENT_DIM {
            return Err(format_err(format!("manifest row {no} has {} columns", cols.len())));
        }
        let bad = |c: &str| format_err(format!("manifest row {no}: bad value {c:?}"));
        let index = cols[0].parse().map_err(|_| bad(cols[0]))?;
        let mut z = [0.0; LATENT_DIM];
        for (k, c) in cols[2..].iter().enumerate() {
            z[k] = c.parse().map_err(|_| bad(c))?;
        }
        out.push((index, z));
    }
    Ok((preset, out))
}

/// Writes `manifest.csv` plus one WAV and one PNG per pair.
pub fn write_dataset(dir: impl AsRef<Path>, seed: u64, preset: Preset, pairs: &[SyntheticPair]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("manifest.csv"), manifest_csv(seed, preset, pairs))?;
    for p in pairs {
        write_wav(dir.join(format!("{:05}.wav", p.index)), &p.audio)?;
        p.face.write_png(dir.join(format!("{:05}.png", p.index)))?;
    }
    Ok(())
}

/// Regenerates the pairs listed in a dataset directory's manifest.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<(Preset, Vec<SyntheticPair>)> {
    let text = std::fs::read_to_string(dir.as_ref().join("manifest.csv"))?;
    let (preset, rows) = parse_manifest(&text)?;
    let pairs = rows
        .into_iter()
        .map(|(i, z)| SyntheticPair::from_latent(i, z, preset))
        .collect::<Result<Vec<_>>>()?;
    Ok((preset, pairs))
}
