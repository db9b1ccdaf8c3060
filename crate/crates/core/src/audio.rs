//! Audio preprocessing: mono mixdown, resampling, 6 s tiling and the
//! compressed magnitude spectrogram.

use std::f64::consts::PI;
use std::path::Path;

use portrait_tensor::Tensor;
use rustfft::FftPlanner;
use rustfft::num_complex::Complex;

use crate::binio::{Reader, put_u32};
use crate::error::{CoreError, Result, format_err, input};

pub const SAMPLE_RATE: u32 = 16_000;
pub const CLIP_SECONDS: f64 = 6.0;
pub const CLIP_SAMPLES: usize = 96_000;

const ARSP_MAGIC: &[u8; 4] = b"ARSP";
const ARSP_VERSION: u32 = 1;

/// Interleaved samples in [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub channels: u16,
}

impl AudioClip {
    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Self {
        AudioClip {
            samples,
            sample_rate,
            channels: 1,
        }
    }

    pub fn frames(&self) -> usize {
        self.samples.len() / self.channels.max(1) as usize
    }

    pub fn duration(&self) -> f64 {
        self.frames() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        (self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len().max(1) as f64).sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StftParams {
    pub window: usize,
    pub hop: usize,
    pub fft: usize,
    pub exponent: f64,
}

impl Default for StftParams {
    /// 25 ms Hann window, 10 ms hop, 512-point FFT, magnitude^0.3.
    fn default() -> Self {
        StftParams {
            window: 400,
            hop: 160,
            fft: 512,
            exponent: 0.3,
        }
    }
}

impl StftParams {
    pub fn freq_bins(&self) -> usize {
        self.fft / 2 + 1
    }

    pub fn frames(&self, num_samples: usize) -> usize {
        if num_samples < self.window {
            0
        } else {
            (num_samples - self.window) / self.hop + 1
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.hop == 0 || self.fft < self.window || !(self.exponent > 0.0) {
            return Err(CoreError::Parameter(format!("invalid STFT parameters {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    /// `[1, F, T]`, non-negative.
    pub values: Tensor,
    pub params: StftParams,
}

impl Spectrogram {
    pub fn freq_bins(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn frames(&self) -> usize {
        self.values.shape()[2]
    }

    /// `[1, 1, F, T]` batch of one.
    pub fn to_batch(&self) -> Tensor {
        self.values
            .reshape([1, 1, self.freq_bins(), self.frames()])
            .expect("same numel")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.values.numel() + 32);
        out.extend_from_slice(ARSP_MAGIC);
        put_u32(&mut out, ARSP_VERSION);
        put_u32(&mut out, self.freq_bins() as u32);
        put_u32(&mut out, self.frames() as u32);
        for &v in self.values.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        for v in [
            self.params.window as f64,
            self.params.hop as f64,
            self.params.fft as f64,
            self.params.exponent,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(ARSP_MAGIC)?;
        let version = r.u32()?;
        if version != ARSP_VERSION {
            return Err(format_err(format!("unsupported spectrogram version {version}")));
        }
        let f = r.u32()? as usize;
        let t = r.u32()? as usize;
        let mut data = Vec::with_capacity(f * t);
        for _ in 0..f * t {
            data.push(r.f32()? as f64);
        }
        let params = StftParams {
            window: r.f64()? as usize,
            hop: r.f64()? as usize,
            fft: r.f64()? as usize,
            exponent: r.f64()?,
        };
        r.finish()?;
        Ok(Spectrogram {
            values: Tensor::new([1, f, t], data).map_err(|e| format_err(e.to_string()))?,
            params,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Tiles short clips from the start and truncates long ones to exactly
/// `target_seconds`.
pub fn normalize_clip(audio: &AudioClip, target_seconds: f64) -> Result<AudioClip> {
    if audio.samples.is_empty() {
        return Err(input("empty audio clip"));
    }
    if audio.channels != 1 {
        return Err(input("normalize_clip expects mono audio"));
    }
    let target = (target_seconds * audio.sample_rate as f64).round() as usize;
    let n = audio.samples.len();
    let samples = (0..target).map(|i| audio.samples[i % n]).collect();
    Ok(AudioClip::mono(samples, audio.sample_rate))
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

const SINC_ZEROS: f64 = 64.0;
const KAISER_BETA: f64 = 8.6;

/// Averages channels, then resamples with a Kaiser-windowed sinc whose
/// cutoff sits at 0.95 of the lower Nyquist frequency. Each output tap set
/// is normalized to unit sum.
pub fn resample_mono(audio: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if audio.sample_rate == 0 || target_rate == 0 {
        return Err(input("sample rate must be positive"));
    }
    let ch = audio.channels.max(1) as usize;
    if audio.samples.is_empty() || audio.samples.len() % ch != 0 {
        return Err(input("empty or ragged audio clip"));
    }
    let mono: Vec<f64> = audio
        .samples
        .chunks(ch)
        .map(|f| f.iter().sum::<f64>() / ch as f64)
        .collect();
    if audio.sample_rate == target_rate {
        return Ok(AudioClip::mono(mono, target_rate));
    }
    let src = audio.sample_rate as f64;
    let dst = target_rate as f64;
    let cutoff = 0.95 * src.min(dst) / 2.0;
    // kernel in units of input samples
    let scale = 2.0 * cutoff / src;
    let half = SINC_ZEROS / scale;
    let i0_beta = bessel_i0(KAISER_BETA);
    let out_len = ((mono.len() as f64) * dst / src).round() as usize;
    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len {
        let t = n as f64 * src / dst;
        let lo = (t - half).ceil().max(0.0) as usize;
        let hi = ((t + half).floor() as usize).min(mono.len() - 1);
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for (k, &x) in mono.iter().enumerate().take(hi + 1).skip(lo) {
            let d = k as f64 - t;
            let arg = PI * scale * d;
            let sinc = if arg.abs() < 1e-12 { 1.0 } else { arg.sin() / arg };
            let r = d / half;
            let win = bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / i0_beta;
            let w = sinc * win;
            acc += w * x;
            wsum += w;
        }
        out.push(if wsum != 0.0 { acc / wsum } else { 0.0 });
    }
    Ok(AudioClip::mono(out, target_rate))
}

fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// STFT magnitudes `|X|` before compression, `[F][T]` row-major.
pub fn stft_magnitude(samples: &[f64], params: &StftParams) -> Result<Vec<f64>> {
    params.validate()?;
    let f = params.freq_bins();
    let t = params.frames(samples.len());
    if t == 0 {
        return Err(input(format!("clip of {} samples shorter than one window", samples.len())));
    }
    let window = hann(params.window);
    let fft = FftPlanner::new().plan_fft_forward(params.fft);
    let mut buf = vec![Complex::new(0.0, 0.0); params.fft];
    let mut mag = vec![0.0; f * t];
    for frame in 0..t {
        let start = frame * params.hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = if i < params.window {
                Complex::new(samples[start + i] * window[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        for k in 0..f {
            mag[k * t + frame] = buf[k].norm();
        }
    }
    Ok(mag)
}

/// `|STFT|^exponent` of a normalized clip (6 s, 16 kHz, mono).
pub fn spectrogram(audio: &AudioClip, params: &StftParams) -> Result<Spectrogram> {
    if audio.channels != 1 || audio.sample_rate != SAMPLE_RATE || audio.samples.len() != CLIP_SAMPLES {
        return Err(CoreError::Contract(format!(
            "spectrogram expects a normalized clip ({CLIP_SAMPLES} mono samples at {SAMPLE_RATE} Hz), got {} samples, {} channels at {} Hz",
            audio.samples.len(),
            audio.channels,
            audio.sample_rate
        )));
    }
    let mag = stft_magnitude(&audio.samples, params)?;
    let values = mag.iter().map(|m| m.powf(params.exponent)).collect();
    Ok(Spectrogram {
        values: Tensor::new([1, params.freq_bins(), params.frames(audio.samples.len())], values)?,
        params: *params,
    })
}

/// Full frontend: mono 16 kHz, exactly 6 s, then the spectrogram.
pub fn preprocess(audio: &AudioClip, params: &StftParams) -> Result<Spectrogram> {
    let clip = normalize_clip(&resample_mono(audio, SAMPLE_RATE)?, CLIP_SECONDS)?;
    spectrogram(&clip, params)
}

/// Reads 16-bit PCM or 32-bit float WAV.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(input(format!("unsupported WAV encoding: {fmt:?} {bits}-bit")));
        }
    };
    Ok(AudioClip {
        samples,
        sample_rate: spec.sample_rate,
        channels: spec.channels,
    })
}

/// Writes 32-bit float WAV.
pub fn write_wav(path: impl AsRef<Path>, audio: &AudioClip) -> Result<()> {
    let spec = hound::WavSpec {
        channels: audio.channels,
        sample_rate: audio.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for &s in &audio.samples {
        w.write_sample(s as f32)?;
    }
    w.finalize()?;
    Ok(())
}
