use std::fmt;
use std::str::FromStr;

use crate::audio::{CLIP_SAMPLES, StftParams};
use crate::error::{CoreError, Result, format_err};
use crate::losses::MsSsimConfig;

/// Scale preset: `Full` has the published dimensions, `Tiny` is reduced for
/// training and gradient checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Preset {
    Full,
    Tiny,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Full => "full",
            Preset::Tiny => "tiny",
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Preset::Full => 0,
            Preset::Tiny => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Preset::Full),
            1 => Ok(Preset::Tiny),
            t => Err(format_err(format!("unknown preset tag {t}"))),
        }
    }

    /// Embedding dimension D.
    pub fn feature_dim(self) -> usize {
        match self {
            Preset::Full => 4096,
            Preset::Tiny => 512,
        }
    }

    pub fn width_divisor(self) -> usize {
        match self {
            Preset::Full => 1,
            Preset::Tiny => 8,
        }
    }

    pub fn stft(self) -> StftParams {
        match self {
            Preset::Full => StftParams::default(),
            Preset::Tiny => StftParams {
                window: 192,
                hop: 960,
                fft: 192,
                exponent: 0.3,
            },
        }
    }

    /// `(F, T)` of the encoder input.
    pub fn spectrogram_dims(self) -> (usize, usize) {
        let p = self.stft();
        (p.freq_bins(), p.frames(CLIP_SAMPLES))
    }

    pub fn image_size(self) -> usize {
        match self {
            Preset::Full => 224,
            Preset::Tiny => 32,
        }
    }

    /// `(reduction ratio, spatial kernel)`.
    pub fn cbam(self) -> (usize, usize) {
        match self {
            Preset::Full => (16, 7),
            Preset::Tiny => (2, 3),
        }
    }

    /// Width of the identity head standing in for the third VGGFace fc layer.
    pub fn identity_classes(self) -> usize {
        match self {
            Preset::Full => 2622,
            Preset::Tiny => 2622 / 8,
        }
    }

    pub fn decoder_fc1(self) -> usize {
        match self {
            Preset::Full => 1000,
            Preset::Tiny => 125,
        }
    }

    /// `(C, H, W)` of the map the decoder's fc stack is reshaped to.
    pub fn decoder_start(self) -> (usize, usize, usize) {
        match self {
            Preset::Full => (512, 7, 7),
            Preset::Tiny => (64, 1, 1),
        }
    }

    pub fn ms_ssim(self) -> MsSsimConfig {
        match self {
            Preset::Full => MsSsimConfig::standard(),
            Preset::Tiny => MsSsimConfig::truncated(3, 7, 1.0),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Preset::Full),
            "tiny" => Ok(Preset::Tiny),
            other => Err(CoreError::Input(format!("unknown preset {other:?} (expected full or tiny)"))),
        }
    }
}
