//! ARCK checkpoints: named f32 parameter records with frozen flags plus the
//! model kind, tag and step count.

use std::path::Path;

use portrait_tensor::{Param, Tensor};
use sha2::{Digest, Sha256};

use crate::binio::{Reader, put_u32};
use crate::decoder::FaceDecoder;
use crate::encoder::{FusionMode, SpeechEncoder};
use crate::error::{CoreError, Result, format_err};
use crate::gender::GenderClassifier;
use crate::params::ParamSet;
use crate::preset::Preset;

const MAGIC: &[u8; 4] = b"ARCK";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Decoder,
    Encoder(FusionMode),
    GenderClassifier,
}

impl ModelKind {
    fn tag(self) -> u8 {
        match self {
            ModelKind::Decoder => 0,
            ModelKind::Encoder(FusionMode::None) => 1,
            ModelKind::Encoder(FusionMode::Sum) => 2,
            ModelKind::Encoder(FusionMode::SumFc) => 3,
            ModelKind::GenderClassifier => 4,
        }
    }

    fn from_tag(t: u8) -> Result<Self> {
        Ok(match t {
            0 => ModelKind::Decoder,
            1 => ModelKind::Encoder(FusionMode::None),
            2 => ModelKind::Encoder(FusionMode::Sum),
            3 => ModelKind::Encoder(FusionMode::SumFc),
            4 => ModelKind::GenderClassifier,
            t => return Err(format_err(format!("unknown model kind {t}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub preset: Preset,
    pub kind: ModelKind,
    /// Model tag used in reports, e.g. `neutral+fc`.
    pub tag: String,
    pub steps: u64,
    pub params: ParamSet,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        out.push(self.preset.tag());
        out.push(self.kind.tag());
        put_u32(&mut out, self.tag.len() as u32);
        out.extend_from_slice(self.tag.as_bytes());
        out.extend_from_slice(&self.steps.to_le_bytes());
        put_u32(&mut out, self.params.len() as u32);
        for p in self.params.iter() {
            put_u32(&mut out, p.name.len() as u32);
            out.extend_from_slice(p.name.as_bytes());
            out.push(p.frozen as u8);
            put_u32(&mut out, p.value.ndim() as u32);
            for &d in p.value.shape() {
                put_u32(&mut out, d as u32);
            }
            for &v in p.value.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(MAGIC)?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(format_err(format!("unsupported checkpoint version {version}")));
        }
        let preset = Preset::from_tag(r.u8()?)?;
        let kind = ModelKind::from_tag(r.u8()?)?;
        let tag_len = r.u32()? as usize;
        let tag = String::from_utf8(r.take(tag_len)?.to_vec()).map_err(|_| format_err("tag is not UTF-8"))?;
        let steps = r.u64()?;
        let count = r.u32()?;
        let mut params = ParamSet::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| format_err("record name is not UTF-8"))?;
            let frozen = match r.u8()? {
                0 => false,
                1 => true,
                f => return Err(format_err(format!("record {name}: bad frozen flag {f}"))),
            };
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32()? as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                let v = r.f32()?;
                if !v.is_finite() {
                    return Err(format_err(format!("record {name}: non-finite value")));
                }
                data.push(v as f64);
            }
            let mut p = Param::new(name, Tensor::new(shape, data)?);
            p.frozen = frozen;
            params.push(p).map_err(|e| CoreError::Format(e.to_string()))?;
        }
        r.finish()?;
        Ok(Checkpoint { preset, kind, tag, steps, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// SHA-256 of the serialized bytes, lowercase hex.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_decoder(fd: &FaceDecoder) -> Self {
        Checkpoint {
            preset: fd.preset,
            kind: ModelKind::Decoder,
            tag: "fd".into(),
            steps: fd.trained_steps,
            params: fd.params.clone(),
        }
    }

    pub fn into_decoder(self) -> Result<FaceDecoder> {
        self.expect(ModelKind::Decoder)?;
        let mut fd = FaceDecoder::from_params(self.preset, self.params)?;
        fd.trained_steps = self.steps;
        Ok(fd)
    }

    pub fn from_encoder(se: &SpeechEncoder, tag: &str, steps: u64) -> Self {
        Checkpoint {
            preset: se.preset,
            kind: ModelKind::Encoder(se.fusion),
            tag: tag.into(),
            steps,
            params: se.params.clone(),
        }
    }

    pub fn into_encoder(self) -> Result<SpeechEncoder> {
        let ModelKind::Encoder(fusion) = self.kind else {
            return Err(format_err(format!("expected an encoder checkpoint, found {:?}", self.kind)));
        };
        SpeechEncoder::from_params(self.preset, fusion, self.params)
    }

    pub fn from_gender(g: &GenderClassifier) -> Self {
        Checkpoint {
            preset: g.preset,
            kind: ModelKind::GenderClassifier,
            tag: "gender".into(),
            steps: g.trained_steps,
            params: g.params.clone(),
        }
    }

    pub fn into_gender(self) -> Result<GenderClassifier> {
        self.expect(ModelKind::GenderClassifier)?;
        let mut g = GenderClassifier::from_params(self.preset, self.params)?;
        g.trained_steps = self.steps;
        Ok(g)
    }

    fn expect(&self, kind: ModelKind) -> Result<()> {
        if self.kind != kind {
            return Err(format_err(format!("expected a {kind:?} checkpoint, found {:?}", self.kind)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature::FeatureVec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn decoder_round_trip_is_bit_identical() {
        let mut fd = FaceDecoder::new(Preset::Tiny, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        fd.trained_steps = 17;
        fd.params.set_frozen(true);
        let ck = Checkpoint::from_decoder(&fd);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.hash(), ck.hash());
        let fd2 = back.into_decoder().unwrap();
        assert!(fd2.params.all_frozen());
        let f = FeatureVec::new((0..512).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        assert_eq!(fd.decode(&f).unwrap(), fd2.decode(&f).unwrap());
    }

    #[test]
    fn encoder_round_trip_keeps_fusion() {
        let se = SpeechEncoder::new(Preset::Tiny, FusionMode::SumFc, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let ck = Checkpoint::from_encoder(&se, "neutral+fc", 3);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back.tag, "neutral+fc");
        assert_eq!(back.into_encoder().unwrap(), se);
    }

    #[test]
    fn corrupt_inputs_are_format_errors() {
        let fd = FaceDecoder::new(Preset::Tiny, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let bytes = Checkpoint::from_decoder(&fd).to_bytes();
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]), Err(CoreError::Format(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(CoreError::Format(_))));
        let ck = Checkpoint::from_bytes(&bytes).unwrap();
        assert!(ck.into_encoder().is_err());
    }
}
