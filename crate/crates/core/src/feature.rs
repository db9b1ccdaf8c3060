use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use portrait_tensor::Tensor;

use crate::error::{Result, input};

/// Face or speech embedding of dimension D.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVec {
    pub values: Tensor,
}

impl FeatureVec {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(input("empty feature vector"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(input(format!("non-finite feature value at index {i}")));
        }
        let n = values.len();
        Ok(FeatureVec {
            values: Tensor::new([n], values)?,
        })
    }

    pub fn zeros(dim: usize) -> Self {
        FeatureVec {
            values: Tensor::zeros([dim]),
        }
    }

    pub fn dim(&self) -> usize {
        self.values.numel()
    }

    pub fn data(&self) -> &[f64] {
        self.values.data()
    }

    /// `[1, D]` row.
    pub fn to_row(&self) -> Tensor {
        self.values.reshape([1, self.dim()]).expect("same numel")
    }

    /// Row `i` of an `[N, D]` tensor.
    pub fn from_row(t: &Tensor, i: usize) -> Result<Self> {
        let d = t.shape()[1];
        Self::new(t.data()[i * d..][..d].to_vec())
    }

    pub fn norm(&self) -> f64 {
        self.data().iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// RGB image `[3, H, W]` with values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct FaceImage {
    pub pixels: Tensor,
}

impl FaceImage {
    pub fn new(pixels: Tensor) -> Result<Self> {
        match *pixels.shape() {
            [3, _, _] => {}
            _ => return Err(input(format!("face image must be [3,H,W], got {:?}", pixels.shape()))),
        }
        if let Some(i) = pixels.data().iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(input(format!("pixel {i} outside [0,1]")));
        }
        Ok(FaceImage { pixels })
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[2]
    }

    pub fn to_batch(&self) -> Tensor {
        let s = self.pixels.shape();
        self.pixels.reshape([1, s[0], s[1], s[2]]).expect("same numel")
    }

    /// Image `i` of an `[N, 3, H, W]` batch.
    pub fn from_batch(t: &Tensor, i: usize) -> Result<Self> {
        let (_, c, h, w) = t.dims4("image batch")?;
        let n = c * h * w;
        Self::new(Tensor::new([c, h, w], t.data()[i * n..][..n].to_vec())?)
    }

    /// 8-bit interleaved RGB, `round(255 * v)`.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let (h, w) = (self.height(), self.width());
        let d = self.pixels.data();
        let mut out = Vec::with_capacity(3 * h * w);
        for i in 0..h * w {
            for c in 0..3 {
                out.push((255.0 * d[c * h * w + i]).round() as u8);
            }
        }
        out
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = BufWriter::new(File::create(path)?);
        let mut enc = png::Encoder::new(file, self.width() as u32, self.height() as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        writer.write_image_data(&self.to_rgb8())?;
        writer.finish()?;
        Ok(())
    }
}
