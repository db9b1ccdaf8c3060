//! Training objectives: MS-SSIM image loss, feature cosine loss, the FD
//! joint loss and the SE tri-item loss.

use portrait_tensor::{Tensor, Var};

use crate::embedder::FaceEmbedder;
use crate::error::{CoreError, Result, input};
use crate::params::Bound;
use crate::preset::Preset;

const K1: f64 = 0.01;
const K2: f64 = 0.03;
/// Floor applied to per-scale terms before exponentiation.
const CS_FLOOR: f64 = 1e-6;

pub const STANDARD_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

#[derive(Clone, Debug, PartialEq)]
pub struct MsSsimConfig {
    pub weights: Vec<f64>,
    pub window: usize,
    pub sigma: f64,
}

impl MsSsimConfig {
    /// Five standard scales, renormalized to sum to one.
    pub fn standard() -> Self {
        Self::truncated(STANDARD_WEIGHTS.len(), 11, 1.5)
    }

    /// First `scales` standard weights, renormalized to sum to one.
    pub fn truncated(scales: usize, window: usize, sigma: f64) -> Self {
        let head = &STANDARD_WEIGHTS[..scales.clamp(1, STANDARD_WEIGHTS.len())];
        let total: f64 = head.iter().sum();
        MsSsimConfig {
            weights: head.iter().map(|w| w / total).collect(),
            window,
            sigma,
        }
    }

    pub fn scales(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.weights.iter().sum();
        if self.weights.is_empty() || self.weights.iter().any(|&w| w <= 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(CoreError::Parameter(format!(
                "ms-ssim weights {:?} must be positive and sum to 1",
                self.weights
            )));
        }
        if self.window == 0 || self.window % 2 == 0 || self.sigma <= 0.0 {
            return Err(CoreError::Parameter(format!(
                "ms-ssim window {} must be odd and sigma {} positive",
                self.window, self.sigma
            )));
        }
        Ok(())
    }

    /// Normalized 2-D Gaussian window `[window, window]`.
    pub fn gaussian(&self) -> Tensor {
        let k = self.window;
        let c = (k / 2) as f64;
        let g: Vec<f64> = (0..k)
            .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let s: f64 = g.iter().sum();
        let g: Vec<f64> = g.iter().map(|v| v / s).collect();
        Tensor::from_fn([k, k], |i| g[i / k] * g[i % k])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub ms_ssim: MsSsimConfig,
}

impl LossWeights {
    pub fn for_preset(preset: Preset) -> Self {
        LossWeights {
            alpha: 0.84,
            lambda1: 1.0,
            lambda2: 0.04,
            lambda3: 1.2,
            ms_ssim: preset.ms_ssim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(CoreError::Parameter(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        for (name, l) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("lambda3", self.lambda3)] {
            if !(l > 0.0) {
                return Err(CoreError::Parameter(format!("{name} {l} must be positive")));
            }
        }
        self.ms_ssim.validate()
    }
}

fn same_shape(op: &str, x: &Var, y: &Var) -> Result<()> {
    if x.shape() != y.shape() {
        return Err(CoreError::Dimension {
            layer: op.to_string(),
            detail: format!("{:?} vs {:?}", x.shape(), y.shape()),
        });
    }
    Ok(())
}

/// Per-`(n, c)` spatial mean of a `[N,C,H,W]` map, shape `[N*C]`.
fn spatial_mean(m: &Var) -> Result<Var> {
    let s = m.shape();
    let (nc, hw) = (s[0] * s[1], s[2] * s[3]);
    Ok(m.reshape([nc, hw])?.mean_axis(1, false)?)
}

/// Multi-scale SSIM of `[N,C,H,W]` images in `[0,1]`, averaged over images
/// and channels.
pub fn ms_ssim(x: &Var, y: &Var, cfg: &MsSsimConfig) -> Result<Var> {
    cfg.validate()?;
    same_shape("ms_ssim", x, y)?;
    let (_, _, h, w) = x.value().dims4("ms_ssim")?;
    let m = cfg.scales();
    let (hs, ws) = (h >> (m - 1), w >> (m - 1));
    if hs < cfg.window || ws < cfg.window {
        return Err(CoreError::Parameter(format!(
            "{h}x{w} image is too small for {m} scales with window {}",
            cfg.window
        )));
    }
    let g = cfg.gaussian();
    let (c1, c2) = (K1 * K1, K2 * K2);
    let mut x = x.clone();
    let mut y = y.clone();
    let mut acc: Option<Var> = None;
    for (j, &wj) in cfg.weights.iter().enumerate() {
        let mx = x.depthwise_filter(&g)?;
        let my = y.depthwise_filter(&g)?;
        let mxx = mx.square()?;
        let myy = my.square()?;
        let mxy = mx.mul(&my)?;
        let sxx = x.square()?.depthwise_filter(&g)?.sub(&mxx)?;
        let syy = y.square()?.depthwise_filter(&g)?.sub(&myy)?;
        let sxy = x.mul(&y)?.depthwise_filter(&g)?.sub(&mxy)?;
        let cs = sxy
            .mul_scalar(2.0)?
            .add_scalar(c2)?
            .div(&sxx.add(&syy)?.add_scalar(c2)?)?;
        let map = if j + 1 == m {
            let l = mxy
                .mul_scalar(2.0)?
                .add_scalar(c1)?
                .div(&mxx.add(&myy)?.add_scalar(c1)?)?;
            l.mul(&cs)?
        } else {
            cs
        };
        let term = spatial_mean(&map)?.clamp_min(CS_FLOOR)?.pow_scalar(wj)?;
        acc = Some(match acc {
            None => term,
            Some(a) => a.mul(&term)?,
        });
        if j + 1 < m {
            x = x.avg_pool2d((2, 2), (2, 2))?;
            y = y.avg_pool2d((2, 2), (2, 2))?;
        }
    }
    Ok(acc.expect("at least one scale").mean()?)
}

/// `alpha * (1 - ms_ssim) + (1 - alpha) * mean(G * |x - y|)`.
pub fn image_loss(x: &Var, y: &Var, w: &LossWeights) -> Result<Var> {
    let ms = ms_ssim(x, y, &w.ms_ssim)?;
    let l1 = x.sub(y)?.abs()?.depthwise_filter(&w.ms_ssim.gaussian())?.mean()?;
    ms.neg()?
        .add_scalar(1.0)?
        .mul_scalar(w.alpha)?
        .add(&l1.mul_scalar(1.0 - w.alpha)?)
        .map_err(Into::into)
}

fn row_norms(op: &str, a: &Var) -> Result<Var> {
    let sq = a.square()?.sum_axis(1, true)?;
    if let Some(i) = sq.value().data().iter().position(|&v| v == 0.0) {
        return Err(input(format!("{op}: row {i} is a zero vector")));
    }
    Ok(sq.sqrt()?)
}

/// `1 - cos(a_i, b_i)` per row of `[N, D]` inputs, shape `[N]`.
pub fn cosine_rows(a: &Var, b: &Var) -> Result<Var> {
    same_shape("cosine_loss", a, b)?;
    if a.shape().len() != 2 {
        return Err(CoreError::Dimension {
            layer: "cosine_loss".into(),
            detail: format!("expected [N, D], got {:?}", a.shape()),
        });
    }
    let na = row_norms("cosine_loss", a)?;
    let nb = row_norms("cosine_loss", b)?;
    let dot = a.mul(b)?.sum_axis(1, true)?;
    let cos = dot.div(&na.mul(&nb)?)?;
    let n = a.shape()[0];
    Ok(cos.neg()?.add_scalar(1.0)?.reshape([n])?)
}

/// Batch mean of [`cosine_rows`].
pub fn cosine_loss(a: &Var, b: &Var) -> Result<Var> {
    Ok(cosine_rows(a, b)?.mean()?)
}

pub struct FdLoss {
    pub image: Var,
    pub cs: Var,
    pub total: Var,
}

/// Joint decoder loss against precomputed target features.
pub fn fd_total_loss_with_target(
    gen_img: &Var,
    orig: &Var,
    target: &Var,
    embedder: &FaceEmbedder,
    emb: &Bound,
    w: &LossWeights,
) -> Result<FdLoss> {
    let image = image_loss(gen_img, orig, w)?;
    let cs = cosine_loss(&embedder.forward(emb, gen_img)?, target)?;
    let total = image.add(&cs)?;
    Ok(FdLoss { image, cs, total })
}

pub fn fd_total_loss(
    gen_img: &Var,
    orig: &Var,
    embedder: &FaceEmbedder,
    emb: &Bound,
    w: &LossWeights,
) -> Result<FdLoss> {
    let target = embedder.forward(emb, orig)?;
    fd_total_loss_with_target(gen_img, orig, &target, embedder, emb, w)
}

pub struct TriLoss {
    /// Batch means of the three unweighted terms.
    pub terms: [Var; 3],
    pub total: Var,
}

fn unitize(a: &Var) -> Result<Var> {
    Ok(a.div(&row_norms("se_tri_loss", a)?)?)
}

/// Three-term encoder loss between ground-truth `f` and predicted `s`, both
/// `[N, D]`.
pub fn se_tri_loss(
    f: &Var,
    s: &Var,
    fd_fc1: impl Fn(&Var) -> Result<Var>,
    vgg_fc3: impl Fn(&Var) -> Result<Var>,
    w: &LossWeights,
) -> Result<TriLoss> {
    same_shape("se_tri_loss", f, s)?;
    let t1 = unitize(f)?.sub(&unitize(s)?)?.square()?.sum_axis(1, false)?.mean()?;
    let t2 = fd_fc1(f)?.sub(&fd_fc1(s)?)?.abs()?.sum_axis(1, false)?.mean()?;
    let t3 = cosine_loss(&vgg_fc3(f)?, &vgg_fc3(s)?)?;
    let total = t1
        .mul_scalar(w.lambda1)?
        .add(&t2.mul_scalar(w.lambda2)?)?
        .add(&t3.mul_scalar(w.lambda3)?)?;
    Ok(TriLoss { terms: [t1, t2, t3], total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use portrait_tensor::Tape;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor {
        Tensor::from_fn(shape, |_| rng.random_range(0.0..1.0))
    }

    /// Direct single-scale SSIM over every valid window.
    fn ssim_oracle(x: &Tensor, y: &Tensor, cfg: &MsSsimConfig) -> f64 {
        let (n, c, h, w) = x.dims4("oracle").unwrap();
        let k = cfg.window;
        let g = cfg.gaussian();
        let (c1, c2) = (K1 * K1, K2 * K2);
        let (oh, ow) = (h - k + 1, w - k + 1);
        let mut total = 0.0;
        for img in 0..n * c {
            let base = img * h * w;
            let mut s = 0.0;
            for i in 0..oh {
                for j in 0..ow {
                    let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for a in 0..k {
                        for b in 0..k {
                            let wt = g.data()[a * k + b];
                            let xv = x.data()[base + (i + a) * w + j + b];
                            let yv = y.data()[base + (i + a) * w + j + b];
                            mx += wt * xv;
                            my += wt * yv;
                            xx += wt * xv * xv;
                            yy += wt * yv * yv;
                            xy += wt * xv * yv;
                        }
                    }
                    let (vx, vy, cov) = (xx - mx * mx, yy - my * my, xy - mx * my);
                    s += (2.0 * mx * my + c1) / (mx * mx + my * my + c1) * (2.0 * cov + c2) / (vx + vy + c2);
                }
            }
            total += (s / (oh * ow) as f64).max(CS_FLOOR);
        }
        total / (n * c) as f64
    }

    fn eval_ms(x: &Tensor, y: &Tensor, cfg: &MsSsimConfig) -> Result<f64> {
        let tape = Tape::new();
        Ok(ms_ssim(&tape.constant(x.clone()), &tape.constant(y.clone()), cfg)?.value().item())
    }

    #[test]
    fn weights_and_window() {
        let t = MsSsimConfig::truncated(3, 7, 1.0);
        assert!((t.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        t.validate().unwrap();
        MsSsimConfig::standard().validate().unwrap();
        assert!((MsSsimConfig::standard().weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let g = MsSsimConfig::standard().gaussian();
        assert!((g.sum() - 1.0).abs() < 1e-12);
        assert_eq!(g.data()[0], g.data()[120]);
    }

    #[test]
    fn single_scale_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = MsSsimConfig { weights: vec![1.0], window: 11, sigma: 1.5 };
        let x = random_image(&mut rng, [2, 3, 16, 14]);
        let y = x.zip_map(&random_image(&mut rng, [2, 3, 16, 14]), |a, b| 0.7 * a + 0.3 * b);
        let got = eval_ms(&x, &y, &cfg).unwrap();
        let want = ssim_oracle(&x, &y, &cfg);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn self_similarity_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = Preset::Tiny.ms_ssim();
        let x = random_image(&mut rng, [1, 3, 32, 32]);
        let y = random_image(&mut rng, [1, 3, 32, 32]);
        assert_eq!(eval_ms(&x, &x, &cfg).unwrap(), 1.0);
        let xy = eval_ms(&x, &y, &cfg).unwrap();
        assert!((xy - eval_ms(&y, &x, &cfg).unwrap()).abs() < 1e-12);
        assert!((0.0..1.0).contains(&xy));
    }

    #[test]
    fn binary_inverse_is_dissimilar() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::from_fn([1, 1, 32, 32], |_| if rng.random_bool(0.5) { 1.0 } else { 0.0 });
        let inv = x.map(|v| 1.0 - v);
        let cfg = MsSsimConfig { weights: vec![1.0], window: 11, sigma: 1.5 };
        assert!(ssim_oracle(&x, &inv, &cfg) < 0.5);
        assert!(eval_ms(&x, &inv, &Preset::Tiny.ms_ssim()).unwrap() < 0.5);
    }

    #[test]
    fn too_small_for_scales() {
        let x = Tensor::full([1, 3, 32, 32], 0.5);
        let err = eval_ms(&x, &x, &MsSsimConfig::standard()).unwrap_err();
        assert!(matches!(err, CoreError::Parameter(_)), "{err:?}");
    }

    #[test]
    fn image_loss_identity_and_alpha_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let tape = Tape::new();
        let x = tape.constant(random_image(&mut rng, [1, 3, 32, 32]));
        let y = tape.constant(random_image(&mut rng, [1, 3, 32, 32]));
        let w = LossWeights::for_preset(Preset::Tiny);
        w.validate().unwrap();
        assert_eq!(image_loss(&x, &x, &w).unwrap().value().item(), 0.0);
        let pure = LossWeights { alpha: 1.0, ..w.clone() };
        let ms = ms_ssim(&x, &y, &w.ms_ssim).unwrap().value().item();
        assert_eq!(image_loss(&x, &y, &pure).unwrap().value().item(), 1.0 - ms);
    }

    #[test]
    fn cosine_fixtures() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::new([1, 3], vec![0.3, -1.2, 2.0]).unwrap());
        let na = a.neg().unwrap();
        assert!(cosine_loss(&a, &a).unwrap().value().item().abs() < 1e-15);
        assert!((cosine_loss(&a, &na).unwrap().value().item() - 2.0).abs() < 1e-15);
        let e1 = tape.constant(Tensor::new([1, 2], vec![1.0, 0.0]).unwrap());
        let e2 = tape.constant(Tensor::new([1, 2], vec![0.0, 1.0]).unwrap());
        assert_eq!(cosine_loss(&e1, &e2).unwrap().value().item(), 1.0);
        let z = tape.constant(Tensor::zeros([1, 2]));
        assert!(matches!(cosine_loss(&e1, &z), Err(CoreError::Input(_))));
    }

    fn tri_fixture(s_scale: Option<f64>) -> (TriLoss, [f64; 3]) {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let tape = Tape::new();
        let f = Tensor::from_fn([2, 4], |_| rng.random_range(-1.0..1.0));
        let s = match s_scale {
            Some(c) => f.map(|v| c * v),
            None => Tensor::from_fn([2, 4], |_| rng.random_range(-1.0..1.0)),
        };
        let w1 = Tensor::from_fn([4, 3], |_| rng.random_range(-1.0..1.0));
        let b1 = Tensor::from_fn([3], |_| rng.random_range(-0.5..0.5));
        let w3 = Tensor::from_fn([4, 5], |_| rng.random_range(-1.0..1.0));
        let (wv1, bv1, wv3) = (tape.constant(w1.clone()), tape.constant(b1.clone()), tape.constant(w3.clone()));
        let loss = se_tri_loss(
            &tape.constant(f.clone()),
            &tape.leaf(s.clone(), true),
            |v| Ok(v.linear(&wv1, &bv1)?.relu()?),
            |v| Ok(v.matmul(&wv3)?),
            &LossWeights::for_preset(Preset::Tiny),
        )
        .unwrap();

        // plain-loop recomputation
        let row = |t: &Tensor, i: usize| t.data()[i * 4..][..4].to_vec();
        let mv = |v: &[f64], m: &Tensor, cols: usize| -> Vec<f64> {
            (0..cols).map(|j| (0..4).map(|k| v[k] * m.data()[k * cols + j]).sum()).collect()
        };
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut terms = [0.0; 3];
        for i in 0..2 {
            let (fi, si) = (row(&f, i), row(&s, i));
            let (nf, ns) = (norm(&fi), norm(&si));
            terms[0] += fi.iter().zip(&si).map(|(a, b)| (a / nf - b / ns).powi(2)).sum::<f64>() / 2.0;
            let h = |v: &[f64]| -> Vec<f64> {
                mv(v, &w1, 3).iter().zip(b1.data()).map(|(x, b)| (x + b).max(0.0)).collect()
            };
            terms[1] += h(&fi).iter().zip(h(&si)).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0;
            let (pf, ps) = (mv(&fi, &w3, 5), mv(&si, &w3, 5));
            let dot: f64 = pf.iter().zip(&ps).map(|(a, b)| a * b).sum();
            terms[2] += (1.0 - dot / (norm(&pf) * norm(&ps))) / 2.0;
        }
        (loss, terms)
    }

    #[test]
    fn tri_loss_term_oracle() {
        let (loss, t) = tri_fixture(None);
        for k in 0..3 {
            assert!((loss.terms[k].value().item() - t[k]).abs() < 1e-12);
        }
        let want = 1.0 * t[0] + 0.04 * t[1] + 1.2 * t[2];
        assert!((loss.total.value().item() - want).abs() < 1e-12);
    }

    #[test]
    fn tri_loss_identities() {
        let (same, _) = tri_fixture(Some(1.0));
        assert!(same.total.value().item().abs() < 1e-12);
        let (scaled, _) = tri_fixture(Some(2.5));
        assert!(scaled.terms[0].value().item().abs() < 1e-12);
        assert!(scaled.terms[2].value().item().abs() < 1e-12);
        assert!(scaled.terms[1].value().item() > 0.0);
    }
}
