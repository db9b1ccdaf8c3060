//! Prior face features: means of face embeddings, their convergence
//! analysis and persistence.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;

use crate::binio::{Reader, put_u32};
use crate::embedder::FaceEmbedder;
use crate::error::{CoreError, Result, format_err, input, state};
use crate::feature::{FaceImage, FeatureVec};

const ARPF_MAGIC: &[u8; 4] = b"ARPF";
const ARPF_VERSION: u32 = 1;

/// Sample counts used for prior convergence tables.
pub const PRIOR_LADDER: [usize; 7] = [10, 50, 100, 500, 1000, 5000, 10000];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub fn label(self) -> usize {
        match self {
            Gender::Male => 0,
            Gender::Female => 1,
        }
    }

    pub fn from_label(l: usize) -> Self {
        if l == 1 { Gender::Female } else { Gender::Male }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PriorKind {
    Neutral,
    Male,
    Female,
}

impl PriorKind {
    pub fn name(self) -> &'static str {
        match self {
            PriorKind::Neutral => "neutral",
            PriorKind::Male => "male",
            PriorKind::Female => "female",
        }
    }

    fn tag(self) -> u8 {
        match self {
            PriorKind::Neutral => 0,
            PriorKind::Male => 1,
            PriorKind::Female => 2,
        }
    }

    fn from_tag(t: u8) -> Result<Self> {
        match t {
            0 => Ok(PriorKind::Neutral),
            1 => Ok(PriorKind::Male),
            2 => Ok(PriorKind::Female),
            t => Err(format_err(format!("unknown prior kind {t}"))),
        }
    }

    pub fn for_gender(g: Gender) -> Self {
        match g {
            Gender::Male => PriorKind::Male,
            Gender::Female => PriorKind::Female,
        }
    }
}

impl fmt::Display for PriorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PriorFeature {
    pub vec: FeatureVec,
    pub kind: PriorKind,
    pub n_samples: u64,
}

impl PriorFeature {
    pub fn from_vec(vec: FeatureVec, kind: PriorKind, n_samples: u64) -> Self {
        PriorFeature { vec, kind, n_samples }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(21 + 8 * self.vec.dim());
        out.extend_from_slice(ARPF_MAGIC);
        put_u32(&mut out, ARPF_VERSION);
        out.push(self.kind.tag());
        put_u32(&mut out, self.vec.dim() as u32);
        out.extend_from_slice(&self.n_samples.to_le_bytes());
        for v in self.vec.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(ARPF_MAGIC)?;
        let version = r.u32()?;
        if version != ARPF_VERSION {
            return Err(format_err(format!("unsupported prior version {version}")));
        }
        let kind = PriorKind::from_tag(r.u8()?)?;
        let dim = r.u32()? as usize;
        let n_samples = r.u64()?;
        if n_samples == 0 {
            return Err(format_err("prior with zero samples"));
        }
        let mut v = Vec::with_capacity(dim);
        for _ in 0..dim {
            v.push(r.f64()?);
        }
        r.finish()?;
        Ok(PriorFeature {
            vec: FeatureVec::new(v)?,
            kind,
            n_samples,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Elementwise arithmetic mean.
pub fn compute_prior(features: &[FeatureVec], kind: PriorKind) -> Result<PriorFeature> {
    let first = features.first().ok_or_else(|| input("cannot average an empty feature list"))?;
    let d = first.dim();
    let mut sum = vec![0.0; d];
    for f in features {
        if f.dim() != d {
            return Err(input(format!("mixed feature dims {d} and {}", f.dim())));
        }
        for (s, v) in sum.iter_mut().zip(f.data()) {
            *s += v;
        }
    }
    let n = features.len() as f64;
    Ok(PriorFeature {
        vec: FeatureVec::new(sum.into_iter().map(|s| s / n).collect())?,
        kind,
        n_samples: features.len() as u64,
    })
}

/// Incremental mean `m_k = m_{k-1} + (x_k - m_{k-1}) / k`.
#[derive(Clone, Debug, Default)]
pub struct RunningMean {
    mean: Vec<f64>,
    n: u64,
}

impl RunningMean {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: &[f64]) -> Result<()> {
        if self.n == 0 {
            self.mean = vec![0.0; x.len()];
        } else if x.len() != self.mean.len() {
            return Err(input(format!("mixed feature dims {} and {}", self.mean.len(), x.len())));
        }
        self.n += 1;
        let k = self.n as f64;
        for (m, v) in self.mean.iter_mut().zip(x) {
            *m += (v - *m) / k;
        }
        Ok(())
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn finish(&self, kind: PriorKind) -> Result<PriorFeature> {
        if self.n == 0 {
            return Err(input("running mean has no samples"));
        }
        Ok(PriorFeature {
            vec: FeatureVec::new(self.mean.clone())?,
            kind,
            n_samples: self.n,
        })
    }
}

pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub cohort: PriorKind,
    /// Larger sample count of the pair.
    pub n1: usize,
    pub n2: usize,
    pub l1: f64,
}

/// L1 distance between prefix means for consecutive pairs of `ns`.
pub fn convergence_rows(features: &[FeatureVec], ns: &[usize], cohort: PriorKind) -> Result<Vec<ConvergenceRow>> {
    if ns.len() < 2 || ns.windows(2).any(|w| w[0] >= w[1]) || ns[0] == 0 {
        return Err(input(format!("sample counts {ns:?} must be increasing, positive and at least two")));
    }
    let max = *ns.last().expect("non-empty");
    if features.len() < max {
        return Err(input(format!(
            "{cohort} cohort has {} samples, need {max}",
            features.len()
        )));
    }
    let mut rm = RunningMean::new();
    let mut means = Vec::with_capacity(ns.len());
    let mut next = 0;
    for (i, f) in features.iter().take(max).enumerate() {
        rm.push(f.data())?;
        if i + 1 == ns[next] {
            means.push(rm.mean().to_vec());
            next += 1;
        }
    }
    Ok(ns
        .windows(2)
        .zip(means.windows(2))
        .map(|(n, m)| ConvergenceRow {
            cohort,
            n1: n[1],
            n2: n[0],
            l1: l1_distance(&m[1], &m[0]),
        })
        .collect())
}

/// Convergence rows for the neutral, male and female cohorts.
pub fn prior_convergence_table(
    embedder: &FaceEmbedder,
    images: &[(FaceImage, Gender)],
    ns: &[usize],
) -> Result<Vec<ConvergenceRow>> {
    let max = ns.last().copied().unwrap_or(0);
    let male = images.iter().filter(|(_, g)| *g == Gender::Male).count();
    let female = images.len() - male;
    if images.len() < max || male < max || female < max {
        return Err(input(format!(
            "dataset too small: {} images ({male} male, {female} female), each cohort needs {max}",
            images.len()
        )));
    }
    let mut all = Vec::with_capacity(images.len());
    let mut by = [Vec::new(), Vec::new()];
    for (img, g) in images {
        let f = embedder.embed(img)?;
        by[g.label()].push(f.clone());
        all.push(f);
    }
    let mut rows = convergence_rows(&all, ns, PriorKind::Neutral)?;
    rows.extend(convergence_rows(&by[0], ns, PriorKind::Male)?);
    rows.extend(convergence_rows(&by[1], ns, PriorKind::Female)?);
    Ok(rows)
}

pub fn convergence_csv(rows: &[ConvergenceRow]) -> String {
    let mut s = String::from("cohort,n1,n2,l1\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.cohort, r.n1, r.n2, r.l1);
    }
    s
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PriorBank {
    pub neutral: Option<PriorFeature>,
    pub male: Option<PriorFeature>,
    pub female: Option<PriorFeature>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PriorMode {
    Neutral,
    Gender,
}

impl PriorBank {
    pub fn insert(&mut self, p: PriorFeature) {
        match p.kind {
            PriorKind::Neutral => self.neutral = Some(p),
            PriorKind::Male => self.male = Some(p),
            PriorKind::Female => self.female = Some(p),
        }
    }

    pub fn get(&self, kind: PriorKind) -> Result<&PriorFeature> {
        match kind {
            PriorKind::Neutral => self.neutral.as_ref(),
            PriorKind::Male => self.male.as_ref(),
            PriorKind::Female => self.female.as_ref(),
        }
        .ok_or_else(|| state(format!("prior bank has no {kind} prior")))
    }

    /// Builds all three priors from labelled features.
    pub fn from_features(features: &[(FeatureVec, Gender)]) -> Result<Self> {
        let all: Vec<FeatureVec> = features.iter().map(|(f, _)| f.clone()).collect();
        let pick = |g: Gender| -> Vec<FeatureVec> {
            features.iter().filter(|(_, x)| *x == g).map(|(f, _)| f.clone()).collect()
        };
        let mut bank = PriorBank::default();
        bank.insert(compute_prior(&all, PriorKind::Neutral)?);
        for g in [Gender::Male, Gender::Female] {
            let subset = pick(g);
            if !subset.is_empty() {
                bank.insert(compute_prior(&subset, PriorKind::for_gender(g))?);
            }
        }
        Ok(bank)
    }

    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        std::fs::create_dir_all(dir.as_ref())?;
        for p in [&self.neutral, &self.male, &self.female].into_iter().flatten() {
            p.write(dir.as_ref().join(format!("{}.arpf", p.kind)))?;
        }
        Ok(())
    }

    pub fn read_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let mut bank = PriorBank::default();
        for kind in [PriorKind::Neutral, PriorKind::Male, PriorKind::Female] {
            let path = dir.as_ref().join(format!("{kind}.arpf"));
            if path.exists() {
                let p = PriorFeature::read(&path)?;
                if p.kind != kind {
                    return Err(CoreError::Format(format!("{} holds a {} prior", path.display(), p.kind)));
                }
                bank.insert(p);
            }
        }
        Ok(bank)
    }
}

/// Neutral mode ignores the prediction; gender mode returns the matching
/// gender prior.
pub fn select_prior(bank: &PriorBank, mode: PriorMode, gender_pred: Gender) -> Result<&PriorFeature> {
    match mode {
        PriorMode::Neutral => bank.get(PriorKind::Neutral),
        PriorMode::Gender => bank.get(PriorKind::for_gender(gender_pred)),
    }
}
