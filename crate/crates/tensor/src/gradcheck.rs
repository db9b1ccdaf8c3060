//! Central finite-difference gradient checking.

use rand::{Rng, RngExt};

use crate::error::{Result, TensorError};
use crate::tape::{Tape, Var};
use crate::tensor::{Precision, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckMode {
    /// Perturb every coordinate of every input separately.
    Coordinate,
    /// Compare `<grad, v>` with the difference quotient along one random
    /// direction `v` spanning all inputs.
    Directional,
}

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub h: f64,
    pub tol: f64,
    /// Denominator floor in `|a - n| / max(|a|, |n|, floor)`.
    pub floor: f64,
    pub trials: usize,
    /// Trials whose perturbations change a branch decision are discarded and
    /// resampled, up to this many times in total.
    pub max_rejections: usize,
    pub mode: CheckMode,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            h: 1e-5,
            tol: 1e-4,
            floor: 1e-6,
            trials: 100,
            max_rejections: 1000,
            mode: CheckMode::Coordinate,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub trials: usize,
    pub rejected: usize,
    pub comparisons: usize,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

fn eval<F>(f: &F, inputs: &[Tensor]) -> Result<(f64, u64)>
where
    F: Fn(&[Var]) -> Result<Var>,
{
    let tape = Tape::with_precision(Precision::F64);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let loss = f(&vars)?;
    if !loss.value().is_scalar() {
        return Err(TensorError::Contract("gradcheck function must return a scalar".into()));
    }
    Ok((loss.value().item(), tape.branch_signature()))
}

impl GradCheck {
    pub fn directional() -> Self {
        GradCheck {
            mode: CheckMode::Directional,
            ..Self::default()
        }
    }

    pub fn with_trials(mut self, trials: usize) -> Self {
        self.trials = trials;
        self
    }

    /// Runs `trials` accepted checks. `sample` draws a fresh set of inputs;
    /// `f` maps input leaves to a scalar.
    pub fn run<R, S, F>(&self, rng: &mut R, mut sample: S, f: F) -> Result<GradCheckReport>
    where
        R: Rng,
        S: FnMut(&mut R) -> Vec<Tensor>,
        F: Fn(&[Var]) -> Result<Var>,
    {
        let mut report = GradCheckReport::default();
        while report.trials < self.trials {
            let inputs = sample(rng);
            let tape = Tape::with_precision(Precision::F64);
            let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
            let loss = f(&vars)?;
            let signature = tape.branch_signature();
            let grads = loss.backward()?;
            let analytic: Vec<Tensor> = vars.iter().map(|v| grads.get_or_zeros(v)).collect();

            let errs = match self.mode {
                CheckMode::Coordinate => self.coordinate(&f, &inputs, &analytic, signature)?,
                CheckMode::Directional => self.along_direction(rng, &f, &inputs, &analytic, signature)?,
            };
            match errs {
                Some(errs) => {
                    report.trials += 1;
                    report.comparisons += errs.len();
                    for e in errs {
                        report.max_rel_err = report.max_rel_err.max(e);
                    }
                }
                None => {
                    report.rejected += 1;
                    if report.rejected > self.max_rejections {
                        return Err(TensorError::Contract(format!(
                            "gradcheck rejected {} trials for crossing non-differentiable points",
                            report.rejected
                        )));
                    }
                }
            }
        }
        Ok(report)
    }

    fn coordinate<F>(&self, f: &F, inputs: &[Tensor], analytic: &[Tensor], signature: u64) -> Result<Option<Vec<f64>>>
    where
        F: Fn(&[Var]) -> Result<Var>,
    {
        let mut errs = Vec::new();
        let mut work = inputs.to_vec();
        for (k, g) in analytic.iter().enumerate() {
            for i in 0..g.numel() {
                let orig = work[k].data()[i];
                work[k].data_mut()[i] = orig + self.h;
                let (fp, sp) = eval(f, &work)?;
                work[k].data_mut()[i] = orig - self.h;
                let (fm, sm) = eval(f, &work)?;
                work[k].data_mut()[i] = orig;
                if sp != signature || sm != signature {
                    return Ok(None);
                }
                let numeric = (fp - fm) / (2.0 * self.h);
                errs.push(rel_err(g.data()[i], numeric, self.floor));
            }
        }
        Ok(Some(errs))
    }

    fn along_direction<R, F>(
        &self,
        rng: &mut R,
        f: &F,
        inputs: &[Tensor],
        analytic: &[Tensor],
        signature: u64,
    ) -> Result<Option<Vec<f64>>>
    where
        R: Rng,
        F: Fn(&[Var]) -> Result<Var>,
    {
        let dirs: Vec<Tensor> = inputs
            .iter()
            .map(|t| Tensor::from_fn(t.shape().to_vec(), |_| rng.random_range(-1.0..1.0)))
            .collect();
        let norm = dirs.iter().map(|d| d.data().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
        let shifted = |sign: f64| -> Vec<Tensor> {
            inputs
                .iter()
                .zip(&dirs)
                .map(|(x, d)| x.zip_map(d, |a, b| a + sign * self.h * b / norm))
                .collect()
        };
        let (fp, sp) = eval(f, &shifted(1.0))?;
        let (fm, sm) = eval(f, &shifted(-1.0))?;
        if sp != signature || sm != signature {
            return Ok(None);
        }
        let numeric = (fp - fm) / (2.0 * self.h);
        let analytic: f64 = analytic
            .iter()
            .zip(&dirs)
            .map(|(g, d)| g.data().iter().zip(d.data()).map(|(a, b)| a * b).sum::<f64>())
            .sum::<f64>()
            / norm;
        Ok(Some(vec![rel_err(analytic, numeric, self.floor)]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn smooth_function_passes_tightly() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ok = GradCheck::default()
            .with_trials(5)
            .run(&mut rng, |r| vec![Tensor::from_fn([3], |_| r.random_range(0.5..2.0))], |v| {
                v[0].sqrt()?.sum()
            })
            .unwrap();
        assert!(ok.passed(1e-6), "{ok:?}");
    }

    #[test]
    fn relu_kinks_are_resampled() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let report = GradCheck::default()
            .with_trials(20)
            .run(
                &mut rng,
                |r| {
                    // half the draws sit exactly on the kink
                    let on_kink = r.random_range(0..2) == 0;
                    vec![Tensor::from_fn([2], |_| if on_kink { 0.0 } else { r.random_range(-1.0..1.0) })]
                },
                |v| v[0].relu()?.sum(),
            )
            .unwrap();
        assert!(report.rejected > 0);
        assert!(report.passed(1e-8));
    }

    #[test]
    fn directional_mode_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let report = GradCheck::directional()
            .with_trials(10)
            .run(
                &mut rng,
                |r| vec![Tensor::from_fn([2, 3], |_| r.random_range(-1.0..1.0)), Tensor::from_fn([3, 2], |_| r.random_range(-1.0..1.0))],
                |v| v[0].matmul(&v[1])?.sigmoid()?.sum(),
            )
            .unwrap();
        assert!(report.passed(1e-4), "{report:?}");
    }
}
