//! Central finite-difference certification of the hand-written backward
//! passes, in double precision.
//!
//! Every check scores a scalar (usually `Σ probe ⊙ output` with a fixed
//! random probe) and compares `∂L/∂θ` from the analytic backward against
//! `(L(θ + ε) − L(θ − ε)) / 2ε` coordinate by coordinate.
//!
//! Piecewise-linear gates (ReLU, max-pool arg-max) make the finite
//! difference meaningless when `θ ± ε` lands on the other side of a kink.
//! The base evaluation records its gate decisions and every perturbed
//! evaluation replays them ([`gates::replay`]), so the differences are
//! taken on the linear piece the analytic backward differentiates.

use std::fmt;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numerics::gates;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckConfig {
    pub eps: f64,
    pub tol: f64,
    /// Coordinates checked per tensor; smaller tensors are checked fully.
    pub samples_per_tensor: usize,
    pub seed: u64,
    pub stencil: Stencil,
}

/// Finite-difference estimator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stencil {
    /// `(L(θ+ε) − L(θ−ε)) / 2ε`; truncation error `O(ε²)`.
    Central,
    /// Richardson extrapolation of central differences at `ε` and `ε/2`,
    /// `(4·D(ε/2) − D(ε)) / 3`; truncation error `O(ε⁴)`.
    Richardson,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            eps: 1e-3,
            tol: 1e-4,
            samples_per_tensor: 200,
            seed: 0,
            stencil: Stencil::Richardson,
        }
    }
}

/// Relative error with an absolute floor so that two near-zero values
/// compare as equal: `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

type LossFn = Box<dyn Fn(&[Tensor<f64>]) -> Result<f64> + Send + Sync>;
type GradFn = Box<dyn Fn(&[Tensor<f64>]) -> Result<Vec<Tensor<f64>>> + Send + Sync>;

/// A differentiable scalar function of named tensors with its claimed gradient.
pub struct Problem {
    pub name: String,
    pub names: Vec<String>,
    pub tensors: Vec<Tensor<f64>>,
    loss: LossFn,
    grad: GradFn,
}

impl Problem {
    pub fn new(
        name: impl Into<String>,
        named: Vec<(String, Tensor<f64>)>,
        loss: impl Fn(&[Tensor<f64>]) -> Result<f64> + Send + Sync + 'static,
        grad: impl Fn(&[Tensor<f64>]) -> Result<Vec<Tensor<f64>>> + Send + Sync + 'static,
    ) -> Self {
        let (names, tensors) = named.into_iter().unzip();
        Problem {
            name: name.into(),
            names,
            tensors,
            loss: Box::new(loss),
            grad: Box::new(grad),
        }
    }

    /// Test hook: negates the analytic gradient of tensor `index`, which a
    /// working harness must report as a failure.
    pub fn sign_flipped(self, index: usize) -> Self {
        let grad = self.grad;
        Problem {
            grad: Box::new(move |t| {
                let mut g = grad(t)?;
                g[index] = g[index].scale(-1.0);
                Ok(g)
            }),
            ..self
        }
    }

    pub fn loss(&self, tensors: &[Tensor<f64>]) -> Result<f64> {
        (self.loss)(tensors)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    /// Flat index of the worst coordinate.
    pub worst_index: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScopeReport {
    pub scope: String,
    pub tensors: Vec<TensorCheck>,
}

impl ScopeReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn first_failure(&self) -> Option<&TensorCheck> {
        self.tensors.iter().find(|t| !t.passed)
    }
}

impl fmt::Display for ScopeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in &self.tensors {
            writeln!(
                f,
                "{:<30} {:<40} {:>5} {:>10.3e} {}",
                self.scope,
                t.name,
                t.checked,
                t.max_rel_error,
                if t.passed { "ok" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

/// Runs the check. Tolerance failures are reported, not returned as errors;
/// `Err` means the problem itself could not be evaluated.
pub fn check(problem: &Problem, config: &GradcheckConfig) -> Result<ScopeReport> {
    if !(config.eps > 0.0) || !(config.tol > 0.0) {
        return Err(Error::Config("gradcheck eps and tol must be positive".into()));
    }
    let base = problem.tensors.clone();
    let (base_loss, tape) = gates::record(|| problem.loss(&base));
    base_loss?;
    let analytic = (problem.grad)(&base)?;
    if analytic.len() != base.len() {
        return Err(Error::shape(
            "gradcheck",
            format!("{} gradients for {} tensors", analytic.len(), base.len()),
        ));
    }
    let eval = |work: &[Tensor<f64>]| {
        let (loss, consistent) = gates::replay(&tape, || problem.loss(work));
        if !consistent {
            return Err(Error::shape("gradcheck", "perturbed evaluation changed the gated op sequence"));
        }
        loss
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut work = base.clone();
    let mut out = Vec::with_capacity(base.len());
    for (ti, (name, g)) in problem.names.iter().zip(&analytic).enumerate() {
        g.expect_same_shape("gradcheck", &base[ti])?;
        let len = base[ti].len();
        let indices: Vec<usize> = if len <= config.samples_per_tensor {
            (0..len).collect()
        } else {
            sample(&mut rng, len, config.samples_per_tensor).into_vec()
        };
        let mut report = TensorCheck {
            name: name.clone(),
            checked: 0,
            max_rel_error: 0.0,
            worst_index: 0,
            passed: true,
        };
        for idx in indices {
            let orig = work[ti].data()[idx];
            let mut central = |h: f64| -> Result<f64> {
                work[ti].data_mut()[idx] = orig + h;
                let plus = eval(&work);
                work[ti].data_mut()[idx] = orig - h;
                let minus = eval(&work);
                work[ti].data_mut()[idx] = orig;
                Ok((plus? - minus?) / (2.0 * h))
            };
            let numeric = match config.stencil {
                Stencil::Central => central(config.eps)?,
                Stencil::Richardson => {
                    let coarse = central(config.eps)?;
                    (4.0 * central(config.eps / 2.0)? - coarse) / 3.0
                }
            };
            let err = relative_error(g.data()[idx], numeric);
            report.checked += 1;
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
                report.worst_index = idx;
            }
        }
        report.passed = report.checked > 0 && report.max_rel_error < config.tol;
        out.push(report);
    }
    Ok(ScopeReport {
        scope: problem.name.clone(),
        tensors: out,
    })
}

pub(crate) fn normal_tensor(rng: &mut impl Rng, shape: &[usize], std: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| std * rng.sample::<f64, _>(StandardNormal))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic() -> Problem {
        let x = Tensor::from_vec(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        Problem::new(
            "quadratic",
            vec![("x".into(), x)],
            |t| Ok(t[0].data().iter().map(|v| v * v * v).sum()),
            |t| Ok(vec![t[0].map(|v| 3.0 * v * v)]),
        )
    }

    #[test]
    fn smooth_function_passes() {
        let r = check(&quadratic(), &GradcheckConfig::default()).unwrap();
        assert!(r.passed(), "{r}");
        assert_eq!(r.tensors[0].checked, 3);
    }

    #[test]
    fn sign_flip_is_caught() {
        let r = check(&quadratic().sign_flipped(0), &GradcheckConfig::default()).unwrap();
        assert!(!r.passed());
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!(relative_error(1e-10, 2e-10) < 2e-4);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
    }
}
