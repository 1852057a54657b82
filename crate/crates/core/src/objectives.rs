//! Differentiable surrogate objectives over the learned embedding, and a
//! central-difference gradient checker.
//!
//! An objective maps an embedding `v ∈ ℝᵈ` and a step counter to a loss and
//! its gradient with respect to `v`. The step counter is how stochastic
//! objectives draw per-step noise reproducibly; deterministic objectives
//! ignore it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::store::Vocabulary;

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub grad: DVector<f64>,
}

pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;

    fn evaluate(&self, v: &DVector<f64>, step: u64) -> Result<Evaluation>;
}

impl<T: Objective + ?Sized> Objective for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn evaluate(&self, v: &DVector<f64>, step: u64) -> Result<Evaluation> {
        (**self).evaluate(v, step)
    }
}

fn check_len(expected: usize, v: &DVector<f64>) -> Result<()> {
    if v.len() == expected {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!(
            "objective expects length {expected}, got {}",
            v.len()
        )))
    }
}

/// `½‖v − t‖²` for a hidden target `t`.
#[derive(Debug, Clone)]
pub struct QuadraticTarget {
    target: DVector<f64>,
}

impl QuadraticTarget {
    pub fn new(target: DVector<f64>) -> Result<Self> {
        if target.is_empty() {
            return Err(Error::InvalidArgument("target must be non-empty".into()));
        }
        if !target.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFiniteValue("quadratic target".into()));
        }
        Ok(QuadraticTarget { target })
    }

    pub fn target(&self) -> &DVector<f64> {
        &self.target
    }

    pub fn eval(&self, v: &DVector<f64>) -> Result<Evaluation> {
        check_len(self.target.len(), v)?;
        let grad = v - &self.target;
        let loss = 0.5 * grad.norm_squared();
        Ok(Evaluation { loss, grad })
    }
}

impl Objective for QuadraticTarget {
    fn dim(&self) -> usize {
        self.target.len()
    }

    fn evaluate(&self, v: &DVector<f64>, _step: u64) -> Result<Evaluation> {
        self.eval(v)
    }
}

/// `½‖A v − (b + σ ξ_s)‖²` with a frozen operator `A` (`k × d`) and noise
/// `ξ_s ~ N(0, I)` drawn from `(seed, step)`.
#[derive(Debug, Clone)]
pub struct LinearReconstruction {
    operator: DMatrix<f64>,
    observation: DVector<f64>,
    sigma: f64,
    seed: u64,
}

impl LinearReconstruction {
    pub fn new(operator: DMatrix<f64>, observation: DVector<f64>, sigma: f64, seed: u64) -> Result<Self> {
        if operator.nrows() == 0 || operator.ncols() == 0 {
            return Err(Error::InvalidArgument("operator must be non-empty".into()));
        }
        if operator.nrows() != observation.len() {
            return Err(Error::DimensionMismatch(format!(
                "operator has {} rows, observation has length {}",
                operator.nrows(),
                observation.len()
            )));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise scale must be >= 0, got {sigma}")));
        }
        if !operator.iter().chain(observation.iter()).all(|x| x.is_finite()) {
            return Err(Error::NonFiniteValue("linear objective data".into()));
        }
        Ok(LinearReconstruction {
            operator,
            observation,
            sigma,
            seed,
        })
    }

    pub fn operator(&self) -> &DMatrix<f64> {
        &self.operator
    }

    pub fn observation(&self) -> &DVector<f64> {
        &self.observation
    }

    /// The observation seen at `step`, noise included.
    pub fn noisy_observation(&self, step: u64) -> DVector<f64> {
        if self.sigma == 0.0 {
            return self.observation.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(step);
        let sigma = self.sigma;
        self.observation.map(|b| {
            let xi: f64 = StandardNormal.sample(&mut rng);
            b + sigma * xi
        })
    }

    pub fn eval(&self, v: &DVector<f64>, step: u64) -> Result<Evaluation> {
        check_len(self.operator.ncols(), v)?;
        let residual = &self.operator * v - self.noisy_observation(step);
        let loss = 0.5 * residual.norm_squared();
        let grad = self.operator.tr_mul(&residual);
        Ok(Evaluation { loss, grad })
    }
}

impl Objective for LinearReconstruction {
    fn dim(&self) -> usize {
        self.operator.ncols()
    }

    fn evaluate(&self, v: &DVector<f64>, step: u64) -> Result<Evaluation> {
        self.eval(v, step)
    }
}

/// Worst-case disagreement between the analytic gradient at step 0 and
/// central differences with step `eps`, scaled by the larger of the two
/// gradients' max-norms.
pub fn grad_check(obj: &dyn Objective, v: &DVector<f64>, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::InvalidArgument(format!("eps must lie in (0, 1e-2], got {eps}")));
    }
    let analytic = obj.evaluate(v, 0)?;
    if !analytic.loss.is_finite() || !analytic.grad.iter().all(|g| g.is_finite()) {
        return Err(Error::NonFiniteValue("objective evaluation".into()));
    }
    check_len(v.len(), &analytic.grad)?;
    let mut numeric = DVector::zeros(v.len());
    let mut probe = v.clone();
    for i in 0..v.len() {
        let x = v[i];
        probe[i] = x + eps;
        let plus = obj.evaluate(&probe, 0)?.loss;
        probe[i] = x - eps;
        let minus = obj.evaluate(&probe, 0)?.loss;
        probe[i] = x;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFiniteValue(format!("loss near coordinate {i}")));
        }
        numeric[i] = (plus - minus) / (2.0 * eps);
    }
    let scale = analytic.grad.amax().max(numeric.amax());
    if scale == 0.0 {
        return Ok(0.0);
    }
    Ok((&analytic.grad - &numeric).amax() / scale)
}

/// Where an objective's data lives, as named in a run configuration:
/// `objective=quadratic target_file=<path>` or
/// `objective=linear operator_file=<path> observation_file=<path> sigma=<float>`.
#[derive(Debug, Clone, PartialEq)]
pub enum ObjectiveSpec {
    Quadratic {
        target_file: PathBuf,
    },
    Linear {
        operator_file: PathBuf,
        observation_file: PathBuf,
        sigma: f64,
    },
}

impl ObjectiveSpec {
    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| {
            pairs
                .get(k)
                .ok_or_else(|| Error::InvalidArgument(format!("objective config is missing {k}")))
        };
        match get("objective")?.as_str() {
            "quadratic" => Ok(ObjectiveSpec::Quadratic {
                target_file: get("target_file")?.into(),
            }),
            "linear" => {
                let sigma = match pairs.get("sigma") {
                    Some(s) => s
                        .parse()
                        .map_err(|_| Error::InvalidArgument(format!("sigma {s:?} is not a number")))?,
                    None => 0.0,
                };
                Ok(ObjectiveSpec::Linear {
                    operator_file: get("operator_file")?.into(),
                    observation_file: get("observation_file")?.into(),
                    sigma,
                })
            }
            other => Err(Error::InvalidArgument(format!(
                "unknown objective {other:?} (expected quadratic or linear)"
            ))),
        }
    }

    pub fn build(&self, seed: u64) -> Result<Box<dyn Objective>> {
        match self {
            ObjectiveSpec::Quadratic { target_file } => Ok(Box::new(QuadraticTarget::new(read_vector(target_file)?)?)),
            ObjectiveSpec::Linear {
                operator_file,
                observation_file,
                sigma,
            } => Ok(Box::new(LinearReconstruction::new(
                read_matrix_rows(operator_file)?,
                read_vector(observation_file)?,
                *sigma,
                seed,
            )?)),
        }
    }
}

/// Reads a vector stored as a single-entry vocabulary file.
pub fn read_vector(path: &Path) -> Result<DVector<f64>> {
    let v = Vocabulary::load_auto(path)?;
    if v.len() != 1 {
        return Err(Error::Malformed(format!(
            "{} holds {} rows, expected exactly one vector",
            path.display(),
            v.len()
        )));
    }
    Ok(v.matrix().column(0).into_owned())
}

/// Reads a `k × d` matrix stored as a vocabulary file with one entry per row.
pub fn read_matrix_rows(path: &Path) -> Result<DMatrix<f64>> {
    Ok(Vocabulary::load_auto(path)?.matrix().transpose())
}
