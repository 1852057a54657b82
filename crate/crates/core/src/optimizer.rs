//! Learning an embedding as `v = V_M w` by descending on the weights `w`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::Objective;
use crate::selection::SubspaceBasis;

/// Coefficients of the learned embedding in the selected basis.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub values: DVector<f64>,
    /// Basis column holding the initial word.
    pub u_position: usize,
}

impl WeightVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// One-hot weights at the basis position of vocabulary index `u_index`.
pub fn init_weights(basis: &SubspaceBasis, u_index: usize) -> Result<WeightVector> {
    let pos = basis
        .position_of(u_index)
        .ok_or(Error::InitialWordNotSelected(u_index))?;
    let mut values = DVector::zeros(basis.len());
    values[pos] = 1.0;
    Ok(WeightVector {
        values,
        u_position: pos,
    })
}

/// `V_M · w`.
pub fn compose_embedding(basis: &SubspaceBasis, w: &WeightVector) -> Result<DVector<f64>> {
    if w.len() != basis.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for a basis of {} embeddings",
            w.len(),
            basis.len()
        )));
    }
    Ok(basis.matrix() * &w.values)
}

/// Chain rule through `v = V_M w`: `∇_w = V_Mᵀ ∇_v`.
pub fn weight_gradient(basis: &SubspaceBasis, grad_v: &DVector<f64>) -> Result<DVector<f64>> {
    if grad_v.len() != basis.dim() {
        return Err(Error::DimensionMismatch(format!(
            "gradient of length {} for embeddings in R^{}",
            grad_v.len(),
            basis.dim()
        )));
    }
    Ok(basis.matrix().tr_mul(grad_v))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    #[default]
    Gd,
    AdamW,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Gd => "gd",
            Algorithm::AdamW => "adamw",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gd" => Ok(Algorithm::Gd),
            "adamw" => Ok(Algorithm::AdamW),
            other => Err(Error::InvalidArgument(format!(
                "unknown optimizer {other:?} (expected gd or adamw)"
            ))),
        }
    }
}

pub const DEFAULT_STEPS: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub algorithm: Algorithm,
    pub learning_rate: f64,
    pub steps: usize,
    /// Decoupled decay `γ`; AdamW only.
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerConfig {
    pub fn gd(learning_rate: f64, steps: usize) -> Self {
        OptimizerConfig {
            algorithm: Algorithm::Gd,
            learning_rate,
            steps,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn adamw(learning_rate: f64, steps: usize) -> Self {
        OptimizerConfig {
            algorithm: Algorithm::AdamW,
            weight_decay: 0.01,
            ..Self::gd(learning_rate, steps)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight decay must be >= 0, got {}", self.weight_decay));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        Ok(())
    }
}

/// `1 / σ_max(V_M)²`, the reciprocal Lipschitz constant of a unit-curvature
/// objective pulled back onto the weights.
pub fn suggested_gd_rate(basis: &SubspaceBasis) -> f64 {
    let s = basis.rank_report().singular_values.first().copied().unwrap_or(0.0);
    if s > 0.0 {
        1.0 / (s * s)
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub grad_w_norm: f64,
    pub grad_v_norm: f64,
    pub v_norm: f64,
    /// `‖v − P v‖₂` where `P` projects onto the basis column space.
    pub residual: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunMetrics {
    pub records: Vec<StepRecord>,
}

impl RunMetrics {
    /// One JSON object per line, in step order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("step records serialize"));
            out.push('\n');
        }
        out
    }

    /// First step whose loss is at most `fraction` of the step-0 loss.
    pub fn steps_to_threshold(&self, fraction: f64) -> Option<usize> {
        let first = self.records.first()?.loss;
        self.records.iter().find(|r| r.loss <= fraction * first).map(|r| r.step)
    }
}

/// Adam moments plus decoupled weight decay.
#[derive(Debug, Clone)]
struct AdamWState {
    m: DVector<f64>,
    v: DVector<f64>,
    t: i32,
}

impl AdamWState {
    fn new(n: usize) -> Self {
        AdamWState {
            m: DVector::zeros(n),
            v: DVector::zeros(n),
            t: 0,
        }
    }

    fn step(&mut self, w: &mut DVector<f64>, grad: &DVector<f64>, cfg: &OptimizerConfig) {
        self.t += 1;
        let lr = cfg.learning_rate;
        *w *= 1.0 - lr * cfg.weight_decay;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..w.len() {
            let g = grad[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            w[i] -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}

/// Runs exactly `config.steps` updates from `w0`.
///
/// Step `t` evaluates the objective at `v_t = V_M w_t` (passing `t` as the
/// objective's step counter), records metrics for `v_t`, then updates the
/// weights. The returned weights are `w_steps`.
pub fn optimize(
    basis: &SubspaceBasis,
    w0: &WeightVector,
    objective: &dyn Objective,
    config: &OptimizerConfig,
) -> Result<(WeightVector, RunMetrics)> {
    config.validate()?;
    if objective.dim() != basis.dim() {
        return Err(Error::DimensionMismatch(format!(
            "objective works in R^{}, basis in R^{}",
            objective.dim(),
            basis.dim()
        )));
    }
    if w0.len() != basis.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} initial weights for a basis of {} embeddings",
            w0.len(),
            basis.len()
        )));
    }
    let space = basis.column_space();
    let mut w = w0.values.clone();
    let mut adam = AdamWState::new(w.len());
    let mut records = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let v = basis.matrix() * &w;
        let eval = objective.evaluate(&v, step as u64)?;
        if !eval.loss.is_finite() {
            return Err(Error::Diverged { what: "loss", step });
        }
        if eval.grad.len() != v.len() {
            return Err(Error::DimensionMismatch(format!(
                "objective returned a gradient of length {}",
                eval.grad.len()
            )));
        }
        if !eval.grad.iter().all(|g| g.is_finite()) {
            return Err(Error::Diverged { what: "gradient", step });
        }
        let grad_w = weight_gradient(basis, &eval.grad)?;
        records.push(StepRecord {
            step,
            loss: eval.loss,
            grad_w_norm: grad_w.norm(),
            grad_v_norm: eval.grad.norm(),
            v_norm: v.norm(),
            residual: space.residual(&v)?,
        });
        match config.algorithm {
            Algorithm::Gd => w.axpy(-config.learning_rate, &grad_w, 1.0),
            Algorithm::AdamW => adam.step(&mut w, &grad_w, config),
        }
    }
    if !w.iter().all(|x| x.is_finite()) {
        return Err(Error::Diverged {
            what: "weights",
            step: config.steps,
        });
    }
    Ok((
        WeightVector {
            values: w,
            u_position: w0.u_position,
        },
        RunMetrics { records },
    ))
}
