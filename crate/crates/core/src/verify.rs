//! Numerical checks of the two structural facts the method rests on:
//!
//! * **Spanning.** When `A_V` has full row rank, every `v ∈ ℝᵈ` is a linear
//!   combination of vocabulary embeddings.
//! * **Projected step.** One gradient step on the weights moves the
//!   embedding by `Δv₂ = V_M V_Mᵀ Δv₁`, where `Δv₁` is the unconstrained step
//!   in `ℝᵈ` with the same learning rate, and `rank(V_M V_Mᵀ) = rank(V_M)`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{default_tolerance, gram_outer, least_squares, numerical_rank};
use crate::objectives::Objective;
use crate::optimizer::{compose_embedding, optimize, OptimizerConfig, WeightVector};
use crate::selection::SubspaceBasis;

/// Maximum relative disagreement accepted for `Δv₂ = B_V Δv₁`.
pub const STEP_IDENTITY_TOL: f64 = 1e-10;
/// Maximum least-squares residual accepted when reconstructing a vector.
pub const SPANNING_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Serialize)]
pub struct StepIdentityReport {
    pub max_rel_err: f64,
    pub rank_bv: usize,
    pub d1: usize,
    /// Shared cutoff used for both ranks.
    pub tolerance: f64,
    pub passed: bool,
}

/// Ranks of `B_V` and `V_M` under one shared cutoff: the larger of the two
/// matrices' default SVD tolerances unless `tolerance` is given.
pub fn gram_rank_pair(vm: &DMatrix<f64>, bv: &DMatrix<f64>, tolerance: Option<f64>) -> Result<(usize, usize, f64)> {
    let tol = match tolerance {
        Some(t) => t,
        None => {
            let sv = numerical_rank(vm, None)?;
            let sb = numerical_rank(bv, None)?;
            let tv = default_tolerance(
                vm.nrows(),
                vm.ncols(),
                sv.singular_values.first().copied().unwrap_or(0.0),
            );
            let tb = default_tolerance(
                bv.nrows(),
                bv.ncols(),
                sb.singular_values.first().copied().unwrap_or(0.0),
            );
            tv.max(tb)
        }
    };
    if tol == 0.0 {
        // both matrices are exactly zero
        return Ok((0, 0, 0.0));
    }
    let rank_bv = numerical_rank(bv, Some(tol))?.rank;
    let rank_vm = numerical_rank(vm, Some(tol))?.rank;
    Ok((rank_bv, rank_vm, tol))
}

fn initial_weights_for(basis: &SubspaceBasis, u: &DVector<f64>) -> Result<WeightVector> {
    if u.len() != basis.dim() {
        return Err(Error::DimensionMismatch(format!(
            "initial embedding of length {} for a basis in R^{}",
            u.len(),
            basis.dim()
        )));
    }
    let vm = basis.matrix();
    if let Some(pos) = vm.column_iter().position(|c| c == *u) {
        let mut values = DVector::zeros(basis.len());
        values[pos] = 1.0;
        return Ok(WeightVector {
            values,
            u_position: pos,
        });
    }
    let rhs = DMatrix::from_column_slice(u.len(), 1, u.as_slice());
    let (w, res) = least_squares(vm, &rhs)?;
    if res[0] > SPANNING_TOL * u.norm().max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "initial embedding is not in the span of the basis (residual {:e})",
            res[0]
        )));
    }
    Ok(WeightVector {
        values: w.column(0).into_owned(),
        u_position: 0,
    })
}

/// Runs the single-step comparison from `u` with learning rate `η`.
///
/// `Δv₁ = −η ∇_v ℒ(u)` is the unconstrained step; `Δv₂` is obtained by one
/// plain gradient step on the weights followed by recomposition.
pub fn verify_projected_step(
    basis: &SubspaceBasis,
    objective: &dyn Objective,
    u: &DVector<f64>,
    learning_rate: f64,
) -> Result<StepIdentityReport> {
    let bv = gram_outer(basis.matrix())?;
    verify_step_identity(basis, objective, u, learning_rate, &bv)
}

/// As [`verify_projected_step`] but checks a caller-supplied `B_V`.
pub fn verify_step_identity(
    basis: &SubspaceBasis,
    objective: &dyn Objective,
    u: &DVector<f64>,
    learning_rate: f64,
    bv: &DMatrix<f64>,
) -> Result<StepIdentityReport> {
    if bv.shape() != (basis.dim(), basis.dim()) {
        return Err(Error::DimensionMismatch(format!(
            "B_V is {}x{}, expected {d}x{d}",
            bv.nrows(),
            bv.ncols(),
            d = basis.dim()
        )));
    }
    let w0 = initial_weights_for(basis, u)?;
    let start = compose_embedding(basis, &w0)?;
    let grad_v = objective.evaluate(&start, 0)?.grad;
    if !grad_v.iter().all(|g| g.is_finite()) {
        return Err(Error::Diverged {
            what: "gradient",
            step: 0,
        });
    }
    let dv1 = -learning_rate * &grad_v;

    let (w1, _) = optimize(basis, &w0, objective, &OptimizerConfig::gd(learning_rate, 1))?;
    let dv2 = compose_embedding(basis, &w1)? - &start;

    let expected = bv * &dv1;
    let scale = expected.norm().max(dv2.norm());
    let max_rel_err = if scale == 0.0 {
        0.0
    } else {
        (&dv2 - &expected).norm() / scale
    };
    let (rank_bv, d1, tolerance) = gram_rank_pair(basis.matrix(), bv, None)?;
    Ok(StepIdentityReport {
        max_rel_err,
        rank_bv,
        d1,
        tolerance,
        passed: max_rel_err <= STEP_IDENTITY_TOL && rank_bv == d1,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SpanningReport {
    pub rank: usize,
    pub dim: usize,
    pub samples: usize,
    pub max_residual: f64,
    pub passed: bool,
}

/// Reconstructs every column of `targets` as a least-squares combination of
/// the columns of `a` and reports the worst residual.
pub fn verify_spanning(a: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<SpanningReport> {
    let rank = numerical_rank(a, None)?.rank;
    let (_, residuals) = least_squares(a, targets)?;
    let max_residual = residuals.iter().copied().fold(0.0, f64::max);
    Ok(SpanningReport {
        rank,
        dim: a.nrows(),
        samples: targets.ncols(),
        max_residual,
        passed: rank == a.nrows() && max_residual <= SPANNING_TOL,
    })
}
