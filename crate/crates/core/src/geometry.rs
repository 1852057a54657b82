//! Distance kernels, numerical rank, and the projection operators built on
//! a selected basis.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SVD};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMetric {
    #[default]
    Dot,
    Cosine,
    L2,
}

impl DistanceMetric {
    pub const ALL: [DistanceMetric; 3] = [DistanceMetric::Dot, DistanceMetric::Cosine, DistanceMetric::L2];

    /// Dot and cosine are similarities; l2 is a distance.
    pub fn larger_is_closer(self) -> bool {
        !matches!(self, DistanceMetric::L2)
    }

    pub fn name(self) -> &'static str {
        match self {
            DistanceMetric::Dot => "dot",
            DistanceMetric::Cosine => "cosine",
            DistanceMetric::L2 => "l2",
        }
    }
}

impl fmt::Display for DistanceMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DistanceMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dot" => Ok(DistanceMetric::Dot),
            "cosine" => Ok(DistanceMetric::Cosine),
            "l2" => Ok(DistanceMetric::L2),
            other => Err(Error::InvalidArgument(format!(
                "unknown metric {other:?} (expected dot, cosine or l2)"
            ))),
        }
    }
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

/// Evaluates `metric` between two vectors of equal length.
pub fn distance(metric: DistanceMetric, u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch(format!(
            "vectors of length {} and {}",
            u.len(),
            v.len()
        )));
    }
    Ok(match metric {
        DistanceMetric::Dot => dot(u, v),
        DistanceMetric::Cosine => {
            let (nu, nv) = (norm(u), norm(v));
            if nu == 0.0 || nv == 0.0 {
                return Err(Error::ZeroVector);
            }
            dot(u, v) / (nu * nv)
        }
        DistanceMetric::L2 => u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(),
    })
}

/// Distance from `u` to every vocabulary column, in column order.
///
/// Columns are evaluated in parallel; each entry is computed by the same
/// kernel as [`distance`], so the result is identical to a sequential loop.
pub fn distance_vector(u: &[f64], vocab: &Vocabulary, metric: DistanceMetric) -> Result<Vec<f64>> {
    let d = vocab.dim();
    if u.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "query has length {}, vocabulary dimension is {d}",
            u.len()
        )));
    }
    vocab
        .matrix()
        .as_slice()
        .par_chunks_exact(d)
        .map(|col| distance(metric, u, col))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankReport {
    pub rank: usize,
    /// Singular values in descending order.
    pub singular_values: Vec<f64>,
    pub tolerance: f64,
}

/// `max(rows, cols) · ε · σ_max`, the usual SVD rank cutoff.
pub fn default_tolerance(rows: usize, cols: usize, sigma_max: f64) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON * sigma_max
}

fn ensure_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteValue(format!("{what} contains NaN or Inf")))
    }
}

fn check_tolerance(tol: Option<f64>) -> Result<()> {
    match tol {
        Some(t) if !(t > 0.0 && t.is_finite()) => Err(Error::InvalidArgument(format!(
            "rank tolerance must be positive and finite, got {t}"
        ))),
        _ => Ok(()),
    }
}

fn rank_from(singular_values: Vec<f64>, rows: usize, cols: usize, tol: Option<f64>) -> RankReport {
    let sigma_max = singular_values.first().copied().unwrap_or(0.0);
    let tolerance = tol.unwrap_or_else(|| default_tolerance(rows, cols, sigma_max));
    let rank = singular_values.iter().filter(|&&s| s > tolerance).count();
    RankReport {
        rank,
        singular_values,
        tolerance,
    }
}

/// Numerical rank: the number of singular values strictly above the
/// tolerance. With `None` the tolerance is [`default_tolerance`]; for an
/// all-zero matrix that is 0 and the rank is 0.
///
/// Shares its factorization path with [`ColumnSpace`] so that a rank report
/// and the projection built for the same matrix always agree.
pub fn numerical_rank(matrix: &DMatrix<f64>, tolerance: Option<f64>) -> Result<RankReport> {
    Ok(ColumnSpace::new(matrix, tolerance)?.report)
}

/// `B_V = V_M V_Mᵀ`. The lower triangle is mirrored from the upper one so
/// the result is exactly symmetric.
pub fn gram_outer(vm: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    ensure_finite(vm, "basis")?;
    let mut b = vm * vm.transpose();
    let d = b.nrows();
    for j in 0..d {
        for i in (j + 1)..d {
            b[(i, j)] = b[(j, i)];
        }
    }
    Ok(b)
}

/// An orthonormal basis for the column space of a matrix, obtained from a
/// truncated SVD, together with the rank report that produced it.
#[derive(Debug, Clone)]
pub struct ColumnSpace {
    range: DMatrix<f64>,
    report: RankReport,
}

impl ColumnSpace {
    pub fn new(matrix: &DMatrix<f64>, tolerance: Option<f64>) -> Result<Self> {
        ensure_finite(matrix, "matrix")?;
        check_tolerance(tolerance)?;
        let (rows, cols) = matrix.shape();
        if rows == 0 || cols == 0 {
            return Ok(ColumnSpace {
                range: DMatrix::zeros(rows, 0),
                report: RankReport {
                    rank: 0,
                    singular_values: Vec::new(),
                    tolerance: tolerance.unwrap_or(0.0),
                },
            });
        }
        let svd = SVD::new(matrix.clone(), true, false);
        let u = svd.u.as_ref().expect("left singular vectors requested");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let s: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
        let report = rank_from(s, rows, cols, tolerance);
        let keep = &order[..report.rank];
        let range = DMatrix::from_fn(rows, keep.len(), |i, j| u[(i, keep[j])]);
        Ok(ColumnSpace { range, report })
    }

    pub fn rank(&self) -> usize {
        self.report.rank
    }

    pub fn report(&self) -> &RankReport {
        &self.report
    }

    /// Orthonormal columns spanning the numerical range (`d × rank`).
    pub fn range(&self) -> &DMatrix<f64> {
        &self.range
    }

    pub fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.range.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "vector of length {} projected onto a space in R^{}",
                x.len(),
                self.range.nrows()
            )));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteValue("projected vector".into()));
        }
        let coeffs = self.range.tr_mul(x);
        Ok(&self.range * coeffs)
    }

    /// `‖x − P x‖₂`.
    pub fn residual(&self, x: &DVector<f64>) -> Result<f64> {
        Ok((x - self.project(x)?).norm())
    }
}

/// Orthogonal projection of `x` onto the column space of `vm`.
pub fn project_columnspace(vm: &DMatrix<f64>, x: &DVector<f64>) -> Result<DVector<f64>> {
    if x.len() != vm.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "vector of length {} for a matrix with {} rows",
            x.len(),
            vm.nrows()
        )));
    }
    ColumnSpace::new(vm, None)?.project(x)
}

/// Minimum-norm least-squares solutions of `a · W ≈ B` for every column of
/// `B` via one SVD pseudo-inverse, with the residual norm of each column.
pub fn least_squares(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    ensure_finite(a, "matrix")?;
    ensure_finite(b, "right-hand side")?;
    if b.nrows() != a.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "right-hand side with {} rows for a matrix with {} rows",
            b.nrows(),
            a.nrows()
        )));
    }
    let svd = SVD::new(a.clone(), true, true);
    let sigma_max = svd.singular_values.max();
    let tol = default_tolerance(a.nrows(), a.ncols(), sigma_max);
    let w = svd.solve(b, tol).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let residuals = (a * &w - b).column_iter().map(|c| c.norm()).collect();
    Ok((w, residuals))
}
