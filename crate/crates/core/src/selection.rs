//! Textual-subspace selection: rank the vocabulary by closeness to the
//! initial embedding and keep a prefix of that ordering.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{distance_vector, numerical_rank, ColumnSpace, DistanceMetric, RankReport};
use crate::store::Vocabulary;

/// The selected embeddings `V_M` and their column space.
#[derive(Debug, Clone)]
pub struct SubspaceBasis {
    indices: Vec<usize>,
    matrix: DMatrix<f64>,
    metric: DistanceMetric,
    space: ColumnSpace,
}

impl SubspaceBasis {
    /// Wraps an arbitrary `d × M` matrix whose column `j` came from
    /// vocabulary index `indices[j]`.
    pub fn new(
        matrix: DMatrix<f64>,
        indices: Vec<usize>,
        metric: DistanceMetric,
        tolerance: Option<f64>,
    ) -> Result<Self> {
        if matrix.ncols() == 0 || matrix.nrows() == 0 {
            return Err(Error::InvalidArgument("basis must have at least one column".into()));
        }
        if indices.len() != matrix.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} indices for {} basis columns",
                indices.len(),
                matrix.ncols()
            )));
        }
        let mut seen = indices.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("basis indices must be distinct".into()));
        }
        let space = ColumnSpace::new(&matrix, tolerance)?;
        Ok(SubspaceBasis {
            indices,
            matrix,
            metric,
            space,
        })
    }

    /// Gathers the given vocabulary columns into a basis.
    pub fn from_vocabulary(
        vocab: &Vocabulary,
        indices: Vec<usize>,
        metric: DistanceMetric,
        tolerance: Option<f64>,
    ) -> Result<Self> {
        let matrix = gather_columns(vocab, &indices)?;
        Self::new(matrix, indices, metric, tolerance)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// `V_M`, `d × M`.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Number of selected embeddings `M`.
    pub fn len(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.ncols() == 0
    }

    /// Subspace dimension `d₁`.
    pub fn rank(&self) -> usize {
        self.space.rank()
    }

    pub fn tolerance(&self) -> f64 {
        self.space.report().tolerance
    }

    pub fn rank_report(&self) -> &RankReport {
        self.space.report()
    }

    pub fn metric(&self) -> DistanceMetric {
        self.metric
    }

    pub fn column_space(&self) -> &ColumnSpace {
        &self.space
    }

    /// Position of a vocabulary index inside the basis, if selected.
    pub fn position_of(&self, vocab_index: usize) -> Option<usize> {
        self.indices.iter().position(|&i| i == vocab_index)
    }
}

fn gather_columns(vocab: &Vocabulary, indices: &[usize]) -> Result<DMatrix<f64>> {
    let a = vocab.matrix();
    for &i in indices {
        vocab.resolve(i)?;
    }
    Ok(DMatrix::from_fn(a.nrows(), indices.len(), |r, c| a[(r, indices[c])]))
}

/// Vocabulary indices sorted closest-first under `metric`, ties broken by
/// ascending index.
pub fn order_by_distance(dist: &[f64], metric: DistanceMetric) -> Result<Vec<usize>> {
    if let Some(i) = dist.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFiniteValue(format!("distance at index {i}")));
    }
    let mut order: Vec<usize> = (0..dist.len()).collect();
    let larger_first = metric.larger_is_closer();
    order.sort_by(|&a, &b| {
        let by_value = dist[a].partial_cmp(&dist[b]).unwrap_or(Ordering::Equal);
        let by_value = if larger_first { by_value.reverse() } else { by_value };
        by_value.then(a.cmp(&b))
    });
    Ok(order)
}

fn ordering_for(vocab: &Vocabulary, u_index: usize, metric: DistanceMetric) -> Result<Vec<usize>> {
    let u: DVector<f64> = vocab.get_embedding(u_index)?;
    let dist = distance_vector(u.as_slice(), vocab, metric)?;
    order_by_distance(&dist, metric)
}

/// Smallest prefix of the closeness ordering whose matrix reaches numerical
/// rank `d1_target`.
///
/// Appending one column raises the count of singular values above a
/// non-decreasing cutoff by at most one (interlacing), so when a prefix of
/// length `M` has rank `r < target`, no prefix shorter than
/// `M + (target − r)` can qualify. The scan jumps straight there, which
/// visits a subset of the linear scan's candidates and returns the same `M`.
pub fn select_by_rank(
    vocab: &Vocabulary,
    u_index: usize,
    metric: DistanceMetric,
    d1_target: usize,
    tolerance: Option<f64>,
) -> Result<SubspaceBasis> {
    vocab.resolve(u_index)?;
    if d1_target == 0 || d1_target > vocab.dim() {
        return Err(Error::InvalidArgument(format!(
            "target subspace dimension {d1_target} outside 1..={}",
            vocab.dim()
        )));
    }
    let order = ordering_for(vocab, u_index, metric)?;
    let n = order.len();
    let mut m = d1_target.min(n);
    loop {
        let prefix = order[..m].to_vec();
        let basis = SubspaceBasis::from_vocabulary(vocab, prefix, metric, tolerance)?;
        let r = basis.rank();
        if r >= d1_target {
            return Ok(basis);
        }
        if m == n {
            return Err(Error::UnreachableRank {
                target: d1_target,
                max_rank: r,
            });
        }
        m = (m + (d1_target - r)).min(n);
    }
}

/// The top-`m` prefix of the closeness ordering, whatever its rank.
pub fn select_fixed_m(
    vocab: &Vocabulary,
    u_index: usize,
    metric: DistanceMetric,
    m: usize,
    tolerance: Option<f64>,
) -> Result<SubspaceBasis> {
    vocab.resolve(u_index)?;
    if m == 0 || m > vocab.len() {
        return Err(Error::InvalidArgument(format!("M = {m} outside 1..={}", vocab.len())));
    }
    let order = ordering_for(vocab, u_index, metric)?;
    SubspaceBasis::from_vocabulary(vocab, order[..m].to_vec(), metric, tolerance)
}

/// Rank of the whole vocabulary matrix `A_V`.
pub fn vocabulary_rank(vocab: &Vocabulary, tolerance: Option<f64>) -> Result<RankReport> {
    numerical_rank(vocab.matrix(), tolerance)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(d: usize, flat: &[f32]) -> Vocabulary {
        let n = flat.len() / d;
        Vocabulary::new(
            (0..n).map(|i| format!("w{i}")).collect(),
            DMatrix::from_column_slice(d, n, flat),
        )
        .unwrap()
    }

    #[test]
    fn ordering_examples() {
        assert_eq!(
            order_by_distance(&[1.0, 0.0, -1.0], DistanceMetric::Dot).unwrap(),
            vec![0, 1, 2]
        );
        let l2 = [0.0, 2f64.sqrt(), 2.0];
        assert_eq!(order_by_distance(&l2, DistanceMetric::L2).unwrap(), vec![0, 1, 2]);
        assert_eq!(
            order_by_distance(&[0.5; 4], DistanceMetric::Cosine).unwrap(),
            vec![0, 1, 2, 3]
        );
        assert!(order_by_distance(&[0.0, f64::NAN], DistanceMetric::Dot).is_err());
    }

    #[test]
    fn by_rank_prefers_larger_dot_product() {
        let v = vocab(2, &[1.0, 0.0, 2.0, 0.0, 0.0, 1.0]);
        let b = select_by_rank(&v, 0, DistanceMetric::Dot, 2, None).unwrap();
        assert_eq!(b.len(), 3);
        assert_eq!(b.indices(), &[1, 0, 2]);
        assert_eq!(b.rank(), 2);
    }

    #[test]
    fn by_rank_target_one_is_self() {
        let v = vocab(2, &[1.0, 0.0, 0.3, 0.9, -1.0, 0.2]);
        for metric in DistanceMetric::ALL {
            let b = select_by_rank(&v, 1, metric, 1, None).unwrap();
            if metric != DistanceMetric::Dot {
                assert_eq!(b.indices(), &[1]);
            }
            assert_eq!(b.len(), 1);
        }
        // u = (0.3, 0.9): self dot 0.9 beats 0.3 and -0.12
        assert_eq!(
            select_by_rank(&v, 1, DistanceMetric::Dot, 1, None).unwrap().indices(),
            &[1]
        );
    }

    #[test]
    fn by_rank_unreachable_reports_max_rank() {
        let v = vocab(2, &[1.0, 1.0, 2.0, 2.0, -1.0, -1.0]);
        match select_by_rank(&v, 0, DistanceMetric::Dot, 2, None) {
            Err(Error::UnreachableRank { target: 2, max_rank: 1 }) => {}
            other => panic!("expected unreachable rank, got {other:?}"),
        }
    }

    #[test]
    fn by_rank_rejects_bad_target() {
        let v = vocab(2, &[1.0, 0.0, 0.0, 1.0]);
        assert!(select_by_rank(&v, 0, DistanceMetric::Dot, 0, None).is_err());
        assert!(select_by_rank(&v, 0, DistanceMetric::Dot, 3, None).is_err());
        assert!(select_by_rank(&v, 5, DistanceMetric::Dot, 1, None).is_err());
    }

    #[test]
    fn fixed_m_single_is_self() {
        let v = vocab(2, &[1.0, 0.0, 0.0, 1.0, 0.7, 0.7]);
        let b = select_fixed_m(&v, 1, DistanceMetric::Cosine, 1, None).unwrap();
        assert_eq!(b.indices(), &[1]);
        assert_eq!(b.rank(), 1);
        assert!(select_fixed_m(&v, 1, DistanceMetric::Dot, 0, None).is_err());
        assert!(select_fixed_m(&v, 1, DistanceMetric::Dot, 4, None).is_err());
    }

    #[test]
    fn basis_rejects_duplicate_indices() {
        let m = DMatrix::identity(2, 2);
        assert!(SubspaceBasis::new(m, vec![3, 3], DistanceMetric::Dot, None).is_err());
    }
}
