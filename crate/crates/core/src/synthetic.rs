//! Seeded random vocabularies for tests, benchmarks and desk-scale sweeps.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::store::Vocabulary;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_vector<R: Rng + ?Sized>(len: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample(StandardNormal))
}

/// `n` tokens named `w0, w1, …` with i.i.d. standard normal `f32`
/// embeddings in `ℝᵈ`.
pub fn gaussian_vocabulary(d: usize, n: usize, seed: u64) -> Result<Vocabulary> {
    let mut rng = rng(seed);
    let matrix = DMatrix::from_fn(d, n, |_, _| rng.sample::<f32, _>(StandardNormal));
    Vocabulary::new((0..n).map(|i| format!("w{i}")).collect(), matrix)
}
