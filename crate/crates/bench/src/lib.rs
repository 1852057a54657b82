//! Shared fixtures for the criterion benches.

use btex_core::synthetic::gaussian_vocabulary;
use btex_core::Vocabulary;

/// Seeded Gaussian vocabulary used by every bench so timings are comparable.
pub fn bench_vocabulary(d: usize, n: usize) -> Vocabulary {
    gaussian_vocabulary(d, n, 0x5eed).expect("finite synthetic vocabulary")
}
