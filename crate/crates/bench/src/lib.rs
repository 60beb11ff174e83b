//! Shared fixtures for the benchmarks.

use fpk_core::grid::PointSet;
use fpk_core::transport::ErrorEnsemble;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `m` points uniform in `[-2, 2]²` with residuals uniform in `[-1, 1]`.
pub fn random_ensemble(m: usize, seed: u64) -> ErrorEnsemble {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords: Vec<f64> = (0..2 * m).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let residuals: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
    ErrorEnsemble::new(PointSet::from_flat(2, coords).unwrap(), &residuals).unwrap()
}
