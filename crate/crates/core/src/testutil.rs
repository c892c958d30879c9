//! Random fixtures shared by unit tests.

use crate::matrix::{DenseMatrix, OrthonormalBasis, SymMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub(crate) fn random_matrix(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DenseMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng)).unwrap()
}

pub(crate) fn random_symmetric(p: usize, seed: u64) -> SymMatrix {
    let a = random_matrix(p, p, seed);
    SymMatrix::from_upper_fn(p, |i, j| 0.5 * (a.get(i, j) + a.get(j, i))).unwrap()
}

pub(crate) fn random_orthonormal(p: usize, k: usize, seed: u64) -> OrthonormalBasis {
    OrthonormalBasis::orthonormalize(&random_matrix(p, k, seed)).unwrap()
}
