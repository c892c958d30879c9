//! Spatial Kendall's tau, the sample covariance baseline, and a Monte-Carlo
//! evaluator for the eigenvalues of the population Kendall matrix.
//!
//! The sample Kendall matrix is the U-statistic
//!
//! ```text
//! K̂ = 1/#pairs · Σ_{i<j} (X_i - X_j)(X_i - X_j)ᵀ / |X_i - X_j|²
//! ```
//!
//! Every pair contributes a rank-one projection, so `tr(K̂) = 1` and `K̂` is
//! positive semi-definite. The pair loop normalizes each difference and
//! accumulates blocks of them with a matrix product. Index pairs are split into
//! chunks whose boundaries depend only on `n`, chunk sums are formed
//! independently and added in chunk order, so the result is bit-identical for
//! any thread count.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::{accumulate_gram, DenseMatrix, SymMatrix};
use crate::rng::seeded;

/// What to do with a pair whose squared distance is at most `min_sq_norm`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DegenerateAction {
    Skip,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairPolicy {
    pub min_sq_norm: f64,
    pub action: DegenerateAction,
}

impl PairPolicy {
    pub fn skip(min_sq_norm: f64) -> Self {
        Self {
            min_sq_norm,
            action: DegenerateAction::Skip,
        }
    }

    pub fn error(min_sq_norm: f64) -> Self {
        Self {
            min_sq_norm,
            action: DegenerateAction::Error,
        }
    }

    /// Skip pairs with `|X_i - X_j|² <= 1e-24 · max_i |X_i|²`.
    pub fn default_for(data: &DenseMatrix) -> Self {
        let (n, p) = data.shape();
        let mut max_sq: f64 = 0.0;
        for i in 0..n {
            let s: f64 = (0..p).map(|j| data.get(i, j).powi(2)).sum();
            max_sq = max_sq.max(s);
        }
        Self::skip(1e-24 * max_sq)
    }
}

/// Pairs processed per chunk (chunk boundaries fall on whole rows).
const PAIRS_PER_CHUNK: usize = 1 << 15;
/// Normalized differences buffered before each rank-update.
const BLOCK_ROWS: usize = 1024;

/// Row ranges `[i0, i1)` of the outer index covering roughly
/// `PAIRS_PER_CHUNK` pairs each. Depends only on `n`.
fn pair_chunks(n: usize) -> Vec<(usize, usize)> {
    let mut chunks = Vec::new();
    let mut start = 0;
    let mut count = 0;
    for i in 0..n.saturating_sub(1) {
        count += n - 1 - i;
        if count >= PAIRS_PER_CHUNK {
            chunks.push((start, i + 1));
            start = i + 1;
            count = 0;
        }
    }
    if start < n.saturating_sub(1) {
        chunks.push((start, n - 1));
    }
    chunks
}

struct ChunkSum {
    gram: Vec<f64>,
    retained: usize,
    first_degenerate: Option<(usize, usize)>,
}

fn kendall_chunk(rows: &[f64], n: usize, p: usize, (i0, i1): (usize, usize), policy: &PairPolicy) -> ChunkSum {
    let mut gram = vec![0.0; p * p];
    let mut block = vec![0.0; BLOCK_ROWS * p];
    let mut filled = 0;
    let mut retained = 0;
    let mut first_degenerate = None;
    for i in i0..i1 {
        let xi = &rows[i * p..(i + 1) * p];
        for j in (i + 1)..n {
            let xj = &rows[j * p..(j + 1) * p];
            let dst = &mut block[filled * p..(filled + 1) * p];
            let mut sq = 0.0;
            for ((d, a), b) in dst.iter_mut().zip(xi).zip(xj) {
                *d = a - b;
                sq += *d * *d;
            }
            if sq <= policy.min_sq_norm {
                if first_degenerate.is_none() {
                    first_degenerate = Some((i, j));
                }
                continue;
            }
            let inv = 1.0 / sq.sqrt();
            dst.iter_mut().for_each(|d| *d *= inv);
            filled += 1;
            retained += 1;
            if filled == BLOCK_ROWS {
                accumulate_gram(&block, filled, p, &mut gram);
                filled = 0;
            }
        }
    }
    accumulate_gram(&block, filled, p, &mut gram);
    ChunkSum {
        gram,
        retained,
        first_degenerate,
    }
}

/// Sample spatial Kendall's tau matrix of the rows of `data` (`n x p`).
///
/// Degenerate pairs (squared distance at most `policy.min_sq_norm`) are
/// either dropped from both the sum and the divisor, or reported as
/// [`Error::DegeneratePair`] naming the first such pair in lexical order.
pub fn sample_kendall_tau(data: &DenseMatrix, policy: &PairPolicy) -> Result<SymMatrix> {
    let (n, p) = data.shape();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "Kendall's tau needs at least 2 observations, got {n}"
        )));
    }
    let rows = data.to_row_major();
    let chunks = pair_chunks(n);
    let sums: Vec<ChunkSum> = chunks
        .par_iter()
        .map(|&c| kendall_chunk(&rows, n, p, c, policy))
        .collect();

    if policy.action == DegenerateAction::Error {
        if let Some((i, j)) = sums.iter().find_map(|s| s.first_degenerate) {
            return Err(Error::DegeneratePair { i, j });
        }
    }
    let retained: usize = sums.iter().map(|s| s.retained).sum();
    if retained == 0 {
        return Err(Error::DegenerateSample {
            pairs: n * (n - 1) / 2,
        });
    }
    let mut total = vec![0.0; p * p];
    for s in &sums {
        total.iter_mut().zip(&s.gram).for_each(|(t, g)| *t += g);
    }
    SymMatrix::from_row_major_upper(p, &total, 1.0 / retained as f64)
}

/// [`sample_kendall_tau`] with [`PairPolicy::default_for`].
pub fn kendall_tau(data: &DenseMatrix) -> Result<SymMatrix> {
    sample_kendall_tau(data, &PairPolicy::default_for(data))
}

/// Unbiased sample covariance `1/(n-1) Σ (X_i - X̄)(X_i - X̄)ᵀ`.
pub fn sample_covariance(data: &DenseMatrix) -> Result<SymMatrix> {
    let (n, p) = data.shape();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "sample covariance needs at least 2 observations, got {n}"
        )));
    }
    let mut centered = Vec::with_capacity(n * p);
    for j in 0..p {
        let col = data.column(j);
        let mean = col.iter().sum::<f64>() / n as f64;
        centered.extend(col.iter().map(|x| x - mean));
    }
    let c = DenseMatrix::from_col_major(n, p, centered)?;
    let g = c.t_matmul(&c)?;
    SymMatrix::from_upper_fn(p, |i, j| g.get(i, j) / (n as f64 - 1.0))
}

/// Monte-Carlo estimate of the population Kendall eigenvalues with the
/// standard error of each coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct KendallEigenEstimate {
    pub values: Vec<f64>,
    pub std_errors: Vec<f64>,
}

/// Eigenvalues of the population Kendall matrix of an elliptical law whose
/// scatter has eigenvalues `sigma_eigs`:
///
/// ```text
/// λ_j(K) = E[ λ_j g_j² / Σ_i λ_i g_i² ],  g ~ N(0, I_q)
/// ```
///
/// The Kendall matrix shares the scatter's eigenvectors, so these values are
/// paired with the caller's eigenbasis in the given order.
pub fn population_kendall_mc(sigma_eigs: &[f64], draws: usize, seed: u64) -> Result<Vec<f64>> {
    population_kendall_mc_detailed(sigma_eigs, draws, seed).map(|e| e.values)
}

pub fn population_kendall_mc_detailed(sigma_eigs: &[f64], draws: usize, seed: u64) -> Result<KendallEigenEstimate> {
    if sigma_eigs.is_empty() || sigma_eigs.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return Err(Error::InvalidParameter(
            "scatter eigenvalues must be positive and finite".into(),
        ));
    }
    if draws == 0 {
        return Err(Error::InvalidParameter("draws must be at least 1".into()));
    }
    let q = sigma_eigs.len();
    let mut rng = seeded(seed);
    let mut sum = vec![0.0; q];
    let mut sum_sq = vec![0.0; q];
    let mut w = vec![0.0; q];
    for _ in 0..draws {
        let mut denom = 0.0;
        for (wj, &l) in w.iter_mut().zip(sigma_eigs) {
            let g: f64 = StandardNormal.sample(&mut rng);
            *wj = l * g * g;
            denom += *wj;
        }
        for j in 0..q {
            let r = w[j] / denom;
            sum[j] += r;
            sum_sq[j] += r * r;
        }
    }
    let d = draws as f64;
    let values: Vec<f64> = sum.iter().map(|s| s / d).collect();
    let std_errors = values
        .iter()
        .zip(&sum_sq)
        .map(|(m, s)| {
            if draws < 2 {
                f64::INFINITY
            } else {
                ((s / d - m * m).max(0.0) * d / (d - 1.0) / d).sqrt()
            }
        })
        .collect();
    Ok(KendallEigenEstimate { values, std_errors })
}
