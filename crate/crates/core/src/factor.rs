//! Distributed estimation for the elliptical factor model
//! `X_t = L f_t + u_t`, and factor-based forecasting.
//!
//! The loading space `span(L)` is estimated by distributed ECA. The
//! aggregated basis `Ṽ` is sent back to every machine, which computes its
//! factor scores by least squares against the scaled loading
//! `L̃ = p^{α/2} Ṽ`. Scores then feed the `h`-step forecast
//! `x̂_{t+h} = α̂_h + β̂_h f̂_t`.

use rayon::prelude::*;

use crate::distributed::{
    broadcast_back, full_sample_basis, partition_rows, run_partitioned, CostLedger, EstimatorKind, InProcess,
    Partition, Transport,
};
use crate::error::{Error, Result};
use crate::matrix::{thin_svd, DenseMatrix, OrthonormalBasis};

/// Relative tolerance for the agreement of the two score formulas.
pub const SCORE_ROUTE_TOL: f64 = 1e-10;
/// Singular values below this fraction of the design scale are treated as zero.
pub const PINV_CUTOFF: f64 = 1e-12;

/// Estimated loading space with its scaled loading matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadingEstimate {
    basis: OrthonormalBasis,
    alpha: f64,
    scaled: DenseMatrix,
}

impl LoadingEstimate {
    /// Attaches `L̃ = p^{α/2} V` to `basis`; `alpha` must lie in `(0, 1]`.
    pub fn new(basis: OrthonormalBasis, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1], got {alpha}")));
        }
        let scaled = basis.columns().scaled(Self::factor(basis.ambient_dim(), alpha))?;
        Ok(Self { basis, alpha, scaled })
    }

    fn factor(p: usize, alpha: f64) -> f64 {
        (p as f64).powf(alpha / 2.0)
    }

    pub fn basis(&self) -> &OrthonormalBasis {
        &self.basis
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `p^{α/2}`.
    pub fn scale(&self) -> f64 {
        Self::factor(self.basis.ambient_dim(), self.alpha)
    }

    pub fn scaled(&self) -> &DenseMatrix {
        &self.scaled
    }
}

/// Loading space from distributed ECA over `partitions`.
pub fn estimate_loading_space(
    partitions: &[Partition],
    k: usize,
    alpha: f64,
    transport: &dyn Transport,
) -> Result<LoadingEstimate> {
    let run = run_partitioned(partitions, k, EstimatorKind::Eca, transport)?;
    LoadingEstimate::new(run.basis, alpha)
}

/// Factor scores held by one machine.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorScores {
    pub machine_id: u32,
    /// `n x K`, one row per local observation.
    pub scores: DenseMatrix,
}

/// Cholesky factor of a small symmetric positive definite matrix given as
/// row-major `n x n`. Returns the lower triangle, row-major.
fn cholesky(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for r in 0..j {
                s -= l[i * n + r] * l[j * n + r];
            }
            if i == j {
                if !(s > 0.0) {
                    return Err(Error::Numerical("loading matrix is rank deficient".into()));
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(l)
}

/// Least-squares scores `F = X L (LᵀL)⁻¹` for an arbitrary full-rank
/// `p x K` loading, through the normal equations.
pub fn scores_normal_equations(x: &DenseMatrix, loading: &DenseMatrix) -> Result<DenseMatrix> {
    let (n, p) = x.shape();
    let (lp, k) = loading.shape();
    if lp != p {
        return Err(Error::Dimension(format!("data has {p} columns but the loading has {lp} rows")));
    }
    let gram = loading.t_matmul(loading)?;
    let chol = cholesky(&gram.to_row_major(), k)?;
    let rhs = x.matmul(loading)?;
    let mut out = vec![0.0; n * k];
    let mut y = vec![0.0; k];
    for t in 0..n {
        // forward then backward substitution on L Lᵀ f = rhs_t
        for i in 0..k {
            let mut s = rhs.get(t, i);
            for r in 0..i {
                s -= chol[i * k + r] * y[r];
            }
            y[i] = s / chol[i * k + i];
        }
        for i in (0..k).rev() {
            let mut s = y[i];
            for r in (i + 1)..k {
                s -= chol[r * k + i] * out[r * n + t];
            }
            out[i * n + t] = s / chol[i * k + i];
        }
    }
    DenseMatrix::from_col_major(n, k, out)
}

/// Scores through orthonormality of the basis: `F = p^{-α/2} X V`.
pub fn scores_projection(x: &DenseMatrix, loading: &LoadingEstimate) -> Result<DenseMatrix> {
    let p = loading.basis.ambient_dim();
    if x.cols() != p {
        return Err(Error::Dimension(format!("data has {} columns, loading space lives in R^{p}", x.cols())));
    }
    x.matmul(loading.basis.columns())?.scaled(1.0 / loading.scale())
}

/// Factor scores of one machine's rows. Both closed forms are evaluated and
/// must agree to [`SCORE_ROUTE_TOL`] relative to the score magnitude.
pub fn factor_scores(local: &Partition, loading: &LoadingEstimate) -> Result<FactorScores> {
    let x = local.data();
    let projected = scores_projection(x, loading)?;
    let normal = scores_normal_equations(x, loading.scaled())?;
    let scale = projected.max_abs().max(f64::MIN_POSITIVE);
    let gap = projected
        .as_slice()
        .iter()
        .zip(normal.as_slice())
        .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
    if gap > SCORE_ROUTE_TOL * scale.max(1.0) {
        return Err(Error::Numerical(format!(
            "score formulas disagree by {gap:e} on machine {}",
            local.machine_id()
        )));
    }
    Ok(FactorScores {
        machine_id: local.machine_id(),
        scores: normal,
    })
}

/// Output of the full pipeline on partitioned data.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPipeline {
    pub loading: LoadingEstimate,
    /// One entry per machine, ordered by machine id.
    pub scores: Vec<FactorScores>,
    pub ledger: CostLedger,
}

/// Loading estimation, broadcast of the aggregated basis, and local score
/// computation on every machine.
pub fn run_factor_pipeline(
    partitions: &[Partition],
    k: usize,
    alpha: f64,
    transport: &dyn Transport,
) -> Result<FactorPipeline> {
    let run = run_partitioned(partitions, k, EstimatorKind::Eca, transport)?;
    let mut ledger = run.ledger;
    let (received, down) = broadcast_back(&run.basis, partitions.len(), transport)?;
    ledger.merge(down);
    let mut parts: Vec<&Partition> = partitions.iter().collect();
    parts.sort_by_key(|p| p.machine_id());
    let scores = parts
        .par_iter()
        .zip(received.into_par_iter())
        .map(|(part, basis)| factor_scores(part, &LoadingEstimate::new(basis, alpha)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(FactorPipeline {
        loading: LoadingEstimate::new(run.basis, alpha)?,
        scores,
        ledger,
    })
}

/// `x̂_{t+h} = intercepts + slopes · f_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastModel {
    pub horizon: usize,
    /// Length `p`.
    pub intercepts: Vec<f64>,
    /// `p x K`.
    pub slopes: DenseMatrix,
}

impl ForecastModel {
    pub fn predict(&self, scores: &[f64]) -> Result<Vec<f64>> {
        let (p, k) = self.slopes.shape();
        if scores.len() != k {
            return Err(Error::Dimension(format!("expected {k} scores, got {}", scores.len())));
        }
        Ok((0..p)
            .map(|i| self.intercepts[i] + (0..k).map(|j| self.slopes.get(i, j) * scores[j]).sum::<f64>())
            .collect())
    }
}

/// Per-coordinate least squares of `targets[t + h]` on `(1, scores[t])`.
///
/// Slopes use the pseudo-inverse of the centered score design, so constant
/// or collinear scores yield the minimum-norm solution instead of an error.
pub fn fit_forecast(scores: &DenseMatrix, targets: &DenseMatrix, h: usize) -> Result<ForecastModel> {
    let (n, k) = scores.shape();
    let p = targets.cols();
    if targets.rows() != n {
        return Err(Error::Dimension(format!(
            "{n} score rows but {} target rows",
            targets.rows()
        )));
    }
    if n <= h + k {
        return Err(Error::InsufficientData(format!(
            "need more than h + K = {} rows, got {n}",
            h + k
        )));
    }
    let rows = n - h;
    let mean = |col: &[f64]| col.iter().sum::<f64>() / col.len() as f64;
    let f_mean: Vec<f64> = (0..k).map(|j| mean(&scores.column(j)[..rows])).collect();
    let y_mean: Vec<f64> = (0..p).map(|i| mean(&targets.column(i)[h..])).collect();
    let z = DenseMatrix::from_fn(rows, k, |t, j| scores.get(t, j) - f_mean[j])?;
    let yc = DenseMatrix::from_fn(rows, p, |t, i| targets.get(t + h, i) - y_mean[i])?;

    let (u, s, v) = thin_svd(&z)?;
    // Centering constant scores leaves rounding noise, so the cutoff is tied
    // to the raw score magnitude as well as to the centered spectrum.
    let raw = scores.max_abs() * (rows as f64).sqrt();
    let cutoff = PINV_CUTOFF * s.first().copied().unwrap_or(0.0).max(raw);
    // B = V S⁺ Uᵀ Yc  (K x p)
    let uty = u.t_matmul(&yc)?;
    let coef = DenseMatrix::from_fn(k, p, |j, i| {
        (0..k)
            .filter(|&r| s[r] > cutoff)
            .map(|r| v.get(j, r) * uty.get(r, i) / s[r])
            .sum()
    })?;
    let slopes = coef.transpose();
    let intercepts = (0..p)
        .map(|i| y_mean[i] - (0..k).map(|j| slopes.get(i, j) * f_mean[j]).sum::<f64>())
        .collect();
    Ok(ForecastModel {
        horizon: h,
        intercepts,
        slopes,
    })
}

/// How the loading space is estimated inside each rolling window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RollingSpec {
    pub window: usize,
    pub horizon: usize,
    pub k: usize,
    /// Machines per window; only used when `distributed` is set.
    pub m: usize,
    pub kind: EstimatorKind,
    pub distributed: bool,
}

/// Squared forecast errors accumulated over all rolling origins.
#[derive(Debug, Clone, PartialEq)]
pub struct RollingForecast {
    pub origins: usize,
    /// Mean squared error of each variable.
    pub per_variable: Vec<f64>,
}

impl RollingForecast {
    /// Average of the per-variable errors.
    pub fn overall(&self) -> f64 {
        self.per_variable.iter().sum::<f64>() / self.per_variable.len() as f64
    }
}

fn window_basis(window: &DenseMatrix, spec: &RollingSpec) -> Result<OrthonormalBasis> {
    if spec.distributed {
        let parts = partition_rows(window, spec.m)?;
        Ok(run_partitioned(&parts, spec.k, spec.kind, &InProcess)?.basis)
    } else {
        full_sample_basis(window, spec.k, spec.kind)
    }
}

/// Rolling-window out-of-sample evaluation. At each origin `t` the model is
/// trained on rows `t - window + 1 ..= t` and predicts row `t + h` from the
/// score of row `t`.
pub fn rolling_forecast_error(data: &DenseMatrix, spec: &RollingSpec) -> Result<RollingForecast> {
    let (n_total, p) = data.shape();
    let RollingSpec { window, horizon: h, .. } = *spec;
    if window <= h {
        return Err(Error::InvalidParameter(format!("window {window} must exceed the horizon {h}")));
    }
    if n_total <= window + h {
        return Err(Error::InsufficientData(format!(
            "need more than window + h = {} rows, got {n_total}",
            window + h
        )));
    }
    if spec.distributed && (spec.m == 0 || window % spec.m != 0) {
        return Err(Error::Partition(format!(
            "window {window} cannot be split evenly over {} machines",
            spec.m
        )));
    }
    let origins: Vec<usize> = ((window - 1)..(n_total - h)).collect();
    let errors = origins
        .par_iter()
        .map(|&t| -> Result<Vec<f64>> {
            let train = data.row_block(t + 1 - window, t + 1)?;
            let basis = window_basis(&train, spec)?;
            let loading = LoadingEstimate::new(basis, 1.0)?;
            let scores = scores_projection(&train, &loading)?;
            let model = fit_forecast(&scores, &train, h)?;
            let pred = model.predict(&scores.row(window - 1))?;
            Ok((0..p).map(|i| (data.get(t + h, i) - pred[i]).powi(2)).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut per_variable = vec![0.0; p];
    for e in &errors {
        per_variable.iter_mut().zip(e).for_each(|(a, b)| *a += b);
    }
    let count = errors.len() as f64;
    per_variable.iter_mut().for_each(|v| *v /= count);
    Ok(RollingForecast {
        origins: errors.len(),
        per_variable,
    })
}

/// Mean of the per-variable errors within each group. Groups are listed in
/// order of first appearance in `groups` (one label per variable).
pub fn group_mse(per_variable: &[f64], groups: &[String]) -> Result<Vec<(String, f64)>> {
    if per_variable.len() != groups.len() {
        return Err(Error::Dimension(format!(
            "{} variables but {} group labels",
            per_variable.len(),
            groups.len()
        )));
    }
    let mut out: Vec<(String, f64, usize)> = Vec::new();
    for (v, g) in per_variable.iter().zip(groups) {
        match out.iter_mut().find(|(name, _, _)| name == g) {
            Some(entry) => {
                entry.1 += v;
                entry.2 += 1;
            }
            None => out.push((g.clone(), *v, 1)),
        }
    }
    Ok(out.into_iter().map(|(g, s, c)| (g, s / c as f64)).collect())
}
