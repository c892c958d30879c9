//! Samplers for elliptical laws through the stochastic representation
//! `X = μ + ξ A U`, and the factor-model generator used by the simulations.
//!
//! The Gaussian case draws `μ + A Z` with `Z ~ N(0, I_q)`. Student-t draws
//! `μ + A Z / sqrt(W / ν)` with `W ~ χ²_ν` independent of `Z`; this normal /
//! chi-square mixture is exact for every `ν > 0`, including the Cauchy case
//! `ν = 1`. The scatter matrix is `Σ = A Aᵀ` in both cases (not the
//! covariance, which for `t_ν` is `ν / (ν - 2) Σ` when it exists).

use std::fmt;
use std::str::FromStr;

use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{sym_eig_full, DenseMatrix, SymMatrix};
use crate::rng::{seeded, Rng};

/// Law of the radial variable `ξ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum RadialLaw {
    Gaussian,
    /// Multivariate Student-t with `nu` degrees of freedom (`nu = 1` is Cauchy).
    StudentT { nu: f64 },
}

impl RadialLaw {
    pub fn student_t(nu: f64) -> Result<Self> {
        if nu.is_finite() && nu > 0.0 {
            Ok(RadialLaw::StudentT { nu })
        } else {
            Err(Error::InvalidParameter(format!(
                "degrees of freedom must be positive, got {nu}"
            )))
        }
    }

    /// Scale multiplying a standard normal draw: `1` for Gaussian,
    /// `1 / sqrt(W / ν)` for Student-t.
    pub(crate) fn mixing_scale(&self, rng: &mut Rng) -> f64 {
        match *self {
            RadialLaw::Gaussian => 1.0,
            RadialLaw::StudentT { nu } => {
                let chi = ChiSquared::new(nu).expect("nu validated at construction");
                loop {
                    let w: f64 = chi.sample(rng);
                    let s = (nu / w).sqrt();
                    if w > 0.0 && s.is_finite() {
                        return s;
                    }
                }
            }
        }
    }
}

impl fmt::Display for RadialLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RadialLaw::Gaussian => f.write_str("gaussian"),
            RadialLaw::StudentT { nu } => write!(f, "t{nu}"),
        }
    }
}

impl FromStr for RadialLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        match t.as_str() {
            "gaussian" | "normal" => Ok(RadialLaw::Gaussian),
            "cauchy" => RadialLaw::student_t(1.0),
            _ => match t.strip_prefix('t').map(str::parse::<f64>) {
                Some(Ok(nu)) => RadialLaw::student_t(nu),
                _ => Err(Error::InvalidParameter(format!("unknown radial law '{s}'"))),
            },
        }
    }
}

impl TryFrom<String> for RadialLaw {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<RadialLaw> for String {
    fn from(r: RadialLaw) -> String {
        r.to_string()
    }
}

/// Generative description of `ED_p(μ, AAᵀ, ξ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterSpec {
    location: Vec<f64>,
    factor: DenseMatrix,
    radial: RadialLaw,
}

impl ScatterSpec {
    /// `factor` is `p x q` with full column rank `q <= p`.
    pub fn new(location: Vec<f64>, factor: DenseMatrix, radial: RadialLaw) -> Result<Self> {
        let (p, q) = factor.shape();
        if location.len() != p {
            return Err(Error::Dimension(format!(
                "location has length {}, factor has {p} rows",
                location.len()
            )));
        }
        if q == 0 || q > p {
            return Err(Error::Dimension(format!("factor must be p x q with 1 <= q <= p, got {p}x{q}")));
        }
        if location.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("location must be finite".into()));
        }
        let gram = SymMatrix::from_dense(&factor.t_matmul(&factor)?)?;
        let (eigs, _) = sym_eig_full(&gram)?;
        let top = eigs[0];
        let bottom = eigs[q - 1];
        if top <= 0.0 || bottom <= 1e-12 * top {
            return Err(Error::InvalidParameter("factor does not have full column rank".into()));
        }
        Ok(Self {
            location,
            factor,
            radial,
        })
    }

    /// Zero location, `A = diag(sqrt(σ_i))`.
    pub fn diagonal(scatter_diag: &[f64], radial: RadialLaw) -> Result<Self> {
        if scatter_diag.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidParameter("scatter diagonal must be positive".into()));
        }
        let p = scatter_diag.len();
        let a = DenseMatrix::from_fn(p, p, |i, j| if i == j { scatter_diag[i].sqrt() } else { 0.0 })?;
        Self::new(vec![0.0; p], a, radial)
    }

    pub fn dim(&self) -> usize {
        self.factor.rows()
    }

    pub fn location(&self) -> &[f64] {
        &self.location
    }

    pub fn factor(&self) -> &DenseMatrix {
        &self.factor
    }

    pub fn radial(&self) -> RadialLaw {
        self.radial
    }

    /// `Σ = AAᵀ`.
    pub fn scatter(&self) -> Result<SymMatrix> {
        SymMatrix::from_dense(&self.factor.matmul(&self.factor.transpose())?)
    }
}

/// `n` i.i.d. rows drawn from the elliptical law described by `spec`.
pub fn sample_elliptical(spec: &ScatterSpec, n: usize, seed: u64) -> Result<DenseMatrix> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    let mut rng = seeded(seed);
    let (p, q) = spec.factor.shape();
    let mut out = vec![0.0; n * p];
    let mut z = vec![0.0; q];
    for t in 0..n {
        z.iter_mut().for_each(|x| *x = StandardNormal.sample(&mut rng));
        let s = spec.radial.mixing_scale(&mut rng);
        for i in 0..p {
            let mut acc = 0.0;
            for (j, zj) in z.iter().enumerate() {
                acc += spec.factor.get(i, j) * zj;
            }
            out[i * n + t] = spec.location[i] + s * acc;
        }
    }
    DenseMatrix::from_col_major(n, p, out)
}

/// Elliptical factor model `X_t = L f_t + u_t` with `(f_t, u_t)` jointly
/// elliptical with identity scatter.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModelSpec {
    loading: DenseMatrix,
    radial: RadialLaw,
    alpha: f64,
}

impl FactorModelSpec {
    /// `loading` is `p x K`; `alpha` is the pervasiveness exponent in `(0, 1]`.
    pub fn new(loading: DenseMatrix, radial: RadialLaw, alpha: f64) -> Result<Self> {
        let (p, k) = loading.shape();
        if k == 0 || k > p {
            return Err(Error::Dimension(format!("loading must be p x K with 1 <= K <= p, got {p}x{k}")));
        }
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1], got {alpha}")));
        }
        Ok(Self { loading, radial, alpha })
    }

    pub fn p(&self) -> usize {
        self.loading.rows()
    }

    pub fn k(&self) -> usize {
        self.loading.cols()
    }

    pub fn loading(&self) -> &DenseMatrix {
        &self.loading
    }

    pub fn radial(&self) -> RadialLaw {
        self.radial
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

/// Observations together with the latent parts that generated them.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorSample {
    /// `n x p` observations.
    pub x: DenseMatrix,
    /// `n x K` latent factors.
    pub f: DenseMatrix,
    /// `n x p` idiosyncratic errors.
    pub u: DenseMatrix,
}

/// Draws `n` observations of the factor model. Each row's `(f_t, u_t)` is one
/// `(K + p)`-dimensional elliptical draw sharing a single radial variable.
pub fn sample_factor_model(spec: &FactorModelSpec, n: usize, seed: u64) -> Result<FactorSample> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    let (p, k) = spec.loading.shape();
    let mut rng = seeded(seed);
    let mut x = vec![0.0; n * p];
    let mut f = vec![0.0; n * k];
    let mut u = vec![0.0; n * p];
    let mut z = vec![0.0; k + p];
    for t in 0..n {
        z.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
        let s = spec.radial.mixing_scale(&mut rng);
        for j in 0..k {
            f[j * n + t] = s * z[j];
        }
        for i in 0..p {
            let ui = s * z[k + i];
            u[i * n + t] = ui;
            let mut acc = ui;
            for j in 0..k {
                acc += spec.loading.get(i, j) * f[j * n + t];
            }
            x[i * n + t] = acc;
        }
    }
    Ok(FactorSample {
        x: DenseMatrix::from_col_major(n, p, x)?,
        f: DenseMatrix::from_col_major(n, k, f)?,
        u: DenseMatrix::from_col_major(n, p, u)?,
    })
}

/// Factor model with autoregressive factors `f_t = φ f_{t-1} + ε_t`, where
/// each `(ε_t, u_t)` is a joint elliptical draw as in [`sample_factor_model`].
/// The recursion starts at zero and runs `burn_in` steps before the first
/// recorded row. `φ = 0` reproduces independent factors.
pub fn sample_persistent_factor_model(
    spec: &FactorModelSpec,
    n: usize,
    phi: f64,
    burn_in: usize,
    seed: u64,
) -> Result<FactorSample> {
    if !(phi.abs() < 1.0) {
        return Err(Error::InvalidParameter(format!("|phi| must be below 1, got {phi}")));
    }
    let innovations = sample_factor_model(spec, n + burn_in, seed)?;
    let (p, k) = spec.loading.shape();
    let total = n + burn_in;
    let mut state = vec![0.0; k];
    let mut f = vec![0.0; n * k];
    let mut x = vec![0.0; n * p];
    let mut u = vec![0.0; n * p];
    for t in 0..total {
        for (j, s) in state.iter_mut().enumerate() {
            *s = phi * *s + innovations.f.get(t, j);
        }
        if t < burn_in {
            continue;
        }
        let r = t - burn_in;
        for j in 0..k {
            f[j * n + r] = state[j];
        }
        for i in 0..p {
            let ui = innovations.u.get(t, i);
            u[i * n + r] = ui;
            let mut acc = ui;
            for j in 0..k {
                acc += spec.loading.get(i, j) * state[j];
            }
            x[i * n + r] = acc;
        }
    }
    Ok(FactorSample {
        x: DenseMatrix::from_col_major(n, p, x)?,
        f: DenseMatrix::from_col_major(n, k, f)?,
        u: DenseMatrix::from_col_major(n, p, u)?,
    })
}

/// `p x K` matrix of i.i.d. standard normal entries.
pub fn standard_gaussian_loading(p: usize, k: usize, seed: u64) -> Result<DenseMatrix> {
    let mut rng = seeded(seed);
    DenseMatrix::from_fn(p, k, |_, _| StandardNormal.sample(&mut rng))
}
