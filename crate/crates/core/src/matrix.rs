//! Dense real matrices, packed symmetric matrices, orthonormal bases and the
//! symmetric eigensolver the rest of the crate is built on.
//!
//! Storage is column-major throughout. Every constructor rejects NaN and
//! infinite entries, so downstream code can assume finite input.

use crate::error::{Error, Result};

/// Default absolute residual scale for [`sym_eig_topk`].
pub const DEFAULT_TOL: f64 = 1e-10;

/// Tolerance on `|VtV - I|_F` accepted by [`OrthonormalBasis`].
pub const ORTHONORMAL_TOL: f64 = 1e-10;

/// Relative asymmetry tolerated by [`SymMatrix::from_dense`].
pub const SYMMETRY_TOL: f64 = 1e-10;

/// A column-major `rows x cols` matrix of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

fn check_finite(rows: usize, data: &[f64]) -> Result<()> {
    match data.iter().position(|x| !x.is_finite()) {
        Some(idx) => Err(Error::NonFinite {
            row: idx % rows.max(1),
            col: idx / rows.max(1),
        }),
        None => Ok(()),
    }
}

impl DenseMatrix {
    /// Builds a matrix from column-major data.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} values supplied for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        check_finite(rows, &data)?;
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from row-major data.
    pub fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} values supplied for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                out[j * rows + i] = data[i * cols + j];
            }
        }
        Self::from_col_major(rows, cols, out)
    }

    /// Builds a matrix from a slice of equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut flat = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Dimension(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            flat.extend_from_slice(r);
        }
        Self::from_row_major(rows.len(), cols, &flat)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Self::from_col_major(rows, cols, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.rows + i]
    }

    /// Column-major backing slice.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_col_major(self) -> Vec<f64> {
        self.data
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.cols).map(|j| self.get(i, j)).collect()
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.data.len());
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.push(self.get(i, j));
            }
        }
        out
    }

    /// Rows `start..end` as a new matrix.
    pub fn row_block(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.rows {
            return Err(Error::Dimension(format!(
                "row block {start}..{end} out of range for {} rows",
                self.rows
            )));
        }
        let n = end - start;
        let mut data = Vec::with_capacity(n * self.cols);
        for j in 0..self.cols {
            data.extend_from_slice(&self.column(j)[start..end]);
        }
        Ok(Self {
            rows: n,
            cols: self.cols,
            data,
        })
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn vstack(blocks: &[&DenseMatrix]) -> Result<Self> {
        let cols = blocks.first().map_or(0, |b| b.cols);
        if blocks.iter().any(|b| b.cols != cols) {
            return Err(Error::Dimension("vstack blocks differ in column count".into()));
        }
        let rows: usize = blocks.iter().map(|b| b.rows).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for b in blocks {
                data.extend_from_slice(b.column(j));
            }
        }
        Ok(Self { rows, cols, data })
    }

    pub fn transpose(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for i in 0..self.rows {
            for j in 0..self.cols {
                data.push(self.get(i, j));
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    /// `self * other`.
    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        gemm_col_major(
            self.rows,
            self.cols,
            other.cols,
            (&self.data, 1, self.rows as isize),
            (&other.data, 1, other.rows as isize),
            &mut out.data,
        );
        Ok(out)
    }

    /// `selfᵀ * other`.
    pub fn t_matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != other.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply ({}x{})ᵀ by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = DenseMatrix::zeros(self.cols, other.cols);
        gemm_col_major(
            self.cols,
            self.rows,
            other.cols,
            (&self.data, self.rows as isize, 1),
            (&other.data, 1, other.rows as isize),
            &mut out.data,
        );
        Ok(out)
    }

    pub fn scaled(&self, c: f64) -> Result<DenseMatrix> {
        Self::from_col_major(self.rows, self.cols, self.data.iter().map(|x| x * c).collect())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc: f64, x| acc.max(x.abs()))
    }

    pub(crate) fn from_parts_unchecked(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }
}

/// `c = a * b` for column-major operands given as `(data, row_stride, col_stride)`.
fn gemm_col_major(
    m: usize,
    k: usize,
    n: usize,
    a: (&[f64], isize, isize),
    b: (&[f64], isize, isize),
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    // SAFETY: strides describe the extents checked by the callers and `c` is
    // an exclusively borrowed m x n column-major buffer.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.0.as_ptr(),
            a.1,
            a.2,
            b.0.as_ptr(),
            b.1,
            b.2,
            0.0,
            c.as_mut_ptr(),
            1,
            m as isize,
        );
    }
}

/// Adds `yᵀy` to the row-major `p x p` accumulator, where `y` is a row-major
/// `count x p` block.
pub(crate) fn accumulate_gram(y: &[f64], count: usize, p: usize, acc: &mut [f64]) {
    if count == 0 || p == 0 {
        return;
    }
    debug_assert!(y.len() >= count * p);
    debug_assert_eq!(acc.len(), p * p);
    // SAFETY: `y` holds `count * p` row-major values, `acc` is p x p.
    unsafe {
        matrixmultiply::dgemm(
            p,
            count,
            p,
            1.0,
            y.as_ptr(),
            1,
            p as isize,
            y.as_ptr(),
            p as isize,
            1,
            1.0,
            acc.as_mut_ptr(),
            p as isize,
            1,
        );
    }
}

/// Frobenius distance between two equally shaped matrices.
pub fn frob_dist(a: &DenseMatrix, b: &DenseMatrix) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "frobenius distance between {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// A real symmetric matrix stored as its packed upper triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

#[inline]
fn packed_index(i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    j * (j + 1) / 2 + i
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * (dim + 1) / 2],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::diagonal(&vec![1.0; dim]).expect("ones are finite")
    }

    pub fn diagonal(values: &[f64]) -> Result<Self> {
        check_finite(values.len(), values)?;
        let mut m = Self::zeros(values.len());
        for (i, v) in values.iter().enumerate() {
            m.data[packed_index(i, i)] = *v;
        }
        Ok(m)
    }

    /// Builds from `f(i, j)` evaluated on the upper triangle `i <= j`.
    pub fn from_upper_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(dim * (dim + 1) / 2);
        for j in 0..dim {
            for i in 0..=j {
                data.push(f(i, j));
            }
        }
        check_finite(data.len(), &data)?;
        Ok(Self { dim, data })
    }

    /// Builds from a full square matrix, rejecting relative asymmetry above
    /// [`SYMMETRY_TOL`]. The stored value is the average of the two triangles.
    pub fn from_dense(m: &DenseMatrix) -> Result<Self> {
        if m.rows != m.cols {
            return Err(Error::Dimension(format!(
                "symmetric matrix must be square, got {}x{}",
                m.rows, m.cols
            )));
        }
        let n = m.rows;
        let mut asym = 0.0;
        for j in 0..n {
            for i in 0..j {
                let d = m.get(i, j) - m.get(j, i);
                asym += 2.0 * d * d;
            }
        }
        let norm = m.frobenius_norm();
        let rel = if norm > 0.0 { asym.sqrt() / norm } else { 0.0 };
        if rel > SYMMETRY_TOL {
            return Err(Error::Asymmetric(rel));
        }
        Self::from_upper_fn(n, |i, j| 0.5 * (m.get(i, j) + m.get(j, i)))
    }

    /// Builds from a row-major full accumulator, reading only the upper triangle.
    pub(crate) fn from_row_major_upper(dim: usize, full: &[f64], scale: f64) -> Result<Self> {
        Self::from_upper_fn(dim, |i, j| full[i * dim + j] * scale)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[packed_index(i, j)]
    }

    /// Packed upper triangle, column by column.
    pub fn packed(&self) -> &[f64] {
        &self.data
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let n = self.dim;
        let mut data = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                data.push(self.get(i, j));
            }
        }
        DenseMatrix::from_parts_unchecked(n, n, data)
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        let mut s = 0.0;
        for j in 0..self.dim {
            for i in 0..=j {
                let v = self.get(i, j);
                s += if i == j { v * v } else { 2.0 * v * v };
            }
        }
        s.sqrt()
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        let data: Vec<f64> = self.data.iter().map(|x| x * c).collect();
        check_finite(data.len(), &data)?;
        Ok(Self { dim: self.dim, data })
    }

    pub fn sub(&self, other: &SymMatrix) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::Dimension(format!(
                "cannot subtract {0}x{0} and {1}x{1}",
                self.dim, other.dim
            )));
        }
        Ok(Self {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    /// `M v` for a vector of length `dim`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let mut out = vec![0.0; n];
        for j in 0..n {
            for i in 0..=j {
                let a = self.get(i, j);
                out[i] += a * v[j];
                if i != j {
                    out[j] += a * v[i];
                }
            }
        }
        out
    }
}

/// A `p x k` matrix with orthonormal columns, representing a point of the
/// Grassmann manifold `Gr(k, p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthonormalBasis {
    columns: DenseMatrix,
}

impl OrthonormalBasis {
    /// Wraps `columns` after checking `|VᵀV - I|_F <= 1e-10`.
    pub fn new(columns: DenseMatrix) -> Result<Self> {
        if columns.cols > columns.rows {
            return Err(Error::Dimension(format!(
                "rank {} exceeds ambient dimension {}",
                columns.cols, columns.rows
            )));
        }
        let defect = orthonormality_defect(&columns);
        if defect > ORTHONORMAL_TOL {
            return Err(Error::NotOrthonormal(defect));
        }
        Ok(Self { columns })
    }

    /// Orthonormalizes the columns of `m` (Gram-Schmidt with one
    /// re-orthogonalization pass). Fails when the columns are numerically
    /// dependent.
    pub fn orthonormalize(m: &DenseMatrix) -> Result<Self> {
        let (p, k) = m.shape();
        if k > p {
            return Err(Error::Dimension(format!("rank {k} exceeds ambient dimension {p}")));
        }
        let mut q: Vec<Vec<f64>> = Vec::with_capacity(k);
        for j in 0..k {
            let mut v = m.column(j).to_vec();
            let original = norm2(&v);
            for _ in 0..2 {
                for u in &q {
                    let d = dot(u, &v);
                    v.iter_mut().zip(u).for_each(|(x, y)| *x -= d * y);
                }
            }
            let nv = norm2(&v);
            if nv == 0.0 || nv <= 1e-12 * original {
                return Err(Error::InvalidParameter(format!(
                    "column {j} is linearly dependent on the preceding columns"
                )));
            }
            v.iter_mut().for_each(|x| *x /= nv);
            q.push(v);
        }
        let data = q.into_iter().flatten().collect();
        Self::new(DenseMatrix::from_col_major(p, k, data)?)
    }

    /// Standard basis vectors `e_i` for the given indices.
    pub fn coordinate(p: usize, indices: &[usize]) -> Result<Self> {
        if let Some(&i) = indices.iter().find(|&&i| i >= p) {
            return Err(Error::Dimension(format!("coordinate {i} out of range for dimension {p}")));
        }
        Self::new(DenseMatrix::from_fn(p, indices.len(), |i, j| {
            if indices[j] == i {
                1.0
            } else {
                0.0
            }
        })?)
    }

    pub fn ambient_dim(&self) -> usize {
        self.columns.rows
    }

    pub fn rank(&self) -> usize {
        self.columns.cols
    }

    pub fn columns(&self) -> &DenseMatrix {
        &self.columns
    }

    pub fn into_columns(self) -> DenseMatrix {
        self.columns
    }

    pub fn defect(&self) -> f64 {
        orthonormality_defect(&self.columns)
    }

    /// Right-multiplies by a `k x k` matrix, which must itself be orthogonal
    /// for the result to pass the orthonormality check.
    pub fn rotated(&self, q: &DenseMatrix) -> Result<Self> {
        Self::new(self.columns.matmul(q)?)
    }
}

/// `|VᵀV - I|_F`.
pub fn orthonormality_defect(v: &DenseMatrix) -> f64 {
    let k = v.cols;
    let mut s = 0.0;
    for a in 0..k {
        for b in 0..k {
            let g = dot(v.column(a), v.column(b)) - if a == b { 1.0 } else { 0.0 };
            s += g * g;
        }
    }
    s.sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Leading eigenpairs of a symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenResult {
    /// Eigenvalues in non-increasing order.
    pub values: Vec<f64>,
    pub basis: OrthonormalBasis,
}

/// Full eigendecomposition by cyclic Jacobi rotations.
///
/// Returns all eigenvalues in non-increasing order and the matching
/// eigenvectors as the columns of an orthogonal matrix.
pub fn sym_eig_full(m: &SymMatrix) -> Result<(Vec<f64>, DenseMatrix)> {
    let n = m.dim();
    let mut a = m.to_dense().into_col_major();
    let mut v = DenseMatrix::identity(n).into_col_major();
    let norm = m.frobenius_norm();
    let max_sweeps = 100 * n.max(1);
    let mut converged = false;

    for sweep in 0..max_sweeps {
        let mut off = 0.0;
        for q in 0..n {
            for p in 0..q {
                off += a[q * n + p] * a[q * n + p];
            }
        }
        if off == 0.0 || off.sqrt() <= 1e-17 * norm {
            converged = true;
            break;
        }
        for q in 1..n {
            for p in 0..q {
                let apq = a[q * n + p];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let g = 100.0 * apq.abs();
                if sweep > 3 && app.abs() + g == app.abs() && aqq.abs() + g == aqq.abs() {
                    a[q * n + p] = 0.0;
                    a[p * n + q] = 0.0;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut a, &mut v, n, p, q, c, s);
            }
        }
    }
    if !converged {
        let residual = (0..n)
            .flat_map(|q| (0..q).map(move |p| (p, q)))
            .map(|(p, q)| a[q * n + p] * a[q * n + p])
            .sum::<f64>()
            .sqrt();
        return Err(Error::Convergence { residual });
    }

    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps tie order deterministic.
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vecs = Vec::with_capacity(n * n);
    for &i in &order {
        vecs.extend_from_slice(&v[i * n..(i + 1) * n]);
    }
    Ok((values, DenseMatrix::from_parts_unchecked(n, n, vecs)))
}

/// Applies the Jacobi rotation in the `(p, q)` plane: `A <- JᵀAJ`, `V <- VJ`.
fn rotate(a: &mut [f64], v: &mut [f64], n: usize, p: usize, q: usize, c: f64, s: f64) {
    for k in 0..n {
        let akp = a[p * n + k];
        let akq = a[q * n + k];
        a[p * n + k] = c * akp - s * akq;
        a[q * n + k] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[k * n + p];
        let aqk = a[k * n + q];
        a[k * n + p] = c * apk - s * aqk;
        a[k * n + q] = s * apk + c * aqk;
    }
    a[q * n + p] = 0.0;
    a[p * n + q] = 0.0;
    for k in 0..n {
        let vkp = v[p * n + k];
        let vkq = v[q * n + k];
        v[p * n + k] = c * vkp - s * vkq;
        v[q * n + k] = s * vkp + c * vkq;
    }
}

/// The `k` algebraically largest eigenvalues of `m` and an orthonormal basis
/// of the corresponding invariant subspace.
///
/// Every returned pair satisfies `|Mv - λv|_2 <= tol * |M|_F`; otherwise a
/// [`Error::Convergence`] carrying the worst residual is returned. Within a
/// cluster of equal eigenvalues the basis is arbitrary; only its span is
/// meaningful.
pub fn sym_eig_topk(m: &SymMatrix, k: usize, tol: f64) -> Result<EigenResult> {
    let n = m.dim();
    if k == 0 || k > n {
        return Err(Error::Dimension(format!(
            "requested {k} eigenpairs of a {n}x{n} matrix"
        )));
    }
    let (values, vectors) = sym_eig_full(m)?;
    let norm = m.frobenius_norm();
    let mut worst: f64 = 0.0;
    for (j, &lambda) in values.iter().enumerate().take(k) {
        let col = vectors.column(j);
        let mv = m.mul_vec(col);
        let r = mv
            .iter()
            .zip(col)
            .map(|(a, b)| (a - lambda * b).powi(2))
            .sum::<f64>()
            .sqrt();
        worst = worst.max(r);
    }
    if worst > tol * norm {
        return Err(Error::Convergence { residual: worst });
    }
    let basis = DenseMatrix::from_parts_unchecked(n, k, vectors.as_slice()[..n * k].to_vec());
    Ok(EigenResult {
        values: values[..k].to_vec(),
        basis: OrthonormalBasis::new(basis)?,
    })
}

/// Largest absolute eigenvalue.
pub fn spectral_norm(m: &SymMatrix) -> Result<f64> {
    if m.dim() == 0 {
        return Ok(0.0);
    }
    let (values, _) = sym_eig_full(m)?;
    Ok(values.iter().fold(0.0, |acc: f64, v| acc.max(v.abs())))
}

/// Thin singular value decomposition `A = U diag(s) Vᵀ` by one-sided
/// (Hestenes) Jacobi. Singular values are returned in non-increasing order;
/// columns of `U` belonging to zero singular values are zero.
pub fn thin_svd(a: &DenseMatrix) -> Result<(DenseMatrix, Vec<f64>, DenseMatrix)> {
    let (rows, cols) = a.shape();
    let mut u = a.as_slice().to_vec();
    let mut v = DenseMatrix::identity(cols).into_col_major();
    let max_sweeps = 100 * cols.max(1);
    // Column pairs count as orthogonal below this cosine; a threshold at bare
    // machine epsilon can cycle on rounding noise.
    let tol = f64::EPSILON * (rows.max(1) as f64);
    let mut converged = cols < 2;
    for _ in 0..max_sweeps {
        if converged {
            break;
        }
        let mut rotated = false;
        for i in 0..cols {
            for j in (i + 1)..cols {
                let (ci, cj) = (i * rows, j * rows);
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for r in 0..rows {
                    alpha += u[ci + r] * u[ci + r];
                    beta += u[cj + r] * u[cj + r];
                    gamma += u[ci + r] * u[cj + r];
                }
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta.abs() > 1e150 {
                    0.5 / zeta
                } else {
                    zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for r in 0..rows {
                    let x = u[ci + r];
                    let y = u[cj + r];
                    u[ci + r] = c * x - s * y;
                    u[cj + r] = s * x + c * y;
                }
                for r in 0..cols {
                    let x = v[i * cols + r];
                    let y = v[j * cols + r];
                    v[i * cols + r] = c * x - s * y;
                    v[j * cols + r] = s * x + c * y;
                }
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(Error::Convergence { residual: f64::NAN });
    }
    let sigma: Vec<f64> = (0..cols).map(|j| norm2(&u[j * rows..(j + 1) * rows])).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]));
    let mut uu = Vec::with_capacity(rows * cols);
    let mut vv = Vec::with_capacity(cols * cols);
    let mut ss = Vec::with_capacity(cols);
    for &j in &order {
        let s = sigma[j];
        ss.push(s);
        uu.extend(u[j * rows..(j + 1) * rows].iter().map(|x| if s > 0.0 { x / s } else { 0.0 }));
        vv.extend_from_slice(&v[j * cols..(j + 1) * cols]);
    }
    Ok((
        DenseMatrix::from_parts_unchecked(rows, cols, uu),
        ss,
        DenseMatrix::from_parts_unchecked(cols, cols, vv),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_matrix, random_orthonormal, random_symmetric};
    use proptest::prelude::*;

    fn spans_equal(a: &OrthonormalBasis, b: &OrthonormalBasis) -> f64 {
        // |AᵀB|_F^2 equals k when the spans coincide.
        let g = a.columns().t_matmul(b.columns()).unwrap();
        (a.rank() as f64 - g.frobenius_norm().powi(2)).abs()
    }

    #[test]
    fn diagonal_top_two() {
        let m = SymMatrix::diagonal(&[3.0, 2.0, 1.0]).unwrap();
        let r = sym_eig_topk(&m, 2, DEFAULT_TOL).unwrap();
        assert_eq!(r.values, vec![3.0, 2.0]);
        let e = OrthonormalBasis::coordinate(3, &[0, 1]).unwrap();
        assert!(spans_equal(&r.basis, &e) < 1e-14);
    }

    #[test]
    fn identity_degenerate() {
        let m = SymMatrix::identity(5);
        let r = sym_eig_topk(&m, 1, DEFAULT_TOL).unwrap();
        assert_eq!(r.values, vec![1.0]);
        assert!((norm2(r.basis.columns().column(0)) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn two_by_two_analytic() {
        let m = SymMatrix::from_upper_fn(2, |i, j| if i == j { 2.0 } else { 1.0 }).unwrap();
        let r = sym_eig_topk(&m, 1, DEFAULT_TOL).unwrap();
        assert!((r.values[0] - 3.0).abs() < 1e-14);
        let v = r.basis.columns().column(0);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((v[0].abs() - s).abs() < 1e-14 && (v[1].abs() - s).abs() < 1e-14);
        assert!(v[0] * v[1] > 0.0);
    }

    #[test]
    fn k_out_of_range() {
        let m = SymMatrix::identity(3);
        assert!(matches!(sym_eig_topk(&m, 4, DEFAULT_TOL), Err(Error::Dimension(_))));
        assert!(matches!(sym_eig_topk(&m, 0, DEFAULT_TOL), Err(Error::Dimension(_))));
    }

    #[test]
    fn zero_matrix() {
        let r = sym_eig_topk(&SymMatrix::zeros(4), 2, DEFAULT_TOL).unwrap();
        assert_eq!(r.values, vec![0.0, 0.0]);
    }

    #[test]
    fn frob_dist_examples() {
        let m = random_matrix(3, 3, 1);
        assert_eq!(frob_dist(&m, &m).unwrap(), 0.0);
        let d = frob_dist(&DenseMatrix::zeros(2, 2), &DenseMatrix::identity(2)).unwrap();
        assert!((d - 2f64.sqrt()).abs() < 1e-15);

        let a = random_matrix(3, 3, 2);
        let b = random_matrix(3, 3, 3);
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                s += (a.get(i, j) - b.get(i, j)).powi(2);
            }
        }
        assert!((frob_dist(&a, &b).unwrap() - s.sqrt()).abs() < 1e-14);
        assert!(frob_dist(&a, &DenseMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn spectral_norm_examples() {
        let m = SymMatrix::diagonal(&[5.0, -7.0]).unwrap();
        assert_eq!(spectral_norm(&m).unwrap(), 7.0);
        assert_eq!(spectral_norm(&SymMatrix::identity(6)).unwrap(), 1.0);
    }

    #[test]
    fn spectral_norm_matches_power_iteration() {
        // Independent route: power iteration on M².
        let m = random_symmetric(4, 11);
        let mut x = vec![1.0, 0.3, -0.2, 0.7];
        for _ in 0..5000 {
            let y = m.mul_vec(&m.mul_vec(&x));
            let n = norm2(&y);
            x = y.into_iter().map(|v| v / n).collect();
        }
        let mx = m.mul_vec(&x);
        let oracle = norm2(&mx);
        assert!((spectral_norm(&m).unwrap() - oracle).abs() < 1e-9);
    }

    #[test]
    fn constructors_reject_bad_input() {
        assert!(matches!(
            DenseMatrix::from_col_major(2, 2, vec![1.0, f64::NAN, 0.0, 1.0]),
            Err(Error::NonFinite { row: 1, col: 0 })
        ));
        assert!(DenseMatrix::from_col_major(2, 2, vec![1.0]).is_err());
        let asym = DenseMatrix::from_rows(&[[1.0, 2.0], [0.0, 1.0]]).unwrap();
        assert!(matches!(SymMatrix::from_dense(&asym), Err(Error::Asymmetric(_))));
        let not_orth = DenseMatrix::from_rows(&[[1.0, 1.0], [0.0, 1.0]]).unwrap();
        assert!(matches!(OrthonormalBasis::new(not_orth), Err(Error::NotOrthonormal(_))));
    }

    #[test]
    fn packed_layout_round_trip() {
        let s = random_symmetric(5, 4);
        let back = SymMatrix::from_dense(&s.to_dense()).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn svd_reconstructs() {
        let a = random_matrix(7, 3, 5);
        let (u, s, v) = thin_svd(&a).unwrap();
        assert!(s.windows(2).all(|w| w[0] >= w[1]));
        let us = DenseMatrix::from_fn(7, 3, |i, j| u.get(i, j) * s[j]).unwrap();
        let rec = us.matmul(&v.transpose()).unwrap();
        assert!(frob_dist(&rec, &a).unwrap() < 1e-12);
        assert!(orthonormality_defect(&u) < 1e-12);
    }

    #[test]
    fn svd_converges_on_heavy_tailed_columns() {
        for seed in 0..300 {
            let num = random_matrix(99, 3, seed);
            let den = random_matrix(99, 3, seed + 10_000);
            let a = DenseMatrix::from_fn(99, 3, |i, j| num.get(i, j) / den.get(i, j).abs().max(1e-3)).unwrap();
            let (u, s, v) = thin_svd(&a).unwrap();
            let us = DenseMatrix::from_fn(99, 3, |i, j| u.get(i, j) * s[j]).unwrap();
            let rec = us.matmul(&v.transpose()).unwrap();
            assert!(frob_dist(&rec, &a).unwrap() <= 1e-12 * a.frobenius_norm());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn residuals_and_orthonormality(p in 2usize..12, seed in any::<u64>()) {
            let m = random_symmetric(p, seed);
            let k = 1 + (seed as usize) % p;
            let r = sym_eig_topk(&m, k, DEFAULT_TOL).unwrap();
            prop_assert!(r.basis.defect() <= 1e-10);
            prop_assert!(r.values.windows(2).all(|w| w[0] >= w[1]));
            let norm = m.frobenius_norm();
            for j in 0..k {
                let v = r.basis.columns().column(j);
                let mv = m.mul_vec(v);
                let res: f64 = mv.iter().zip(v).map(|(a, b)| (a - r.values[j] * b).powi(2)).sum::<f64>().sqrt();
                prop_assert!(res <= DEFAULT_TOL * norm);
            }
        }

        #[test]
        fn rayleigh_trace_is_maximal(p in 3usize..10, seed in any::<u64>()) {
            let m = random_symmetric(p, seed);
            let k = 1 + (seed as usize) % (p - 1);
            let r = sym_eig_topk(&m, k, DEFAULT_TOL).unwrap();
            let trace = |v: &OrthonormalBasis| {
                (0..k).map(|j| dot(v.columns().column(j), &m.mul_vec(v.columns().column(j)))).sum::<f64>()
            };
            let best = trace(&r.basis);
            for t in 0..20u64 {
                let w = random_orthonormal(p, k, seed.wrapping_add(t + 1));
                prop_assert!(best >= trace(&w) - 10.0 * DEFAULT_TOL);
            }
        }

        #[test]
        fn psd_values_non_negative(p in 2usize..10, seed in any::<u64>()) {
            let a = random_matrix(p, p, seed);
            let g = SymMatrix::from_dense(&a.t_matmul(&a).unwrap()).unwrap();
            let r = sym_eig_topk(&g, p, DEFAULT_TOL).unwrap();
            prop_assert!(r.values.iter().all(|&v| v >= -DEFAULT_TOL));
        }
    }
}
