//! Dense linear-algebra kernels.
//!
//! Everything here is deterministic: the SVD is a one-sided (Hestenes) Jacobi
//! iteration preceded by a Householder QR for tall inputs, the symmetric
//! eigensolver is cyclic Jacobi, and the least-squares solver runs MINRES on
//! the normal equations. Singular and eigen vectors follow one sign
//! convention: the first non-negligible entry of every left vector is
//! non-negative.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Sweep cap for the Jacobi iterations.
const MAX_SWEEPS: usize = 80;

/// Row-major dense matrix of finite `f64` entries.
#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            let row = self.row(i);
            let shown: Vec<String> = row.iter().take(8).map(|x| format!("{x:.6e}")).collect();
            writeln!(f, "  {}{}", shown.join(", "), if self.cols > 8 { ", ..." } else { "" })?;
        }
        if self.rows > 8 {
            writeln!(f, "  ...")?;
        }
        write!(f, "]")
    }
}

impl DenseMatrix {
    /// Builds a matrix from row-major data, rejecting wrong lengths and non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Capacity(format!("{rows}x{cols} overflows")))?;
        if data.len() != len {
            return Err(Error::Contract(format!("data length {} != {rows}x{cols}", data.len())));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Contract(format!(
                "non-finite entry at ({}, {})",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
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
            m[(i, i)] = 1.0;
        }
        m
    }

    /// `rows x cols` matrix with `values` on the leading diagonal.
    pub fn from_diag(rows: usize, cols: usize, values: &[f64]) -> Self {
        let mut m = Self::zeros(rows, cols);
        for (i, &v) in values.iter().enumerate().take(rows.min(cols)) {
            m[(i, i)] = v;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns(rows: usize, columns: &[Vec<f64>]) -> Result<Self> {
        let cols = columns.len();
        let mut m = Self::zeros(rows, cols);
        for (j, c) in columns.iter().enumerate() {
            if c.len() != rows {
                return Err(Error::Contract(format!("column {j} has length {} != {rows}", c.len())));
            }
            for (i, &v) in c.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        if !m.is_finite() {
            return Err(Error::Contract("non-finite column entry".into()));
        }
        Ok(m)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.data[i * self.cols + j]).collect()
    }

    pub fn set_column(&mut self, j: usize, values: &[f64]) {
        debug_assert_eq!(values.len(), self.rows);
        for (i, &v) in values.iter().enumerate() {
            self.data[i * self.cols + j] = v;
        }
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// Columns `start..end` as a new matrix.
    pub fn columns(&self, start: usize, end: usize) -> Self {
        assert!(start <= end && end <= self.cols);
        Self::from_fn(self.rows, end - start, |i, j| self[(i, start + j)])
    }

    /// Rows `start..end` as a new matrix.
    pub fn rows_range(&self, start: usize, end: usize) -> Self {
        assert!(start <= end && end <= self.rows);
        Self {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// `[self | other]`.
    pub fn hstack(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::Contract(format!(
                "hstack row mismatch {} vs {}",
                self.rows, other.rows
            )));
        }
        let cols = self.cols + other.cols;
        Ok(Self::from_fn(self.rows, cols, |i, j| {
            if j < self.cols {
                self[(i, j)]
            } else {
                other[(i, j - self.cols)]
            }
        }))
    }

    /// `[self; other]`.
    pub fn vstack(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return Err(Error::Contract(format!(
                "vstack column mismatch {} vs {}",
                self.cols, other.cols
            )));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Self {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, alpha: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| alpha * x).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    /// `self += alpha * other`.
    pub fn add_scaled_assign(&mut self, alpha: f64, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(shape_error("add", self, other));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(shape_error("elementwise", self, other));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect(),
        })
    }

    /// `self * v`.
    pub fn mat_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::Contract(format!(
                "mat_vec: vector length {} != cols {}",
                v.len(),
                self.cols
            )));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    /// `selfᵀ * v`.
    pub fn t_mat_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(Error::Contract(format!(
                "t_mat_vec: vector length {} != rows {}",
                v.len(),
                self.rows
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            axpy(vi, self.row(i), &mut out);
        }
        Ok(out)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }
}

fn shape_error(op: &str, a: &DenseMatrix, b: &DenseMatrix) -> Error {
    Error::Contract(format!("{op}: shape {}x{} vs {}x{}", a.rows, a.cols, b.rows, b.cols))
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn norm2(v: &[f64]) -> f64 {
    // scaled accumulation keeps huge lifted vectors from overflowing
    let scale = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    let s: f64 = v.iter().map(|x| (x / scale) * (x / scale)).sum();
    scale * s.sqrt()
}

/// `a * b`.
pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.rows {
        return Err(Error::Contract(format!(
            "matmul: {}x{} times {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = DenseMatrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (k, &aik) in a.row(i).iter().enumerate() {
            if aik != 0.0 {
                axpy(aik, b.row(k), orow);
            }
        }
    }
    Ok(out)
}

/// `aᵀ * b` without materialising the transpose.
pub fn t_matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.rows != b.rows {
        return Err(Error::Contract(format!(
            "t_matmul: ({}x{})ᵀ times {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = DenseMatrix::zeros(a.cols, b.cols);
    for k in 0..a.rows {
        let brow = b.row(k);
        for (i, &aki) in a.row(k).iter().enumerate() {
            if aki != 0.0 {
                axpy(aki, brow, &mut out.data[i * b.cols..(i + 1) * b.cols]);
            }
        }
    }
    Ok(out)
}

pub fn frobenius_norm(m: &DenseMatrix) -> f64 {
    norm2(&m.data)
}

/// Largest singular value.
pub fn spectral_norm(m: &DenseMatrix) -> Result<f64> {
    if m.rows == 0 || m.cols == 0 {
        return Ok(0.0);
    }
    Ok(svd(m)?.sigma[0])
}

/// Thin SVD `m = u · diag(sigma) · vt` with `p = min(rows, cols)` components.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: DenseMatrix,
    pub sigma: Vec<f64>,
    pub vt: DenseMatrix,
}

impl SvdResult {
    /// `u · diag(sigma) · vt`, optionally truncated to the leading `k` terms.
    pub fn reconstruct(&self, k: Option<usize>) -> DenseMatrix {
        let k = k.unwrap_or(self.sigma.len()).min(self.sigma.len());
        let mut out = DenseMatrix::zeros(self.u.rows, self.vt.cols);
        for t in 0..k {
            let s = self.sigma[t];
            if s == 0.0 {
                continue;
            }
            let vrow = self.vt.row(t);
            for i in 0..self.u.rows {
                let c = s * self.u[(i, t)];
                if c != 0.0 {
                    axpy(c, vrow, out.row_mut(i));
                }
            }
        }
        out
    }

    /// Count of singular values above `rel_tol · sigma_1`.
    pub fn numerical_rank(&self, rel_tol: f64) -> usize {
        match self.sigma.first() {
            Some(&s1) if s1 > 0.0 => self.sigma.iter().filter(|&&s| s > rel_tol * s1).count(),
            _ => 0,
        }
    }
}

/// Column-major scratch buffer used by the Jacobi sweeps.
struct ColMajor {
    rows: usize,
    data: Vec<f64>,
}

impl ColMajor {
    fn from_dense(m: &DenseMatrix) -> Self {
        let mut data = vec![0.0; m.rows * m.cols];
        for i in 0..m.rows {
            for j in 0..m.cols {
                data[j * m.rows + i] = m[(i, j)];
            }
        }
        Self { rows: m.rows, data }
    }

    fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self { rows: n, data }
    }

    #[inline]
    fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    #[inline]
    fn two_cols_mut(&mut self, p: usize, q: usize) -> (&mut [f64], &mut [f64]) {
        debug_assert!(p < q);
        let (lo, hi) = self.data.split_at_mut(q * self.rows);
        (&mut lo[p * self.rows..(p + 1) * self.rows], &mut hi[..self.rows])
    }

    fn rotate(&mut self, p: usize, q: usize, c: f64, s: f64) {
        let (cp, cq) = self.two_cols_mut(p, q);
        for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
            let (a, b) = (*x, *y);
            *x = c * a - s * b;
            *y = s * a + c * b;
        }
    }
}

/// Householder QR of a tall matrix (`rows >= cols`); returns thin `Q` and square `R`.
pub fn householder_qr(a: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix)> {
    let (m, n) = a.shape();
    if m < n {
        return Err(Error::Contract(format!(
            "householder_qr needs rows >= cols, got {m}x{n}"
        )));
    }
    let mut w = ColMajor::from_dense(a);
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(n);
    for j in 0..n {
        let x = &w.col(j)[j..];
        let alpha = norm2(x);
        let mut v = x.to_vec();
        if alpha == 0.0 {
            reflectors.push(Vec::new());
            continue;
        }
        let sign = if v[0] >= 0.0 { 1.0 } else { -1.0 };
        v[0] += sign * alpha;
        let vnorm = norm2(&v);
        for vi in v.iter_mut() {
            *vi /= vnorm;
        }
        for jj in j..n {
            let col = &mut w.data[jj * m + j..(jj + 1) * m];
            let proj = 2.0 * dot(&v, col);
            axpy(-proj, &v, col);
        }
        reflectors.push(v);
    }
    let r = DenseMatrix::from_fn(n, n, |i, j| if i <= j { w.data[j * m + i] } else { 0.0 });
    // Q = H_0 H_1 ... H_{n-1} applied to the first n columns of I
    let mut q = ColMajor {
        rows: m,
        data: vec![0.0; m * n],
    };
    for j in 0..n {
        q.data[j * m + j] = 1.0;
    }
    for (j, v) in reflectors.iter().enumerate().rev() {
        if v.is_empty() {
            continue;
        }
        for jj in 0..n {
            let col = &mut q.data[jj * m + j..(jj + 1) * m];
            let proj = 2.0 * dot(v, col);
            axpy(-proj, v, col);
        }
    }
    let qd = DenseMatrix::from_fn(m, n, |i, j| q.data[j * m + i]);
    Ok((qd, r))
}

/// One-sided Jacobi on a matrix with `rows >= cols`. Returns (U columns, sigma, V) unsorted.
fn hestenes(a: &DenseMatrix) -> Result<(ColMajor, Vec<f64>, ColMajor)> {
    let (m, n) = a.shape();
    let mut w = ColMajor::from_dense(a);
    let mut v = ColMajor::identity(n);
    let tol = f64::EPSILON * (m as f64).max(1.0);
    let mut converged = n < 2;
    for _sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let (cp, cq) = (w.col(p), w.col(q));
                    (dot(cp, cp), dot(cq, cq), dot(cp, cq))
                };
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                w.rotate(p, q, c, s);
                v.rotate(p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NumericFailure(format!(
            "one-sided Jacobi did not converge in {MAX_SWEEPS} sweeps ({m}x{n})"
        )));
    }
    let sigma: Vec<f64> = (0..n).map(|j| norm2(w.col(j))).collect();
    Ok((w, sigma, v))
}

/// Fills zero columns of an orthonormal set with Gram-Schmidt completions.
fn complete_orthonormal(cols: &mut [Vec<f64>], filled: &[bool]) {
    let m = cols.first().map_or(0, |c| c.len());
    let mut basis_idx = 0;
    for j in 0..cols.len() {
        if filled[j] {
            continue;
        }
        loop {
            assert!(basis_idx < m, "cannot complete orthonormal basis");
            let mut e = vec![0.0; m];
            e[basis_idx] = 1.0;
            basis_idx += 1;
            for _ in 0..2 {
                for (k, other) in cols.iter().enumerate() {
                    if k == j || (!filled[k] && k > j) {
                        continue;
                    }
                    let proj = dot(other, &e);
                    axpy(-proj, other, &mut e);
                }
            }
            let nrm = norm2(&e);
            if nrm > 1e-6 {
                for x in e.iter_mut() {
                    *x /= nrm;
                }
                cols[j] = e;
                break;
            }
        }
    }
}

/// Flips `vec` so its first entry above `tol · max|vec|` is non-negative; returns whether it flipped.
fn canonical_sign(vec: &mut [f64]) -> bool {
    let scale = vec.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let first = vec.iter().find(|x| x.abs() > 1e-12 * scale).copied();
    if matches!(first, Some(x) if x < 0.0) {
        for x in vec.iter_mut() {
            *x = -*x;
        }
        true
    } else {
        false
    }
}

fn svd_tall(a: &DenseMatrix) -> Result<SvdResult> {
    let (m, n) = a.shape();
    // QR first when clearly tall: Jacobi then runs on the small square factor.
    let (q, work) = if m > n + n / 2 {
        let (q, r) = householder_qr(a)?;
        (Some(q), r)
    } else {
        (None, a.clone())
    };
    let (w, sigma, v) = hestenes(&work)?;
    let wm = w.rows;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| sigma[y].partial_cmp(&sigma[x]).unwrap_or(std::cmp::Ordering::Equal));

    let mut ucols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut filled = Vec::with_capacity(n);
    let mut sig = Vec::with_capacity(n);
    let mut vcols: Vec<Vec<f64>> = Vec::with_capacity(n);
    for &j in &order {
        let s = sigma[j];
        let col = w.col(j);
        if s > f64::MIN_POSITIVE * 1e4 {
            ucols.push(col.iter().map(|x| x / s).collect());
            filled.push(true);
            sig.push(s);
        } else {
            ucols.push(vec![0.0; wm]);
            filled.push(false);
            sig.push(0.0);
        }
        vcols.push(v.col(j).to_vec());
    }
    complete_orthonormal(&mut ucols, &filled);

    let mut u = DenseMatrix::from_columns(wm, &ucols)?;
    if let Some(q) = q {
        u = matmul(&q, &u)?;
    }
    let mut vt = DenseMatrix::zeros(n, n);
    for (t, vc) in vcols.iter().enumerate() {
        vt.row_mut(t).copy_from_slice(vc);
    }
    for t in 0..n {
        let mut col = u.column(t);
        if canonical_sign(&mut col) {
            u.set_column(t, &col);
            for x in vt.row_mut(t) {
                *x = -*x;
            }
        }
    }
    Ok(SvdResult { u, sigma: sig, vt })
}

/// Thin singular value decomposition with descending singular values.
pub fn svd(m: &DenseMatrix) -> Result<SvdResult> {
    if !m.is_finite() {
        return Err(Error::Contract("svd input has non-finite entries".into()));
    }
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Ok(SvdResult {
            u: DenseMatrix::zeros(rows, 0),
            sigma: Vec::new(),
            vt: DenseMatrix::zeros(0, cols),
        });
    }
    if rows >= cols {
        return svd_tall(m);
    }
    // wide: decompose the transpose and swap the factors
    let t = svd_tall(&m.transpose())?;
    let mut u = t.vt.transpose();
    let mut vt = t.u.transpose();
    for k in 0..u.cols() {
        let mut col = u.column(k);
        if canonical_sign(&mut col) {
            u.set_column(k, &col);
            for x in vt.row_mut(k) {
                *x = -*x;
            }
        }
    }
    Ok(SvdResult { u, sigma: t.sigma, vt })
}

/// Smallest singular value over `min(rows, cols)` components.
pub fn smallest_singular_value(m: &DenseMatrix) -> Result<f64> {
    Ok(svd(m)?.sigma.last().copied().unwrap_or(0.0))
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEigen {
    /// Eigenvalues ordered by descending magnitude (stable on ties).
    pub values: Vec<f64>,
    /// Eigenvectors as columns, in the order of `values`.
    pub vectors: DenseMatrix,
}

/// Cyclic Jacobi eigensolver. The input is symmetrised as `(m + mᵀ)/2` first.
pub fn sym_eigen(m: &DenseMatrix) -> Result<SymEigen> {
    let n = m.rows();
    if m.cols() != n {
        return Err(Error::Contract(format!(
            "sym_eigen needs a square matrix, got {:?}",
            m.shape()
        )));
    }
    let mut s = DenseMatrix::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]));
    let mut v = DenseMatrix::identity(n);
    let total = frobenius_norm(&s);
    let mut converged = n < 2 || total == 0.0;
    for _sweep in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += s[(p, q)] * s[(p, q)];
            }
        }
        if off.sqrt() <= f64::EPSILON * total {
            converged = true;
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = s[(p, q)];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (s[(q, q)] - s[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let (skp, skq) = (s[(k, p)], s[(k, q)]);
                    s[(k, p)] = c * skp - sn * skq;
                    s[(k, q)] = sn * skp + c * skq;
                }
                for k in 0..n {
                    let (spk, sqk) = (s[(p, k)], s[(q, k)]);
                    s[(p, k)] = c * spk - sn * sqk;
                    s[(q, k)] = sn * spk + c * sqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - sn * vkq;
                    v[(k, q)] = sn * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        return Err(Error::NumericFailure(format!(
            "Jacobi eigensolver did not converge ({n}x{n})"
        )));
    }
    let raw: Vec<f64> = (0..n).map(|i| s[(i, i)]).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        raw[b]
            .abs()
            .partial_cmp(&raw[a].abs())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut vectors = DenseMatrix::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (t, &j) in order.iter().enumerate() {
        values.push(raw[j]);
        let mut col = v.column(j);
        canonical_sign(&mut col);
        vectors.set_column(t, &col);
    }
    Ok(SymEigen { values, vectors })
}

/// Orthonormal basis for the column span of a matrix.
#[derive(Debug, Clone)]
pub struct RangeBasis {
    /// `rows x rank` with orthonormal columns.
    pub basis: DenseMatrix,
    /// Numerical rank of the input.
    pub rank: usize,
    /// `true` when the input had fewer independent columns than it has columns.
    pub rank_deficient: bool,
}

/// Relative singular-value cutoff used for numerical rank.
pub const RANK_TOL: f64 = 1e-12;

/// Orthonormal basis of `range(y)`; rank-deficient inputs yield fewer columns.
pub fn orthonormal_range(y: &DenseMatrix) -> Result<RangeBasis> {
    let dec = svd(y)?;
    let rank = dec.numerical_rank(RANK_TOL);
    Ok(RangeBasis {
        basis: dec.u.columns(0, rank),
        rank,
        rank_deficient: rank < y.cols().min(y.rows()) || rank < y.cols(),
    })
}

/// Orthonormal basis of the dominant `k`-dimensional subspace of `range(y)`
/// (its leading left singular vectors), truncated further if `y` has lower rank.
pub fn dominant_range(y: &DenseMatrix, k: usize) -> Result<RangeBasis> {
    let dec = svd(y)?;
    let rank = dec.numerical_rank(RANK_TOL);
    let keep = rank.min(k);
    Ok(RangeBasis {
        basis: dec.u.columns(0, keep),
        rank: keep,
        rank_deficient: keep < k,
    })
}

/// Result of [`minres_solve`].
#[derive(Debug, Clone)]
pub struct MinresSolution {
    /// `B` minimising `‖B·coeff − rhs‖_F`.
    pub solution: DenseMatrix,
    /// Achieved `‖B·coeff − rhs‖_F`.
    pub residual: f64,
    pub rhs_norm: f64,
    /// `residual <= tol · ‖rhs‖_F`; otherwise the solution is the least-squares optimum.
    pub consistent: bool,
    /// Largest MINRES iteration count over the rows of `B`.
    pub iterations: usize,
}

/// Default relative tolerance for [`minres_solve`].
pub const MINRES_DEFAULT_TOL: f64 = 1e-10;

/// Plain MINRES for a symmetric operator. Returns (x, iterations, final residual estimate).
fn minres_sym(apply: impl Fn(&[f64], &mut [f64]), b: &[f64], rtol: f64, max_iter: usize) -> (Vec<f64>, usize, f64) {
    let n = b.len();
    let mut x = vec![0.0; n];
    let beta1 = norm2(b);
    if beta1 == 0.0 {
        return (x, 0, 0.0);
    }
    let mut r1 = b.to_vec();
    let mut r2 = b.to_vec();
    let mut y = b.to_vec();
    let mut oldb = 0.0;
    let mut beta = beta1;
    let mut dbar = 0.0;
    let mut epsln = 0.0;
    let mut phibar = beta1;
    let mut cs = -1.0;
    let mut sn = 0.0;
    let mut w = vec![0.0; n];
    let mut w2 = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut itn = 0;
    while itn < max_iter {
        itn += 1;
        let s = 1.0 / beta;
        for (vi, yi) in v.iter_mut().zip(&y) {
            *vi = s * yi;
        }
        apply(&v, &mut y);
        if itn >= 2 {
            axpy(-beta / oldb, &r1, &mut y);
        }
        let alfa = dot(&v, &y);
        axpy(-alfa / beta, &r2, &mut y);
        std::mem::swap(&mut r1, &mut r2);
        r2.copy_from_slice(&y);
        oldb = beta;
        beta = norm2(&r2);

        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = gbar.hypot(beta).max(f64::EPSILON * beta1);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;

        let w1 = std::mem::replace(&mut w2, std::mem::take(&mut w));
        w = (0..n)
            .map(|i| (v[i] - oldeps * w1[i] - delta * w2[i]) / gamma)
            .collect();
        axpy(phi, &w, &mut x);

        if phibar <= rtol * beta1 || beta <= f64::EPSILON * beta1 {
            break;
        }
    }
    (x, itn, phibar)
}

/// Solves `min_B ‖B·coeff − rhs‖_F` for `coeff: k×ℓ` (ℓ ≥ k) and `rhs: m×ℓ`,
/// returning `B: m×k`. Each row of `B` is found by MINRES on the normal
/// equations `(coeff·coeffᵀ) bᵀ = coeff·rhs_iᵀ`, capped at `10·k` iterations.
pub fn minres_solve(coeff: &DenseMatrix, rhs: &DenseMatrix, tol: f64) -> Result<MinresSolution> {
    let (k, l) = coeff.shape();
    if rhs.cols() != l {
        return Err(Error::Contract(format!(
            "minres_solve: coeff {k}x{l} but rhs {}x{}",
            rhs.rows(),
            rhs.cols()
        )));
    }
    if l < k {
        return Err(Error::Contract(format!("minres_solve: needs l >= k, got {k}x{l}")));
    }
    let rhs_norm = frobenius_norm(rhs);
    let m = rhs.rows();
    if k == 0 {
        return Ok(MinresSolution {
            solution: DenseMatrix::zeros(m, 0),
            residual: rhs_norm,
            rhs_norm,
            consistent: rhs_norm == 0.0,
            iterations: 0,
        });
    }

    // rank check on the (small) coefficient matrix
    let cs = svd(coeff)?;
    let rank = cs.numerical_rank(RANK_TOL);
    if rank < k {
        let residual = pinv_residual(&cs, rhs, rank)?;
        return Err(Error::IllPosed {
            rank,
            required: k,
            residual,
        });
    }

    let normal = matmul(coeff, &coeff.transpose())?;
    let cap = 10 * k;
    let mut solution = DenseMatrix::zeros(m, k);
    let mut iterations = 0;
    for i in 0..m {
        let b = coeff.mat_vec(rhs.row(i))?;
        let apply = |x: &[f64], out: &mut [f64]| {
            for (r, o) in out.iter_mut().enumerate() {
                *o = dot(normal.row(r), x);
            }
        };
        let (mut x, it, _) = minres_sym(apply, &b, 1e-15, cap);
        iterations = iterations.max(it);
        // one refinement pass on the normal-equation residual
        let nx = normal.mat_vec(&x)?;
        let res: Vec<f64> = b.iter().zip(&nx).map(|(bi, ai)| bi - ai).collect();
        if norm2(&res) > 0.0 {
            let (dx, it2, _) = minres_sym(apply, &res, 1e-15, cap);
            iterations = iterations.max(it + it2);
            for (xi, di) in x.iter_mut().zip(&dx) {
                *xi += di;
            }
        }
        solution.row_mut(i).copy_from_slice(&x);
    }
    if !solution.is_finite() {
        return Err(Error::NumericFailure("minres produced non-finite values".into()));
    }
    let fitted = matmul(&solution, coeff)?;
    let residual = frobenius_norm(&fitted.sub(rhs)?);
    Ok(MinresSolution {
        solution,
        residual,
        rhs_norm,
        consistent: residual <= tol * rhs_norm,
        iterations,
    })
}

/// Residual of the pseudo-inverse solution restricted to the leading `rank` components.
fn pinv_residual(cs: &SvdResult, rhs: &DenseMatrix, rank: usize) -> Result<f64> {
    // B = rhs · V_r Σ_r⁻¹ U_rᵀ for coeff = U Σ Vᵀ ;  B·coeff = rhs · V_r V_rᵀ
    let vr = cs.vt.rows_range(0, rank);
    let proj = matmul(&matmul(rhs, &vr.transpose())?, &vr)?;
    Ok(frobenius_norm(&proj.sub(rhs)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::gaussian_matrix;

    fn orth_error(q: &DenseMatrix) -> f64 {
        let g = t_matmul(q, q).unwrap();
        frobenius_norm(&g.sub(&DenseMatrix::identity(q.cols())).unwrap())
    }

    #[test]
    fn svd_of_identity_and_diagonal() {
        let s = svd(&DenseMatrix::identity(3)).unwrap();
        assert_eq!(s.sigma, vec![1.0, 1.0, 1.0]);
        let d = DenseMatrix::from_diag(3, 3, &[1.0, 3.0, 2.0]);
        let s = svd(&d).unwrap();
        assert_eq!(s.sigma, vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn svd_factors_are_orthonormal_and_reconstruct() {
        for (r, c, seed) in [(5, 3, 1), (3, 5, 2), (40, 7, 3), (12, 12, 4), (7, 30, 5)] {
            let a = gaussian_matrix(r, c, seed, 0);
            let s = svd(&a).unwrap();
            assert!(orth_error(&s.u) < 1e-10, "{r}x{c}");
            assert!(orth_error(&s.vt.transpose()) < 1e-10, "{r}x{c}");
            assert!(s.sigma.windows(2).all(|w| w[0] >= w[1]));
            let rec = s.reconstruct(None);
            let rel = frobenius_norm(&rec.sub(&a).unwrap()) / frobenius_norm(&a);
            assert!(rel < 1e-12, "{r}x{c} rel {rel}");
        }
    }

    #[test]
    fn svd_rank_deficient_completes_left_basis() {
        // rank one 4x3
        let a = DenseMatrix::from_fn(4, 3, |i, j| (i + 1) as f64 * (j + 1) as f64);
        let s = svd(&a).unwrap();
        assert!(s.sigma[1] < 1e-12 * s.sigma[0]);
        assert!(orth_error(&s.u) < 1e-10);
        assert_eq!(s.numerical_rank(RANK_TOL), 1);
        let zero = DenseMatrix::zeros(3, 2);
        let s = svd(&zero).unwrap();
        assert_eq!(s.sigma, vec![0.0, 0.0]);
        assert!(orth_error(&s.u) < 1e-12);
    }

    #[test]
    fn svd_sign_convention_and_determinism() {
        let a = gaussian_matrix(6, 4, 9, 0);
        let s1 = svd(&a).unwrap();
        let s2 = svd(&a).unwrap();
        assert_eq!(s1.u, s2.u);
        assert_eq!(s1.sigma, s2.sigma);
        for t in 0..s1.u.cols() {
            let col = s1.u.column(t);
            let first = col.iter().find(|x| x.abs() > 1e-12).unwrap();
            assert!(*first >= 0.0);
        }
    }

    #[test]
    fn svd_rejects_non_finite() {
        assert!(DenseMatrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn qr_reconstructs() {
        let a = gaussian_matrix(9, 4, 11, 0);
        let (q, r) = householder_qr(&a).unwrap();
        assert!(orth_error(&q) < 1e-12);
        let rel = frobenius_norm(&matmul(&q, &r).unwrap().sub(&a).unwrap()) / frobenius_norm(&a);
        assert!(rel < 1e-13);
        for i in 0..4 {
            for j in 0..i {
                assert_eq!(r[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn sym_eigen_recovers_spectrum() {
        let g = gaussian_matrix(6, 6, 3, 0);
        let s = DenseMatrix::from_fn(6, 6, |i, j| g[(i, j)] + g[(j, i)]);
        let e = sym_eigen(&s).unwrap();
        assert!(orth_error(&e.vectors) < 1e-12);
        let lam = DenseMatrix::from_diag(6, 6, &e.values);
        let rec = matmul(&matmul(&e.vectors, &lam).unwrap(), &e.vectors.transpose()).unwrap();
        assert!(frobenius_norm(&rec.sub(&s).unwrap()) < 1e-12 * frobenius_norm(&s));
        assert!(e.values.windows(2).all(|w| w[0].abs() >= w[1].abs()));
        // trace check
        let tr: f64 = (0..6).map(|i| s[(i, i)]).sum();
        assert!((e.values.iter().sum::<f64>() - tr).abs() < 1e-12 * frobenius_norm(&s));
    }

    #[test]
    fn range_of_unit_column_and_scaled_identity() {
        let e1 = DenseMatrix::from_fn(3, 1, |i, _| if i == 0 { 1.0 } else { 0.0 });
        let r = orthonormal_range(&e1).unwrap();
        assert_eq!(r.basis, e1);
        assert!(!r.rank_deficient);

        let y = DenseMatrix::identity(3).scale(2.0);
        let r = orthonormal_range(&y).unwrap();
        assert_eq!(r.rank, 3);
        // |Ψ| is a column permutation of I
        for j in 0..3 {
            let col = r.basis.column(j);
            let ones = col.iter().filter(|x| (x.abs() - 1.0).abs() < 1e-15).count();
            let zeros = col.iter().filter(|x| x.abs() < 1e-15).count();
            assert_eq!((ones, zeros), (1, 2));
        }
    }

    #[test]
    fn range_projection_residual() {
        let y = gaussian_matrix(6, 2, 5, 0);
        let r = orthonormal_range(&y).unwrap();
        assert!(orth_error(&r.basis) < 1e-10);
        let proj = matmul(&r.basis, &t_matmul(&r.basis, &y).unwrap()).unwrap();
        assert!(frobenius_norm(&proj.sub(&y).unwrap()) <= 1e-9 * frobenius_norm(&y));
    }

    #[test]
    fn range_truncates_rank_deficient_input() {
        let a = gaussian_matrix(6, 1, 5, 0);
        let y = a.hstack(&a.scale(2.0)).unwrap();
        let r = orthonormal_range(&y).unwrap();
        assert_eq!(r.rank, 1);
        assert!(r.rank_deficient);
        assert_eq!(r.basis.cols(), 1);
    }

    #[test]
    fn minres_identity_returns_rhs() {
        let rhs = gaussian_matrix(3, 3, 2, 0);
        let sol = minres_solve(&DenseMatrix::identity(3), &rhs, MINRES_DEFAULT_TOL).unwrap();
        assert!(frobenius_norm(&sol.solution.sub(&rhs).unwrap()) < 1e-13);
        assert!(sol.consistent);
    }

    #[test]
    fn minres_recovers_forward_constructed_solution() {
        let b0 = gaussian_matrix(4, 4, 21, 0);
        let coeff = gaussian_matrix(4, 9, 22, 0);
        let rhs = matmul(&b0, &coeff).unwrap();
        let sol = minres_solve(&coeff, &rhs, MINRES_DEFAULT_TOL).unwrap();
        assert!(frobenius_norm(&sol.solution.sub(&b0).unwrap()) < 1e-9);
        assert!(sol.residual <= 1e-9 * sol.rhs_norm);
        assert!(sol.iterations <= 40 + 40);
    }

    #[test]
    fn minres_rank_deficient_is_ill_posed() {
        let c = gaussian_matrix(1, 5, 1, 0);
        let coeff = c.vstack(&c).unwrap();
        let rhs = gaussian_matrix(2, 5, 2, 0);
        match minres_solve(&coeff, &rhs, MINRES_DEFAULT_TOL) {
            Err(Error::IllPosed {
                rank,
                required,
                residual,
            }) => {
                assert_eq!((rank, required), (1, 2));
                assert!(residual > 0.0);
            }
            other => panic!("expected ill-posed, got {other:?}"),
        }
    }

    #[test]
    fn minres_rejects_bad_shapes() {
        let coeff = gaussian_matrix(3, 2, 1, 0);
        let rhs = gaussian_matrix(3, 2, 1, 1);
        assert!(matches!(minres_solve(&coeff, &rhs, 1e-10), Err(Error::Contract(_))));
        let coeff = gaussian_matrix(2, 3, 1, 0);
        assert!(matches!(minres_solve(&coeff, &rhs, 1e-10), Err(Error::Contract(_))));
    }

    #[test]
    fn norms() {
        assert_eq!(frobenius_norm(&DenseMatrix::zeros(3, 3)), 0.0);
        let d = DenseMatrix::from_diag(2, 2, &[3.0, 1.0]);
        assert!((spectral_norm(&d).unwrap() - 3.0).abs() < 1e-15);
        assert!((frobenius_norm(&d) - 10f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn matmul_dimension_mismatch() {
        let a = DenseMatrix::zeros(2, 3);
        assert!(matches!(matmul(&a, &a), Err(Error::Contract(_))));
        assert!(t_matmul(&a, &DenseMatrix::zeros(3, 1)).is_err());
    }
}
