//! Small dense linear-algebra kernel.
//!
//! Everything here works on row-major `f64` matrices of modest size (system
//! dimension `n` and parameter counts `n(n+d)`). Vectors are plain slices.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use crate::error::{dim_err, MracError, Result};

/// Relative tolerance used when checking symmetry of inputs.
pub const SYMMETRY_TOL: f64 = 1e-9;

const JACOBI_MAX_SWEEPS: usize = 100;

/// Dense row-major matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(dim_err("Matrix::new", rows * cols, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(MracError::InvalidConfig("matrix entries must be finite".into()));
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

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    /// Builds a matrix from row slices. All rows must have equal length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.as_ref().len());
        let mut data = Vec::with_capacity(r * c);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != c {
                return Err(MracError::DimensionMismatch {
                    context: "Matrix::from_rows",
                    expected: format!("{c} columns"),
                    got: format!("{} columns in row {i}", row.len()),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(r, c, data)
    }

    /// Row-major constructor for literals in code and tests.
    ///
    /// Panics if `data.len() != rows * cols`.
    pub fn from_row_slice(rows: usize, cols: usize, data: &[f64]) -> Self {
        assert_eq!(data.len(), rows * cols, "from_row_slice: wrong entry count");
        Self {
            rows,
            cols,
            data: data.to_vec(),
        }
    }

    /// Column vector `v.len() x 1`.
    pub fn column(v: &[f64]) -> Self {
        Self::from_row_slice(v.len(), 1, v)
    }

    /// Inverse of [`Matrix::vec`]: fills a matrix column by column.
    pub fn from_col_major(rows: usize, cols: usize, v: &[f64]) -> Self {
        assert_eq!(v.len(), rows * cols, "from_col_major: wrong entry count");
        let mut m = Self::zeros(rows, cols);
        for j in 0..cols {
            for i in 0..rows {
                m[(i, j)] = v[j * rows + i];
            }
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

    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.cols == 0
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// Column-stacking vectorization `vec(Z)`.
    pub fn vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                v.push(self[(i, j)]);
            }
        }
        v
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols, "mul_vec: dimension mismatch");
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `selfᵀ v` without forming the transpose.
    pub fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows, "tr_mul_vec: dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for (i, vi) in v.iter().enumerate() {
            if *vi == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        out
    }

    /// `selfᵀ self`.
    pub fn gram(&self) -> Self {
        let mut g = Self::zeros(self.cols, self.cols);
        for r in 0..self.rows {
            let row = self.row(r);
            for i in 0..self.cols {
                if row[i] == 0.0 {
                    continue;
                }
                for j in 0..self.cols {
                    g[(i, j)] += row[i] * row[j];
                }
            }
        }
        g
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn norm_fro(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn symmetrize(&self) -> Self {
        let t = self.transpose();
        (self + &t).scale(0.5)
    }

    /// Vertical concatenation of blocks that share a column count.
    pub fn vstack(blocks: &[Matrix]) -> Result<Self> {
        let Some(first) = blocks.first() else {
            return Ok(Self::zeros(0, 0));
        };
        let cols = first.cols;
        let mut data = Vec::new();
        for b in blocks {
            if b.cols != cols {
                return Err(dim_err("Matrix::vstack", format!("{cols} columns"), format!("{} columns", b.cols)));
            }
            data.extend_from_slice(&b.data);
        }
        let rows = data.len() / cols.max(1);
        Ok(Self { rows, cols, data })
    }

    /// Copies `block` into `self` with its top-left corner at `(r0, c0)`.
    pub fn set_block(&mut self, r0: usize, c0: usize, block: &Matrix) {
        for i in 0..block.rows {
            for j in 0..block.cols {
                self[(r0 + i, c0 + j)] = block[(i, j)];
            }
        }
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl Mul for &Matrix {
    type Output = Matrix;
    fn mul(self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.cols, rhs.rows, "matmul: inner dimensions differ");
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..rhs.cols {
                    out.data[i * rhs.cols + j] += a * rhs.data[k * rhs.cols + j];
                }
            }
        }
        out
    }
}

impl Add for &Matrix {
    type Output = Matrix;
    fn add(self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.shape(), rhs.shape(), "add: shape mismatch");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &Matrix {
    type Output = Matrix;
    fn sub(self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.shape(), rhs.shape(), "sub: shape mismatch");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

// ---- vector helpers -------------------------------------------------------

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn vsub(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn vadd(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn vscale(v: &[f64], s: f64) -> Vec<f64> {
    v.iter().map(|x| x * s).collect()
}

/// `y += s * x`
pub fn axpy(y: &mut [f64], s: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

// ---- kernel operations ----------------------------------------------------

/// Kronecker product: block `(i, j)` of the result is `a[i, j] * b`.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = Matrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let s = a[(i, j)];
            if s == 0.0 {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[(i * br + k, j * bc + l)] = s * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Default rank threshold: `1e-8 * max(1, ‖M‖∞)`.
pub fn rank_tolerance(m: &Matrix) -> f64 {
    1e-8 * m.norm_inf().max(1.0)
}

/// LU factorisation with partial pivoting, kept for repeated solves.
pub struct Lu {
    lu: Matrix,
    perm: Vec<usize>,
}

impl Lu {
    pub fn factor(a: &Matrix) -> Result<Self> {
        if !a.is_square() {
            return Err(dim_err("Lu::factor", "square matrix", format!("{}x{}", a.rows, a.cols)));
        }
        let n = a.rows;
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = a.max_abs().max(f64::MIN_POSITIVE);
        for k in 0..n {
            let (p, pval) = (k..n)
                .map(|i| (i, lu[(i, k)].abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pval <= 1e-14 * scale {
                return Err(MracError::RankDeficient {
                    sigma_min: pval,
                    tolerance: 1e-14 * scale,
                });
            }
            if p != k {
                for j in 0..n {
                    lu.data.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let pivot = lu[(k, k)];
            for i in (k + 1)..n {
                let f = lu[(i, k)] / pivot;
                lu[(i, k)] = f;
                if f == 0.0 {
                    continue;
                }
                for j in (k + 1)..n {
                    lu.data[i * n + j] -= f * lu.data[k * n + j];
                }
            }
        }
        Ok(Self { lu, perm })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.lu.rows;
        assert_eq!(b.len(), n, "Lu::solve: dimension mismatch");
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for k in 0..i {
                y[i] -= self.lu[(i, k)] * y[k];
            }
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                y[i] -= self.lu[(i, k)] * y[k];
            }
            y[i] /= self.lu[(i, i)];
        }
        y
    }

    pub fn inverse(&self) -> Matrix {
        let n = self.lu.rows;
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        inv
    }
}

pub fn solve_linear(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    Ok(Lu::factor(a)?.solve(b))
}

pub fn inverse(a: &Matrix) -> Result<Matrix> {
    Ok(Lu::factor(a)?.inverse())
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the matching eigenvectors as
/// the columns of the second matrix.
pub fn symmetric_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    if !a.is_square() {
        return Err(dim_err("symmetric_eigen", "square matrix", format!("{}x{}", a.rows, a.cols)));
    }
    let n = a.rows;
    let mut s = a.symmetrize();
    let mut v = Matrix::identity(n);
    let total = s.norm_fro();
    if total == 0.0 {
        return Ok((vec![0.0; n], v));
    }
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| s[(i, j)] * s[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * total {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = s[(p, q)];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (s[(q, q)] - s[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let skp = s[(k, p)];
                    let skq = s[(k, q)];
                    s[(k, p)] = c * skp - sn * skq;
                    s[(k, q)] = sn * skp + c * skq;
                }
                for k in 0..n {
                    let spk = s[(p, k)];
                    let sqk = s[(q, k)];
                    s[(p, k)] = c * spk - sn * sqk;
                    s[(q, k)] = sn * spk + c * sqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - sn * vkq;
                    v[(k, q)] = sn * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| s[(i, i)].total_cmp(&s[(j, j)]));
    let values = order.iter().map(|&i| s[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, dst)] = v[(k, src)];
        }
    }
    Ok((values, vectors))
}

pub fn symmetric_eigenvalues(a: &Matrix) -> Result<Vec<f64>> {
    symmetric_eigen(a).map(|(vals, _)| vals)
}

pub fn lambda_min(a: &Matrix) -> Result<f64> {
    Ok(symmetric_eigenvalues(a)?.first().copied().unwrap_or(0.0))
}

pub fn lambda_max(a: &Matrix) -> Result<f64> {
    Ok(symmetric_eigenvalues(a)?.last().copied().unwrap_or(0.0))
}

/// Smallest singular value, computed as `sqrt(λ_min(MᵀM))`.
pub fn min_singular_value(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    // A wide matrix has a nontrivial null space in its columns; use the
    // smaller Gram so the answer is the smallest of the min(r, c) values.
    let g = if m.rows >= m.cols { m.gram() } else { m.transpose().gram() };
    let lmin = lambda_min(&g).unwrap_or(0.0);
    lmin.max(0.0).sqrt()
}

/// Largest singular value (induced 2-norm).
pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let g = if m.rows >= m.cols { m.gram() } else { m.transpose().gram() };
    lambda_max(&g).unwrap_or(0.0).max(0.0).sqrt()
}

fn ensure_full_column_rank(m: &Matrix) -> Result<()> {
    let sigma_min = min_singular_value(m);
    let tolerance = rank_tolerance(m);
    if m.rows < m.cols || sigma_min < tolerance {
        return Err(MracError::RankDeficient { sigma_min, tolerance });
    }
    Ok(())
}

/// Least-squares solution `(MᵀM)⁻¹MᵀG` of an overdetermined system.
///
/// Evaluated through Householder QR of `M` rather than the normal equations.
pub fn least_squares_solve(m: &Matrix, g: &[f64]) -> Result<Vec<f64>> {
    if g.len() != m.rows {
        return Err(dim_err("least_squares_solve", m.rows, g.len()));
    }
    ensure_full_column_rank(m)?;
    let (k, n) = m.shape();
    let mut r = m.clone();
    let mut rhs = g.to_vec();
    for j in 0..n {
        let norm: f64 = (j..k).map(|i| r[(i, j)] * r[(i, j)]).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if r[(j, j)] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (j..k).map(|i| r[(i, j)]).collect();
        v[0] -= alpha;
        let vnorm2 = dot(&v, &v);
        if vnorm2 == 0.0 {
            continue;
        }
        for c in j..n {
            let s: f64 = (j..k).map(|i| v[i - j] * r[(i, c)]).sum::<f64>() * 2.0 / vnorm2;
            for i in j..k {
                r[(i, c)] -= s * v[i - j];
            }
        }
        let s: f64 = (j..k).map(|i| v[i - j] * rhs[i]).sum::<f64>() * 2.0 / vnorm2;
        for i in j..k {
            rhs[i] -= s * v[i - j];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut acc = rhs[i];
        for c in (i + 1)..n {
            acc -= r[(i, c)] * x[c];
        }
        x[i] = acc / r[(i, i)];
    }
    Ok(x)
}

/// Left pseudo-inverse `(BᵀB)⁻¹Bᵀ` as an explicit `d x n` matrix.
pub fn left_pseudo_inverse(b: &Matrix) -> Result<Matrix> {
    ensure_full_column_rank(b)?;
    let gram_inv = inverse(&b.gram())?;
    Ok(&gram_inv * &b.transpose())
}

/// `(BᵀB)⁻¹Bᵀv`.
pub fn pseudo_inverse_apply(b: &Matrix, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != b.rows {
        return Err(dim_err("pseudo_inverse_apply", b.rows, v.len()));
    }
    Ok(left_pseudo_inverse(b)?.mul_vec(v))
}

/// True iff every eigenvalue of the symmetric matrix `p` is strictly positive.
pub fn is_positive_definite(p: &Matrix) -> Result<bool> {
    if !p.is_square() {
        return Err(dim_err("is_positive_definite", "square matrix", format!("{}x{}", p.rows, p.cols)));
    }
    let asym = p.max_asymmetry();
    if asym > SYMMETRY_TOL * p.max_abs().max(1.0) {
        return Err(MracError::NotSymmetric(asym));
    }
    if p.is_empty() {
        return Ok(false);
    }
    Ok(lambda_min(p)? > 0.0)
}

/// Fraction of entries with magnitude above `tol`.
pub fn nonzero_fraction(m: &Matrix, tol: f64) -> f64 {
    let total = m.as_slice().len();
    if total == 0 {
        return 0.0;
    }
    let count = m.as_slice().iter().filter(|v| v.abs() > tol).count();
    count as f64 / total as f64
}

/// Solves `A_mᵀP + PA_m + Q = 0` for symmetric positive-definite `P`.
///
/// Uses the vectorized system `(I⊗A_mᵀ + A_mᵀ⊗I) vec(P) = -vec(Q)`.
pub fn solve_lyapunov(a_m: &Matrix, q: &Matrix) -> Result<Matrix> {
    let n = a_m.rows;
    if !a_m.is_square() || q.shape() != (n, n) {
        return Err(dim_err(
            "solve_lyapunov",
            format!("{n}x{n} operands"),
            format!("A_m {}x{}, Q {}x{}", a_m.rows, a_m.cols, q.rows, q.cols),
        ));
    }
    if !is_positive_definite(q)? {
        return Err(MracError::InvalidConfig("Q must be positive definite".into()));
    }
    let at = a_m.transpose();
    let eye = Matrix::identity(n);
    let op = &kron(&eye, &at) + &kron(&at, &eye);
    let rhs: Vec<f64> = q.vec().iter().map(|v| -v).collect();
    let sol = solve_linear(&op, &rhs)
        .map_err(|_| MracError::NotHurwitz("Lyapunov operator is singular".into()))?;
    let p = Matrix::from_col_major(n, n, &sol).symmetrize();
    if !is_positive_definite(&p)? {
        return Err(MracError::NotHurwitz("Lyapunov solution is not positive definite".into()));
    }
    Ok(p)
}

/// Hurwitz test through the Lyapunov characterization (`Q = I`).
pub fn is_hurwitz(a: &Matrix) -> bool {
    a.is_square() && !a.is_empty() && solve_lyapunov(a, &Matrix::identity(a.rows)).is_ok()
}

/// Residual `A_mᵀP + PA_m + Q`.
pub fn lyapunov_residual(a_m: &Matrix, p: &Matrix, q: &Matrix) -> Matrix {
    let at = a_m.transpose();
    let lhs = &(&at * p) + &(p * a_m);
    &lhs + q
}
