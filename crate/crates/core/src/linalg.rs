//! Dense row-major matrices and the handful of numerical kernels the rest of
//! the crate is built on: products, softmax, spectral-radius estimation and a
//! ridge least-squares solver.
//!
//! Everything is `f64`. Vectors are plain slices; matrices are [`Matrix`].

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{dim_err, Error, Result};

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows.min(8) {
            writeln!(f, "  {:?}", &self.row(r)[..self.cols.min(8)])?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
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

    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length does not match shape");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self { rows: r, cols: c, data }
    }

    /// A 1×n matrix.
    pub fn row_vector(v: &[f64]) -> Self {
        Self { rows: 1, cols: v.len(), data: v.to_vec() }
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Same data, new shape. Panics if the element count differs.
    pub fn reshaped(mut self, rows: usize, cols: usize) -> Self {
        assert_eq!(rows * cols, self.data.len());
        self.rows = rows;
        self.cols = cols;
        self
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        Self::from_vec(end - start, self.cols, self.data[start * self.cols..end * self.cols].to_vec())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    /// `self · other`
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return dim_err(format!("matmul {}x{} by {}x{}", self.rows, self.cols, other.rows, other.cols));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        matmul_into(self, other, &mut out);
        Ok(out)
    }

    /// `self · otherᵀ`
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return dim_err(format!("matmul_t {}x{} by ({}x{})ᵀ", self.rows, self.cols, other.rows, other.cols));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a, other.row(j));
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other`
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return dim_err(format!("t_matmul ({}x{})ᵀ by {}x{}", self.rows, self.cols, other.rows, other.cols));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let a = self.row(k);
            let b = other.row(k);
            for (i, &aik) in a.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &bkj) in orow.iter_mut().zip(b) {
                    *o += aik * bkj;
                }
            }
        }
        Ok(out)
    }

    /// `self · v` for a column vector `v`.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if self.cols != v.len() {
            return dim_err(format!("matvec {}x{} by vector of length {}", self.rows, self.cols, v.len()));
        }
        Ok((0..self.rows).map(|r| dot(self.row(r), v)).collect())
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return dim_err(format!("elementwise {:?} vs {:?}", self.shape(), other.shape()));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

/// Accumulating product `out += a · b`. Shapes are assumed valid.
pub(crate) fn matmul_into(a: &Matrix, b: &Matrix, out: &mut Matrix) {
    let n = b.cols;
    for i in 0..a.rows {
        let arow = a.row(i);
        let orow = &mut out.data[i * n..(i + 1) * n];
        for (k, &aik) in arow.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let brow = &b.data[k * n..(k + 1) * n];
            for (o, &bkj) in orow.iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return dim_err("softmax of an empty vector");
    }
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Result of [`spectral_radius`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralEstimate {
    pub radius: f64,
    pub converged: bool,
    pub iterations: usize,
}

pub const DEFAULT_SPECTRAL_TOL: f64 = 1e-12;
pub const DEFAULT_SPECTRAL_ITERS: usize = 200_000;

/// Largest eigenvalue magnitude by power iteration.
///
/// Each iteration takes two products `w1 = A v`, `w2 = A w1` and fits
/// `w2 ≈ a·w1 + b·v` by least squares. The dominant eigenvalues are then
/// roots of `λ² − aλ − b`, which covers a single real dominant eigenvalue,
/// a `±λ` pair and a complex-conjugate pair alike. When `v` and `w1` are
/// (numerically) parallel the one-step Rayleigh quotient is used instead.
pub fn spectral_radius(w: &Matrix, tol: f64, max_iter: usize) -> Result<SpectralEstimate> {
    if w.rows() != w.cols() {
        return dim_err(format!("spectral radius of non-square {}x{} matrix", w.rows(), w.cols()));
    }
    if max_iter == 0 {
        return Err(Error::Config("max_iter must be at least 1".into()));
    }
    let n = w.rows();
    if n == 0 {
        return Ok(SpectralEstimate { radius: 0.0, converged: true, iterations: 0 });
    }
    // Fixed, non-symmetric start vector so results do not depend on an RNG.
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.37 * ((i as f64 + 1.0) * 1.618).sin()).collect();
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);

    let mut prev = f64::NAN;
    let mut estimate = 0.0;
    let mut stable = 0;
    for it in 1..=max_iter {
        let w1 = w.matvec(&v)?;
        let n1 = norm(&w1);
        if n1 == 0.0 {
            return Ok(SpectralEstimate { radius: 0.0, converged: true, iterations: it });
        }
        let w2 = w.matvec(&w1)?;
        let n2 = norm(&w2);
        if n2 == 0.0 {
            return Ok(SpectralEstimate { radius: 0.0, converged: true, iterations: it });
        }
        estimate = two_step_magnitude(&v, &w1, &w2);
        if !estimate.is_finite() {
            return Err(Error::Numeric("spectral radius iteration produced a non-finite value".into()));
        }
        if (estimate - prev).abs() <= tol * estimate.max(f64::MIN_POSITIVE) {
            // Require a few consecutive agreements: the complex-pair fit can
            // momentarily agree with itself while still drifting.
            stable += 1;
            if stable >= 3 {
                return Ok(SpectralEstimate { radius: estimate, converged: true, iterations: it });
            }
        } else {
            stable = 0;
        }
        prev = estimate;
        v = w2.iter().map(|x| x / n2).collect();
    }
    Ok(SpectralEstimate { radius: estimate, converged: false, iterations: max_iter })
}

fn two_step_magnitude(v: &[f64], w1: &[f64], w2: &[f64]) -> f64 {
    let g11 = dot(w1, w1);
    let g12 = dot(w1, v);
    let g22 = dot(v, v);
    let r1 = dot(w1, w2);
    let r2 = dot(v, w2);
    let det = g11 * g22 - g12 * g12;
    if det <= 1e-10 * g11 * g22 {
        // v and A v are parallel: a single real dominant eigenvalue.
        return (g12 / g22).abs();
    }
    let a = (r1 * g22 - r2 * g12) / det;
    let b = (g11 * r2 - g12 * r1) / det;
    let disc = a * a + 4.0 * b;
    if disc < 0.0 {
        (-b).sqrt()
    } else {
        let s = disc.sqrt();
        ((a + s) / 2.0).abs().max(((a - s) / 2.0).abs())
    }
}

/// `w · (target / ρ(w))`.
pub fn rescale_spectral_radius(w: &Matrix, target: f64) -> Result<Matrix> {
    if !(target > 0.0) {
        return Err(Error::Range(format!("target spectral radius must be positive, got {target}")));
    }
    let est = spectral_radius(w, DEFAULT_SPECTRAL_TOL, DEFAULT_SPECTRAL_ITERS)?;
    if est.radius <= f64::EPSILON * w.max_abs().max(1.0) {
        return Err(Error::Degenerate("spectral radius is zero; cannot rescale".into()));
    }
    Ok(w.scale(target / est.radius))
}

/// Eigenvalues of a square matrix as `(re, im)` pairs, via a real Schur
/// decomposition. Used where the whole spectrum is needed rather than just
/// its magnitude.
pub fn eigenvalues(w: &Matrix) -> Result<Vec<(f64, f64)>> {
    if w.rows() != w.cols() {
        return dim_err("eigenvalues of a non-square matrix");
    }
    let m = nalgebra::DMatrix::from_row_slice(w.rows(), w.cols(), w.as_slice());
    let schur = nalgebra::linalg::Schur::try_new(m, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numeric("Schur decomposition did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().map(|c| (c.re, c.im)).collect())
}

/// `argmin_X ‖aX − b‖² + λ‖X‖²` through the normal equations
/// `(aᵀa + λI) X = aᵀb` and a Cholesky factorization.
pub fn ridge_solve(a: &Matrix, b: &Matrix, lambda: f64) -> Result<Matrix> {
    if a.rows() == 0 {
        return Err(Error::InsufficientData("ridge_solve needs at least one row".into()));
    }
    if a.rows() != b.rows() {
        return dim_err(format!("ridge_solve: a has {} rows, b has {}", a.rows(), b.rows()));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Range(format!("ridge lambda must be non-negative, got {lambda}")));
    }
    let mut gram = a.t_matmul(a)?;
    for i in 0..gram.rows() {
        gram[(i, i)] += lambda;
    }
    let rhs = a.t_matmul(b)?;
    let chol = cholesky(&gram).ok_or_else(|| {
        Error::Singular(format!(
            "normal equations are not positive definite at lambda = {lambda}; use lambda > 0"
        ))
    })?;
    Ok(cholesky_solve(&chol, &rhs))
}

/// Lower-triangular factor of a symmetric positive-definite matrix, or
/// `None` if a pivot is not safely positive.
pub(crate) fn cholesky(g: &Matrix) -> Option<Matrix> {
    let n = g.rows();
    let scale = (0..n).map(|i| g[(i, i)].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = g[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 1e-13 * scale) {
            return None;
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = g[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Some(l)
}

fn cholesky_solve(l: &Matrix, rhs: &Matrix) -> Matrix {
    let n = l.rows();
    let q = rhs.cols();
    let mut x = rhs.clone();
    for c in 0..q {
        // forward: L y = b
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
        // backward: Lᵀ x = y
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in i + 1..n {
                s -= l[(k, i)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nilpotent_has_zero_radius() {
        let w = Matrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]);
        let est = spectral_radius(&w, 1e-12, 100).unwrap();
        assert_eq!(est.radius, 0.0);
        assert!(est.converged);
    }

    #[test]
    fn diagonal_radius() {
        let est = spectral_radius(&Matrix::diag(&[0.3, -0.9]), 1e-12, 10_000).unwrap();
        assert!((est.radius - 0.9).abs() < 1e-12, "{est:?}");
    }

    #[test]
    fn rotation_is_a_complex_pair() {
        let (c, s) = (0.3f64.cos() * 0.7, 0.3f64.sin() * 0.7);
        let w = Matrix::from_rows(&[vec![c, -s], vec![s, c]]);
        let est = spectral_radius(&w, 1e-12, 10_000).unwrap();
        assert!((est.radius - 0.7).abs() < 1e-12, "{est:?}");
    }

    #[test]
    fn non_square_is_rejected() {
        assert!(matches!(spectral_radius(&Matrix::zeros(2, 3), 1e-9, 10), Err(Error::Dimension(_))));
    }

    #[test]
    fn rescale_diagonal() {
        let out = rescale_spectral_radius(&Matrix::diag(&[2.0, 1.0]), 0.5).unwrap();
        assert!(out.max_abs_diff(&Matrix::diag(&[0.5, 0.25])) < 1e-12);
    }

    #[test]
    fn rescale_to_own_radius_is_identity() {
        let w = Matrix::from_rows(&[vec![0.2, 0.5], vec![-0.4, 0.1]]);
        let r = spectral_radius(&w, 1e-14, 100_000).unwrap().radius;
        let out = rescale_spectral_radius(&w, r).unwrap();
        assert!(out.max_abs_diff(&w) < 1e-12);
    }

    #[test]
    fn rescale_zero_radius_fails() {
        let w = Matrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]);
        assert!(matches!(rescale_spectral_radius(&w, 0.5), Err(Error::Degenerate(_))));
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let p = softmax(&[2f64.ln(), 0.0]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
        let big = softmax(&[1000.0, 1000.0, 999.0]).unwrap();
        let small = softmax(&[1.0, 1.0, 0.0]).unwrap();
        assert!(big.iter().all(|v| v.is_finite()));
        for (a, b) in big.iter().zip(&small) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(matches!(softmax(&[]), Err(Error::Dimension(_))));
    }

    #[test]
    fn ridge_identity_and_mean() {
        let x = ridge_solve(&Matrix::identity(3), &Matrix::identity(3), 0.0).unwrap();
        assert!(x.max_abs_diff(&Matrix::identity(3)) < 1e-15);
        let a = Matrix::from_rows(&[vec![1.0], vec![1.0]]);
        let b = Matrix::from_rows(&[vec![0.0], vec![2.0]]);
        let x = ridge_solve(&a, &b, 0.0).unwrap();
        assert!((x[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ridge_singular_at_zero_lambda() {
        let a = Matrix::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0]]);
        let b = Matrix::from_rows(&[vec![1.0], vec![2.0]]);
        assert!(matches!(ridge_solve(&a, &b, 0.0), Err(Error::Singular(_))));
        assert!(ridge_solve(&a, &b, 1e-3).is_ok());
    }

    #[test]
    fn products_agree() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);
        let b = Matrix::from_rows(&[vec![1.0, 0.5], vec![-1.0, 2.0], vec![0.0, 1.0]]);
        let ab = a.matmul(&b).unwrap();
        assert_eq!(ab, Matrix::from_rows(&[vec![-1.0, 7.5], vec![-1.0, 18.0]]));
        assert_eq!(a.matmul_t(&b.transpose()).unwrap(), ab);
        assert_eq!(a.transpose().t_matmul(&b).unwrap(), ab);
    }
}
