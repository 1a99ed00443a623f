//! Dense linear algebra and finite-difference helpers shared by the rest of the crate.
//!
//! Problem sizes here are a handful of states and actions, so everything is a dense
//! `nalgebra` matrix. Symmetric inputs are symmetrized before any factorization.

use nalgebra::{linalg::Cholesky, DMatrix, DVector};
use thiserror::Error;

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative ridge added to the conditioned block before inverting it.
pub const COV_REGULARIZATION: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

pub type Result<T> = std::result::Result<T, NumericsError>;

/// Returns `(a + aᵀ) / 2`.
pub fn symmetrize(a: &Matrix) -> Matrix {
    (a + a.transpose()) * 0.5
}

fn check_square(a: &Matrix) -> Result<()> {
    if a.nrows() != a.ncols() || a.nrows() == 0 {
        return Err(NumericsError::DimensionMismatch(format!(
            "expected a non-empty square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(())
}

fn factor(a: &Matrix) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    check_square(a)?;
    if a.iter().any(|v| !v.is_finite()) {
        return Err(NumericsError::NotPositiveDefinite);
    }
    Cholesky::new(symmetrize(a)).ok_or(NumericsError::NotPositiveDefinite)
}

/// Lower-triangular `L` with `A = L Lᵀ`.
pub fn cholesky_lower(a: &Matrix) -> Result<Matrix> {
    Ok(factor(a)?.l())
}

/// True when `a` admits a Cholesky factorization.
pub fn is_positive_definite(a: &Matrix) -> bool {
    factor(a).is_ok()
}

/// Solves `A X = B` for symmetric positive-definite `A`.
pub fn solve_psd(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.nrows() != b.nrows() {
        return Err(NumericsError::DimensionMismatch(format!(
            "lhs is {}x{}, rhs has {} rows",
            a.nrows(),
            a.ncols(),
            b.nrows()
        )));
    }
    Ok(factor(a)?.solve(b))
}

/// Inverse of a symmetric positive-definite matrix, returned symmetric.
pub fn inverse_psd(a: &Matrix) -> Result<Matrix> {
    let inv = factor(a)?.inverse();
    Ok(symmetrize(&inv))
}

/// Linear-Gaussian conditional `tail | head ~ N(gain·head + offset, cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditional {
    pub gain: Matrix,
    pub offset: Vector,
    pub cov: Matrix,
}

/// Conditions the joint Gaussian `N(mean, cov)` on its first `split` coordinates.
///
/// `λI` with `λ = 1e-6 · mean(diag(cov))` is added to the head block before it is
/// inverted, so rank-deficient sample covariances still produce a conditional.
pub fn gaussian_condition(mean: &Vector, cov: &Matrix, split: usize) -> Result<Conditional> {
    gaussian_condition_with(mean, cov, split, COV_REGULARIZATION)
}

/// As [`gaussian_condition`] with an explicit relative regularization.
pub fn gaussian_condition_with(
    mean: &Vector,
    cov: &Matrix,
    split: usize,
    relative_reg: f64,
) -> Result<Conditional> {
    let dim = mean.len();
    check_square(cov)?;
    if cov.nrows() != dim {
        return Err(NumericsError::DimensionMismatch(format!(
            "mean has length {dim}, covariance is {}x{}",
            cov.nrows(),
            cov.ncols()
        )));
    }
    if split == 0 || split >= dim {
        return Err(NumericsError::DimensionMismatch(format!(
            "split {split} must lie strictly inside 0..{dim}"
        )));
    }
    let cov = symmetrize(cov);
    let tail = dim - split;
    let lambda = relative_reg * cov.diagonal().mean();

    let mut head_cov = cov.view((0, 0), (split, split)).into_owned();
    for i in 0..split {
        head_cov[(i, i)] += lambda;
    }
    let cross = cov.view((split, 0), (tail, split)).into_owned();
    let tail_cov = cov.view((split, split), (tail, tail)).into_owned();

    // gain = Σ₂₁ Σ₁₁⁻¹, computed as (Σ₁₁⁻¹ Σ₁₂)ᵀ
    let gain = solve_psd(&head_cov, &cross.transpose())?.transpose();
    let head_mean = mean.rows(0, split);
    let offset = mean.rows(split, tail) - &gain * head_mean;
    let cond_cov = symmetrize(&(tail_cov - &gain * cross.transpose()));
    Ok(Conditional {
        gain,
        offset,
        cov: cond_cov,
    })
}

/// Central-difference gradient of `f` at `x`.
pub fn finite_diff_grad<F>(f: F, x: &Vector, h: f64) -> Vector
where
    F: Fn(&Vector) -> f64,
{
    let mut probe = x.clone();
    Vector::from_fn(x.len(), |i, _| {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe);
        probe[i] = orig - h;
        let down = f(&probe);
        probe[i] = orig;
        (up - down) / (2.0 * h)
    })
}

/// Central-difference Hessian of `f` at `x`, symmetrized.
pub fn finite_diff_hessian<F>(f: F, x: &Vector, h: f64) -> Matrix
where
    F: Fn(&Vector) -> f64,
{
    let n = x.len();
    let mut probe = x.clone();
    let mut hess = Matrix::zeros(n, n);
    let f0 = f(x);
    for i in 0..n {
        let xi = probe[i];
        probe[i] = xi + h;
        let up = f(&probe);
        probe[i] = xi - h;
        let down = f(&probe);
        probe[i] = xi;
        hess[(i, i)] = (up - 2.0 * f0 + down) / (h * h);
        for j in 0..i {
            let xj = probe[j];
            let mut corner = |di: f64, dj: f64| {
                probe[i] = xi + di;
                probe[j] = xj + dj;
                let v = f(&probe);
                probe[i] = xi;
                probe[j] = xj;
                v
            };
            let v = (corner(h, h) - corner(h, -h) - corner(-h, h) + corner(-h, -h)) / (4.0 * h * h);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    hess
}

/// Empirical mean and (maximum-likelihood) covariance of a set of equal-length samples.
pub fn sample_mean_cov(samples: &[Vector]) -> (Vector, Matrix) {
    let n = samples.len();
    let dim = samples.first().map_or(0, |s| s.len());
    let mut mean = Vector::zeros(dim);
    for s in samples {
        mean += s;
    }
    mean /= n.max(1) as f64;
    let mut cov = Matrix::zeros(dim, dim);
    for s in samples {
        let d = s - &mean;
        cov.ger(1.0, &d, &d, 1.0);
    }
    cov /= n.max(1) as f64;
    (mean, symmetrize(&cov))
}

/// Frobenius norm.
pub fn frobenius(a: &Matrix) -> f64 {
    a.norm()
}
