//! Reference solvers kept independent of the production code paths: a textbook
//! finite-horizon LQR recursion in cost form, inverted with LU rather than Cholesky.

use crate::numerics::{Matrix, Vector};

/// Cost-to-go matrices and feedback gains for `x′ = A x + B u` with stage cost
/// `xᵀQx + uᵀRu` over `horizon` steps and zero terminal cost.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    /// `P_t` for `t = 1..=horizon + 1`; the last entry is zero.
    pub cost_to_go: Vec<Matrix>,
    /// `K_t` for `t = 1..=horizon`, so that `u_t = K_t x_t`.
    pub gains: Vec<Matrix>,
}

pub fn riccati(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, horizon: usize) -> RiccatiSolution {
    let n = a.nrows();
    let mut p = Matrix::zeros(n, n);
    let mut cost_to_go = vec![p.clone()];
    let mut gains = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let s = r + b.transpose() * &p * b;
        let s_inv = s.clone().try_inverse().expect("R + BᵀPB must be invertible");
        let k = -(&s_inv * b.transpose() * &p * a);
        let next = q + a.transpose() * &p * a + a.transpose() * &p * b * &k;
        p = (&next + next.transpose()) * 0.5;
        gains.push(k);
        cost_to_go.push(p.clone());
    }
    gains.reverse();
    cost_to_go.reverse();
    RiccatiSolution { cost_to_go, gains }
}

/// Optimal expected return (negative cost) from `x₁ ~ N(mean, cov)` with no process noise.
pub fn optimal_return(sol: &RiccatiSolution, mean: &Vector, cov: &Matrix) -> f64 {
    let p1 = &sol.cost_to_go[0];
    -((mean.transpose() * p1 * mean)[(0, 0)] + (p1 * cov).trace())
}

/// Positive root of `P² − P − 1 = 0`, the scalar cost-to-go of `x′ = x + u` with unit costs.
pub fn golden_gain() -> f64 {
    let p = (1.0 + 5f64.sqrt()) / 2.0;
    -p / (1.0 + p)
}
