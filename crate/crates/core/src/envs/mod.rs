//! Analytic control tasks: a linear point mass, a pendulum swing-up and a planar
//! two-link reacher.
//!
//! Every task runs for exactly `horizon` steps with no early termination. Rewards are
//! negative squared distance to the goal minus an action penalty, so they are never
//! positive. Actions are clipped to the bounds before they reach the dynamics or the
//! reward.

mod pendulum;
mod pointmass;
mod reacher;

pub use pendulum::{Pendulum, PendulumParams};
pub use pointmass::{PointMass, PointMassParams};
pub use reacher::{Reacher, ReacherParams};

use crate::numerics::{finite_diff_grad, finite_diff_hessian, Matrix, Vector};
use rand::RngCore;
use thiserror::Error;

/// Fixed integration step of the RK4 tasks.
pub const DEFAULT_DT: f64 = 0.05;
/// Default finite-difference step for reward expansions.
pub const DEFAULT_FD_STEP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("state became non-finite: {0:?}")]
    NonFiniteState(Vec<f64>),
    #[error("unknown environment '{0}' (expected pointmass, pendulum or reacher)")]
    UnknownEnv(String),
    #[error("invalid environment parameter: {0}")]
    InvalidParam(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub name: String,
    pub state_dim: usize,
    pub action_dim: usize,
    /// Length of the feature vector handed to the learner.
    pub obs_dim: usize,
    pub horizon: usize,
    pub action_low: Vector,
    pub action_high: Vector,
}

impl EnvSpec {
    pub fn clip(&self, u: &Vector) -> Vector {
        Vector::from_fn(u.len(), |i, _| u[i].clamp(self.action_low[i], self.action_high[i]))
    }
}

/// Second-order expansion of the reward around `(x̂, û)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardExpansion {
    pub r: f64,
    pub r_x: Vector,
    pub r_u: Vector,
    pub r_xx: Matrix,
    pub r_uu: Matrix,
    /// Mixed block `∂²r/∂u∂x`, shape `action_dim × state_dim`.
    pub r_ux: Matrix,
}

impl RewardExpansion {
    pub fn zeros(state_dim: usize, action_dim: usize) -> Self {
        Self {
            r: 0.0,
            r_x: Vector::zeros(state_dim),
            r_u: Vector::zeros(action_dim),
            r_xx: Matrix::zeros(state_dim, state_dim),
            r_uu: Matrix::zeros(action_dim, action_dim),
            r_ux: Matrix::zeros(action_dim, state_dim),
        }
    }
}

pub trait Environment: Send + Sync {
    fn spec(&self) -> &EnvSpec;

    /// Draws an initial state.
    fn reset(&self, rng: &mut dyn RngCore) -> Vector;

    /// Deterministic part of the transition for an already clipped action.
    fn dynamics(&self, x: &Vector, u: &Vector) -> Vector;

    /// Reward for an already clipped action.
    fn reward(&self, x: &Vector, u: &Vector) -> f64;

    /// Learner features for a raw state.
    fn observe(&self, x: &Vector) -> Vector {
        x.clone()
    }

    /// Additive process noise applied after the deterministic transition.
    fn add_process_noise(&self, _next: &mut Vector, _rng: &mut dyn RngCore) {}

    /// Exact `(A, B)` for tasks whose dynamics are linear.
    fn linear_dynamics(&self) -> Option<(Matrix, Matrix)> {
        None
    }

    /// Quadratic reward expansion used by trajectory optimization.
    fn expand_reward(&self, x: &Vector, u: &Vector) -> RewardExpansion {
        reward_expansion(self, x, u, DEFAULT_FD_STEP)
    }

    fn step(
        &self,
        x: &Vector,
        u: &Vector,
        rng: &mut dyn RngCore,
    ) -> Result<(Vector, f64), EnvError> {
        let u = self.spec().clip(u);
        let r = self.reward(x, &u);
        let mut next = self.dynamics(x, &u);
        self.add_process_noise(&mut next, rng);
        if next.iter().any(|v| !v.is_finite()) || !r.is_finite() {
            return Err(EnvError::NonFiniteState(next.iter().copied().collect()));
        }
        Ok((next, r))
    }
}

/// Finite-difference expansion of `env.reward` around `(x, u)` with step `h`.
pub fn reward_expansion<E: Environment + ?Sized>(
    env: &E,
    x: &Vector,
    u: &Vector,
    h: f64,
) -> RewardExpansion {
    let n = x.len();
    let m = u.len();
    let joint = Vector::from_iterator(n + m, x.iter().chain(u.iter()).copied());
    let f = |z: &Vector| {
        let xs = z.rows(0, n).into_owned();
        let us = z.rows(n, m).into_owned();
        env.reward(&xs, &us)
    };
    let grad = finite_diff_grad(f, &joint, h);
    let hess = finite_diff_hessian(f, &joint, h);
    RewardExpansion {
        r: env.reward(x, u),
        r_x: grad.rows(0, n).into_owned(),
        r_u: grad.rows(n, m).into_owned(),
        r_xx: hess.view((0, 0), (n, n)).into_owned(),
        r_uu: hess.view((n, n), (m, m)).into_owned(),
        r_ux: hess.view((n, 0), (m, n)).into_owned(),
    }
}

/// One classical fourth-order Runge-Kutta step of `ẋ = f(x)`.
pub fn rk4_step<F>(f: F, x: &Vector, dt: f64) -> Vector
where
    F: Fn(&Vector) -> Vector,
{
    let k1 = f(x);
    let k2 = f(&(x + &k1 * (0.5 * dt)));
    let k3 = f(&(x + &k2 * (0.5 * dt)));
    let k4 = f(&(x + &k3 * dt));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

/// Tunables shared by the built-in tasks. `None` falls back to the task default.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EnvOverrides {
    pub dt: Option<f64>,
    pub horizon: Option<usize>,
    pub init_std: Option<f64>,
    pub noise_std: Option<f64>,
    pub action_bound: Option<f64>,
    pub goal_weight: Option<f64>,
    pub velocity_weight: Option<f64>,
    pub action_weight: Option<f64>,
    pub point_dims: Option<usize>,
}

pub const ENV_NAMES: [&str; 3] = ["pointmass", "pendulum", "reacher"];

/// Builds a task from its name.
pub fn make_env(name: &str, o: &EnvOverrides) -> Result<Box<dyn Environment>, EnvError> {
    let env: Box<dyn Environment> = match name {
        "pointmass" => {
            let mut p = PointMassParams::default();
            if let Some(v) = o.dt {
                p.dt = v;
            }
            if let Some(v) = o.horizon {
                p.horizon = v;
            }
            if let Some(v) = o.init_std {
                p.init_std = v;
            }
            if let Some(v) = o.noise_std {
                p.noise_std = v;
            }
            if let Some(v) = o.action_bound {
                p.action_bound = v;
            }
            if let Some(v) = o.goal_weight {
                p.position_weight = v;
            }
            if let Some(v) = o.velocity_weight {
                p.velocity_weight = v;
            }
            if let Some(v) = o.action_weight {
                p.action_weight = v;
            }
            if let Some(v) = o.point_dims {
                p.dims = v;
            }
            Box::new(PointMass::double_integrator(&p)?)
        }
        "pendulum" => {
            let mut p = PendulumParams::default();
            if let Some(v) = o.dt {
                p.dt = v;
            }
            if let Some(v) = o.horizon {
                p.horizon = v;
            }
            if let Some(v) = o.init_std {
                p.init_std = v;
            }
            if let Some(v) = o.action_bound {
                p.max_torque = v;
            }
            if let Some(v) = o.goal_weight {
                p.tip_weight = v;
            }
            if let Some(v) = o.velocity_weight {
                p.velocity_weight = v;
            }
            if let Some(v) = o.action_weight {
                p.action_weight = v;
            }
            Box::new(Pendulum::new(p)?)
        }
        "reacher" => {
            let mut p = ReacherParams::default();
            if let Some(v) = o.dt {
                p.dt = v;
            }
            if let Some(v) = o.horizon {
                p.horizon = v;
            }
            if let Some(v) = o.init_std {
                p.init_std = v;
            }
            if let Some(v) = o.action_bound {
                p.max_torque = v;
            }
            if let Some(v) = o.goal_weight {
                p.tip_weight = v;
            }
            if let Some(v) = o.velocity_weight {
                p.velocity_weight = v;
            }
            if let Some(v) = o.action_weight {
                p.action_weight = v;
            }
            Box::new(Reacher::new(p)?)
        }
        other => return Err(EnvError::UnknownEnv(other.to_string())),
    };
    Ok(env)
}

pub(crate) fn check_common(dt: f64, horizon: usize, init_std: f64, bound: f64) -> Result<(), EnvError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(EnvError::InvalidParam(format!("dt must be positive, got {dt}")));
    }
    if horizon == 0 {
        return Err(EnvError::InvalidParam("horizon must be at least 1".into()));
    }
    if !(init_std >= 0.0 && init_std.is_finite()) {
        return Err(EnvError::InvalidParam(format!("init_std must be >= 0, got {init_std}")));
    }
    if !(bound > 0.0 && bound.is_finite()) {
        return Err(EnvError::InvalidParam(format!("action bound must be positive, got {bound}")));
    }
    Ok(())
}

pub(crate) fn gaussian(rng: &mut dyn RngCore) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    StandardNormal.sample(rng)
}
