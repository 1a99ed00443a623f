use super::{check_common, gaussian, EnvError, EnvSpec, Environment, RewardExpansion};
use crate::numerics::{Matrix, Vector};
use rand::RngCore;

/// Parameters of the default double-integrator point mass.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMassParams {
    /// Number of spatial dimensions; the state holds positions then velocities.
    pub dims: usize,
    pub dt: f64,
    pub horizon: usize,
    pub init_std: f64,
    pub noise_std: f64,
    pub action_bound: f64,
    pub position_weight: f64,
    pub velocity_weight: f64,
    pub action_weight: f64,
    /// Starting position along every axis; the goal is the origin at rest.
    pub start: f64,
}

impl Default for PointMassParams {
    fn default() -> Self {
        Self {
            dims: 1,
            dt: 0.1,
            horizon: 20,
            init_std: 0.01,
            noise_std: 0.0,
            action_bound: 5.0,
            position_weight: 1.0,
            velocity_weight: 0.1,
            action_weight: 0.1,
            start: 1.0,
        }
    }
}

/// Linear-Gaussian point mass `x′ = A x + B u (+ noise)` with reward
/// `−(x − g)ᵀ Q (x − g) − uᵀ R u`.
#[derive(Debug, Clone)]
pub struct PointMass {
    spec: EnvSpec,
    a: Matrix,
    b: Matrix,
    q: Matrix,
    r: Matrix,
    goal: Vector,
    init_mean: Vector,
    init_std: f64,
    noise_std: f64,
}

impl PointMass {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: Matrix,
        b: Matrix,
        q: Matrix,
        r: Matrix,
        goal: Vector,
        init_mean: Vector,
        init_std: f64,
        noise_std: f64,
        horizon: usize,
        action_bound: f64,
    ) -> Result<Self, EnvError> {
        let n = a.nrows();
        let m = b.ncols();
        if n == 0 || m == 0 || a.ncols() != n || b.nrows() != n {
            return Err(EnvError::InvalidParam(format!(
                "A must be square and B must have {n} rows (A {}x{}, B {}x{})",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols()
            )));
        }
        if q.shape() != (n, n) || r.shape() != (m, m) || goal.len() != n || init_mean.len() != n {
            return Err(EnvError::InvalidParam("reward weights or goal have the wrong shape".into()));
        }
        check_common(1.0, horizon, init_std, action_bound)?;
        if !(noise_std >= 0.0) {
            return Err(EnvError::InvalidParam(format!("noise_std must be >= 0, got {noise_std}")));
        }
        let spec = EnvSpec {
            name: "pointmass".into(),
            state_dim: n,
            action_dim: m,
            obs_dim: n,
            horizon,
            action_low: Vector::from_element(m, -action_bound),
            action_high: Vector::from_element(m, action_bound),
        };
        Ok(Self {
            spec,
            a,
            b,
            q,
            r,
            goal,
            init_mean,
            init_std,
            noise_std,
        })
    }

    pub fn double_integrator(p: &PointMassParams) -> Result<Self, EnvError> {
        check_common(p.dt, p.horizon, p.init_std, p.action_bound)?;
        if p.dims == 0 {
            return Err(EnvError::InvalidParam("point mass needs at least one dimension".into()));
        }
        let d = p.dims;
        let n = 2 * d;
        let mut a = Matrix::identity(n, n);
        let mut b = Matrix::zeros(n, d);
        let mut q = Matrix::zeros(n, n);
        let mut init = Vector::zeros(n);
        for i in 0..d {
            a[(i, d + i)] = p.dt;
            b[(i, i)] = 0.5 * p.dt * p.dt;
            b[(d + i, i)] = p.dt;
            q[(i, i)] = p.position_weight;
            q[(d + i, d + i)] = p.velocity_weight;
            init[i] = p.start;
        }
        let r = Matrix::identity(d, d) * p.action_weight;
        Self::new(
            a,
            b,
            q,
            r,
            Vector::zeros(n),
            init,
            p.init_std,
            p.noise_std,
            p.horizon,
            p.action_bound,
        )
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn state_weight(&self) -> &Matrix {
        &self.q
    }

    pub fn action_weight(&self) -> &Matrix {
        &self.r
    }

    pub fn goal(&self) -> &Vector {
        &self.goal
    }

    pub fn init_mean(&self) -> &Vector {
        &self.init_mean
    }

    pub fn init_std(&self) -> f64 {
        self.init_std
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }
}

impl Environment for PointMass {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut dyn RngCore) -> Vector {
        let mut x = self.init_mean.clone();
        for v in x.iter_mut() {
            *v += self.init_std * gaussian(rng);
        }
        x
    }

    fn dynamics(&self, x: &Vector, u: &Vector) -> Vector {
        &self.a * x + &self.b * u
    }

    fn reward(&self, x: &Vector, u: &Vector) -> f64 {
        let e = x - &self.goal;
        -e.dot(&(&self.q * &e)) - u.dot(&(&self.r * u))
    }

    fn add_process_noise(&self, next: &mut Vector, rng: &mut dyn RngCore) {
        if self.noise_std > 0.0 {
            for v in next.iter_mut() {
                *v += self.noise_std * gaussian(rng);
            }
        }
    }

    fn linear_dynamics(&self) -> Option<(Matrix, Matrix)> {
        Some((self.a.clone(), self.b.clone()))
    }

    fn expand_reward(&self, x: &Vector, u: &Vector) -> RewardExpansion {
        let e = x - &self.goal;
        let q2 = &self.q * 2.0;
        let r2 = &self.r * 2.0;
        RewardExpansion {
            r: self.reward(x, u),
            r_x: -(&q2 * &e),
            r_u: -(&r2 * u),
            r_xx: -q2,
            r_uu: -r2,
            r_ux: Matrix::zeros(u.len(), x.len()),
        }
    }
}
