use super::{check_common, gaussian, rk4_step, EnvError, EnvSpec, Environment, DEFAULT_DT};
use crate::numerics::Vector;
use rand::RngCore;
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq)]
pub struct PendulumParams {
    pub dt: f64,
    pub horizon: usize,
    /// Standard deviation of the initial angle, truncated at three deviations.
    pub init_std: f64,
    pub max_torque: f64,
    pub gravity: f64,
    pub mass: f64,
    pub length: f64,
    pub damping: f64,
    pub tip_weight: f64,
    pub velocity_weight: f64,
    pub action_weight: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            horizon: 100,
            init_std: 0.003,
            max_torque: 2.0,
            gravity: 9.81,
            mass: 1.0,
            length: 1.0,
            damping: 0.1,
            tip_weight: 1.0,
            velocity_weight: 0.1,
            action_weight: 0.01,
        }
    }
}

/// Torque-limited pendulum; angle 0 is upright and episodes start hanging down.
///
/// State is `[θ, θ̇]`, features are `[cos θ, sin θ, θ̇]`.
#[derive(Debug, Clone)]
pub struct Pendulum {
    spec: EnvSpec,
    p: PendulumParams,
}

impl Pendulum {
    pub fn new(p: PendulumParams) -> Result<Self, EnvError> {
        check_common(p.dt, p.horizon, p.init_std, p.max_torque)?;
        if !(p.mass > 0.0 && p.length > 0.0) {
            return Err(EnvError::InvalidParam("pendulum mass and length must be positive".into()));
        }
        let spec = EnvSpec {
            name: "pendulum".into(),
            state_dim: 2,
            action_dim: 1,
            obs_dim: 3,
            horizon: p.horizon,
            action_low: Vector::from_element(1, -p.max_torque),
            action_high: Vector::from_element(1, p.max_torque),
        };
        Ok(Self { spec, p })
    }

    pub fn params(&self) -> &PendulumParams {
        &self.p
    }

    fn derivative(&self, s: &Vector, torque: f64) -> Vector {
        let p = &self.p;
        let acc = p.gravity / p.length * s[0].sin() - p.damping * s[1]
            + torque / (p.mass * p.length * p.length);
        Vector::from_vec(vec![s[1], acc])
    }
}

impl Environment for Pendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut dyn RngCore) -> Vector {
        let lim = 3.0 * self.p.init_std;
        let noise = (self.p.init_std * gaussian(rng)).clamp(-lim, lim);
        Vector::from_vec(vec![PI + noise, 0.0])
    }

    fn dynamics(&self, x: &Vector, u: &Vector) -> Vector {
        rk4_step(|s| self.derivative(s, u[0]), x, self.p.dt)
    }

    fn reward(&self, x: &Vector, u: &Vector) -> f64 {
        // |tip − top|² = 2 l² (1 − cos θ)
        let l = self.p.length;
        let tip = 2.0 * l * l * (1.0 - x[0].cos());
        -self.p.tip_weight * tip - self.p.velocity_weight * x[1] * x[1] - self.p.action_weight * u[0] * u[0]
    }

    fn observe(&self, x: &Vector) -> Vector {
        Vector::from_vec(vec![x[0].cos(), x[0].sin(), x[1]])
    }
}
