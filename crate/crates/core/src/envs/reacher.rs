use super::{check_common, gaussian, rk4_step, EnvError, EnvSpec, Environment, DEFAULT_DT};
use crate::numerics::Vector;
use rand::RngCore;

#[derive(Debug, Clone, PartialEq)]
pub struct ReacherParams {
    pub dt: f64,
    pub horizon: usize,
    pub init_std: f64,
    pub max_torque: f64,
    pub link_lengths: [f64; 2],
    pub link_masses: [f64; 2],
    pub damping: f64,
    /// Fixed fingertip target in the arm plane.
    pub target: [f64; 2],
    pub tip_weight: f64,
    pub velocity_weight: f64,
    pub action_weight: f64,
}

impl Default for ReacherParams {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            horizon: 50,
            init_std: 0.01,
            max_torque: 1.0,
            link_lengths: [0.5, 0.5],
            link_masses: [1.0, 1.0],
            damping: 0.5,
            target: [0.2, 0.6],
            tip_weight: 1.0,
            velocity_weight: 0.01,
            action_weight: 0.01,
        }
    }
}

/// Planar two-link arm with point masses at the link ends, no gravity.
///
/// State is `[q₁, q₂, q̇₁, q̇₂]`; features encode both angles as cosine/sine pairs.
#[derive(Debug, Clone)]
pub struct Reacher {
    spec: EnvSpec,
    p: ReacherParams,
}

impl Reacher {
    pub fn new(p: ReacherParams) -> Result<Self, EnvError> {
        check_common(p.dt, p.horizon, p.init_std, p.max_torque)?;
        if p.link_lengths.iter().chain(p.link_masses.iter()).any(|v| !(*v > 0.0)) {
            return Err(EnvError::InvalidParam("link lengths and masses must be positive".into()));
        }
        let spec = EnvSpec {
            name: "reacher".into(),
            state_dim: 4,
            action_dim: 2,
            obs_dim: 6,
            horizon: p.horizon,
            action_low: Vector::from_element(2, -p.max_torque),
            action_high: Vector::from_element(2, p.max_torque),
        };
        Ok(Self { spec, p })
    }

    pub fn fingertip(&self, x: &Vector) -> [f64; 2] {
        let [l1, l2] = self.p.link_lengths;
        let (q1, q12) = (x[0], x[0] + x[1]);
        [l1 * q1.cos() + l2 * q12.cos(), l1 * q1.sin() + l2 * q12.sin()]
    }

    fn derivative(&self, s: &Vector, u: &Vector) -> Vector {
        let [l1, l2] = self.p.link_lengths;
        let [m1, m2] = self.p.link_masses;
        let (q2, dq1, dq2) = (s[1], s[2], s[3]);
        let c2 = q2.cos();
        let m11 = (m1 + m2) * l1 * l1 + m2 * l2 * l2 + 2.0 * m2 * l1 * l2 * c2;
        let m12 = m2 * l2 * l2 + m2 * l1 * l2 * c2;
        let m22 = m2 * l2 * l2;
        let h = m2 * l1 * l2 * q2.sin();
        let rhs1 = u[0] + h * (2.0 * dq1 * dq2 + dq2 * dq2) - self.p.damping * dq1;
        let rhs2 = u[1] - h * dq1 * dq1 - self.p.damping * dq2;
        let det = m11 * m22 - m12 * m12;
        let ddq1 = (m22 * rhs1 - m12 * rhs2) / det;
        let ddq2 = (m11 * rhs2 - m12 * rhs1) / det;
        Vector::from_vec(vec![dq1, dq2, ddq1, ddq2])
    }
}

impl Environment for Reacher {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut dyn RngCore) -> Vector {
        let mut x = Vector::zeros(4);
        x[0] = self.p.init_std * gaussian(rng);
        x[1] = self.p.init_std * gaussian(rng);
        x
    }

    fn dynamics(&self, x: &Vector, u: &Vector) -> Vector {
        rk4_step(|s| self.derivative(s, u), x, self.p.dt)
    }

    fn reward(&self, x: &Vector, u: &Vector) -> f64 {
        let tip = self.fingertip(x);
        let dx = tip[0] - self.p.target[0];
        let dy = tip[1] - self.p.target[1];
        -self.p.tip_weight * (dx * dx + dy * dy)
            - self.p.velocity_weight * (x[2] * x[2] + x[3] * x[3])
            - self.p.action_weight * u.norm_squared()
    }

    fn observe(&self, x: &Vector) -> Vector {
        Vector::from_vec(vec![x[0].cos(), x[0].sin(), x[1].cos(), x[1].sin(), x[2], x[3]])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rest_without_torque_stays_at_rest() {
        let env = Reacher::new(ReacherParams::default()).unwrap();
        let x = Vector::from_vec(vec![0.3, -0.8, 0.0, 0.0]);
        let next = env.dynamics(&x, &Vector::zeros(2));
        assert!((next - x).norm() < 1e-12);
    }

    #[test]
    fn torque_on_shoulder_rotates_arm() {
        let env = Reacher::new(ReacherParams::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut x = Vector::zeros(4);
        for _ in 0..10 {
            x = env.step(&x, &Vector::from_vec(vec![0.5, 0.0]), &mut rng).unwrap().0;
        }
        assert!(x[0] > 0.0 && x[2] > 0.0);
    }

    #[test]
    fn reward_is_zero_only_at_target_at_rest() {
        let env = Reacher::new(ReacherParams::default()).unwrap();
        // Solve the inverse kinematics for the target with the elbow-down branch.
        let [l1, l2] = env.p.link_lengths;
        let [tx, ty] = env.p.target;
        let c2 = (tx * tx + ty * ty - l1 * l1 - l2 * l2) / (2.0 * l1 * l2);
        let q2 = c2.acos();
        let q1 = ty.atan2(tx) - (l2 * q2.sin()).atan2(l1 + l2 * q2.cos());
        let x = Vector::from_vec(vec![q1, q2, 0.0, 0.0]);
        assert!(env.reward(&x, &Vector::zeros(2)).abs() < 1e-20);
        assert!(env.reward(&x, &Vector::from_vec(vec![0.1, 0.0])) < 0.0);
    }
}
