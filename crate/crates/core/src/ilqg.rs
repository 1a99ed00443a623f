//! iLQG in reward-maximization form: a quadratic dynamic-programming backward pass
//! over a time-varying linear model, a forward pass that produces the new nominal
//! trajectory, and the maximum-entropy linear-Gaussian controller built from it.

use crate::dynamics::TimeVaryingLinearModel;
use crate::envs::{Environment, RewardExpansion};
use crate::exploration::standard_normal;
use crate::numerics::{cholesky_lower, solve_psd, symmetrize, Matrix, NumericsError, Vector};
use crate::replay::Transition;
use crate::textfmt::{Block, TextDocument};
use rand::RngCore;
use thiserror::Error;

pub const GAINS_KIND: &str = "ilqg-gains";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IlqgError {
    #[error("Q_uu at t={t} is not negative definite even with regularization {rho:e}")]
    IllConditioned { t: usize, rho: f64 },
    #[error("horizon mismatch: {0}")]
    Horizon(String),
    #[error("non-finite state at t={0} in forward pass")]
    NonFiniteState(usize),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Nominal trajectory `(x̂_t, û_t)` for `t = 1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Nominal {
    pub states: Vec<Vector>,
    pub actions: Vec<Vector>,
}

impl Nominal {
    pub fn horizon(&self) -> usize {
        self.states.len()
    }

    /// Per-timestep mean of a set of equal-length episodes.
    pub fn mean_of(episodes: &[Vec<Transition>]) -> Self {
        let horizon = episodes.first().map_or(0, Vec::len);
        let count = episodes.len() as f64;
        let mut states = Vec::with_capacity(horizon);
        let mut actions = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let mut x = Vector::zeros(episodes[0][t].x.len());
            let mut u = Vector::zeros(episodes[0][t].u.len());
            for ep in episodes {
                x += &ep[t].x;
                u += &ep[t].u;
            }
            states.push(x / count);
            actions.push(u / count);
        }
        Self { states, actions }
    }
}

/// Levenberg-Marquardt schedule for `Q_uu − ρI`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackwardOptions {
    pub temperature: f64,
    /// First ρ tried; zero leaves `Q_uu` untouched.
    pub initial_rho: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    pub rho_factor: f64,
}

impl Default for BackwardOptions {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            initial_rho: 0.0,
            rho_min: 1e-6,
            rho_max: 1e6,
            rho_factor: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerStep {
    pub k: Vector,
    pub gain: Matrix,
    pub x_hat: Vector,
    pub u_hat: Vector,
    /// Unregularized `Q_uu`.
    pub q_uu: Matrix,
    /// Value Hessian `V_xx` at this timestep.
    pub v_xx: Matrix,
    /// `(−Q_uu − ρI)⁻¹`; the action covariance is this times the temperature.
    pub cov_unit: Matrix,
    cov_factor: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ILQGController {
    pub steps: Vec<ControllerStep>,
    pub temperature: f64,
    /// ρ that made every `Q_uu` negative definite.
    pub rho: f64,
    pub bounds: Option<(Vector, Vector)>,
}

impl ILQGController {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn nominal(&self) -> Nominal {
        Nominal {
            states: self.steps.iter().map(|s| s.x_hat.clone()).collect(),
            actions: self.steps.iter().map(|s| s.u_hat.clone()).collect(),
        }
    }

    /// Mean action `û_t + k_t + K_t (x − x̂_t)` at 1-based timestep `t` (clamped).
    pub fn mean_action(&self, x: &Vector, t: usize) -> Vector {
        let s = &self.steps[t.clamp(1, self.steps.len()) - 1];
        &s.u_hat + &s.k + &s.gain * (x - &s.x_hat)
    }

    /// Action covariance `Σ_t` at temperature `c`.
    pub fn covariance(&self, t: usize, c: f64) -> Matrix {
        &self.steps[t.clamp(1, self.steps.len()) - 1].cov_unit * c
    }

    /// Samples from `N(mean_action, c·(−Q_uu)⁻¹)` and clips to the stored bounds.
    pub fn act(&self, x: &Vector, t: usize, c: f64, rng: &mut dyn RngCore) -> Vector {
        let s = &self.steps[t.clamp(1, self.steps.len()) - 1];
        let mut u = self.mean_action(x, t);
        if c > 0.0 {
            u += &s.cov_factor * standard_normal(u.len(), rng) * c.sqrt();
        }
        self.clip(u)
    }

    fn clip(&self, u: Vector) -> Vector {
        match &self.bounds {
            Some((lo, hi)) => Vector::from_fn(u.len(), |i, _| u[i].clamp(lo[i], hi[i])),
            None => u,
        }
    }

    pub fn to_document(&self) -> TextDocument {
        let mut doc = TextDocument::new(GAINS_KIND);
        doc.push_meta("horizon", [self.horizon()]);
        doc.push_meta("temperature", [format!("{:e}", self.temperature)]);
        doc.push_meta("rho", [format!("{:e}", self.rho)]);
        for (i, s) in self.steps.iter().enumerate() {
            let t = i + 1;
            doc.push_block(Block::from_vector(format!("k_{t}"), &s.k));
            doc.push_block(Block::from_matrix(format!("K_{t}"), &s.gain));
            doc.push_block(Block::from_matrix(format!("Sigma_{t}"), &(&s.cov_unit * self.temperature)));
            doc.push_block(Block::from_vector(format!("x_hat_{t}"), &s.x_hat));
            doc.push_block(Block::from_vector(format!("u_hat_{t}"), &s.u_hat));
        }
        doc
    }
}

/// One backward sweep at fixed ρ. Fails with the timestep whose regularized `Q_uu`
/// is not negative definite.
fn sweep(
    model: &TimeVaryingLinearModel,
    expansions: &[RewardExpansion],
    nominal: &Nominal,
    rho: f64,
) -> Result<Vec<ControllerStep>, usize> {
    let horizon = expansions.len();
    let n = model.state_dim;
    let m = model.action_dim;
    let mut v_xx = Matrix::zeros(n, n);
    let mut v_x = Vector::zeros(n);
    let mut out = Vec::with_capacity(horizon);
    for t in (1..=horizon).rev() {
        let e = &expansions[t - 1];
        let (x_hat, u_hat) = (&nominal.states[t - 1], &nominal.actions[t - 1]);
        let (mut q_xx, mut q_uu, mut q_ux) = (e.r_xx.clone(), e.r_uu.clone(), e.r_ux.clone());
        let (mut q_x, mut q_u) = (e.r_x.clone(), e.r_u.clone());
        if t < horizon {
            let step = model.step_at(t);
            let fx = step.state_block();
            let fu = step.action_block();
            // Offset between the planned next nominal and the model's prediction of it.
            let residual = step.mean(x_hat, u_hat) - &nominal.states[t];
            let v_next = &v_x + &v_xx * residual;
            q_xx += fx.transpose() * &v_xx * &fx;
            q_uu += fu.transpose() * &v_xx * &fu;
            q_ux += fu.transpose() * &v_xx * &fx;
            q_x += fx.transpose() * &v_next;
            q_u += fu.transpose() * &v_next;
        }
        let q_uu = symmetrize(&q_uu);
        let neg_reg = -&q_uu + Matrix::identity(m, m) * rho;
        if cholesky_lower(&neg_reg).is_err() {
            return Err(t);
        }
        // k = −Q̃_uu⁻¹ Q_u = (−Q̃_uu)⁻¹ Q_u, likewise for K.
        let mut rhs = Matrix::zeros(m, 1 + n);
        rhs.set_column(0, &q_u);
        rhs.view_mut((0, 1), (m, n)).copy_from(&q_ux);
        let sol = solve_psd(&neg_reg, &rhs).map_err(|_| t)?;
        let k = sol.column(0).into_owned();
        let gain = sol.columns(1, n).into_owned();
        let cov_unit = solve_psd(&neg_reg, &Matrix::identity(m, m)).map_err(|_| t)?;
        let cov_unit = symmetrize(&cov_unit);
        let cov_factor = cholesky_lower(&cov_unit).map_err(|_| t)?;

        let kt = gain.transpose();
        v_x = &q_x + &kt * &q_uu * &k + &kt * &q_u + q_ux.transpose() * &k;
        v_xx = symmetrize(&(&q_xx + &kt * &q_uu * &gain + &kt * &q_ux + q_ux.transpose() * &gain));
        if v_xx.iter().chain(v_x.iter()).any(|v| !v.is_finite()) {
            return Err(t);
        }
        out.push(ControllerStep {
            k,
            gain,
            x_hat: x_hat.clone(),
            u_hat: u_hat.clone(),
            q_uu,
            v_xx: v_xx.clone(),
            cov_unit,
            cov_factor,
        });
    }
    out.reverse();
    Ok(out)
}

pub fn backward_pass(
    model: &TimeVaryingLinearModel,
    expansions: &[RewardExpansion],
    nominal: &Nominal,
    opts: &BackwardOptions,
) -> Result<ILQGController, IlqgError> {
    let horizon = expansions.len();
    if horizon == 0 || nominal.horizon() != horizon || model.horizon() < horizon {
        return Err(IlqgError::Horizon(format!(
            "{} expansions, nominal of {}, model of {}",
            horizon,
            nominal.horizon(),
            model.horizon()
        )));
    }
    let mut rho = opts.initial_rho;
    loop {
        match sweep(model, expansions, nominal, rho) {
            Ok(steps) => {
                return Ok(ILQGController {
                    steps,
                    temperature: opts.temperature,
                    rho,
                    bounds: None,
                })
            }
            Err(t) => {
                rho = if rho < opts.rho_min { opts.rho_min } else { rho * opts.rho_factor };
                if rho > opts.rho_max {
                    return Err(IlqgError::IllConditioned { t, rho: rho / opts.rho_factor });
                }
            }
        }
    }
}

/// Rolls the mean controller from `x1` through `dynamics(x, u, t)`, stores the
/// visited states and actions as the new nominal, and folds `k` into it.
pub fn forward_pass<F>(
    controller: &mut ILQGController,
    dynamics: F,
    x1: &Vector,
) -> Result<Nominal, IlqgError>
where
    F: Fn(&Vector, &Vector, usize) -> Vector,
{
    let horizon = controller.horizon();
    let mut states = Vec::with_capacity(horizon);
    let mut actions = Vec::with_capacity(horizon);
    let mut x = x1.clone();
    for t in 1..=horizon {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(IlqgError::NonFiniteState(t));
        }
        let u = controller.clip(controller.mean_action(&x, t));
        let next = dynamics(&x, &u, t);
        states.push(x);
        actions.push(u);
        x = next;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(IlqgError::NonFiniteState(horizon + 1));
    }
    for (s, (xs, us)) in controller.steps.iter_mut().zip(states.iter().zip(&actions)) {
        s.x_hat = xs.clone();
        s.u_hat = us.clone();
        s.k.fill(0.0);
    }
    Ok(Nominal { states, actions })
}

/// One iLQG iteration around the mean trajectory of `episodes` under `model`.
pub fn ilqg_one_step(
    episodes: &[Vec<Transition>],
    model: &TimeVaryingLinearModel,
    env: &dyn Environment,
    opts: &BackwardOptions,
) -> Result<ILQGController, IlqgError> {
    if episodes.is_empty() {
        return Err(IlqgError::Horizon("no episodes".into()));
    }
    let nominal = Nominal::mean_of(episodes);
    let expansions: Vec<RewardExpansion> = nominal
        .states
        .iter()
        .zip(&nominal.actions)
        .map(|(x, u)| env.expand_reward(x, u))
        .collect();
    let mut controller = backward_pass(model, &expansions, &nominal, opts)?;
    let spec = env.spec();
    controller.bounds = Some((spec.action_low.clone(), spec.action_high.clone()));
    forward_pass(&mut controller, |x, u, t| model.predict_mean(x, u, t), &nominal.states[0])?;
    Ok(controller)
}
