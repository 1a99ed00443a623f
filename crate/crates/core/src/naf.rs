//! Normalized advantage functions.
//!
//! `Q(x, u) = V(x) − ½ (u − μ(x))ᵀ P(x) (u − μ(x))` with `P = L Lᵀ`, where `L` is
//! lower-triangular with an exponentiated diagonal. The greedy action is `μ(x)` in
//! closed form, so Q-learning needs no inner maximization.

use crate::approximator::{soft_update, tri_len, AdamState, Mlp, NafHeads};
use crate::numerics::{Matrix, Vector};
use crate::replay::{ReplayBuffer, ReplayError, Transition};
use rand::Rng;

pub const DEFAULT_MAX_LOG_DIAG: f64 = 5.0;

/// Hyperparameters of the learner and the model-based extensions.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    pub gamma: f64,
    pub tau: f64,
    /// Q updates per real environment step.
    pub updates_per_step: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
    pub head_init_scale: f64,
    /// Upper clamp on the raw diagonal entries of `L` before exponentiation.
    pub max_log_diag: f64,
    pub replay_capacity: usize,
    /// Imagination rollout length.
    pub rollout_length: usize,
    /// Episodes per model refit.
    pub refit_episodes: usize,
    /// Probability of acting with the learned policy rather than iLQG.
    pub policy_mix: f64,
    /// Entropy temperature of the iLQG controller.
    pub temperature: f64,
    /// Last episode that still generates imagination rollouts.
    pub switch_off_episode: Option<usize>,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 1e-3,
            updates_per_step: 5,
            batch_size: 64,
            learning_rate: 1e-3,
            hidden: vec![200, 200],
            head_init_scale: 0.1,
            max_log_diag: DEFAULT_MAX_LOG_DIAG,
            replay_capacity: 1_000_000,
            rollout_length: 5,
            refit_episodes: 5,
            policy_mix: 0.5,
            temperature: 1.0,
            switch_off_episode: None,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(format!("tau must lie in (0, 1], got {}", self.tau));
        }
        if self.updates_per_step == 0 {
            return Err("updates_per_step must be at least 1".into());
        }
        if self.batch_size == 0 {
            return Err("batch_size must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(format!("learning rate must be >= 0, got {}", self.learning_rate));
        }
        if self.refit_episodes == 0 {
            return Err("refit_episodes must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.policy_mix) {
            return Err(format!("policy_mix must lie in [0, 1], got {}", self.policy_mix));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(format!("temperature must be > 0, got {}", self.temperature));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err("hidden layer sizes must be positive".into());
        }
        if self.replay_capacity == 0 {
            return Err("replay capacity must be positive".into());
        }
        Ok(())
    }
}

/// Lower-triangular `L` (diagonal exponentiated) and `P = L Lᵀ`.
pub fn build_precision(l_entries: &Vector, d: usize, max_log_diag: f64) -> (Matrix, Matrix) {
    assert_eq!(l_entries.len(), tri_len(d), "expected d(d+1)/2 entries");
    let mut l = Matrix::zeros(d, d);
    let mut k = 0;
    for i in 0..d {
        for j in 0..=i {
            l[(i, j)] = if i == j {
                l_entries[k].min(max_log_diag).exp()
            } else {
                l_entries[k]
            };
            k += 1;
        }
    }
    let p = &l * l.transpose();
    (l, p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QDecomposition {
    pub q: f64,
    pub value: f64,
    pub advantage: f64,
    pub mu: Vector,
    pub precision: Matrix,
}

pub fn assemble_q(heads: &NafHeads, u: &Vector, max_log_diag: f64) -> QDecomposition {
    let d = heads.mu.len();
    let (l, p) = build_precision(&heads.l_entries, d, max_log_diag);
    let delta = u - &heads.mu;
    let z = l.transpose() * &delta;
    let advantage = -0.5 * z.norm_squared();
    QDecomposition {
        q: heads.value + advantage,
        value: heads.value,
        advantage,
        mu: heads.mu.clone(),
        precision: p,
    }
}

pub fn greedy_action(heads: &NafHeads) -> Vector {
    heads.mu.clone()
}

/// `y = r + γ V′(x′)` from the target network; no terminal masking.
pub fn td_target(r: f64, next_features: &Vector, target: &Mlp, gamma: f64) -> f64 {
    r + gamma * target.forward(next_features).value
}

/// Mean squared Bellman error over a batch and its gradient with respect to every
/// network parameter. `features` and `actions` hold one sample per column.
pub fn bellman_loss_grad(
    net: &Mlp,
    features: &Matrix,
    actions: &Matrix,
    targets: &[f64],
    max_log_diag: f64,
) -> (f64, Vec<f64>) {
    let n = targets.len();
    assert!(n > 0, "empty batch");
    assert_eq!(features.ncols(), n);
    assert_eq!(actions.ncols(), n);
    let d = net.architecture().action_dim;
    let cache = net.forward_batch(features);
    let out = &cache.output;
    let mut d_out = Matrix::zeros(out.nrows(), n);
    let mut loss = 0.0;
    let scale = 1.0 / n as f64;

    for j in 0..n {
        let col = out.column(j);
        let mut l = Matrix::zeros(d, d);
        let mut k = 0;
        for r in 0..d {
            for c in 0..=r {
                let raw = col[1 + d + k];
                l[(r, c)] = if r == c { raw.min(max_log_diag).exp() } else { raw };
                k += 1;
            }
        }
        let delta = Vector::from_fn(d, |i, _| actions[(i, j)] - col[1 + i]);
        let z = l.transpose() * &delta;
        let q = col[0] - 0.5 * z.norm_squared();
        let err = targets[j] - q;
        loss += err * err * scale;
        let g = -2.0 * err * scale;

        d_out[(0, j)] = g;
        // ∂A/∂μ = P δ = L z
        let lz = &l * &z;
        for i in 0..d {
            d_out[(1 + i, j)] = g * lz[i];
        }
        // ∂A/∂L_rc = −δ_r z_c; diagonal entries go through exp (zero past the clamp)
        let mut k = 0;
        for r in 0..d {
            for c in 0..=r {
                let mut dl = -delta[r] * z[c];
                if r == c {
                    let raw = col[1 + d + k];
                    dl = if raw < max_log_diag { dl * l[(r, c)] } else { 0.0 };
                }
                d_out[(1 + d + k, j)] = g * dl;
                k += 1;
            }
        }
    }
    (loss, net.backward_batch(&cache, &d_out))
}

/// Online network, target network and optimizer owned by one training loop.
#[derive(Debug, Clone)]
pub struct NafLearner {
    pub online: Mlp,
    pub target: Mlp,
    pub adam: AdamState,
    pub gamma: f64,
    pub tau: f64,
    pub max_log_diag: f64,
}

impl NafLearner {
    pub fn new(online: Mlp, hp: &HyperParams) -> Self {
        let n = online.params().len();
        Self {
            target: online.clone(),
            online,
            adam: AdamState::new(n, hp.learning_rate),
            gamma: hp.gamma,
            tau: hp.tau,
            max_log_diag: hp.max_log_diag,
        }
    }

    /// Bellman loss of the online network on `batch` with targets from the target network.
    fn targets_and_inputs<F>(&self, batch: &[&Transition], observe: &F) -> (Matrix, Matrix, Vec<f64>)
    where
        F: Fn(&Vector) -> Vector,
    {
        let n = batch.len();
        let in_dim = self.online.architecture().input_dim;
        let d = self.online.architecture().action_dim;
        let mut feats = Matrix::zeros(in_dim, n);
        let mut next_feats = Matrix::zeros(in_dim, n);
        let mut actions = Matrix::zeros(d, n);
        for (j, tr) in batch.iter().enumerate() {
            feats.set_column(j, &observe(&tr.x));
            next_feats.set_column(j, &observe(&tr.next_x));
            actions.set_column(j, &tr.u);
        }
        let next_out = self.target.forward_batch(&next_feats).output;
        let targets = batch
            .iter()
            .enumerate()
            .map(|(j, tr)| tr.r + self.gamma * next_out[(0, j)])
            .collect();
        (feats, actions, targets)
    }

    pub fn batch_loss<F>(&self, batch: &[&Transition], observe: &F) -> f64
    where
        F: Fn(&Vector) -> Vector,
    {
        let (feats, actions, targets) = self.targets_and_inputs(batch, observe);
        bellman_loss_grad(&self.online, &feats, &actions, &targets, self.max_log_diag).0
    }

    /// One Adam step on `batch` followed by the Polyak target update. Returns the loss
    /// before the step.
    pub fn update_on_batch<F>(&mut self, batch: &[&Transition], observe: &F) -> f64
    where
        F: Fn(&Vector) -> Vector,
    {
        let (feats, actions, targets) = self.targets_and_inputs(batch, observe);
        let (loss, grad) =
            bellman_loss_grad(&self.online, &feats, &actions, &targets, self.max_log_diag);
        self.adam.step(self.online.params_mut(), &grad);
        soft_update(&mut self.target, &self.online, self.tau);
        loss
    }

    /// Samples `m` transitions from `replay` and performs one update.
    pub fn update_from<R, F>(
        &mut self,
        replay: &ReplayBuffer,
        m: usize,
        rng: &mut R,
        observe: &F,
    ) -> Result<f64, ReplayError>
    where
        R: Rng + ?Sized,
        F: Fn(&Vector) -> Vector,
    {
        let batch = replay.sample(m, rng)?;
        Ok(self.update_on_batch(&batch, observe))
    }

    pub fn heads(&self, features: &Vector) -> NafHeads {
        self.online.forward(features)
    }
}

/// `iterations` minibatch updates from `replay`, as in the inner loop of NAF
/// Q-learning. Returns the mean pre-update loss, or `None` when `iterations` is zero.
pub fn learn_step<R, F>(
    learner: &mut NafLearner,
    replay: &ReplayBuffer,
    batch_size: usize,
    iterations: usize,
    rng: &mut R,
    observe: &F,
) -> Result<Option<f64>, ReplayError>
where
    R: Rng + ?Sized,
    F: Fn(&Vector) -> Vector,
{
    if replay.len() < batch_size {
        return Err(ReplayError::InsufficientData {
            have: replay.len(),
            need: batch_size,
        });
    }
    if iterations == 0 {
        return Ok(None);
    }
    let mut total = 0.0;
    for _ in 0..iterations {
        total += learner.update_from(replay, batch_size, rng, observe)?;
    }
    Ok(Some(total / iterations as f64))
}
