//! Time-varying linear-Gaussian dynamics fitted per timestep from a batch of
//! episodes, used for imagination rollouts and iLQG.

use crate::numerics::{
    gaussian_condition_with, sample_mean_cov, symmetrize, Matrix, NumericsError, Vector,
    COV_REGULARIZATION,
};
use crate::replay::Transition;
use crate::textfmt::{Block, TextDocument, TextError};
use nalgebra::SymmetricEigen;
use rand::RngCore;
use thiserror::Error;

pub const MODEL_KIND: &str = "tvlg-model";
/// Default floor added to every fitted noise covariance.
pub const DEFAULT_NOISE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("need at least 2 complete episodes to fit dynamics, got {0}")]
    InsufficientEpisodes(usize),
    #[error("episode {episode} has {len} steps, expected {horizon}")]
    RaggedEpisode { episode: usize, len: usize, horizon: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Format(#[from] TextError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Relative ridge term handed to Gaussian conditioning.
    pub relative_reg: f64,
    /// Absolute `λI` added to each noise covariance.
    pub noise_floor: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            relative_reg: COV_REGULARIZATION,
            noise_floor: DEFAULT_NOISE_FLOOR,
        }
    }
}

/// `x′ ~ N(F [x; u] + f, N)` for one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianStep {
    pub f_mat: Matrix,
    pub f_vec: Vector,
    pub noise: Matrix,
    noise_factor: Option<Matrix>,
}

impl LinearGaussianStep {
    pub fn new(f_mat: Matrix, f_vec: Vector, noise: Matrix) -> Self {
        let noise = symmetrize(&noise);
        let noise_factor = psd_factor(&noise);
        Self {
            f_mat,
            f_vec,
            noise,
            noise_factor,
        }
    }

    pub fn state_block(&self) -> Matrix {
        let n = self.f_mat.nrows();
        self.f_mat.columns(0, n).into_owned()
    }

    pub fn action_block(&self) -> Matrix {
        let n = self.f_mat.nrows();
        self.f_mat.columns(n, self.f_mat.ncols() - n).into_owned()
    }

    pub fn mean(&self, x: &Vector, u: &Vector) -> Vector {
        let n = x.len();
        self.f_mat.columns(0, n) * x + self.f_mat.columns(n, u.len()) * u + &self.f_vec
    }
}

/// `W` with `W Wᵀ = a` for symmetric PSD `a`, or `None` when `a` is zero.
fn psd_factor(a: &Matrix) -> Option<Matrix> {
    if a.iter().all(|v| *v == 0.0) {
        return None;
    }
    let eig = SymmetricEigen::new(a.clone());
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    if roots.iter().all(|r| *r == 0.0) {
        return None;
    }
    Some(eig.eigenvectors * Matrix::from_diagonal(&roots))
}

/// Zeroes eigenvalues at or below `tol`; an exact fit otherwise leaves rounding noise.
fn drop_rounding(a: &Matrix, tol: f64) -> Matrix {
    let eig = SymmetricEigen::new(symmetrize(a));
    let vals = eig.eigenvalues.map(|l| if l <= tol { 0.0 } else { l });
    symmetrize(&(&eig.eigenvectors * Matrix::from_diagonal(&vals) * eig.eigenvectors.transpose()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeVaryingLinearModel {
    pub state_dim: usize,
    pub action_dim: usize,
    /// Entry `t − 1` describes the transition out of timestep `t`.
    pub steps: Vec<LinearGaussianStep>,
}

impl TimeVaryingLinearModel {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    /// Step for 1-based timestep `t`, clamped into the fitted range.
    pub fn step_at(&self, t: usize) -> &LinearGaussianStep {
        &self.steps[t.clamp(1, self.steps.len()) - 1]
    }

    pub fn predict_mean(&self, x: &Vector, u: &Vector, t: usize) -> Vector {
        self.step_at(t).mean(x, u)
    }

    /// Draws `x′` from the fitted conditional at timestep `t`.
    pub fn simulate(&self, x: &Vector, u: &Vector, t: usize, rng: &mut dyn RngCore) -> Vector {
        let step = self.step_at(t);
        let mean = step.mean(x, u);
        match &step.noise_factor {
            Some(w) => mean + w * crate::exploration::standard_normal(w.ncols(), rng),
            None => mean,
        }
    }

    /// Mean squared one-step prediction error of the model mean over `data`.
    pub fn one_step_error<'a, I>(&self, data: I) -> f64
    where
        I: IntoIterator<Item = &'a Transition>,
    {
        let (mut total, mut count) = (0.0, 0usize);
        for tr in data {
            let pred = self.predict_mean(&tr.x, &tr.u, tr.t);
            total += (pred - &tr.next_x).norm_squared() / tr.x.len() as f64;
            count += 1;
        }
        if count == 0 {
            f64::NAN
        } else {
            total / count as f64
        }
    }

    pub fn to_document(&self) -> TextDocument {
        let mut doc = TextDocument::new(MODEL_KIND);
        doc.push_meta("state_dim", [self.state_dim]);
        doc.push_meta("action_dim", [self.action_dim]);
        doc.push_meta("horizon", [self.horizon()]);
        for (i, s) in self.steps.iter().enumerate() {
            let t = i + 1;
            doc.push_block(Block::from_matrix(format!("F_{t}"), &s.f_mat));
            doc.push_block(Block::from_vector(format!("f_{t}"), &s.f_vec));
            doc.push_block(Block::from_matrix(format!("N_{t}"), &s.noise));
        }
        doc
    }

    pub fn from_document(doc: &TextDocument) -> Result<Self, DynamicsError> {
        doc.expect_kind(MODEL_KIND)?;
        let state_dim = doc.meta_usize("state_dim")?;
        let action_dim = doc.meta_usize("action_dim")?;
        let horizon = doc.meta_usize("horizon")?;
        let mut steps = Vec::with_capacity(horizon);
        for t in 1..=horizon {
            steps.push(LinearGaussianStep::new(
                doc.block(&format!("F_{t}"))?.to_matrix(),
                doc.block(&format!("f_{t}"))?.to_vector(),
                doc.block(&format!("N_{t}"))?.to_matrix(),
            ));
        }
        Ok(Self {
            state_dim,
            action_dim,
            steps,
        })
    }
}

/// Fits one conditional Gaussian per timestep from the joint statistics of
/// `[x_t; u_t; x_{t+1}]` across `episodes`.
pub fn fit_local_linear(
    episodes: &[Vec<Transition>],
    opts: &FitOptions,
) -> Result<TimeVaryingLinearModel, DynamicsError> {
    if episodes.len() < 2 {
        return Err(DynamicsError::InsufficientEpisodes(episodes.len()));
    }
    let horizon = episodes[0].len();
    for (i, ep) in episodes.iter().enumerate() {
        if ep.len() != horizon || horizon == 0 {
            return Err(DynamicsError::RaggedEpisode {
                episode: i,
                len: ep.len(),
                horizon,
            });
        }
    }
    let n = episodes[0][0].x.len();
    let m = episodes[0][0].u.len();
    let mut steps = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let joint: Vec<Vector> = episodes
            .iter()
            .map(|ep| {
                let tr = &ep[t];
                Vector::from_iterator(
                    2 * n + m,
                    tr.x.iter().chain(tr.u.iter()).chain(tr.next_x.iter()).copied(),
                )
            })
            .collect();
        let (mean, cov) = sample_mean_cov(&joint);
        let cond = gaussian_condition_with(&mean, &cov, n + m, opts.relative_reg)?;
        let scale = cov.diagonal().amax();
        let noise = drop_rounding(&cond.cov, 1e-9 * scale) + Matrix::identity(n, n) * opts.noise_floor;
        steps.push(LinearGaussianStep::new(cond.gain, cond.offset, noise));
    }
    Ok(TimeVaryingLinearModel {
        state_dim: n,
        action_dim: m,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rollouts<F>(episodes: usize, horizon: usize, seed: u64, step: F) -> Vec<Vec<Transition>>
    where
        F: Fn(&Vector, &Vector, &mut ChaCha8Rng) -> Vector,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..episodes)
            .map(|_| {
                let mut x = Vector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
                (1..=horizon)
                    .map(|t| {
                        let u = Vector::from_element(1, rng.random_range(-1.0..1.0));
                        let next = step(&x, &u, &mut rng);
                        let tr = Transition {
                            x: x.clone(),
                            u,
                            r: 0.0,
                            next_x: next.clone(),
                            t,
                        };
                        x = next;
                        tr
                    })
                    .collect()
            })
            .collect()
    }

    fn exact() -> FitOptions {
        FitOptions {
            relative_reg: 1e-12,
            noise_floor: 0.0,
        }
    }

    #[test]
    fn identity_dynamics_are_recovered() {
        let data = rollouts(10, 5, 0, |x, _, _| x.clone());
        let model = fit_local_linear(&data, &exact()).unwrap();
        for s in &model.steps {
            let mut expected = Matrix::zeros(2, 3);
            expected[(0, 0)] = 1.0;
            expected[(1, 1)] = 1.0;
            assert!((&s.f_mat - expected).norm() < 1e-6);
            assert!(s.f_vec.norm() < 1e-6);
            assert!(s.noise.norm() < 1e-9);
        }
    }

    #[test]
    fn too_few_episodes() {
        let data = rollouts(1, 5, 0, |x, _, _| x.clone());
        assert_eq!(
            fit_local_linear(&data, &FitOptions::default()),
            Err(DynamicsError::InsufficientEpisodes(1))
        );
    }

    #[test]
    fn five_episode_batch_fits_and_simulates() {
        let data = rollouts(5, 20, 1, |x, u, rng| {
            Vector::from_vec(vec![x[0] + 0.1 * x[1], x[1] + 0.1 * u[0] + 0.01 * rng.random_range(-1.0..1.0)])
        });
        let model = fit_local_linear(&data, &FitOptions::default()).unwrap();
        assert_eq!(model.horizon(), 20);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut x = data[0][0].x.clone();
        for t in 1..=25 {
            x = model.simulate(&x, &Vector::from_element(1, 0.3), t, &mut rng);
            assert!(x.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn zero_noise_simulation_is_deterministic_mean() {
        let data = rollouts(6, 3, 3, |x, u, _| Vector::from_vec(vec![x[0] + u[0], 2.0 * x[1]]));
        let model = fit_local_linear(&data, &exact()).unwrap();
        let x = Vector::from_vec(vec![0.5, -0.2]);
        let u = Vector::from_element(1, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for t in 1..=3 {
            let a = model.simulate(&x, &u, t, &mut rng);
            assert_eq!(a, model.predict_mean(&x, &u, t));
            assert!((a - Vector::from_vec(vec![0.6, -0.4])).norm() < 1e-6);
        }
        assert!(model.one_step_error(data.iter().flatten()) < 1e-12);
    }

    #[test]
    fn translating_states_shifts_offset_only() {
        let base = rollouts(8, 4, 4, |x, u, rng| {
            Vector::from_vec(vec![0.9 * x[0] + 0.2 * u[0], x[1] - 0.3 * x[0] + 0.05 * rng.random_range(-1.0..1.0)])
        });
        let shift = Vector::from_vec(vec![3.0, -7.0]);
        let shifted: Vec<Vec<Transition>> = base
            .iter()
            .map(|ep| {
                ep.iter()
                    .map(|tr| Transition {
                        x: &tr.x + &shift,
                        next_x: &tr.next_x + &shift,
                        ..tr.clone()
                    })
                    .collect()
            })
            .collect();
        let a = fit_local_linear(&base, &FitOptions::default()).unwrap();
        let b = fit_local_linear(&shifted, &FitOptions::default()).unwrap();
        for (sa, sb) in a.steps.iter().zip(&b.steps) {
            assert!((&sa.f_mat - &sb.f_mat).amax() < 1e-8);
            let expected = &sa.f_vec + &shift - sa.state_block() * &shift;
            assert!((&sb.f_vec - expected).amax() < 1e-8);
        }
    }

    #[test]
    fn clamps_timestep_lookup() {
        let data = rollouts(4, 3, 5, |x, _, _| x * 0.5);
        let model = fit_local_linear(&data, &exact()).unwrap();
        let x = Vector::from_vec(vec![1.0, 1.0]);
        let u = Vector::zeros(1);
        assert_eq!(model.predict_mean(&x, &u, 0), model.predict_mean(&x, &u, 1));
        assert_eq!(model.predict_mean(&x, &u, 9), model.predict_mean(&x, &u, 3));
    }

    #[test]
    fn dump_round_trip() {
        let data = rollouts(4, 3, 6, |x, u, rng| x * 0.5 + Vector::from_element(2, u[0] + rng.random_range(-0.1..0.1)));
        let model = fit_local_linear(&data, &FitOptions::default()).unwrap();
        let text = model.to_document().render();
        let back = TimeVaryingLinearModel::from_document(&TextDocument::parse(&text).unwrap()).unwrap();
        assert_eq!(back, model);
    }
}
