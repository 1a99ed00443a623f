//! Action noise: Ornstein-Uhlenbeck, precision-shaped OU innovations and plain
//! Gaussian noise.

use crate::envs::EnvSpec;
use crate::numerics::{cholesky_lower, inverse_psd, NumericsError, Matrix, Vector};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use std::fmt;
use std::str::FromStr;

pub const DEFAULT_OU_THETA: f64 = 0.15;
pub const DEFAULT_PRECISION_START: u64 = 50_000;
/// Rate of the running average used to normalize precision-shaped noise.
pub const DEFAULT_SCALE_RATE: f64 = 0.01;

pub fn standard_normal(dim: usize, rng: &mut dyn RngCore) -> Vector {
    Vector::from_fn(dim, |_, _| StandardNormal.sample(&mut *rng))
}

/// Mean-reverting noise accumulator with mean zero.
#[derive(Debug, Clone, PartialEq)]
pub struct OUProcess {
    pub state: Vector,
    pub theta: f64,
    pub sigma: f64,
    pub dt: f64,
}

impl OUProcess {
    pub fn new(dim: usize, theta: f64, sigma: f64, dt: f64) -> Self {
        assert!(theta >= 0.0 && sigma >= 0.0 && dt > 0.0, "invalid OU parameters");
        Self {
            state: Vector::zeros(dim),
            theta,
            sigma,
            dt,
        }
    }

    pub fn reset(&mut self) {
        self.state.fill(0.0);
    }

    /// Advances the process by one step with an externally drawn innovation.
    pub fn step(&mut self, innovation: &Vector) -> Vector {
        let decay = self.theta * self.dt;
        let gain = self.sigma * self.dt.sqrt();
        self.state = &self.state * (1.0 - decay) + innovation * gain;
        self.state.clone()
    }

    /// Long-run variance `σ²/(2θ)` of the continuous-time process.
    pub fn stationary_variance(&self) -> f64 {
        self.sigma * self.sigma / (2.0 * self.theta)
    }
}

/// Running average of the per-dimension variance of `c·P⁻¹`, used to keep the
/// emitted noise at a fixed overall magnitude while its shape follows `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionScaler {
    pub target_variance: f64,
    pub rate: f64,
    average: Option<f64>,
}

impl PrecisionScaler {
    pub fn new(target_variance: f64, rate: f64) -> Self {
        Self {
            target_variance,
            rate,
            average: None,
        }
    }

    pub fn average(&self) -> Option<f64> {
        self.average
    }

    fn observe(&mut self, value: f64) -> f64 {
        let avg = match self.average {
            None => value,
            Some(a) => a + self.rate * (value - a),
        };
        self.average = Some(avg);
        avg
    }
}

/// `c·P⁻¹` rescaled by the running scale so that its average `trace/d` tracks the
/// target variance.
pub fn precision_covariance(
    p: &Matrix,
    c: f64,
    scaler: &mut PrecisionScaler,
) -> Result<Matrix, NumericsError> {
    let raw = inverse_psd(p)? * c;
    let per_dim = raw.trace() / raw.nrows() as f64;
    let avg = scaler.observe(per_dim);
    Ok(raw * (scaler.target_variance / avg))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    Ou,
    PrecisionOu,
    Gaussian,
}

impl FromStr for NoiseMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ou" => Ok(Self::Ou),
            "precision-ou" => Ok(Self::PrecisionOu),
            "gaussian" => Ok(Self::Gaussian),
            other => Err(format!("unknown noise mode '{other}' (ou, precision-ou, gaussian)")),
        }
    }
}

impl fmt::Display for NoiseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ou => "ou",
            Self::PrecisionOu => "precision-ou",
            Self::Gaussian => "gaussian",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig {
    pub mode: NoiseMode,
    pub sigma: f64,
    pub ou_theta: f64,
    pub ou_dt: f64,
    pub temperature: f64,
    pub precision_start_step: u64,
    pub scale_rate: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            mode: NoiseMode::Ou,
            sigma: 0.3,
            ou_theta: DEFAULT_OU_THETA,
            ou_dt: 1.0,
            temperature: 1.0,
            precision_start_step: DEFAULT_PRECISION_START,
            scale_rate: DEFAULT_SCALE_RATE,
        }
    }
}

/// Per-episode noise generator for one behavior policy.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    config: NoiseConfig,
    plain: OUProcess,
    shaped: OUProcess,
    scaler: PrecisionScaler,
}

impl NoiseSource {
    pub fn new(dim: usize, config: NoiseConfig) -> Self {
        let plain = OUProcess::new(dim, config.ou_theta, config.sigma, config.ou_dt);
        // Shaped innovations already carry the scale σ², so the shaped process has unit volatility.
        let shaped = OUProcess::new(dim, config.ou_theta, 1.0, config.ou_dt);
        let scaler = PrecisionScaler::new(config.sigma * config.sigma, config.scale_rate);
        Self {
            config,
            plain,
            shaped,
            scaler,
        }
    }

    pub fn config(&self) -> &NoiseConfig {
        &self.config
    }

    /// Resets the OU accumulators at the start of an episode. The precision scale is kept.
    pub fn reset(&mut self) {
        self.plain.reset();
        self.shaped.reset();
    }

    /// Noise for one step. `precision` is the current `P(x)`; `global_step` counts real
    /// environment steps and gates precision shaping.
    pub fn sample(
        &mut self,
        precision: &Matrix,
        global_step: u64,
        rng: &mut dyn RngCore,
    ) -> Result<Vector, NumericsError> {
        let d = self.plain.state.len();
        match self.config.mode {
            NoiseMode::Gaussian => Ok(standard_normal(d, rng) * self.config.sigma),
            NoiseMode::Ou => Ok(self.plain.step(&standard_normal(d, rng))),
            NoiseMode::PrecisionOu if global_step < self.config.precision_start_step => {
                Ok(self.plain.step(&standard_normal(d, rng)))
            }
            NoiseMode::PrecisionOu => {
                let cov = precision_covariance(precision, self.config.temperature, &mut self.scaler)?;
                let chol = cholesky_lower(&cov)?;
                let innovation = chol * standard_normal(d, rng);
                Ok(self.shaped.step(&innovation))
            }
        }
    }
}

/// `μ + noise`, clipped to the action bounds.
pub fn behavior_action(mu: &Vector, noise: &Vector, spec: &EnvSpec) -> Vector {
    spec.clip(&(mu + noise))
}
