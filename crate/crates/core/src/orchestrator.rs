//! Training loop: real rollouts under the learned policy or iLQG, periodic model
//! refits, imagination rollouts into the fictional buffer and mixed-ratio Q updates.
//! Plain NAF is the configuration with neither model-based extension enabled.

use crate::approximator::{ApproxError, Architecture, Mlp, CHECKPOINT_KIND};
use crate::config::{ConfigError, TrainConfig, KEYS};
use crate::dynamics::{fit_local_linear, FitOptions, TimeVaryingLinearModel};
use crate::envs::{make_env, EnvError, EnvSpec, Environment};
use crate::exploration::{behavior_action, NoiseSource};
use crate::ilqg::{ilqg_one_step, BackwardOptions, ILQGController};
use crate::naf::{build_precision, NafLearner};
use crate::numerics::Vector;
use crate::replay::{swap_batch, ReplayBuffer, Transition};
use crate::textfmt::{TextDocument, TextError};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::time::Instant;
use thiserror::Error;

/// Named random sub-streams derived from the run seed.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const ENV: u64 = 2;
    pub const EXPLORE: u64 = 3;
    pub const SAMPLE: u64 = 4;
    pub const MODEL: u64 = 5;
    pub const BEHAVIOR: u64 = 6;
    pub const EVAL: u64 = 7;
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Network(#[from] ApproxError),
    #[error("numeric failure at episode {episode}, step {step}: {msg}")]
    Numeric { episode: usize, step: usize, msg: String },
    #[error("writing {path}: {msg}")]
    Io { path: String, msg: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyTag {
    Learned,
    Ilqg,
}

impl fmt::Display for PolicyTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Learned => "learned",
            Self::Ilqg => "ilqg",
        })
    }
}

/// One draw per episode: the learned policy with probability `p`, otherwise iLQG when
/// a controller exists.
pub fn select_behavior_policy<R: Rng + ?Sized>(p: f64, controller_available: bool, rng: &mut R) -> PolicyTag {
    let draw: f64 = rng.random();
    if draw < p || !controller_available {
        PolicyTag::Learned
    } else {
        PolicyTag::Ilqg
    }
}

/// Short model rollouts from states sampled out of `seeds`, acting with the learned
/// policy plus exploration noise. Rewards come from the task's reward function.
#[allow(clippy::too_many_arguments)]
pub fn generate_imagination_rollouts(
    model: Option<&TimeVaryingLinearModel>,
    seeds: &ReplayBuffer,
    learner: &NafLearner,
    env: &dyn Environment,
    noise: &mut NoiseSource,
    m_samples: usize,
    length: usize,
    global_step: u64,
    rng: &mut dyn RngCore,
) -> Vec<Transition> {
    let Some(model) = model else { return Vec::new() };
    if length == 0 || seeds.is_empty() {
        return Vec::new();
    }
    let spec = env.spec();
    let horizon = spec.horizon;
    let mut out = Vec::with_capacity(m_samples * length);
    for _ in 0..m_samples {
        let idx = rng.random_range(0..seeds.len());
        let seed = seeds.get(idx).expect("index in range");
        let mut x = seed.x.clone();
        let mut t = seed.t;
        noise.reset();
        for _ in 0..length {
            let heads = learner.heads(&env.observe(&x));
            let (_, p) = build_precision(&heads.l_entries, spec.action_dim, learner.max_log_diag);
            let Ok(n) = noise.sample(&p, global_step, rng) else { break };
            let u = behavior_action(&heads.mu, &n, spec);
            let next = model.simulate(&x, &u, t, rng);
            let r = env.reward(&x, &u);
            if !r.is_finite() || next.iter().any(|v| !v.is_finite()) {
                break;
            }
            out.push(Transition {
                x,
                u,
                r,
                next_x: next.clone(),
                t,
            });
            x = next;
            t = (t + 1).min(horizon);
        }
    }
    out
}

/// Mean undiscounted return of the deterministic policy `μ(x)`, one entry per episode.
pub fn evaluate_policy(env: &dyn Environment, net: &Mlp, episodes: usize, rng: &mut dyn RngCore) -> Result<Vec<f64>, EnvError> {
    let spec = env.spec();
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut x = env.reset(rng);
        let mut total = 0.0;
        for _ in 0..spec.horizon {
            let u = spec.clip(&net.forward(&env.observe(&x)).mu);
            let (next, r) = env.step(&x, &u, rng)?;
            total += r;
            x = next;
        }
        returns.push(total);
    }
    Ok(returns)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub episode: usize,
    pub env_steps: u64,
    pub eval_return: f64,
    pub bellman_loss: f64,
    pub model_error: f64,
    pub behavior_policy: PolicyTag,
    pub wall_time: f64,
}

pub const METRICS_HEADER: &str = "episode,env_steps,eval_return,bellman_loss,model_error,behavior_policy";

fn num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        v.to_string()
    }
}

/// `metrics.csv` contents. Wall time lives in a separate file so this stays
/// reproducible bit for bit.
pub fn render_metrics(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.episode,
            r.env_steps,
            num(r.eval_return),
            num(r.bellman_loss),
            num(r.model_error),
            r.behavior_policy
        );
    }
    out
}

pub fn render_timing(rows: &[MetricsRow]) -> String {
    let mut out = String::from("episode,wall_time\n");
    for r in rows {
        let _ = writeln!(out, "{},{:.3}", r.episode, r.wall_time);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStats {
    pub episode: usize,
    pub env_steps: u64,
    pub train_return: f64,
    pub behavior: PolicyTag,
    pub imagination_active: bool,
    /// Q updates performed after each real step of the episode.
    pub step_updates: Vec<usize>,
    pub fictional_updates: usize,
    pub real_updates: usize,
    pub fictional_inserted: usize,
    pub refit: bool,
}

pub struct Trainer {
    config: TrainConfig,
    env: Box<dyn Environment>,
    spec: EnvSpec,
    learner: NafLearner,
    replay: ReplayBuffer,
    fictional: ReplayBuffer,
    batch: ReplayBuffer,
    batch_old: ReplayBuffer,
    model: Option<TimeVaryingLinearModel>,
    controller: Option<ILQGController>,
    ilqg_opts: BackwardOptions,
    ilqg_failures: usize,
    noise: NoiseSource,
    imagination_noise: NoiseSource,
    rng_env: ChaCha8Rng,
    rng_explore: ChaCha8Rng,
    rng_sample: ChaCha8Rng,
    rng_model: ChaCha8Rng,
    rng_behavior: ChaCha8Rng,
    rng_eval: ChaCha8Rng,
    episode: usize,
    env_steps: u64,
    loss_sum: f64,
    loss_count: usize,
    model_error: f64,
    last_behavior: PolicyTag,
    started: Instant,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let env = make_env(config.env.as_deref().expect("validated"), &config.env_overrides)?;
        let spec = env.spec().clone();
        let arch = Architecture::new(spec.obs_dim, config.hp.hidden.clone(), spec.action_dim)?;
        let mut rng_init = stream_rng(config.seed, streams::INIT);
        let net = Mlp::init(arch, config.hp.head_init_scale, &mut rng_init);
        let learner = NafLearner::new(net, &config.hp);
        let batch_capacity = config.hp.refit_episodes * spec.horizon;
        let noise = NoiseSource::new(spec.action_dim, config.noise.clone());
        let imagination_noise = NoiseSource::new(spec.action_dim, config.noise.clone());
        let ilqg_opts = BackwardOptions {
            temperature: config.hp.temperature,
            ..config.ilqg
        };
        let seed = config.seed;
        Ok(Self {
            replay: ReplayBuffer::new(config.hp.replay_capacity),
            fictional: ReplayBuffer::new(config.fictional_capacity),
            batch: ReplayBuffer::new(batch_capacity),
            batch_old: ReplayBuffer::new(batch_capacity),
            model: None,
            controller: None,
            ilqg_opts,
            ilqg_failures: 0,
            noise,
            imagination_noise,
            rng_env: stream_rng(seed, streams::ENV),
            rng_explore: stream_rng(seed, streams::EXPLORE),
            rng_sample: stream_rng(seed, streams::SAMPLE),
            rng_model: stream_rng(seed, streams::MODEL),
            rng_behavior: stream_rng(seed, streams::BEHAVIOR),
            rng_eval: stream_rng(seed, streams::EVAL),
            episode: 0,
            env_steps: 0,
            loss_sum: 0.0,
            loss_count: 0,
            model_error: f64::NAN,
            last_behavior: PolicyTag::Learned,
            started: Instant::now(),
            config,
            env,
            spec,
            learner,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn env(&self) -> &dyn Environment {
        self.env.as_ref()
    }

    pub fn network(&self) -> &Mlp {
        &self.learner.online
    }

    pub fn learner(&self) -> &NafLearner {
        &self.learner
    }

    pub fn model(&self) -> Option<&TimeVaryingLinearModel> {
        self.model.as_ref()
    }

    pub fn controller(&self) -> Option<&ILQGController> {
        self.controller.as_ref()
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    pub fn fictional(&self) -> &ReplayBuffer {
        &self.fictional
    }

    pub fn episodes_done(&self) -> usize {
        self.episode
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn ilqg_failures(&self) -> usize {
        self.ilqg_failures
    }

    fn imagination_active(&self, episode: usize) -> bool {
        self.config.mode.uses_imagination()
            && self.config.hp.switch_off_episode.is_none_or(|last| episode <= last)
    }

    pub fn run_episode(&mut self) -> Result<EpisodeStats, TrainError> {
        let ep = self.episode + 1;
        let hp = self.config.hp.clone();
        let horizon = self.spec.horizon;
        let imagination = self.imagination_active(ep);
        let period = self.config.imagination_period.unwrap_or(horizon) as u64;
        let behavior = if self.config.mode.uses_ilqg() {
            select_behavior_policy(hp.policy_mix, self.controller.is_some(), &mut self.rng_behavior)
        } else {
            PolicyTag::Learned
        };
        let numeric = |step: usize, msg: String| TrainError::Numeric { episode: ep, step, msg };

        let mut stats = EpisodeStats {
            episode: ep,
            env_steps: 0,
            train_return: 0.0,
            behavior,
            imagination_active: imagination,
            step_updates: Vec::with_capacity(horizon),
            fictional_updates: 0,
            real_updates: 0,
            fictional_inserted: 0,
            refit: false,
        };
        self.noise.reset();
        let mut x = self.env.reset(&mut self.rng_env);
        for t in 1..=horizon {
            let heads = self.learner.heads(&self.env.observe(&x));
            let (_, p) = build_precision(&heads.l_entries, self.spec.action_dim, hp.max_log_diag);
            let n = self
                .noise
                .sample(&p, self.env_steps, &mut self.rng_explore)
                .map_err(|e| numeric(t, e.to_string()))?;
            let base = match (behavior, &self.controller) {
                (PolicyTag::Ilqg, Some(c)) => c.act(&x, t, hp.temperature, &mut self.rng_behavior),
                _ => heads.mu,
            };
            let u = behavior_action(&base, &n, &self.spec);
            let (next, r) = self.env.step(&x, &u, &mut self.rng_env).map_err(|e| numeric(t, e.to_string()))?;
            stats.train_return += r;
            let tr = Transition {
                x,
                u,
                r,
                next_x: next.clone(),
                t,
            };
            self.replay.push(tr.clone());
            self.batch.push(tr);
            self.env_steps += 1;

            if imagination && self.env_steps.is_multiple_of(period) {
                let synthetic = generate_imagination_rollouts(
                    self.model.as_ref(),
                    &self.batch_old,
                    &self.learner,
                    self.env.as_ref(),
                    &mut self.imagination_noise,
                    self.config.imagination_samples,
                    hp.rollout_length,
                    self.env_steps,
                    &mut self.rng_model,
                );
                stats.fictional_inserted += synthetic.len();
                for s in synthetic {
                    self.fictional.push(s);
                }
            }

            let mut updates = 0;
            if self.replay.len() >= hp.batch_size {
                let env = self.env.as_ref();
                let observe = |x: &Vector| env.observe(x);
                if imagination && !self.fictional.is_empty() {
                    for _ in 0..hp.updates_per_step * hp.rollout_length {
                        let loss = self
                            .learner
                            .update_from(&self.fictional, hp.batch_size, &mut self.rng_sample, &observe)
                            .map_err(|e| numeric(t, e.to_string()))?;
                        self.loss_sum += loss;
                        self.loss_count += 1;
                        stats.fictional_updates += 1;
                        updates += 1;
                    }
                }
                for _ in 0..hp.updates_per_step {
                    let loss = self
                        .learner
                        .update_from(&self.replay, hp.batch_size, &mut self.rng_sample, &observe)
                        .map_err(|e| numeric(t, e.to_string()))?;
                    self.loss_sum += loss;
                    self.loss_count += 1;
                    stats.real_updates += 1;
                    updates += 1;
                }
                if !self.learner.online.params().iter().all(|v| v.is_finite()) {
                    return Err(numeric(t, "network parameters became non-finite".into()));
                }
            }
            stats.step_updates.push(updates);
            x = next;
        }

        if self.batch.is_full() {
            swap_batch(&mut self.batch, &mut self.batch_old).expect("batch is full");
            stats.refit = self.refit();
        }
        self.episode = ep;
        self.last_behavior = behavior;
        stats.env_steps = self.env_steps;
        Ok(stats)
    }

    /// Refits the model on the latest batch and rebuilds the controller. Returns
    /// whether a model was fitted.
    fn refit(&mut self) -> bool {
        let episodes = self.batch_old.episodes(self.spec.horizon);
        let Ok(model) = fit_local_linear(&episodes, &FitOptions::default()) else {
            return false;
        };
        self.model_error = model.one_step_error(self.batch_old.iter());
        if self.config.mode.uses_ilqg() {
            match ilqg_one_step(&episodes, &model, self.env.as_ref(), &self.ilqg_opts) {
                Ok(c) => {
                    let rho = c.rho / self.ilqg_opts.rho_factor;
                    self.ilqg_opts.initial_rho = if rho < self.ilqg_opts.rho_min { 0.0 } else { rho };
                    self.controller = Some(c);
                }
                Err(_) => self.ilqg_failures += 1,
            }
        }
        if self.config.clear_fictional_on_refit {
            self.fictional.clear();
        }
        self.model = Some(model);
        true
    }

    /// Deterministic-policy evaluation on the evaluation stream.
    pub fn evaluate(&mut self, episodes: usize) -> Result<f64, TrainError> {
        let returns = evaluate_policy(self.env.as_ref(), &self.learner.online, episodes, &mut self.rng_eval).map_err(|e| {
            TrainError::Numeric {
                episode: self.episode,
                step: 0,
                msg: format!("evaluation: {e}"),
            }
        })?;
        Ok(returns.iter().sum::<f64>() / returns.len() as f64)
    }

    pub fn metrics_row(&mut self) -> Result<MetricsRow, TrainError> {
        let eval_return = self.evaluate(self.config.eval_episodes)?;
        let bellman_loss = if self.loss_count > 0 {
            self.loss_sum / self.loss_count as f64
        } else {
            f64::NAN
        };
        self.loss_sum = 0.0;
        self.loss_count = 0;
        Ok(MetricsRow {
            episode: self.episode,
            env_steps: self.env_steps,
            eval_return,
            bellman_loss,
            model_error: self.model_error,
            behavior_policy: self.last_behavior,
            wall_time: self.started.elapsed().as_secs_f64(),
        })
    }
}

pub struct TrainOutcome {
    pub metrics: Vec<MetricsRow>,
    pub episodes: Vec<EpisodeStats>,
    pub trainer: Trainer,
}

impl TrainOutcome {
    /// Real environment steps at the first metrics row whose return reaches `threshold`.
    pub fn steps_to_reach(&self, threshold: f64) -> Option<u64> {
        self.metrics.iter().find(|r| r.eval_return >= threshold).map(|r| r.env_steps)
    }

    pub fn final_return(&self) -> Option<f64> {
        self.metrics.last().map(|r| r.eval_return)
    }
}

/// Runs the configured number of episodes, evaluating every `eval_interval`, and
/// writes artifacts when an output directory is set.
pub fn train(config: TrainConfig) -> Result<TrainOutcome, TrainError> {
    let mut trainer = Trainer::new(config)?;
    let mut metrics = Vec::new();
    let mut episodes = Vec::new();
    let cfg = trainer.config().clone();
    for _ in 0..cfg.episodes {
        let stats = trainer.run_episode()?;
        let ep = stats.episode;
        episodes.push(stats);
        if ep % cfg.eval_interval == 0 {
            let row = trainer.metrics_row()?;
            let reached = cfg.target_return.is_some_and(|target| row.eval_return >= target);
            metrics.push(row);
            if reached {
                break;
            }
        }
    }
    let outcome = TrainOutcome {
        metrics,
        episodes,
        trainer,
    };
    if let Some(dir) = &cfg.out {
        write_artifacts(Path::new(dir), &outcome)?;
    }
    Ok(outcome)
}

fn write_file(path: &Path, contents: &str) -> Result<(), TrainError> {
    std::fs::write(path, contents).map_err(|e| TrainError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

pub fn write_artifacts(dir: &Path, outcome: &TrainOutcome) -> Result<(), TrainError> {
    std::fs::create_dir_all(dir).map_err(|e| TrainError::Io {
        path: dir.display().to_string(),
        msg: e.to_string(),
    })?;
    let trainer = &outcome.trainer;
    let cfg = trainer.config();
    write_file(&dir.join("metrics.csv"), &render_metrics(&outcome.metrics))?;
    write_file(&dir.join("timing.csv"), &render_timing(&outcome.metrics))?;
    write_file(&dir.join("checkpoint.txt"), &save_checkpoint(trainer.network(), cfg))?;
    let mut echo = String::from("# resolved configuration\n# update order per step: fictional batches first, then real batches\n");
    echo.push_str(&cfg.render());
    write_file(&dir.join("config.txt"), &echo)?;
    if cfg.dump_model {
        if let Some(m) = trainer.model() {
            write_file(&dir.join("model.txt"), &m.to_document().render())?;
        }
    }
    if cfg.dump_gains {
        if let Some(c) = trainer.controller() {
            write_file(&dir.join("gains.txt"), &c.to_document().render())?;
        }
    }
    if cfg.dump_transitions {
        let path = dir.join("transitions.csv");
        let file = std::fs::File::create(&path).map_err(|e| TrainError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        trainer.replay().write_csv(file).map_err(|e| TrainError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
    }
    Ok(())
}

/// Network parameters plus the configuration needed to rebuild its task.
pub fn save_checkpoint(net: &Mlp, config: &TrainConfig) -> String {
    let mut doc = net.to_document();
    let entries: Vec<String> = KEYS
        .iter()
        .filter(|k| **k != "train.out")
        .map(|k| format!("{k}={}", config.get(k).expect("known key")))
        .collect();
    doc.push_meta("config", entries);
    doc.render()
}

pub fn load_checkpoint(text: &str) -> Result<(Mlp, TrainConfig), TrainError> {
    let doc = TextDocument::parse(text).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
    doc.expect_kind(CHECKPOINT_KIND)
        .map_err(|e: TextError| TrainError::Checkpoint(e.to_string()))?;
    let net = Mlp::from_document(&doc)?;
    let mut config = TrainConfig::default();
    if let Ok(entries) = doc.meta("config") {
        for e in entries {
            config.apply_assignment(e)?;
        }
    }
    Ok((net, config))
}
