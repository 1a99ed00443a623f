use naf_core::approximator::{soft_update, Architecture, Mlp, NafHeads};
use naf_core::checks::{linear_gaussian_episodes, lq_problem, random_lq_system};
use naf_core::config::{Mode, TrainConfig};
use naf_core::dynamics::{fit_local_linear, FitOptions};
use naf_core::envs::{make_env, EnvOverrides, Environment, RewardExpansion, ENV_NAMES};
use naf_core::exploration::{precision_covariance, NoiseConfig, NoiseMode, NoiseSource, PrecisionScaler};
use naf_core::ilqg::{backward_pass, BackwardOptions, Nominal};
use naf_core::naf::{assemble_q, bellman_loss_grad, build_precision, greedy_action};
use naf_core::numerics::{cholesky_lower, finite_diff_grad, frobenius, gaussian_condition, Matrix, Vector};
use naf_core::orchestrator::Trainer;
use naf_core::replay::{ReplayBuffer, Transition};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gauss(r: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(r)
}

fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| gauss(r))
}

fn random_vector(r: &mut ChaCha8Rng, n: usize) -> Vector {
    Vector::from_fn(n, |_, _| gauss(r))
}

fn random_pd(r: &mut ChaCha8Rng, n: usize) -> Matrix {
    let g = random_matrix(r, n, n);
    &g * g.transpose() + Matrix::identity(n, n) * 0.1
}

fn random_heads(r: &mut ChaCha8Rng, d: usize, scale: f64) -> NafHeads {
    NafHeads {
        value: gauss(r),
        mu: random_vector(r, d) * scale,
        l_entries: random_vector(r, d * (d + 1) / 2) * scale,
    }
}

fn cases(n: u32) -> ProptestConfig {
    ProptestConfig { cases: n, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(cases(64))]

    #[test]
    fn cholesky_reconstructs(seed in any::<u64>(), n in 1usize..7) {
        let a = random_pd(&mut rng(seed), n);
        let l = cholesky_lower(&a).unwrap();
        prop_assert!(frobenius(&(&l * l.transpose() - &a)) <= 1e-10 * frobenius(&a));
    }

    #[test]
    fn conditional_covariance_is_symmetric_and_floored_pd(seed in any::<u64>(), n in 1usize..4, m in 1usize..4, rank in 1usize..8) {
        let mut r = rng(seed);
        let g = random_matrix(&mut r, n + m, rank);
        let cov = &g * g.transpose();
        let mean = random_vector(&mut r, n + m);
        let c = gaussian_condition(&mean, &cov, n).unwrap();
        prop_assert!(frobenius(&(&c.cov - c.cov.transpose())) <= 1e-12 * (1.0 + frobenius(&c.cov)));
        let floored = &c.cov + Matrix::identity(m, m) * 1e-6 * (1.0 + cov.diagonal().max());
        prop_assert!(cholesky_lower(&floored).is_ok());
    }

    #[test]
    fn finite_difference_gradient_of_quadratic(seed in any::<u64>(), n in 1usize..6) {
        let mut r = rng(seed);
        let a = random_pd(&mut r, n);
        let x = random_vector(&mut r, n);
        let h = 1e-4;
        let g = finite_diff_grad(|v| 0.5 * (v.transpose() * &a * v)[(0, 0)], &x, h);
        prop_assert!((g - &a * &x).amax() <= 1e-6 * (1.0 + a.amax()));
    }

    #[test]
    fn env_rollouts_are_deterministic_nonpositive_and_full_length(seed in any::<u64>(), which in 0usize..3) {
        let env = make_env(ENV_NAMES[which], &EnvOverrides::default()).unwrap();
        let spec = env.spec().clone();
        let mut ar = rng(seed ^ 0xa5a5);
        let actions: Vec<Vector> = (0..spec.horizon).map(|_| random_vector(&mut ar, spec.action_dim)).collect();
        let roll = |env: &dyn Environment| {
            let mut r = rng(seed);
            let mut x = env.reset(&mut r);
            let mut out = Vec::new();
            for u in &actions {
                let (next, rew) = env.step(&x, u, &mut r).unwrap();
                out.push((next.clone(), rew));
                x = next;
            }
            out
        };
        let a = roll(env.as_ref());
        let b = roll(env.as_ref());
        prop_assert_eq!(a.len(), spec.horizon);
        prop_assert!(a.iter().all(|(_, r)| *r <= 0.0));
        for ((xa, ra), (xb, rb)) in a.iter().zip(&b) {
            prop_assert_eq!(ra.to_bits(), rb.to_bits());
            prop_assert!(xa.iter().zip(xb.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }

    #[test]
    fn bellman_gradient_matches_central_differences(seed in any::<u64>(), obs in 1usize..4, d in 1usize..3, h1 in 1usize..9, h2 in 1usize..9, batch in 1usize..6) {
        let mut r = rng(seed);
        let arch = Architecture::new(obs, vec![h1, h2], d).unwrap();
        let net = Mlp::init(arch.clone(), 0.5, &mut r);
        let features = random_matrix(&mut r, obs, batch);
        let actions = random_matrix(&mut r, d, batch);
        let targets: Vec<f64> = (0..batch).map(|_| gauss(&mut r)).collect();
        let (_, grad) = bellman_loss_grad(&net, &features, &actions, &targets, 5.0);
        let loss_at = |p: &[f64]| {
            let probe = Mlp::from_params(arch.clone(), p.to_vec()).unwrap();
            bellman_loss_grad(&probe, &features, &actions, &targets, 5.0).0
        };
        let h = 1e-5;
        let mut p = net.params().to_vec();
        for i in 0..p.len() {
            let orig = p[i];
            p[i] = orig + h;
            let up = loss_at(&p);
            p[i] = orig - h;
            let down = loss_at(&p);
            p[i] = orig;
            let fd = (up - down) / (2.0 * h);
            if grad[i].abs() > 1e-8 {
                // ReLU kinks inside the probe interval make the difference meaningless there.
                let kink = (up - loss_at(&p)) - (loss_at(&p) - down);
                if kink.abs() > 1e-6 * (1.0 + up.abs()) {
                    continue;
                }
                prop_assert!((fd - grad[i]).abs() / grad[i].abs().max(fd.abs()) < 1e-4, "coordinate {}: {} vs {}", i, grad[i], fd);
            }
        }
    }

    #[test]
    fn soft_update_contracts_toward_source(seed in any::<u64>(), tau in 0.0f64..1.0) {
        let mut r = rng(seed);
        let arch = Architecture::new(2, vec![4], 2).unwrap();
        let source = Mlp::init(arch.clone(), 1.0, &mut r);
        let mut target = Mlp::init(arch, 1.0, &mut r);
        let dist = |a: &Mlp, b: &Mlp| a.params().iter().zip(b.params()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let before = dist(&target, &source);
        soft_update(&mut target, &source, tau);
        prop_assert!((dist(&target, &source) - (1.0 - tau) * before).abs() <= 1e-12 * (1.0 + before));
    }

    #[test]
    fn forward_does_not_touch_parameters(seed in any::<u64>()) {
        let mut r = rng(seed);
        let net = Mlp::init(Architecture::new(3, vec![5, 5], 2).unwrap(), 1.0, &mut r);
        let before = net.params().to_vec();
        let x = random_vector(&mut r, 3);
        let a = net.forward(&x);
        let b = net.forward(&x);
        prop_assert_eq!(a, b);
        prop_assert_eq!(before.as_slice(), net.params());
    }

    #[test]
    fn greedy_action_maximizes_q(seed in any::<u64>(), d in 1usize..4, scale in 0.1f64..3.0) {
        let mut r = rng(seed);
        let heads = random_heads(&mut r, d, scale);
        let best = assemble_q(&heads, &greedy_action(&heads), 5.0).q;
        for _ in 0..1000 {
            let u = random_vector(&mut r, d) * 3.0;
            prop_assert!(assemble_q(&heads, &u, 5.0).q <= best);
        }
    }

    // Much larger raw entries push cond(P) past 1e16, where no floating Cholesky can succeed.
    #[test]
    fn precision_always_factors(seed in any::<u64>(), d in 1usize..5, scale in 0.01f64..3.0) {
        let mut r = rng(seed);
        let entries = random_vector(&mut r, d * (d + 1) / 2) * scale;
        let (_, p) = build_precision(&entries, d, 5.0);
        prop_assert!(cholesky_lower(&p).is_ok());
    }

    #[test]
    fn exploration_state_never_moves_the_greedy_action(seed in any::<u64>(), mode in 0usize..3) {
        let mut r = rng(seed);
        let heads = random_heads(&mut r, 2, 1.0);
        let before = greedy_action(&heads);
        let mode = [NoiseMode::Ou, NoiseMode::PrecisionOu, NoiseMode::Gaussian][mode];
        let mut noise = NoiseSource::new(2, NoiseConfig { mode, precision_start_step: 0, ..NoiseConfig::default() });
        let (_, p) = build_precision(&heads.l_entries, 2, 5.0);
        for step in 0..50 {
            noise.sample(&p, step, &mut r).unwrap();
        }
        prop_assert_eq!(before, greedy_action(&heads));
    }

    #[test]
    fn shaped_covariance_shares_eigenvectors_with_precision(seed in any::<u64>(), d in 1usize..5) {
        let mut r = rng(seed);
        let p = random_pd(&mut r, d);
        let mut scaler = PrecisionScaler::new(0.09, 0.01);
        let cov = precision_covariance(&p, 1.0, &mut scaler).unwrap();
        // Matrices with a common eigenbasis commute.
        let comm = &cov * &p - &p * &cov;
        prop_assert!(frobenius(&comm) <= 1e-8 * frobenius(&cov) * frobenius(&p));
    }

    #[test]
    fn replay_keeps_latest_transitions_unchanged(seed in any::<u64>(), capacity in 1usize..20, pushes in 0usize..60) {
        let mut r = rng(seed);
        let mut buf = ReplayBuffer::new(capacity);
        let made: Vec<Transition> = (0..pushes)
            .map(|i| Transition { x: random_vector(&mut r, 2), u: random_vector(&mut r, 1), r: -(i as f64), next_x: random_vector(&mut r, 2), t: i % 7 + 1 })
            .collect();
        for tr in &made {
            buf.push(tr.clone());
        }
        if !buf.is_empty() {
            for _ in 0..10 {
                buf.sample(5, &mut r).unwrap();
            }
        }
        let kept = &made[pushes.saturating_sub(capacity)..];
        prop_assert_eq!(buf.len(), kept.len());
        prop_assert_eq!(buf.inserted(), pushes as u64);
        for (i, tr) in kept.iter().enumerate() {
            prop_assert_eq!(buf.get(i), Some(tr));
        }
    }

    #[test]
    fn translated_data_leaves_dynamics_matrices_unchanged(seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = random_matrix(&mut r, 2, 2) * 0.4;
        let b = random_matrix(&mut r, 2, 1);
        let episodes = linear_gaussian_episodes(&a, &b, &(Matrix::identity(2, 2) * 0.1), 8, 6, &mut r);
        let c = random_vector(&mut r, 2) * 5.0;
        let shifted: Vec<Vec<Transition>> = episodes
            .iter()
            .map(|ep| ep.iter().map(|tr| Transition { x: &tr.x + &c, next_x: &tr.next_x + &c, ..tr.clone() }).collect())
            .collect();
        let m0 = fit_local_linear(&episodes, &FitOptions::default()).unwrap();
        let m1 = fit_local_linear(&shifted, &FitOptions::default()).unwrap();
        for t in 1..=6 {
            let (s0, s1) = (m0.step_at(t), m1.step_at(t));
            prop_assert!((&s0.f_mat - &s1.f_mat).amax() <= 1e-8);
            let expected = &s0.f_vec + &c - s0.state_block() * &c;
            prop_assert!((&s1.f_vec - expected).amax() <= 1e-8 * (1.0 + c.amax()));
        }
    }
}

proptest! {
    #![proptest_config(cases(32))]

    #[test]
    fn value_hessian_is_symmetric_and_nonpositive(seed in any::<u64>()) {
        let (a, b, q, r) = random_lq_system(&mut rng(seed));
        let (model, expansions, nominal) = lq_problem(&a, &b, &q, &r, 30);
        let c = backward_pass(&model, &expansions, &nominal, &BackwardOptions::default()).unwrap();
        for s in &c.steps {
            prop_assert_eq!(&s.v_xx, &s.v_xx.transpose());
            let top = s.v_xx.clone().symmetric_eigen().eigenvalues.max();
            prop_assert!(top <= 1e-9 * (1.0 + s.v_xx.amax()));
        }
    }

    #[test]
    fn gains_ignore_where_the_nominal_sits(seed in any::<u64>()) {
        let mut g = rng(seed);
        let (a, b, q, r) = random_lq_system(&mut g);
        let horizon = 20;
        let (model, expansions, nominal) = lq_problem(&a, &b, &q, &r, horizon);
        let base = backward_pass(&model, &expansions, &nominal, &BackwardOptions::default()).unwrap();
        let (n, m) = (a.nrows(), b.ncols());
        let moved = Nominal {
            states: (0..horizon).map(|_| random_vector(&mut g, n) * 3.0).collect(),
            actions: (0..horizon).map(|_| random_vector(&mut g, m) * 3.0).collect(),
        };
        let shifted: Vec<RewardExpansion> = moved
            .states
            .iter()
            .zip(&moved.actions)
            .map(|(x, u)| RewardExpansion {
                r: -(x.transpose() * &q * x)[(0, 0)] - (u.transpose() * &r * u)[(0, 0)],
                r_x: -(&q * x) * 2.0,
                r_u: -(&r * u) * 2.0,
                ..expansions[0].clone()
            })
            .collect();
        let other = backward_pass(&model, &shifted, &moved, &BackwardOptions::default()).unwrap();
        for (s0, s1) in base.steps.iter().zip(&other.steps) {
            prop_assert!((&s0.gain - &s1.gain).amax() <= 1e-8);
        }
    }
}

fn tiny_trainer(mode: Mode, switch_off: Option<usize>) -> Trainer {
    let mut c = TrainConfig::default();
    c.env = Some("pointmass".into());
    c.mode = mode;
    c.seed = 3;
    c.hp.hidden = vec![8, 8];
    c.hp.batch_size = 16;
    c.hp.updates_per_step = 2;
    c.hp.rollout_length = 3;
    c.hp.refit_episodes = 2;
    c.hp.switch_off_episode = switch_off;
    c.imagination_period = Some(5);
    Trainer::new(c).unwrap()
}

#[test]
fn update_counts_follow_the_mode() {
    let (i, l) = (2, 3);
    let mut plain = tiny_trainer(Mode::Naf, None);
    for _ in 0..4 {
        let s = plain.run_episode().unwrap();
        assert!(s.step_updates.iter().all(|&u| u == 0 || u == i));
        assert_eq!(s.fictional_inserted, 0);
    }
    let mut imr = tiny_trainer(Mode::NafImr, Some(6));
    let mut saw_full = false;
    for _ in 0..9 {
        let fictional_before = imr.fictional().len();
        let s = imr.run_episode().unwrap();
        assert_eq!(s.imagination_active, s.episode <= 6);
        for &u in &s.step_updates {
            if s.imagination_active && fictional_before > 0 {
                assert!(u == 0 || u == i * (1 + l), "episode {}: {u}", s.episode);
                saw_full |= u == i * (1 + l);
            } else if !s.imagination_active {
                assert!(u == 0 || u == i);
            }
        }
        if !s.imagination_active {
            assert_eq!(s.fictional_inserted, 0);
            assert_eq!(s.fictional_updates, 0);
        }
    }
    assert!(saw_full);
}

#[test]
fn real_buffer_only_holds_environment_steps() {
    let mut t = tiny_trainer(Mode::NafImr, None);
    let mut synthetic = 0;
    for _ in 0..6 {
        synthetic += t.run_episode().unwrap().fictional_inserted;
    }
    assert!(synthetic > 0);
    assert_eq!(t.replay().inserted(), t.env_steps());
    assert_eq!(t.fictional().inserted(), synthetic as u64);
    let mut r = rng(0);
    let env = t.env();
    let spec = env.spec();
    // The default point mass is noiseless, so every real transition replays exactly.
    for tr in t.replay().iter() {
        let (next, rew) = env.step(&tr.x, &tr.u, &mut r).unwrap();
        assert_eq!(next, tr.next_x);
        assert_eq!(rew, tr.r);
        assert!(tr.t >= 1 && tr.t <= spec.horizon);
    }
}

#[test]
fn replay_dump_writes_a_readable_file() {
    let mut buf = ReplayBuffer::new(4);
    let mut r = rng(1);
    for t in 1..=3 {
        buf.push(Transition { x: random_vector(&mut r, 2), u: random_vector(&mut r, 1), r: -1.5, next_x: random_vector(&mut r, 2), t });
    }
    let file = tempfile::NamedTempFile::new().unwrap();
    buf.write_csv(file.reopen().unwrap()).unwrap();
    let text = std::fs::read_to_string(file.path()).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("t,"));
    assert_eq!(lines.count(), 3);
}
