//! Oracle self-test suites run by `naf selftest`. Each suite compares a production
//! code path against an independent reference and can be deliberately corrupted to
//! prove that a failure is detected.

use crate::approximator::{Architecture, Mlp};
use crate::dynamics::{fit_local_linear, FitOptions, LinearGaussianStep, TimeVaryingLinearModel};
use crate::envs::RewardExpansion;
use crate::ilqg::{backward_pass, BackwardOptions, Nominal};
use crate::naf::{assemble_q, bellman_loss_grad, build_precision, DEFAULT_MAX_LOG_DIAG};
use crate::numerics::{cholesky_lower, Matrix, Vector};
use crate::oracle::{golden_gain, riccati};
use crate::replay::{ReplayBuffer, Transition};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const SUITES: [&str; 5] = ["riccati", "gradcheck", "pd", "fit-recovery", "replay-uniformity"];

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn report(name: &str, passed: bool, detail: String) -> SuiteReport {
    SuiteReport {
        name: name.to_string(),
        passed,
        detail,
    }
}

/// Runs the named suite; `fault` corrupts the production result before comparison.
pub fn run_suite(name: &str, fault: bool) -> Option<SuiteReport> {
    Some(match name {
        "riccati" => riccati_suite(10, 50, fault),
        "gradcheck" => gradcheck_suite(20, fault),
        "pd" => pd_suite(2000, 200, fault),
        "fit-recovery" => fit_recovery_suite(fault),
        "replay-uniformity" => replay_uniformity_suite(100_000, fault),
        _ => return None,
    })
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Random linear system with `n ≤ 4`, `m ≤ 2`, moderately stable `A`, PD `Q` and `R`.
pub fn random_lq_system(rng: &mut ChaCha8Rng) -> (Matrix, Matrix, Matrix, Matrix) {
    let n = rng.random_range(1..=4);
    let m = rng.random_range(1..=2);
    let a = Matrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 } + 0.3 * normal(rng));
    let b = Matrix::from_fn(n, m, |_, _| normal(rng));
    let gq = Matrix::from_fn(n, n, |_, _| normal(rng));
    let gr = Matrix::from_fn(m, m, |_, _| normal(rng));
    let q = &gq * gq.transpose() + Matrix::identity(n, n) * 0.1;
    let r = &gr * gr.transpose() + Matrix::identity(m, m) * 0.1;
    (a, b, q, r)
}

/// Time-invariant model and quadratic expansions around the zero trajectory.
pub fn lq_problem(
    a: &Matrix,
    b: &Matrix,
    q: &Matrix,
    r: &Matrix,
    horizon: usize,
) -> (TimeVaryingLinearModel, Vec<RewardExpansion>, Nominal) {
    let (n, m) = (a.nrows(), b.ncols());
    let mut f = Matrix::zeros(n, n + m);
    f.view_mut((0, 0), (n, n)).copy_from(a);
    f.view_mut((0, n), (n, m)).copy_from(b);
    let model = TimeVaryingLinearModel {
        state_dim: n,
        action_dim: m,
        steps: vec![LinearGaussianStep::new(f, Vector::zeros(n), Matrix::zeros(n, n)); horizon],
    };
    let mut e = RewardExpansion::zeros(n, m);
    e.r_xx = -q * 2.0;
    e.r_uu = -r * 2.0;
    let nominal = Nominal {
        states: vec![Vector::zeros(n); horizon],
        actions: vec![Vector::zeros(m); horizon],
    };
    (model, vec![e; horizon], nominal)
}

pub fn riccati_suite(systems: usize, horizon: usize, fault: bool) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for i in 0..systems {
        let (a, b, q, r) = random_lq_system(&mut rng);
        let (model, exps, nom) = lq_problem(&a, &b, &q, &r, horizon);
        let oracle = riccati(&a, &b, &q, &r, horizon);
        match backward_pass(&model, &exps, &nom, &BackwardOptions::default()) {
            Ok(c) => {
                for (s, k) in c.steps.iter().zip(&oracle.gains) {
                    let gain = if fault { -&s.gain } else { s.gain.clone() };
                    let err = (gain - k).amax();
                    worst = worst.max(err);
                }
            }
            Err(e) => failures.push(format!("system {i}: {e}")),
        }
    }
    let one = Matrix::identity(1, 1);
    let (model, exps, nom) = lq_problem(&one, &one, &one, &one, horizon);
    let scalar = backward_pass(&model, &exps, &nom, &BackwardOptions::default())
        .map(|c| c.steps[horizon / 2].gain[(0, 0)] * if fault { -1.0 } else { 1.0 })
        .unwrap_or(f64::NAN);
    let ok = failures.is_empty() && worst <= 1e-8 && (scalar - golden_gain()).abs() <= 1e-5;
    report(
        "riccati",
        ok,
        format!("{systems} systems, max |K - K*| = {worst:.2e}, scalar interior gain {scalar:.6} {}", failures.join("; ")),
    )
}

fn random_batch(rng: &mut ChaCha8Rng) -> (Mlp, Matrix, Matrix, Vec<f64>) {
    let input = rng.random_range(1..=4);
    let d = rng.random_range(1..=3);
    let layers = rng.random_range(1..=2);
    let hidden = (0..layers).map(|_| rng.random_range(3..=8)).collect();
    let arch = Architecture::new(input, hidden, d).expect("valid");
    let net = Mlp::init(arch, 1.0, rng);
    let n = rng.random_range(1..=8);
    let f = Matrix::from_fn(input, n, |_, _| normal(rng));
    let a = Matrix::from_fn(d, n, |_, _| normal(rng));
    let y = (0..n).map(|_| normal(rng)).collect();
    (net, f, a, y)
}

/// Central differences with step `h` on every parameter of 20 random batches.
pub fn gradcheck_suite(cases: usize, fault: bool) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9_4ad);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for _ in 0..cases {
        let (net, f, a, y) = random_batch(&mut rng);
        let (_, mut grad) = bellman_loss_grad(&net, &f, &a, &y, DEFAULT_MAX_LOG_DIAG);
        if fault {
            grad.iter_mut().for_each(|g| *g = -*g);
        }
        let mut probe = net.clone();
        for (i, g) in grad.iter().enumerate() {
            let orig = probe.params()[i];
            probe.params_mut()[i] = orig + h;
            let up = bellman_loss_grad(&probe, &f, &a, &y, DEFAULT_MAX_LOG_DIAG).0;
            probe.params_mut()[i] = orig - h;
            let down = bellman_loss_grad(&probe, &f, &a, &y, DEFAULT_MAX_LOG_DIAG).0;
            probe.params_mut()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            if g.abs() > 1e-8 {
                let rel = (g - fd).abs() / g.abs().max(fd.abs());
                worst = worst.max(rel);
                checked += 1;
            }
        }
    }
    report(
        "gradcheck",
        worst < 1e-4,
        format!("{cases} networks, {checked} coordinates, max relative error {worst:.2e}"),
    )
}

/// Precision matrices from random networks must factor, and `μ` must beat random actions.
pub fn pd_suite(draws: usize, actions: usize, fault: bool) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9d);
    let (mut not_pd, mut violations) = (0usize, 0usize);
    for _ in 0..draws {
        let d = rng.random_range(1..=3);
        let input = rng.random_range(1..=4);
        let arch = Architecture::new(input, vec![8, 8], d).expect("valid");
        let net = Mlp::init(arch, rng.random_range(0.1..3.0), &mut rng);
        let x = Vector::from_fn(input, |_, _| 3.0 * normal(&mut rng));
        let heads = net.forward(&x);
        let (_, p) = build_precision(&heads.l_entries, d, DEFAULT_MAX_LOG_DIAG);
        if cholesky_lower(&p).is_err() {
            not_pd += 1;
        }
        let best = assemble_q(&heads, &heads.mu, DEFAULT_MAX_LOG_DIAG).q;
        for _ in 0..actions {
            let u = &heads.mu + Vector::from_fn(d, |_, _| 2.0 * normal(&mut rng));
            let q = assemble_q(&heads, &u, DEFAULT_MAX_LOG_DIAG);
            let other = if fault { q.value - q.advantage } else { q.q };
            if other > best {
                violations += 1;
            }
        }
    }
    report(
        "pd",
        not_pd == 0 && violations == 0,
        format!("{draws} draws x {actions} actions: {not_pd} Cholesky failures, {violations} argmax violations"),
    )
}

/// Episodes of `x′ = A x + B u + w` with `w ~ N(0, noise)` and excited states and actions.
pub fn linear_gaussian_episodes(
    a: &Matrix,
    b: &Matrix,
    noise_chol: &Matrix,
    episodes: usize,
    horizon: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<Transition>> {
    let (n, m) = (a.nrows(), b.ncols());
    (0..episodes)
        .map(|_| {
            let mut x = Vector::from_fn(n, |_, _| normal(rng));
            (1..=horizon)
                .map(|t| {
                    let u = Vector::from_fn(m, |_, _| normal(rng));
                    let w = noise_chol * Vector::from_fn(n, |_, _| normal(rng));
                    let next = a * &x + b * &u + w;
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

pub fn fit_recovery_suite(fault: bool) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(0xf17);
    let dt = 0.1;
    let a = Matrix::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0]);
    let b = Matrix::from_row_slice(2, 1, &[0.5 * dt * dt, dt]);
    let mut ab = Matrix::zeros(2, 3);
    ab.view_mut((0, 0), (2, 2)).copy_from(&a);
    ab.view_mut((0, 2), (2, 1)).copy_from(&b);
    let horizon = 20;

    let small = Matrix::identity(2, 2) * 0.02;
    let data = linear_gaussian_episodes(&a, &b, &small, 20, horizon, &mut rng);
    let mut f_err: f64 = 0.0;
    if let Ok(model) = fit_local_linear(&data, &FitOptions::default()) {
        for s in &model.steps {
            let mut f = s.f_mat.clone();
            if fault {
                f[(0, 0)] = -f[(0, 0)];
            }
            f_err = f_err.max((f - &ab).norm());
        }
    } else {
        f_err = f64::INFINITY;
    }

    let noise = Matrix::from_row_slice(2, 2, &[0.04, 0.01, 0.01, 0.02]);
    let chol = cholesky_lower(&noise).expect("PD");
    let data = linear_gaussian_episodes(&a, &b, &chol, 100, horizon, &mut rng);
    let n_err = match fit_local_linear(&data, &FitOptions::default()) {
        Ok(model) => {
            let total: f64 = model.steps.iter().map(|s| (&s.noise - &noise).norm() / noise.norm()).sum();
            total / model.steps.len() as f64
        }
        Err(_) => f64::INFINITY,
    };
    report(
        "fit-recovery",
        f_err <= 0.1 && n_err <= 0.2,
        format!("max ||F - [A B]|| = {f_err:.4} (n=20), mean relative noise error {n_err:.3} (n=100)"),
    )
}

/// Frequencies of 10 items over `draws` uniform draws: per-item 3σ band and chi-square.
pub fn replay_uniformity_suite(draws: usize, fault: bool) -> SuiteReport {
    let items = 10;
    let mut buffer = ReplayBuffer::new(items);
    for i in 0..items {
        buffer.push(Transition {
            x: Vector::from_element(1, i as f64),
            u: Vector::zeros(1),
            r: 0.0,
            next_x: Vector::zeros(1),
            t: 1,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0xb0f);
    let mut counts = vec![0usize; items];
    for idx in buffer.sample_indices(draws, &mut rng).expect("nonempty") {
        let idx = if fault { idx % (items - 1) } else { idx };
        counts[idx] += 1;
    }
    let expected = draws as f64 / items as f64;
    let sigma = (draws as f64 * 0.1 * 0.9).sqrt();
    let worst = counts.iter().map(|c| (*c as f64 - expected).abs() / sigma).fold(0.0, f64::max);
    let chi2: f64 = counts.iter().map(|c| (*c as f64 - expected).powi(2) / expected).sum();
    // chi-square with 9 dof: mean 9, std √18
    let chi2_z = (chi2 - 9.0) / 18f64.sqrt();
    report(
        "replay-uniformity",
        worst <= 3.0 && chi2_z <= 3.0,
        format!("{draws} draws: max deviation {worst:.2} sigma, chi2 = {chi2:.2} (z = {chi2_z:.2})"),
    )
}
