//! Criterion runners shared by the integration tests and the acceptance driver.
#![allow(dead_code)]

use std::time::{Duration, Instant};

use dynpg::baselines::exact_inf_gradient;
use dynpg::bench::{build_appendix_b_mdp, run_success_experiment, Algorithm, ExperimentConfig, SuccessCurve};
use dynpg::diagnostics::{decompose_with_reference, gamma_equivalence_table, lagrange_schedule, reference_value, BOUND_SLACK};
use dynpg::dynac::{critic_init, critic_update, dynac_run, ActorMode};
use dynpg::exact::{
    dynpg, dynpg_with, schedule_overall_error, schedule_value_error, step_size, total_steps_bound, train_head,
    DynPgOptions, EpochOptions, ErrorTarget, Schedule,
};
use dynpg::io::mdp_from_json;
use dynpg::mdp::{
    advantage, bellman_expect, bellman_optimal, evaluate_stack, evaluate_stationary_inf, greedy_policy, q_from_value,
    value_iteration, PolicyStack, TabularMdp, Termination,
};
use dynpg::random::{random_logits, random_mdp, random_policy, random_stack, random_value};
use dynpg::rng::RngSeed;
use dynpg::softmax::{exact_epoch_gradient, softmax, BanditObjective, Logits};
use dynpg::stochastic::{estimate_gradient, variance_bound};
use dynpg::track::RunControl;
use ndarray::Array2;
use rand::Rng;

/// Three states with reward noise and an absorbing-free ring structure.
pub const FIXTURE: &str = r#"{
  "n_states": 3, "n_actions": 2, "gamma": 0.9, "r_star": 1.0,
  "mu": [0.5, 0.25, 0.25],
  "rewards": [[0.0, 0.1], [0.0, -0.2], [1.0, 0.3]],
  "noise": [[null, {"std": 0.5}], [null, null], [{"std": 1.0}, null]],
  "transitions": [
    [[0.1, 0.9, 0.0], [1.0, 0.0, 0.0]],
    [[0.0, 0.1, 0.9], [0.5, 0.5, 0.0]],
    [[0.0, 0.0, 1.0], [0.3, 0.3, 0.4]]
  ]
}"#;

pub fn fixture() -> TabularMdp {
    mdp_from_json(FIXTURE).unwrap()
}

pub fn sup(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Random MDP with `|S| ∈ 2..=8`, `|A| ∈ 2..=4`.
pub fn small_mdp<R: Rng>(rng: &mut R, gamma: f64) -> TabularMdp {
    let ns = rng.random_range(2..=8);
    let na = rng.random_range(2..=4);
    random_mdp(rng, ns, na, gamma)
}

#[derive(Debug, Default)]
pub struct OracleSummary {
    pub mdps: usize,
    pub worst_value_error: f64,
    pub worst_overall_error: f64,
    /// Largest `Σ N_h − bound` over schedules and runs; non-positive when the bound holds.
    pub worst_bound_excess: f64,
    /// Largest decomposition-bound violation over every produced stack.
    pub worst_decomposition: f64,
    pub elapsed: Duration,
}

/// DynPG on `n` random MDPs with both exact schedules at `eps`.
pub fn oracle_runs(n: usize, seed: u64, eps: f64) -> OracleSummary {
    let start = Instant::now();
    let mut rng = RngSeed::new(seed).rng();
    let mut out = OracleSummary {
        mdps: n,
        worst_bound_excess: f64::NEG_INFINITY,
        worst_decomposition: f64::NEG_INFINITY,
        ..OracleSummary::default()
    };
    let opts = DynPgOptions {
        stop_at_epoch_target: true,
    };
    for i in 0..n {
        let gamma = if i % 2 == 0 { 0.5 } else { 0.9 };
        let mdp = small_mdp(&mut rng, gamma);
        let (v_star, _) = value_iteration(&mdp, Termination::Tolerance(1e-9)).unwrap();
        for target in [ErrorTarget::ValueError, ErrorTarget::OverallError] {
            let schedule = match target {
                ErrorTarget::ValueError => schedule_value_error(&mdp, eps),
                ErrorTarget::OverallError => schedule_overall_error(&mdp, eps),
            }
            .unwrap();
            let run = dynpg_with(&mdp, &schedule, opts).unwrap();
            match target {
                ErrorTarget::ValueError => {
                    let v = evaluate_stack(&mdp, &run.stack).unwrap();
                    out.worst_value_error = out.worst_value_error.max(v_star.sup_dist(&v));
                }
                ErrorTarget::OverallError => {
                    let v = evaluate_stationary_inf(&mdp, &run.policy).unwrap();
                    out.worst_overall_error = out.worst_overall_error.max(v_star.sup_dist(&v));
                }
            }
            let bound = total_steps_bound(&mdp, eps, target).unwrap();
            let executed: u64 = run.reports.iter().map(|r| r.grad_steps).sum();
            let planned = schedule.total_grad_steps();
            out.worst_bound_excess = out
                .worst_bound_excess
                .max(planned as f64 - bound)
                .max(executed as f64 - bound);
            if !run.stack.is_empty() {
                let b = decompose_with_reference(&mdp, &run.stack, &v_star).unwrap();
                out.worst_decomposition = out
                    .worst_decomposition
                    .max(b.true_value_error - b.value_error_bound())
                    .max(b.true_overall_error - b.overall_error_bound());
            }
        }
    }
    out.elapsed = start.elapsed();
    out
}

fn central_difference(theta: &Logits, f: impl Fn(&Logits) -> f64) -> Array2<f64> {
    const STEP: f64 = 1e-5;
    let base = theta.values();
    let mut out = Array2::zeros(base.dim());
    for ((s, a), g) in out.indexed_iter_mut() {
        let mut plus = base.clone();
        plus[[s, a]] += STEP;
        let mut minus = base.clone();
        minus[[s, a]] -= STEP;
        *g = (f(&Logits::new(plus).unwrap()) - f(&Logits::new(minus).unwrap())) / (2.0 * STEP);
    }
    out
}

fn relative_error(got: &Array2<f64>, want: &Array2<f64>) -> f64 {
    sup(&(got - want)) / sup(want).max(1e-3)
}

/// Worst relative error of the epoch and stationary gradients against finite differences.
pub fn gradient_errors(n: usize, seed: u64) -> (f64, f64) {
    let mut rng = RngSeed::new(seed).rng();
    let (mut epoch, mut inf) = (0.0f64, 0.0f64);
    for i in 0..n {
        let gamma = if i % 2 == 0 { 0.5 } else { 0.9 };
        let mdp = small_mdp(&mut rng, gamma);
        let len = rng.random_range(0..=4);
        let stack = random_stack(&mut rng, &mdp, len);
        let theta = random_logits(&mut rng, mdp.n_states(), mdp.n_actions(), 2.0);
        let mu = mdp.init_dist();
        let numeric = central_difference(&theta, |t| {
            let mut s = stack.clone();
            s.push_front(softmax(t).unwrap());
            evaluate_stack(&mdp, &s).unwrap().expectation(mu)
        });
        epoch = epoch.max(relative_error(&exact_epoch_gradient(&mdp, &theta, &stack).unwrap(), &numeric));
        let numeric = central_difference(&theta, |t| {
            evaluate_stationary_inf(&mdp, &softmax(t).unwrap())
                .unwrap()
                .expectation(mu)
        });
        inf = inf.max(relative_error(&exact_inf_gradient(&mdp, &theta).unwrap(), &numeric));
    }
    (epoch, inf)
}

/// Smallest `min_s π(a*(s)|s) − 1/|A|` along every epoch of full-length exact runs.
pub fn floor_margin(n: usize, seed: u64, eps: f64) -> f64 {
    let mut rng = RngSeed::new(seed).rng();
    let mut margin = f64::INFINITY;
    for i in 0..n {
        let gamma = if i % 2 == 0 { 0.5 } else { 0.9 };
        let mdp = small_mdp(&mut rng, gamma);
        let schedule = schedule_value_error(&mdp, eps).unwrap();
        let run = dynpg(&mdp, &schedule).unwrap();
        let floor = 1.0 / mdp.n_actions() as f64;
        for r in &run.reports {
            margin = margin.min(r.min_optimal_prob.unwrap() - floor);
        }
    }
    margin
}

#[derive(Debug)]
pub struct EstimatorStats {
    /// Largest `|mean − ∇| / stderr` over coordinates.
    pub worst_z: f64,
    pub mse: f64,
    pub bound: f64,
    pub elapsed: Duration,
}

/// Monte-Carlo statistics of the batch-`k` gradient estimator on the fixture.
pub fn estimator_stats(draws: usize, k: u64, seed: u64) -> EstimatorStats {
    let start = Instant::now();
    let mdp = fixture();
    let mut rng = RngSeed::new(seed).rng();
    let stack = random_stack(&mut rng, &mdp, 3);
    let theta = random_logits(&mut rng, mdp.n_states(), mdp.n_actions(), 1.0);
    let exact = exact_epoch_gradient(&mdp, &theta, &stack).unwrap();
    let dim = exact.dim();
    let mut sum = Array2::<f64>::zeros(dim);
    let mut sum_sq = Array2::<f64>::zeros(dim);
    let mut sq_err = 0.0;
    for j in 0..draws {
        let g = estimate_gradient(&mdp, &theta, &stack, k, RngSeed::new(seed).with_stream(j as u64 + 1)).unwrap();
        sq_err += (&g - &exact).iter().map(|x| x * x).sum::<f64>();
        sum += &g;
        sum_sq += &g.mapv(|x| x * x);
    }
    let n = draws as f64;
    let mut worst_z = 0.0f64;
    for ((idx, &s), &s2) in sum.indexed_iter().zip(sum_sq.iter()) {
        let mean = s / n;
        let var = (s2 / n - mean * mean).max(0.0) * n / (n - 1.0);
        let se = (var / n).sqrt();
        let dev = (mean - exact[idx]).abs();
        let z = if se > 0.0 { dev / se } else if dev < 1e-12 { 0.0 } else { f64::INFINITY };
        worst_z = worst_z.max(z);
    }
    EstimatorStats {
        worst_z,
        mse: sq_err / n,
        bound: variance_bound(mdp.gamma(), mdp.reward_bound(), stack.len()) / k as f64,
        elapsed: start.elapsed(),
    }
}

/// Violations of the identity suite on one random instance; each entry is
/// `(name, violation, tolerance)`.
pub fn identity_case(seed: u64) -> Vec<(&'static str, f64, f64)> {
    let mut rng = RngSeed::new(seed).rng();
    let gamma = [0.3, 0.5, 0.9][rng.random_range(0..3)];
    let mdp = small_mdp(&mut rng, gamma);
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let scale = mdp.reward_bound() / (1.0 - gamma);
    let v = random_value(&mut rng, ns, scale);
    let w = random_value(&mut rng, ns, scale);
    let pi = random_policy(&mut rng, ns, na);
    let other = random_policy(&mut rng, ns, na);
    let len = rng.random_range(0..=3);
    let stack = random_stack(&mut rng, &mdp, len);
    let v_star = reference_value(&mdp).unwrap();

    let dist = v.sup_dist(&w);
    let contraction = (bellman_optimal(&mdp, &v).unwrap().sup_dist(&bellman_optimal(&mdp, &w).unwrap()) - gamma * dist)
        .max(bellman_expect(&mdp, &v, &pi).unwrap().sup_dist(&bellman_expect(&mdp, &w, &pi).unwrap()) - gamma * dist);

    let greedy = greedy_policy(&mdp, &v).unwrap();
    let greedy_gap = bellman_expect(&mdp, &v, &greedy)
        .unwrap()
        .sup_dist(&bellman_optimal(&mdp, &v).unwrap());

    let mut with_pi = stack.clone();
    with_pi.push_front(pi.clone());
    let mut with_other = stack.clone();
    with_other.push_front(other.clone());
    let diff = evaluate_stack(&mdp, &with_pi).unwrap().values() - evaluate_stack(&mdp, &with_other).unwrap().values();
    let adv = advantage(&mdp, &stack, &other).unwrap();
    let perf = (0..ns)
        .map(|s| (diff[s] - (0..na).map(|a| pi.prob(s, a) * adv.at(s, a)).sum::<f64>()).abs())
        .fold(0.0, f64::max);

    let v_pi = evaluate_stationary_inf(&mdp, &pi).unwrap();
    let stationary = v.sup_dist(&v_pi) - bellman_expect(&mdp, &v, &pi).unwrap().sup_dist(&v) / (1.0 - gamma);

    let h = rng.random_range(0..=40);
    let (v_h, _) = value_iteration(&mdp, Termination::Horizon(h)).unwrap();
    let truncation = v_star.sup_dist(&v_h) - gamma.powi(h as i32) * scale;

    let mut critic = critic_init(&mdp);
    for p in stack.policies().iter().rev() {
        critic = critic_update(&mdp, &critic, p).unwrap();
    }
    let q = q_from_value(&mdp, &evaluate_stack(&mdp, &stack).unwrap()).unwrap();
    let critic_gap = sup(&(critic.values() - q.values()));

    let b = decompose_with_reference(&mdp, &with_pi, &v_star).unwrap();
    let decomposition = (b.true_value_error - b.value_error_bound()).max(b.true_overall_error - b.overall_error_bound());

    vec![
        ("contraction", contraction, 1e-12),
        ("greedy_identity", greedy_gap, 1e-12),
        ("performance_difference", perf, 1e-10),
        ("stationary_bound", stationary, 1e-9),
        ("truncation_bound", truncation, BOUND_SLACK),
        ("critic_exactness", critic_gap, 1e-10),
        ("decomposition_bounds", decomposition, BOUND_SLACK),
    ]
}

/// Largest gap between DynAC's exact-mode logits and DynPG's at every step of
/// every epoch, on a short schedule.
pub fn dynac_dynpg_gap(seed: u64) -> f64 {
    let mut rng = RngSeed::new(seed).rng();
    let gamma = [0.5, 0.9][rng.random_range(0..2)];
    let mdp = small_mdp(&mut rng, gamma);
    let epochs = rng.random_range(1..=4);
    let steps = rng.random_range(1..=25u64);
    let r_star = mdp.reward_bound();
    let schedule = Schedule::new(
        epochs,
        vec![0.1; epochs],
        (0..epochs).map(|h| step_size(gamma, r_star, h)).collect(),
        vec![steps; epochs],
        ErrorTarget::ValueError,
    )
    .unwrap();
    let mut trajectory: Vec<(usize, u64, Array2<f64>)> = Vec::new();
    let mut hook = |h: usize, n: u64, theta: &Array2<f64>| trajectory.push((h, n, theta.clone()));
    dynac_run(&mdp, &schedule, ActorMode::Exact, RngSeed::new(0), &RunControl::default(), Some(&mut hook)).unwrap();
    let reference = dynpg(&mdp, &schedule).unwrap();
    let mut stack = PolicyStack::new();
    let mut objectives = Vec::new();
    for h in 0..epochs {
        objectives.push(BanditObjective::from_stack(&mdp, &stack).unwrap());
        stack.push_front(reference.stack.policies()[epochs - 1 - h].clone());
    }
    let mut gap = 0.0f64;
    for (h, n, theta) in &trajectory {
        let trained = train_head(
            &objectives[*h],
            &EpochOptions {
                step_size: schedule.step_sizes[*h],
                max_steps: n + 1,
                stop_at: None,
            },
        )
        .unwrap();
        gap = gap.max(sup(&(theta - trained.theta.values())));
    }
    assert_eq!(trajectory.len(), epochs * steps as usize);
    gap
}

/// `ε_h` in closed form for a horizon `H` and budget `d`.
pub fn closed_form_eps(gamma: f64, horizon: usize, d: f64) -> Vec<f64> {
    let total: f64 = (0..horizon)
        .map(|t| ((1.0 - gamma.powi(t as i32 + 1)) * gamma.powi((horizon - t - 1) as i32)).sqrt())
        .sum();
    (0..horizon)
        .map(|h| d / total * (gamma.powi((horizon - h - 1) as i32) / (1.0 - gamma.powi(h as i32 + 1))).powf(-0.5))
        .collect()
}

/// Worst relative gap between the schedules' `ε_h`, the Lagrange solver and the closed form.
pub fn schedule_formula_gap() -> f64 {
    let mut worst = 0.0f64;
    let rel = |x: f64, y: f64| (x - y).abs() / y.abs();
    for gamma in [0.3, 0.5, 0.9, 0.99] {
        let mdp = random_mdp(&mut RngSeed::new(3).rng(), 3, 2, gamma);
        for eps in [1.0, 0.1, 0.01] {
            let value = schedule_value_error(&mdp, eps).unwrap();
            let overall = schedule_overall_error(&mdp, eps).unwrap();
            let cases = [
                (value.horizon, eps / 2.0, &value.eps[..]),
                (overall.horizon, (1.0 - gamma) * eps / 6.0, &overall.eps[..overall.horizon]),
            ];
            for (horizon, d, got) in cases {
                if horizon == 0 {
                    continue;
                }
                let want = closed_form_eps(gamma, horizon, d);
                let a: Vec<f64> = (0..horizon).map(|h| 1.0 - gamma.powi(h as i32 + 1)).collect();
                let b: Vec<f64> = (0..horizon).map(|h| gamma.powi((horizon - h - 1) as i32)).collect();
                let (solved, _) = lagrange_schedule(&a, &b, d).unwrap();
                for ((x, y), z) in got.iter().zip(&solved).zip(&want) {
                    worst = worst.max(rel(*x, *z)).max(rel(*y, *z));
                }
            }
            let last = *overall.eps.last().unwrap();
            worst = worst.max(rel(last, (1.0 - gamma) * eps / 6.0));
        }
    }
    worst
}

pub fn gamma_ratio_at(gamma: f64) -> f64 {
    gamma_equivalence_table(&[gamma]).unwrap()[0].ratio
}

/// CSV of one experiment run inside a pool of `threads` workers.
pub fn curve_csv_with_threads(cfg: &ExperimentConfig, threads: usize) -> String {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    let mdp = build_appendix_b_mdp();
    pool.install(|| run_success_experiment(&mdp, cfg)).unwrap().to_csv().unwrap()
}

pub fn benchmark_curve(algorithm: Algorithm, gamma: f64, trials: usize, seed: u64) -> SuccessCurve {
    let mut cfg = ExperimentConfig::new(algorithm, gamma);
    cfg.trials = trials;
    cfg.seed = seed;
    run_success_experiment(&build_appendix_b_mdp(), &cfg).unwrap()
}

