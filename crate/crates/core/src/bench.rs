//! The committal-behaviour benchmark MDP and the success-probability experiment.

use std::fmt::Write as _;

use ndarray::{Array1, Array2, Array3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{benchmark_step_size, reinforce_run, vanilla_pg_run, REINFORCE_TRUNCATION};
use crate::diagnostics::reference_value;
use crate::dynac::{dynac_run, ActorMode};
use crate::error::{Error, Result};
use crate::exact::{schedule_overall_error, ErrorTarget, Schedule};
use crate::mdp::{evaluate_stationary_inf, GaussianNoise, StochasticPolicy, TabularMdp, ValueFunction};
use crate::rng::RngSeed;
use crate::stochastic::{as_count, dynpg_stochastic_run, stochastic_schedule, ScheduleMode, StochasticSchedule};
use crate::track::{RunControl, Snapshot};

pub const BENCH_STATES: usize = 7;
pub const BENCH_ACTIONS: usize = 300;
pub const BENCH_GAMMA: f64 = 0.99;

/// Valid actions and their successor at each state; `None` marks a terminal.
fn bench_moves(s: usize) -> Option<Vec<usize>> {
    match s {
        1 => Some(vec![0; BENCH_ACTIONS]),
        2 => Some(vec![1, 3, 0]),
        4 => Some(vec![5; 5]),
        5 => Some(vec![6; 5]),
        _ => None,
    }
}

/// The seven-state, 300-action benchmark at `γ = 0.99`.
///
/// States 0, 3 and 6 are absorbing. Play starts uniformly in {1, 2, 4, 5}.
/// Every action at state 1 leads to 0 with reward `N(−0.3, 10²)`. States 4 and
/// 5 have five actions leading to 5 and 6 respectively with reward
/// `N(1.25, 1.25²)`. State 2 has three zero-reward actions leading to 1, 3
/// and 0. Action indices beyond a state's valid ones copy its last valid action.
pub fn build_appendix_b_mdp() -> TabularMdp {
    let mut p = Array3::zeros((BENCH_STATES, BENCH_ACTIONS, BENCH_STATES));
    let mut r = Array2::zeros((BENCH_STATES, BENCH_ACTIONS));
    let mut noise = Array2::from_elem((BENCH_STATES, BENCH_ACTIONS), None);
    for s in 0..BENCH_STATES {
        let Some(moves) = bench_moves(s) else {
            for a in 0..BENCH_ACTIONS {
                p[[s, a, s]] = 1.0;
            }
            continue;
        };
        let (mean, std) = match s {
            1 => (-0.3, Some(10.0)),
            4 | 5 => (1.25, Some(1.25)),
            _ => (0.0, None),
        };
        for a in 0..BENCH_ACTIONS {
            let next = moves[a.min(moves.len() - 1)];
            p[[s, a, next]] = 1.0;
            r[[s, a]] = mean;
            noise[[s, a]] = std.map(|std| GaussianNoise { std });
        }
    }
    let mu = Array1::from_shape_fn(BENCH_STATES, |s| if matches!(s, 1 | 2 | 4 | 5) { 0.25 } else { 0.0 });
    TabularMdp::new(p, r, BENCH_GAMMA, mu, 1.25)
        .and_then(|m| m.with_noise(noise))
        .expect("benchmark MDP is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    DynpgExact,
    DynpgStochastic,
    Dynac,
    VanillaPg,
    Reinforce,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::DynpgExact => "dynpg_exact",
            Algorithm::DynpgStochastic => "dynpg_stochastic",
            Algorithm::Dynac => "dynac",
            Algorithm::VanillaPg => "vanilla_pg",
            Algorithm::Reinforce => "reinforce",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "dynpg_exact" => Algorithm::DynpgExact,
            "dynpg_stochastic" => Algorithm::DynpgStochastic,
            "dynac" => Algorithm::Dynac,
            "vanilla_pg" => Algorithm::VanillaPg,
            "reinforce" => Algorithm::Reinforce,
            other => return Err(Error::Input(format!("unknown algorithm `{other}`"))),
        })
    }
}

/// Settings of one success-probability experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub gamma: f64,
    /// Target accuracy the schedules are built for.
    pub eps: f64,
    /// A trial succeeds at a checkpoint when its overall error is at most this.
    pub threshold: f64,
    pub trials: usize,
    pub budget: u64,
    pub seed: u64,
    pub mode: ScheduleMode,
    /// Failure probability for theoretical stochastic schedules.
    pub delta: f64,
    /// Step size of the stationary baselines; defaults to `2(1−γ)/(1−γ⁶)`.
    pub step_size: Option<f64>,
    pub truncation: usize,
    /// Run infeasible theoretical schedules anyway.
    pub force: bool,
}

impl ExperimentConfig {
    pub fn new(algorithm: Algorithm, gamma: f64) -> Self {
        ExperimentConfig {
            algorithm,
            gamma,
            eps: 0.01,
            threshold: 0.01,
            trials: 200,
            budget: 3000,
            seed: 0,
            mode: ScheduleMode::Practical,
            delta: 0.1,
            step_size: None,
            truncation: REINFORCE_TRUNCATION,
            force: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Input("at least one trial is required".into()));
        }
        if self.budget == 0 {
            return Err(Error::Input("the interaction budget must be at least 1".into()));
        }
        if !(self.threshold > 0.0) {
            return Err(Error::Input(format!("threshold must be positive, got {}", self.threshold)));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Input(format!("discount must lie in (0, 1), got {}", self.gamma)));
        }
        Ok(())
    }

    fn step_size(&self) -> f64 {
        self.step_size.unwrap_or_else(|| benchmark_step_size(self.gamma))
    }
}

/// One point of a success curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub interactions: u64,
    pub success_prob: f64,
    pub stderr: f64,
}

/// Success probability over trials at increasing interaction counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessCurve {
    pub algorithm: Algorithm,
    pub gamma: f64,
    pub seed_base: u64,
    pub trials: usize,
    pub points: Vec<CurvePoint>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CurveRow {
    interactions: u64,
    success_prob: f64,
    stderr: f64,
    algorithm: Algorithm,
    gamma: f64,
    seed_base: u64,
    trials: usize,
}

const WARNING_PREFIX: &str = "# warning: ";

impl SuccessCurve {
    /// Success probability at the last checkpoint, or zero for an empty curve.
    pub fn terminal(&self) -> CurvePoint {
        self.points.last().copied().unwrap_or(CurvePoint {
            interactions: 0,
            success_prob: 0.0,
            stderr: 0.0,
        })
    }

    /// CSV with one row per checkpoint, preceded by `# warning:` lines.
    pub fn to_csv(&self) -> Result<String> {
        let mut out = String::new();
        for w in &self.warnings {
            writeln!(out, "{WARNING_PREFIX}{}", w.replace('\n', " ")).expect("string write");
        }
        let mut writer = csv::Writer::from_writer(Vec::new());
        if self.points.is_empty() {
            writer
                .write_record(["interactions", "success_prob", "stderr", "algorithm", "gamma", "seed_base", "trials"])
                .map_err(csv_err)?;
        }
        for p in &self.points {
            writer
                .serialize(CurveRow {
                    interactions: p.interactions,
                    success_prob: p.success_prob,
                    stderr: p.stderr,
                    algorithm: self.algorithm,
                    gamma: self.gamma,
                    seed_base: self.seed_base,
                    trials: self.trials,
                })
                .map_err(csv_err)?;
        }
        let bytes = writer.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        out.push_str(&String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))?);
        Ok(out)
    }

    /// Parses [`SuccessCurve::to_csv`] output. Curves without points carry
    /// their metadata in the caller-provided defaults.
    pub fn from_csv(text: &str, algorithm: Algorithm, gamma: f64, seed_base: u64, trials: usize) -> Result<Self> {
        let mut warnings = Vec::new();
        let mut body = String::new();
        for line in text.lines() {
            match line.strip_prefix(WARNING_PREFIX) {
                Some(w) => warnings.push(w.to_string()),
                None => {
                    body.push_str(line);
                    body.push('\n');
                }
            }
        }
        let mut curve = SuccessCurve {
            algorithm,
            gamma,
            seed_base,
            trials,
            points: Vec::new(),
            warnings,
        };
        let mut reader = csv::Reader::from_reader(body.as_bytes());
        for row in reader.deserialize() {
            let row: CurveRow = row.map_err(csv_err)?;
            curve.algorithm = row.algorithm;
            curve.gamma = row.gamma;
            curve.seed_base = row.seed_base;
            curve.trials = row.trials;
            curve.points.push(CurvePoint {
                interactions: row.interactions,
                success_prob: row.success_prob,
                stderr: row.stderr,
            });
        }
        Ok(curve)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(format!("csv: {e}"))
}

/// Geometric checkpoints `10, 13, 17, …` (factor 1.3) ending exactly at `budget`.
pub fn checkpoint_grid(budget: u64) -> Vec<u64> {
    let mut points = Vec::new();
    let mut x = 10.0f64;
    while (x.round() as u64) < budget {
        let c = x.round() as u64;
        if points.last() != Some(&c) {
            points.push(c);
        }
        x *= 1.3;
    }
    points.push(budget);
    points
}

/// `‖V_∞^* − V_∞^π‖_∞`.
pub fn overall_error(mdp: &TabularMdp, reference: &ValueFunction, pi: &StochasticPolicy) -> Result<f64> {
    Ok(reference.sup_dist(&evaluate_stationary_inf(mdp, pi)?))
}

/// Exact schedule for the configured mode.
fn exact_schedule(mdp: &TabularMdp, cfg: &ExperimentConfig) -> Result<Schedule> {
    match cfg.mode {
        ScheduleMode::Theoretical => schedule_overall_error(mdp, cfg.eps),
        mode => {
            let s = stochastic_schedule(mdp, cfg.eps, cfg.delta, mode)?;
            practical_as_exact(&s)
        }
    }
}

/// Practical or custom stochastic schedule with its counts as integers.
pub fn practical_as_exact(s: &StochasticSchedule) -> Result<Schedule> {
    let steps = s.steps.iter().map(|&n| as_count(n, "step count")).collect::<Result<_>>()?;
    Schedule::new(s.horizon, s.eps.clone(), s.step_sizes.clone(), steps, ErrorTarget::ValueError)
}

/// Interactions consumed by the first epoch, when the algorithm has epochs.
fn first_epoch_cost(mdp: &TabularMdp, cfg: &ExperimentConfig) -> Result<Option<f64>> {
    Ok(match cfg.algorithm {
        Algorithm::DynpgStochastic => {
            let s = stochastic_schedule(mdp, cfg.eps, cfg.delta, cfg.mode)?;
            s.steps.first().map(|n| n * s.batch_sizes[0])
        }
        Algorithm::DynpgExact | Algorithm::Dynac => {
            exact_schedule(mdp, cfg)?.grad_steps.first().map(|&n| n as f64)
        }
        Algorithm::VanillaPg | Algorithm::Reinforce => None,
    })
}

/// Policies at each checkpoint for one trial.
fn run_trial(mdp: &TabularMdp, cfg: &ExperimentConfig, control: &RunControl, seed: RngSeed) -> Result<Vec<Snapshot>> {
    Ok(match cfg.algorithm {
        Algorithm::DynpgStochastic => {
            let schedule = stochastic_schedule(mdp, cfg.eps, cfg.delta, cfg.mode)?;
            dynpg_stochastic_run(mdp, &schedule, seed, control)?.snapshots
        }
        Algorithm::Reinforce => {
            reinforce_run(mdp, cfg.step_size(), cfg.budget, cfg.truncation, seed, control)?.snapshots
        }
        Algorithm::Dynac => {
            let schedule = exact_schedule(mdp, cfg)?;
            dynac_run(mdp, &schedule, ActorMode::Sampled, seed, control, None)?.snapshots
        }
        Algorithm::DynpgExact => {
            let schedule = exact_schedule(mdp, cfg)?;
            let exact = RunControl {
                budget: control.budget,
                checkpoints: control.checkpoints.clone(),
                force: control.force,
            };
            crate::exact::dynpg_run(mdp, &schedule, &exact)?.snapshots
        }
        Algorithm::VanillaPg => vanilla_pg_run(mdp, cfg.step_size(), cfg.budget, control)?.snapshots,
    })
}

/// Runs `cfg.trials` seeded trials on `mdp` and records the fraction whose
/// policy is within `cfg.threshold` of optimal at each checkpoint.
///
/// Trial `i` uses stream `i` of `cfg.seed`; trials run in parallel and the
/// result does not depend on the number of workers.
pub fn run_success_experiment(mdp: &TabularMdp, cfg: &ExperimentConfig) -> Result<SuccessCurve> {
    cfg.validate()?;
    let mdp = mdp.clone().with_gamma(cfg.gamma)?;
    let mut curve = SuccessCurve {
        algorithm: cfg.algorithm,
        gamma: cfg.gamma,
        seed_base: cfg.seed,
        trials: cfg.trials,
        points: Vec::new(),
        warnings: Vec::new(),
    };
    if let Some(cost) = first_epoch_cost(&mdp, cfg)? {
        if cost > cfg.budget as f64 {
            curve.warnings.push(format!(
                "budget of {} interactions is below the first epoch's {cost} interactions; no checkpoints recorded",
                cfg.budget
            ));
            return Ok(curve);
        }
    }
    if cfg.algorithm == Algorithm::DynpgStochastic {
        let s = stochastic_schedule(&mdp, cfg.eps, cfg.delta, cfg.mode)?;
        if let Some(w) = s.warning() {
            curve.warnings.push(w);
        }
    }
    let reference = reference_value(&mdp)?;
    let checkpoints = checkpoint_grid(cfg.budget);
    let control = RunControl {
        budget: Some(cfg.budget),
        checkpoints: checkpoints.clone(),
        force: cfg.force,
    };
    let outcomes: Vec<Vec<bool>> = (0..cfg.trials)
        .into_par_iter()
        .map(|i| {
            let seed = RngSeed::new(cfg.seed).with_stream(i as u64);
            run_trial(&mdp, cfg, &control, seed)?
                .iter()
                .map(|snap| Ok(overall_error(&mdp, &reference, &snap.policy)? <= cfg.threshold))
                .collect()
        })
        .collect::<Result<_>>()?;
    let n = cfg.trials as f64;
    for (k, &c) in checkpoints.iter().enumerate() {
        let hits = outcomes.iter().filter(|o| o[k]).count() as f64;
        let p = hits / n;
        curve.points.push(CurvePoint {
            interactions: c,
            success_prob: p,
            stderr: (p * (1.0 - p) / n).sqrt(),
        });
    }
    Ok(curve)
}
