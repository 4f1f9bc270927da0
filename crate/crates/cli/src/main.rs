use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dynpg::baselines::{benchmark_step_size, reinforce, vanilla_pg, REINFORCE_TRUNCATION};
use dynpg::bench::{build_appendix_b_mdp, overall_error, run_success_experiment, Algorithm, ExperimentConfig};
use dynpg::checks::run_checks;
use dynpg::diagnostics::{breakdowns_to_csv, decompose, reference_value};
use dynpg::dynac::{dynac, ActorMode};
use dynpg::error::Error;
use dynpg::exact::{dynpg_with, schedule_overall_error, schedule_value_error, DynPgOptions, EpochReport, Schedule};
use dynpg::io::{load_mdp, mdp_from_json, stack_from_json, stack_to_json};
use dynpg::mdp::{evaluate_stationary_inf, value_iteration, StochasticPolicy, TabularMdp, Termination};
use dynpg::rng::RngSeed;
use dynpg::stochastic::{dynpg_stochastic_run, stochastic_schedule, ScheduleMode, StochasticSchedule};
use dynpg::track::RunControl;
use serde_json::json;

const BANDIT_FIXTURE: &str = include_str!("../fixtures/bandit.json");
const RING_FIXTURE: &str = include_str!("../fixtures/ring.json");

#[derive(Parser)]
#[command(name = "dynpg", version, about = "Dynamic policy gradient for tabular MDPs")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Base seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Write the main output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Replace the discount factor of the loaded MDP.
    #[arg(long, global = true)]
    gamma_override: Option<f64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Target {
    Value,
    Overall,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    /// Exact gradients with the closed-form schedule.
    Exact,
    Theoretical,
    Practical,
    Custom,
}

#[derive(Clone, Copy, ValueEnum)]
enum Actor {
    Exact,
    Sampled,
}

#[derive(Args)]
struct ScheduleArgs {
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, value_enum, default_value_t = Mode::Exact)]
    mode: Mode,
    #[arg(long, value_enum, default_value_t = Target::Value)]
    target: Target,
    /// Step-size constant of the custom schedule.
    #[arg(long, default_value_t = 2.0)]
    step_constant: f64,
    /// Step-count constant of the custom schedule.
    #[arg(long, default_value_t = 45.0)]
    steps_constant: f64,
    /// Cap on total sampled interactions before a theoretical schedule is refused.
    #[arg(long, default_value_t = dynpg::stochastic::DEFAULT_SAMPLE_CAP)]
    sample_cap: f64,
}

impl ScheduleArgs {
    fn stochastic_mode(&self) -> Option<ScheduleMode> {
        match self.mode {
            Mode::Exact => None,
            Mode::Theoretical => Some(ScheduleMode::Theoretical),
            Mode::Practical => Some(ScheduleMode::Practical),
            Mode::Custom => Some(ScheduleMode::Custom {
                step_constant: self.step_constant,
                steps_constant: self.steps_constant,
            }),
        }
    }

    fn exact(&self, mdp: &TabularMdp) -> Result<Schedule, Error> {
        match self.stochastic_mode() {
            None => match self.target {
                Target::Value => schedule_value_error(mdp, self.eps),
                Target::Overall => schedule_overall_error(mdp, self.eps),
            },
            Some(mode) => {
                let s = self.stochastic(mdp, mode)?;
                dynpg::bench::practical_as_exact(&s)
            }
        }
    }

    fn stochastic(&self, mdp: &TabularMdp, mode: ScheduleMode) -> Result<StochasticSchedule, Error> {
        dynpg::stochastic::stochastic_schedule_with_cap(mdp, self.eps, self.delta, mode, self.sample_cap)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Value iteration on an MDP file.
    Solve {
        mdp: PathBuf,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Train a policy stack with DynPG.
    Dynpg {
        mdp: PathBuf,
        #[command(flatten)]
        schedule: ScheduleArgs,
        /// Stop each exact epoch once it reaches its accuracy target.
        #[arg(long)]
        early_exit: bool,
        /// Run a theoretical schedule even when it exceeds the sample cap.
        #[arg(long)]
        force: bool,
        /// Save the trained stack as JSON.
        #[arg(long)]
        save_stack: Option<PathBuf>,
    },
    /// Exact-gradient softmax policy gradient.
    Pg {
        mdp: PathBuf,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long, default_value_t = 1000)]
        steps: u64,
    },
    /// Truncated REINFORCE.
    Reinforce {
        mdp: PathBuf,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long, default_value_t = 1000)]
        steps: u64,
        #[arg(long, default_value_t = REINFORCE_TRUNCATION)]
        truncation: usize,
    },
    /// DynAC with a tabular critic.
    Dynac {
        mdp: PathBuf,
        #[command(flatten)]
        schedule: ScheduleArgs,
        #[arg(long, value_enum, default_value_t = Actor::Exact)]
        actor: Actor,
    },
    /// Print a schedule table.
    Schedule {
        mdp: PathBuf,
        #[command(flatten)]
        schedule: ScheduleArgs,
    },
    /// Error decomposition of a saved stack.
    Decompose { mdp: PathBuf, stack: PathBuf },
    /// Success-probability experiment, by default on the built-in benchmark MDP.
    Bench {
        #[arg(long, default_value = "dynpg_stochastic")]
        algorithm: String,
        #[arg(long)]
        mdp: Option<PathBuf>,
        #[arg(long, default_value_t = 0.99)]
        gamma: f64,
        #[arg(long, default_value_t = 0.01)]
        eps: f64,
        #[arg(long, default_value_t = 0.01)]
        threshold: f64,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 3000)]
        budget: u64,
        #[arg(long, value_enum, default_value_t = Mode::Practical)]
        mode: Mode,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        force: bool,
    },
    /// Run the invariant suite on the bundled fixtures and any given MDP files.
    Check {
        mdps: Vec<PathBuf>,
        #[arg(long, default_value_t = 20)]
        cases: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::InvalidMdp { .. } => 2,
                Error::InfeasibleSchedule(_) => 3,
                _ => 1,
            })
        }
    }
}

fn load(path: &Path, global: &Global) -> Result<TabularMdp, Error> {
    let mdp = load_mdp(path)?;
    match global.gamma_override {
        Some(g) => mdp.with_gamma(g),
        None => Ok(mdp),
    }
}

fn emit(global: &Global, text: &str) -> Result<(), Error> {
    match &global.out {
        Some(path) => fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json(value: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable output");
    s.push('\n');
    s
}

fn policy_rows(pi: &StochasticPolicy) -> Vec<Vec<f64>> {
    pi.probs().rows().into_iter().map(|r| r.to_vec()).collect()
}

fn reports_csv(reports: &[EpochReport]) -> String {
    let mut out = String::from(
        "epoch,step_size,grad_steps,batch_size,one_step_error,epoch_interactions,cumulative_interactions\n",
    );
    for r in reports {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.epoch,
            r.step_size,
            r.grad_steps,
            r.batch_size,
            r.one_step_error,
            r.epoch_interactions,
            r.cumulative_interactions
        )
        .unwrap();
    }
    out
}

fn run(cli: &Cli) -> Result<ExitCode, Error> {
    let g = &cli.global;
    let seed = RngSeed::new(g.seed);
    match &cli.command {
        Command::Solve { mdp, tol } => {
            let mdp = load(mdp, g)?;
            let (v, pi) = value_iteration(&mdp, Termination::Tolerance(*tol))?;
            let text = match g.format {
                Format::Json => to_json(&json!({
                    "values": v.values().to_vec(),
                    "value_mu": v.expectation(mdp.init_dist()),
                    "greedy_policy": policy_rows(&pi),
                })),
                Format::Csv => {
                    let mut out = String::from("state,value\n");
                    for (s, x) in v.values().iter().enumerate() {
                        writeln!(out, "{s},{}", (x * 1e9).round() / 1e9).unwrap();
                    }
                    out
                }
            };
            emit(g, &text)?;
        }
        Command::Dynpg {
            mdp,
            schedule,
            early_exit,
            force,
            save_stack,
        } => {
            let mdp = load(mdp, g)?;
            let (outcome, extra) = match schedule.stochastic_mode() {
                None => {
                    let s = schedule.exact(&mdp)?;
                    let options = DynPgOptions {
                        stop_at_epoch_target: *early_exit,
                    };
                    (dynpg_with(&mdp, &s, options)?, None)
                }
                Some(mode) => {
                    let s = schedule.stochastic(&mdp, mode)?;
                    if let Some(w) = s.warning() {
                        eprintln!("warning: {w}");
                    }
                    let control = RunControl {
                        force: *force,
                        ..RunControl::default()
                    };
                    let run = dynpg_stochastic_run(&mdp, &s, seed, &control)?;
                    (run.outcome, Some(run.interactions))
                }
            };
            if let Some(path) = save_stack {
                fs::write(path, stack_to_json(&outcome.stack, &mdp))
                    .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            }
            let error = overall_error(&mdp, &reference_value(&mdp)?, &outcome.policy)?;
            let text = match g.format {
                Format::Json => to_json(&json!({
                    "reports": outcome.reports,
                    "overall_error": error,
                    "interactions": extra,
                    "policy": policy_rows(&outcome.policy),
                })),
                Format::Csv => reports_csv(&outcome.reports),
            };
            emit(g, &text)?;
            eprintln!("overall error {error:.6e}");
        }
        Command::Pg { mdp, eta, steps } => {
            let mdp = load(mdp, g)?;
            let eta = eta.unwrap_or_else(|| benchmark_step_size(mdp.gamma()));
            let out = vanilla_pg(&mdp, eta, *steps)?;
            let text = match g.format {
                Format::Json => to_json(&json!({ "values": out.values, "policy": policy_rows(&out.policy) })),
                Format::Csv => {
                    let mut s = String::from("step,value\n");
                    for (n, v) in out.values.iter().enumerate() {
                        writeln!(s, "{n},{v}").unwrap();
                    }
                    s
                }
            };
            emit(g, &text)?;
        }
        Command::Reinforce {
            mdp,
            eta,
            steps,
            truncation,
        } => {
            let mdp = load(mdp, g)?;
            let eta = eta.unwrap_or_else(|| benchmark_step_size(mdp.gamma()));
            let out = reinforce(&mdp, eta, *steps, *truncation, seed)?;
            let error = overall_error(&mdp, &reference_value(&mdp)?, &out.policy)?;
            let value = evaluate_stationary_inf(&mdp, &out.policy)?.expectation(mdp.init_dist());
            let text = match g.format {
                Format::Json => to_json(&json!({
                    "interactions": out.interactions,
                    "value_mu": value,
                    "overall_error": error,
                    "policy": policy_rows(&out.policy),
                })),
                Format::Csv => format!("interactions,value_mu,overall_error\n{},{value},{error}\n", out.interactions),
            };
            emit(g, &text)?;
        }
        Command::Dynac { mdp, schedule, actor } => {
            let mdp = load(mdp, g)?;
            let s = schedule.exact(&mdp)?;
            let mode = match actor {
                Actor::Exact => ActorMode::Exact,
                Actor::Sampled => ActorMode::Sampled,
            };
            let out = dynac(&mdp, &s, mode, seed)?;
            let error = overall_error(&mdp, &reference_value(&mdp)?, &out.policy)?;
            let text = match g.format {
                Format::Json => to_json(&json!({
                    "reports": out.reports,
                    "overall_error": error,
                    "table_count": out.table_count,
                    "policy": policy_rows(&out.policy),
                })),
                Format::Csv => reports_csv(&out.reports),
            };
            emit(g, &text)?;
            eprintln!("overall error {error:.6e}");
        }
        Command::Schedule { mdp, schedule } => {
            let mdp = load(mdp, g)?;
            let text = match schedule.stochastic_mode() {
                None => {
                    let s = schedule.exact(&mdp)?;
                    match g.format {
                        Format::Json => to_json(&s),
                        Format::Csv => {
                            let mut out = format!("# H={}\nepoch,eps,step_size,grad_steps\n", s.horizon);
                            for h in 0..s.epochs() {
                                writeln!(out, "{h},{},{},{}", s.eps[h], s.step_sizes[h], s.grad_steps[h]).unwrap();
                            }
                            out
                        }
                    }
                }
                Some(mode) => {
                    let s = stochastic_schedule(&mdp, schedule.eps, schedule.delta, mode)?;
                    match g.format {
                        Format::Json => to_json(&s),
                        Format::Csv => {
                            let mut out = format!("# H={}\n", s.horizon);
                            if let Some(w) = s.warning() {
                                writeln!(out, "# warning: {w}").unwrap();
                            }
                            out.push_str("epoch,eps,step_size,grad_steps,batch_size\n");
                            for h in 0..s.epochs() {
                                writeln!(
                                    out,
                                    "{h},{},{},{},{}",
                                    s.eps[h], s.step_sizes[h], s.steps[h], s.batch_sizes[h]
                                )
                                .unwrap();
                            }
                            out
                        }
                    }
                }
            };
            emit(g, &text)?;
        }
        Command::Decompose { mdp, stack } => {
            let mdp = load(mdp, g)?;
            let text = fs::read_to_string(stack).map_err(|e| Error::Io(format!("{}: {e}", stack.display())))?;
            let stack = stack_from_json(&text, &mdp)?;
            let b = decompose(&mdp, &stack)?;
            let text = match g.format {
                Format::Json => to_json(&b),
                Format::Csv => breakdowns_to_csv(&[b])?,
            };
            emit(g, &text)?;
        }
        Command::Bench {
            algorithm,
            mdp,
            gamma,
            eps,
            threshold,
            trials,
            budget,
            mode,
            delta,
            eta,
            force,
        } => {
            let mdp = match mdp {
                Some(path) => load(path, g)?,
                None => build_appendix_b_mdp(),
            };
            let algorithm: Algorithm = algorithm.parse()?;
            let mut cfg = ExperimentConfig::new(algorithm, g.gamma_override.unwrap_or(*gamma));
            cfg.eps = *eps;
            cfg.threshold = *threshold;
            cfg.trials = *trials;
            cfg.budget = *budget;
            cfg.seed = g.seed;
            cfg.delta = *delta;
            cfg.step_size = *eta;
            cfg.force = *force;
            cfg.mode = match mode {
                Mode::Theoretical => ScheduleMode::Theoretical,
                Mode::Exact | Mode::Practical => ScheduleMode::Practical,
                Mode::Custom => ScheduleMode::Custom {
                    step_constant: 2.0,
                    steps_constant: 45.0,
                },
            };
            let curve = run_success_experiment(&mdp, &cfg)?;
            let text = match g.format {
                Format::Json => to_json(&curve),
                Format::Csv => curve.to_csv()?,
            };
            emit(g, &text)?;
        }
        Command::Check { mdps, cases } => {
            let mut targets = vec![
                ("bandit".to_string(), mdp_from_json(BANDIT_FIXTURE)?),
                ("ring".to_string(), mdp_from_json(RING_FIXTURE)?),
            ];
            for path in mdps {
                targets.push((path.display().to_string(), load(path, g)?));
            }
            let mut all = true;
            let mut out = String::new();
            for (name, mdp) in &targets {
                for c in run_checks(mdp, seed, *cases)? {
                    all &= c.passed;
                    writeln!(
                        out,
                        "{} {name} {} worst={:.3e} tol={:.1e}",
                        if c.passed { "PASS" } else { "FAIL" },
                        c.name,
                        c.worst,
                        c.tolerance
                    )
                    .unwrap();
                }
            }
            emit(g, &out)?;
            if !all {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
