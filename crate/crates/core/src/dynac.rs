//! DynAC: DynPG with a single tabular critic in place of the policy stack.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{EpochReport, Schedule};
use crate::mdp::{q_from_value, StochasticPolicy, TabularMdp, ValueFunction};
use crate::rng::RngSeed;
use crate::softmax::{softmax_row_into, BanditObjective};
use crate::stochastic::sample_index;
use crate::track::{RunControl, Snapshot, Tracker};

/// Tabular critic `Q^w(s, a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticTable {
    q: Array2<f64>,
}

impl CriticTable {
    pub fn new(q: Array2<f64>) -> Result<Self> {
        if q.iter().any(|x| !x.is_finite()) {
            return Err(Error::Input("critic entries must be finite".into()));
        }
        Ok(CriticTable { q })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.q
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.q
    }
}

/// The first critic: the mean reward table.
pub fn critic_init(mdp: &TabularMdp) -> CriticTable {
    CriticTable {
        q: mdp.rewards().clone(),
    }
}

/// `r(s,a) + γ Σ_{s'} p(s'|s,a) Σ_{a'} π(a'|s') q(s',a')`.
pub fn critic_update(mdp: &TabularMdp, critic: &CriticTable, pi: &StochasticPolicy) -> Result<CriticTable> {
    let dim = (mdp.n_states(), mdp.n_actions());
    if critic.q.dim() != dim || pi.probs().dim() != dim {
        return Err(Error::Shape(format!(
            "critic {:?} and policy {:?} must match the MDP's {dim:?}",
            critic.q.dim(),
            pi.probs().dim()
        )));
    }
    let v: Array1<f64> = Array1::from_shape_fn(dim.0, |s| critic.q.row(s).dot(&pi.probs().row(s)));
    let q = q_from_value(mdp, &ValueFunction::new(v)?)?;
    Ok(CriticTable { q: q.into_inner() })
}

/// How the actor gradient is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorMode {
    /// The expectation over `S ~ μ`, `A ~ π_θ(·|S)`.
    Exact,
    /// One `(S, A)` draw per step.
    Sampled,
}

/// Output of a DynAC run.
#[derive(Debug, Clone)]
pub struct DynAcOutcome {
    pub policy: StochasticPolicy,
    pub critic: CriticTable,
    pub reports: Vec<EpochReport>,
    /// Tables held at any time: the actor's logits and the critic.
    pub table_count: usize,
    pub snapshots: Vec<Snapshot>,
    pub interactions: u64,
    pub budget_exhausted: bool,
}

/// Per-epoch logits trajectory hook, called with `(epoch, step, θ)` after every update.
pub type StepHook<'a> = &'a mut dyn FnMut(usize, u64, &Array2<f64>);

pub fn dynac(mdp: &TabularMdp, schedule: &Schedule, mode: ActorMode, seed: RngSeed) -> Result<DynAcOutcome> {
    dynac_run(mdp, schedule, mode, seed, &RunControl::default(), None)
}

/// DynAC with a budget, snapshots and an optional per-step hook.
///
/// Each gradient step counts as one interaction. In sampled mode step `n` of
/// epoch `h` draws `S ~ μ` then `A ~ π_θ(·|S)` from substream `(h, n, 0)`.
pub fn dynac_run(
    mdp: &TabularMdp,
    schedule: &Schedule,
    mode: ActorMode,
    seed: RngSeed,
    control: &RunControl,
    mut hook: Option<StepHook>,
) -> Result<DynAcOutcome> {
    let (n_states, n_actions) = (mdp.n_states(), mdp.n_actions());
    let mu = mdp.init_dist();
    let mut tracker = Tracker::new(&control.checkpoints)?;
    let mut critic = critic_init(mdp);
    let mut head = StochasticPolicy::uniform(n_states, n_actions);
    let mut reports = Vec::new();
    let mut used = 0u64;
    let mut exhausted = false;
    let mut theta = Array2::<f64>::zeros((n_states, n_actions));
    let mut probs = Array2::<f64>::zeros((n_states, n_actions));
    let mut row = vec![0.0; n_actions];

    'epochs: for h in 0..schedule.epochs() {
        let eta = schedule.step_sizes[h];
        let n_steps = schedule.grad_steps[h];
        theta.fill(0.0);
        probs.fill(1.0 / n_actions as f64);
        let q = critic.values();
        let mut done = 0;
        for n in 0..n_steps {
            if control.budget.is_some_and(|b| used + 1 > b) {
                exhausted = true;
                break 'epochs;
            }
            tracker.before_spend(used, 1, || head.clone());
            match mode {
                ActorMode::Exact => {
                    for s in 0..n_states {
                        let p = probs.row(s);
                        let baseline = p.dot(&q.row(s));
                        let scale = eta * mu[s];
                        for a in 0..n_actions {
                            theta[[s, a]] += scale * p[a] * (q[[s, a]] - baseline);
                        }
                    }
                    for s in 0..n_states {
                        refresh_row(&theta, &mut probs, s, &mut row);
                    }
                }
                ActorMode::Sampled => {
                    let mut rng = seed.substream(h as u64, n, 0);
                    let s = sample_index(&mut rng, mu.view());
                    let a = sample_index(&mut rng, probs.row(s));
                    let w = eta * q[[s, a]];
                    if w != 0.0 {
                        for b in 0..n_actions {
                            let indicator = if b == a { 1.0 } else { 0.0 };
                            theta[[s, b]] += w * (indicator - probs[[s, b]]);
                        }
                        refresh_row(&theta, &mut probs, s, &mut row);
                    }
                }
            }
            if theta.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric("actor produced non-finite logits".into()));
            }
            used += 1;
            done += 1;
            if let Some(f) = hook.as_mut() {
                f(h, n, &theta);
            }
        }
        let pi = StochasticPolicy::new(probs.clone())?;
        let objective = BanditObjective::from_q(critic.values().clone(), mu.clone());
        reports.push(EpochReport {
            epoch: h,
            step_size: eta,
            grad_steps: done,
            batch_size: 1,
            one_step_error: objective.one_step_error(&pi),
            epoch_interactions: done,
            cumulative_interactions: used,
            min_optimal_prob: None,
        });
        critic = critic_update(mdp, &critic, &pi)?;
        head = pi;
    }
    let snapshots = tracker.finish(&head);
    Ok(DynAcOutcome {
        policy: head,
        critic,
        reports,
        table_count: 2,
        snapshots,
        interactions: used,
        budget_exhausted: exhausted,
    })
}

fn refresh_row(theta: &Array2<f64>, probs: &mut Array2<f64>, s: usize, row: &mut [f64]) {
    softmax_row_into(&theta.row(s).to_vec(), row);
    for (p, &x) in probs.row_mut(s).iter_mut().zip(row.iter()) {
        *p = x;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{evaluate_stack, PolicyStack};
    use ndarray::{array, Array3};

    fn chain() -> TabularMdp {
        TabularMdp::new(
            Array3::from_shape_fn((2, 2, 2), |(_, a, n)| if n == a { 1.0 } else { 0.0 }),
            array![[0.2, 0.0], [0.0, 1.0]],
            0.9,
            array![0.5, 0.5],
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn init_copies_rewards() {
        let mdp = chain();
        assert_eq!(critic_init(&mdp).values(), mdp.rewards());
    }

    #[test]
    fn vanishing_discount_update_is_reward() {
        let mdp = chain().with_gamma(f64::MIN_POSITIVE).unwrap();
        let c = critic_update(&mdp, &critic_init(&mdp), &StochasticPolicy::uniform(2, 2)).unwrap();
        let gap = (c.values() - mdp.rewards()).iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(gap < 1e-300);
    }

    #[test]
    fn critic_tracks_stack_q() {
        let mdp = chain();
        let pis = [
            StochasticPolicy::uniform(2, 2),
            StochasticPolicy::deterministic(&[1, 1], 2).unwrap(),
        ];
        let mut critic = critic_init(&mdp);
        let mut stack = PolicyStack::new();
        for pi in pis {
            critic = critic_update(&mdp, &critic, &pi).unwrap();
            stack.push_front(pi);
        }
        let q = q_from_value(&mdp, &evaluate_stack(&mdp, &stack).unwrap()).unwrap();
        for (x, y) in critic.values().iter().zip(q.values()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn sampled_zero_rewards_keep_uniform() {
        let mdp = TabularMdp::new(
            Array3::from_elem((2, 3, 2), 0.5),
            Array2::zeros((2, 3)),
            0.9,
            array![0.5, 0.5],
            1.0,
        )
        .unwrap();
        let schedule = Schedule::new(
            2,
            vec![0.1, 0.1],
            vec![1.0, 1.0],
            vec![10, 10],
            crate::exact::ErrorTarget::ValueError,
        )
        .unwrap();
        let out = dynac(&mdp, &schedule, ActorMode::Sampled, RngSeed::new(0)).unwrap();
        assert_eq!(out.policy, StochasticPolicy::uniform(2, 3));
        assert_eq!(out.table_count, 2);
        assert_eq!(out.interactions, 20);
    }
}
