use crate::error::{Error, Result};
use crate::mdp::StochasticPolicy;

/// Interaction budget and snapshot points for a sample-based run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunControl {
    /// Stop before any update that would exceed this many interactions.
    pub budget: Option<u64>,
    /// Strictly increasing interaction counts at which to record the
    /// returned policy.
    pub checkpoints: Vec<u64>,
    /// Run even when the schedule is flagged infeasible.
    pub force: bool,
}

impl RunControl {
    pub fn with_budget(budget: u64) -> Self {
        RunControl {
            budget: Some(budget),
            ..Self::default()
        }
    }
}

/// The policy a run would return after `interactions` environment steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub interactions: u64,
    pub policy: StochasticPolicy,
}

/// Records the current policy whenever an update is about to cross a
/// checkpoint. A checkpoint `c` sees the policy after every update whose
/// cumulative cost is at most `c`.
pub(crate) struct Tracker<'a> {
    points: &'a [u64],
    next: usize,
    taken: Vec<Snapshot>,
}

impl<'a> Tracker<'a> {
    pub(crate) fn new(points: &'a [u64]) -> Result<Self> {
        if points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Input("checkpoints must be strictly increasing".into()));
        }
        Ok(Tracker {
            points,
            next: 0,
            taken: Vec::with_capacity(points.len()),
        })
    }

    /// Whether an update costing `cost` after `used` interactions crosses a checkpoint.
    pub(crate) fn crosses(&self, used: u64, cost: u64) -> bool {
        self.points
            .get(self.next)
            .is_some_and(|&c| c < used.saturating_add(cost))
    }

    /// Records `current()` for every checkpoint the next update crosses.
    pub(crate) fn before_spend(
        &mut self,
        used: u64,
        cost: u64,
        current: impl FnOnce() -> StochasticPolicy,
    ) {
        if !self.crosses(used, cost) {
            return;
        }
        let policy = current();
        while self.crosses(used, cost) {
            self.taken.push(Snapshot {
                interactions: self.points[self.next],
                policy: policy.clone(),
            });
            self.next += 1;
        }
    }

    pub(crate) fn finish(mut self, current: &StochasticPolicy) -> Vec<Snapshot> {
        while self.next < self.points.len() {
            self.taken.push(Snapshot {
                interactions: self.points[self.next],
                policy: current.clone(),
            });
            self.next += 1;
        }
        self.taken
    }
}
