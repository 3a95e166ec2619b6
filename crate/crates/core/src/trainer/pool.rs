//! Sample pool and rollout curriculum (grow, persist, regenerate, transform).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Disc;
use crate::error::{contract, Result};
use crate::grid::{BoolGrid, CellGrid, ChannelLayout};
use crate::scalar::Scalar;
use crate::step::InductionField;
use crate::trainer::TrainTarget;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Grow,
    Persist,
    Regenerate,
    Transform,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Grow, Task::Persist, Task::Regenerate, Task::Transform];

    pub fn name(self) -> &'static str {
        match self {
            Task::Grow => "grow",
            Task::Persist => "persist",
            Task::Regenerate => "regenerate",
            Task::Transform => "transform",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: u8) -> Option<Self> {
        Self::ALL.get(i as usize).copied()
    }
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown task {s:?} (expected grow, persist, regenerate or transform)"))
    }
}

/// Sampling probabilities of the four rollout tasks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskMix {
    pub grow: f64,
    pub persist: f64,
    pub regenerate: f64,
    pub transform: f64,
}

impl Default for TaskMix {
    fn default() -> Self {
        Self {
            grow: 0.25,
            persist: 0.35,
            regenerate: 0.25,
            transform: 0.15,
        }
    }
}

impl TaskMix {
    pub fn weights(&self) -> [f64; 4] {
        [self.grow, self.persist, self.regenerate, self.transform]
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.weights();
        if w.iter().any(|p| !(*p >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(contract(format!("task mix must be non-negative and sum to 1, got {w:?}")));
        }
        Ok(())
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Task {
        let u = rng.random::<f64>();
        let mut acc = 0.0;
        for (task, p) in Task::ALL.into_iter().zip(self.weights()) {
            acc += p;
            if u < acc {
                return task;
            }
        }
        Task::ALL
            .into_iter()
            .zip(self.weights())
            .rev()
            .find(|(_, p)| *p > 0.0)
            .map(|(t, _)| t)
            .unwrap_or(Task::Grow)
    }
}

/// One pool slot: the last rollout's end state and what it was steered toward.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolEntry<S> {
    /// Index of the target sample in the training set.
    pub sample: usize,
    /// Final state of the last rollout; `None` before the first one.
    pub state: Option<CellGrid<S>>,
    pub disc: Disc,
    pub task: Task,
    pub age: u64,
}

/// What a rollout starts from and is forced toward.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutStart<S> {
    pub task: Task,
    pub sample: usize,
    pub state: CellGrid<S>,
    pub field: InductionField<S>,
    pub disc: Disc,
    /// Cells zeroed by a regenerate rollout.
    pub damage: Option<Disc>,
}

/// Geometry knobs for [`make_rollout_start`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StartParams {
    pub diameter_ratio: f64,
    pub damage_radius: [f64; 2],
}

/// Induction field over `disc ∩ alive-target`, one-hot on the target's labels.
pub fn induction_for<S: Scalar>(target: &TrainTarget<S>, disc: &Disc, k: usize) -> Result<InductionField<S>> {
    let region = disc.mask(target.height(), target.width()).and(target.alive());
    InductionField::one_hot(region, k, |r, c| target.label(r, c).unwrap_or(0))
}

/// All-dead grid except the pre-explored cells, which start alive (α = 1, hidden = 1).
pub fn grow_state<S: Scalar>(layout: ChannelLayout, region: &BoolGrid) -> CellGrid<S> {
    let mut g = CellGrid::zeros(region.height(), region.width(), layout);
    for (r, c) in region.iter_set() {
        for ch in layout.k()..layout.n() {
            g.set(r, c, ch, S::one());
        }
    }
    g
}

/// Fresh pre-explored disc on a map of the target's size.
pub fn fresh_disc<R: Rng + ?Sized>(rng: &mut R, height: usize, width: usize, ratio: f64) -> Result<Disc> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(contract(format!("diameter ratio must be in (0, 1], got {ratio}")));
    }
    Disc::sample_inside(rng, height, width, ratio * height.min(width) as f64)
}

/// Builds the start of one training rollout.
///
/// `alternative` supplies another target of the same location for the transform task as
/// `(sample index, target)`. Entries without a previous state always grow.
#[allow(clippy::too_many_arguments)]
pub fn make_rollout_start<S: Scalar, R: Rng + ?Sized>(
    entry: &PoolEntry<S>,
    task: Task,
    targets: &[TrainTarget<S>],
    alternative: Option<usize>,
    layout: ChannelLayout,
    params: &StartParams,
    rng: &mut R,
) -> Result<RolloutStart<S>> {
    let target = targets
        .get(entry.sample)
        .ok_or_else(|| contract(format!("pool entry points at missing sample {}", entry.sample)))?;
    let (h, w) = (target.height(), target.width());
    let k = layout.k();
    let previous = match &entry.state {
        Some(s) if s.height() == h && s.width() == w && s.layout() == layout => Some(s),
        Some(_) => return Err(contract("pool entry state does not match its target")),
        None => None,
    };
    let task = if previous.is_none() { Task::Grow } else { task };

    match (task, previous) {
        (Task::Grow, _) | (_, None) => {
            let disc = fresh_disc(rng, h, w, params.diameter_ratio)?;
            let field = induction_for(target, &disc, k)?;
            let state = grow_state(layout, field.region());
            Ok(RolloutStart {
                task: Task::Grow,
                sample: entry.sample,
                state,
                field,
                disc,
                damage: None,
            })
        }
        (Task::Persist, Some(prev)) => Ok(RolloutStart {
            task,
            sample: entry.sample,
            state: prev.clone(),
            field: induction_for(target, &entry.disc, k)?,
            disc: entry.disc,
            damage: None,
        }),
        (Task::Regenerate, Some(prev)) => {
            let [lo, hi] = params.damage_radius;
            let radius = if hi > lo { lo + (hi - lo) * rng.random::<f64>() } else { lo };
            let damage = Disc::sample_on_cell(rng, h, w, radius);
            let mut state = prev.clone();
            state.clear_where(&damage.mask(h, w));
            Ok(RolloutStart {
                task,
                sample: entry.sample,
                state,
                field: induction_for(target, &entry.disc, k)?,
                disc: entry.disc,
                damage: Some(damage),
            })
        }
        (Task::Transform, Some(prev)) => {
            let next = alternative.unwrap_or(entry.sample);
            if next == entry.sample {
                return Ok(RolloutStart {
                    task,
                    sample: entry.sample,
                    state: prev.clone(),
                    field: induction_for(target, &entry.disc, k)?,
                    disc: entry.disc,
                    damage: None,
                });
            }
            let new_target = targets
                .get(next)
                .ok_or_else(|| contract(format!("missing transform target {next}")))?;
            if !new_target.legality().same_shape(target.legality()) {
                return Err(contract("transform target has a different size"));
            }
            let disc = fresh_disc(rng, h, w, params.diameter_ratio)?;
            Ok(RolloutStart {
                task,
                sample: next,
                state: prev.clone(),
                field: induction_for(new_target, &disc, k)?,
                disc,
                damage: None,
            })
        }
    }
}
