//! Pool-based training loop.

use std::time::Instant;

use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Disc, MapSample};
use crate::error::{contract, NcaError, Result};
use crate::eval::accuracy;
use crate::grid::{CellGrid, ChannelLayout};
use crate::model::{Layer, ModelParams, DEFAULT_HIDDEN};
use crate::scalar::Scalar;
use crate::step::{StepConfig, Stepper};
use crate::trainer::adam::{adam_step, AdamState};
use crate::trainer::backward::{backward, RecordedRollout};
use crate::trainer::loss::{loss, TrainTarget};
use crate::trainer::pool::{make_rollout_start, PoolEntry, StartParams, Task, TaskMix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Steps per rollout (T).
    pub steps: usize,
    pub batch_size: usize,
    /// Number of optimizer updates.
    pub epochs: u64,
    pub lr: f64,
    /// Fraction of `epochs` after which the learning rate is multiplied by `lr_decay_factor`.
    pub lr_decay_at: f64,
    pub lr_decay_factor: f64,
    /// Scale each layer's batch gradient to unit L2 norm before the optimizer.
    pub normalize_gradients: bool,
    pub pool_size: usize,
    pub task_mix: TaskMix,
    /// Regenerate-task damage radius range, in cells.
    pub damage_radius: [f64; 2],
    /// Pre-explored disc diameter as a fraction of the shorter map side.
    pub diameter_ratio: f64,
    pub hidden: usize,
    #[serde(with = "crate::serde_u64")]
    pub seed: u64,
    pub step: StepConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 128,
            batch_size: 8,
            epochs: 2000,
            lr: 2e-3,
            lr_decay_at: 0.7,
            lr_decay_factor: 0.1,
            normalize_gradients: true,
            pool_size: 256,
            task_mix: TaskMix::default(),
            damage_radius: [2.0, 10.0],
            diameter_ratio: 0.5,
            hidden: DEFAULT_HIDDEN,
            seed: 0,
            step: StepConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(contract(m.to_string()));
        if self.steps == 0 {
            return fail("steps must be at least 1");
        }
        if self.batch_size == 0 || self.pool_size < self.batch_size {
            return fail("need 1 <= batch_size <= pool_size");
        }
        if self.hidden == 0 {
            return fail("hidden width must be at least 1");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return fail("lr must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&self.lr_decay_at) || !(self.lr_decay_factor >= 0.0) {
            return fail("lr decay point must be in [0, 1] and factor non-negative");
        }
        if !(self.diameter_ratio > 0.0 && self.diameter_ratio <= 1.0) {
            return fail("diameter ratio must be in (0, 1]");
        }
        let [lo, hi] = self.damage_radius;
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return fail("damage radius range must satisfy 0 <= lo <= hi");
        }
        self.task_mix.validate()?;
        self.step.validate()
    }

    /// Learning rate of the update with 0-based index `update`.
    pub fn lr_at(&self, update: u64) -> f64 {
        let decay_from = (self.lr_decay_at * self.epochs as f64).floor() as u64;
        if update >= decay_from && self.lr_decay_at < 1.0 {
            self.lr * self.lr_decay_factor
        } else {
            self.lr
        }
    }

    fn start_params(&self) -> StartParams {
        StartParams {
            diameter_ratio: self.diameter_ratio,
            damage_radius: self.damage_radius,
        }
    }
}

/// Per-task counters, serialized by task name.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerTask<T> {
    pub grow: T,
    pub persist: T,
    pub regenerate: T,
    pub transform: T,
}

impl<T> PerTask<T> {
    pub fn get_mut(&mut self, task: Task) -> &mut T {
        match task {
            Task::Grow => &mut self.grow,
            Task::Persist => &mut self.persist,
            Task::Regenerate => &mut self.regenerate,
            Task::Transform => &mut self.transform,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based index of the optimizer update.
    pub epoch: u64,
    /// Mean loss over the batch.
    pub loss: f64,
    pub lr: f64,
    /// Realized task counts in the batch.
    pub tasks: PerTask<usize>,
    /// Mean final-state accuracy per task; absent for tasks not drawn.
    pub accuracy: PerTask<Option<f64>>,
    pub wall_ms: f64,
}

/// Training targets plus bookkeeping for transform partners and resume checks.
#[derive(Clone, Debug)]
pub struct TrainSet<S> {
    targets: Vec<TrainTarget<S>>,
    siblings: Vec<Vec<usize>>,
    fingerprint: [u8; 32],
}

impl<S: Scalar> TrainSet<S> {
    pub fn from_samples(samples: &[&MapSample], k: usize) -> Result<Self> {
        let first = samples.first().ok_or_else(|| contract("training needs at least one sample"))?;
        let (h, w) = (first.height(), first.width());
        let mut hasher = Sha256::new();
        let mut targets = Vec::with_capacity(samples.len());
        for s in samples {
            if s.height() != h || s.width() != w {
                return Err(contract("training samples must share one map size"));
            }
            targets.push(s.target(k)?);
            hasher.update(s.location.as_bytes());
            hasher.update([0]);
            hasher.update(s.timestamp.as_bytes());
            hasher.update([0]);
            hasher.update(s.classes.cells().iter().map(|c| c.map_or(255, |v| v)).collect::<Vec<u8>>());
        }
        let siblings = samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                samples
                    .iter()
                    .enumerate()
                    .filter(|(j, o)| *j != i && o.location == s.location && o.legality() == s.legality())
                    .map(|(j, _)| j)
                    .collect()
            })
            .collect();
        Ok(Self {
            targets,
            siblings,
            fingerprint: hasher.finalize().into(),
        })
    }

    pub fn cast<T: Scalar>(&self) -> TrainSet<T> {
        TrainSet {
            targets: self.targets.iter().map(TrainTarget::cast).collect(),
            siblings: self.siblings.clone(),
            fingerprint: self.fingerprint,
        }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn targets(&self) -> &[TrainTarget<S>] {
        &self.targets
    }

    pub fn fingerprint(&self) -> [u8; 32] {
        self.fingerprint
    }

    pub fn height(&self) -> usize {
        self.targets[0].height()
    }

    pub fn width(&self) -> usize {
        self.targets[0].width()
    }
}

struct ItemOutcome<S> {
    grads: ModelParams<S>,
    loss: f64,
    accuracy: f64,
    task: Task,
    sample: usize,
    disc: Disc,
    state: CellGrid<S>,
}

/// Owns parameters, optimizer, pool and random state; one [`Trainer::run_epoch`] is one update.
#[derive(Clone, Debug)]
pub struct Trainer<S: Scalar> {
    pub(crate) cfg: TrainConfig,
    pub(crate) layout: ChannelLayout,
    pub(crate) train: TrainSet<S>,
    pub(crate) params: ModelParams<S>,
    pub(crate) adam: AdamState,
    pub(crate) pool: Vec<PoolEntry<S>>,
    pub(crate) rng: ChaCha8Rng,
    pub(crate) epoch: u64,
}

impl<S: Scalar> Trainer<S> {
    pub fn new(cfg: TrainConfig, layout: ChannelLayout, train: TrainSet<S>) -> Result<Self> {
        cfg.validate()?;
        if train.is_empty() {
            return Err(contract("training needs at least one sample"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let params = ModelParams::init(layout, cfg.hidden, &mut rng);
        let adam = AdamState::new(&params, cfg.lr);
        let pool = (0..cfg.pool_size)
            .map(|i| PoolEntry {
                sample: i % train.len(),
                state: None,
                disc: Disc::around_cell(0, 0, 0.0),
                task: Task::Grow,
                age: 0,
            })
            .collect();
        Ok(Self {
            cfg,
            layout,
            train,
            params,
            adam,
            pool,
            rng,
            epoch: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn layout(&self) -> ChannelLayout {
        self.layout
    }

    pub fn params(&self) -> &ModelParams<S> {
        &self.params
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub fn pool(&self) -> &[PoolEntry<S>] {
        &self.pool
    }

    pub fn train_set(&self) -> &TrainSet<S> {
        &self.train
    }

    /// Number of completed updates.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.cfg.epochs
    }

    /// Changes the total epoch budget, e.g. to extend a resumed run.
    pub fn set_epochs(&mut self, epochs: u64) {
        self.cfg.epochs = epochs;
    }

    fn run_item(&self, b: usize, pool_index: usize, epoch_seed: u64) -> Result<ItemOutcome<S>> {
        let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
        rng.set_stream(b as u64);
        let entry = &self.pool[pool_index];
        let task = self.cfg.task_mix.draw(&mut rng);
        let alternative = match task {
            Task::Transform => {
                let sib = &self.train.siblings[entry.sample];
                (!sib.is_empty()).then(|| sib[rng.random_range(0..sib.len())])
            }
            _ => None,
        };
        let start = make_rollout_start(
            entry,
            task,
            &self.train.targets,
            alternative,
            self.layout,
            &self.cfg.start_params(),
            &mut rng,
        )?;
        let target = &self.train.targets[start.sample];
        let mut stepper = Stepper::new();
        let rollout = RecordedRollout::record(
            &mut stepper,
            &start.state,
            &self.params,
            &self.cfg.step,
            target.legality(),
            Some(&start.field),
            &mut rng,
            self.cfg.steps,
        )?;
        let final_state = rollout.final_state();
        let report = loss(final_state, target)?;
        let acc = accuracy(final_state, target, self.cfg.step.alive_threshold)?;
        let grads = backward(&rollout, target, &self.params, &self.cfg.step, &stepper)?;
        Ok(ItemOutcome {
            grads,
            loss: report.total,
            accuracy: acc,
            task: start.task,
            sample: start.sample,
            disc: start.disc,
            state: final_state.clone(),
        })
    }

    /// One optimizer update on one batch drawn from the pool.
    ///
    /// A non-finite loss or gradient leaves the trainer untouched and returns
    /// [`NcaError::NonFiniteLoss`].
    pub fn run_epoch(&mut self) -> Result<EpochLog> {
        let started = Instant::now();
        let rng_before = self.rng.clone();
        let epoch_seed = self.rng.next_u64();
        let picks = index::sample(&mut self.rng, self.pool.len(), self.cfg.batch_size).into_vec();

        let outcomes: Vec<Result<ItemOutcome<S>>> = picks
            .par_iter()
            .enumerate()
            .map(|(b, &p)| self.run_item(b, p, epoch_seed))
            .collect();
        let outcomes = match outcomes.into_iter().collect::<Result<Vec<_>>>() {
            Ok(o) => o,
            Err(e) => {
                self.rng = rng_before;
                return Err(e);
            }
        };

        let batch = outcomes.len() as f64;
        let mean_loss = outcomes.iter().map(|o| o.loss).sum::<f64>() / batch;
        let mut grads = ModelParams::<S>::zeros(self.layout, self.cfg.hidden);
        for o in &outcomes {
            for layer in Layer::ALL {
                for (g, x) in grads.layer_mut(layer).iter_mut().zip(o.grads.layer(layer)) {
                    *g += *x;
                }
            }
        }
        for layer in Layer::ALL {
            let g = grads.layer_mut(layer);
            let scale: f64 = if self.cfg.normalize_gradients {
                let norm = g.iter().map(|x| x.as_f64().powi(2)).sum::<f64>().sqrt();
                1.0 / (norm + 1e-8)
            } else {
                1.0 / batch
            };
            for x in g.iter_mut() {
                *x = S::of(x.as_f64() * scale);
            }
        }
        if !mean_loss.is_finite() || !grads.all_finite() {
            self.rng = rng_before;
            return Err(NcaError::NonFiniteLoss {
                epoch: self.epoch + 1,
                checkpoint: None,
            });
        }

        let lr = self.cfg.lr_at(self.epoch);
        self.adam.lr = lr;
        adam_step(&mut self.params, &grads, &mut self.adam)?;

        let mut tasks = PerTask::<usize>::default();
        let mut acc_sum = PerTask::<f64>::default();
        for (o, &p) in outcomes.into_iter().zip(&picks) {
            *tasks.get_mut(o.task) += 1;
            *acc_sum.get_mut(o.task) += o.accuracy;
            let entry = &mut self.pool[p];
            entry.sample = o.sample;
            entry.state = Some(o.state);
            entry.disc = o.disc;
            entry.task = o.task;
            entry.age += 1;
        }
        let mut accuracy = PerTask::<Option<f64>>::default();
        for task in Task::ALL {
            let n = *tasks.get_mut(task);
            *accuracy.get_mut(task) = (n > 0).then(|| *acc_sum.get_mut(task) / n as f64);
        }
        self.epoch += 1;
        Ok(EpochLog {
            epoch: self.epoch,
            loss: mean_loss,
            lr,
            tasks,
            accuracy,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Runs updates until the epoch budget is spent, calling `on_epoch` after each one.
    pub fn fit(&mut self, mut on_epoch: impl FnMut(&Self, &EpochLog) -> Result<()>) -> Result<Vec<EpochLog>> {
        let mut logs = Vec::new();
        while !self.is_done() {
            let log = self.run_epoch()?;
            on_epoch(self, &log)?;
            logs.push(log);
        }
        Ok(logs)
    }
}

/// Trains from scratch on `samples` and returns the final parameters and per-epoch logs.
pub fn train<S: Scalar>(
    samples: &[&MapSample],
    layout: ChannelLayout,
    cfg: &TrainConfig,
) -> Result<(ModelParams<S>, Vec<EpochLog>)> {
    let set = TrainSet::from_samples(samples, layout.k())?;
    let mut trainer = Trainer::new(cfg.clone(), layout, set)?;
    let logs = trainer.fit(|_, _| Ok(()))?;
    Ok((trainer.params, logs))
}
