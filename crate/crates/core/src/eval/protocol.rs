//! Repeated-trial grow-mode evaluation with per-location aggregation.

use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Disc, MapSample};
use crate::error::{contract, Result};
use crate::eval::accuracy::{accuracy, coverage, match_counts_outside};
use crate::grid::{BoolGrid, CellGrid};
use crate::model::ModelParams;
use crate::scalar::Scalar;
use crate::step::{InductionField, StepConfig, Stepper};
use crate::trainer::pool::{fresh_disc, grow_state, induction_for};
use crate::trainer::TrainTarget;

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub steps: usize,
    pub trials: usize,
    pub diameter_ratio: f64,
    #[serde(with = "crate::serde_u64")]
    pub seed: u64,
    pub step: StepConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            steps: 128,
            trials: 10,
            diameter_ratio: 0.5,
            seed: 0,
            step: StepConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub location: String,
    pub timestamp: String,
    /// Mean over trials.
    pub accuracy: f64,
    pub trials: Vec<f64>,
    /// Mean accuracy over alive cells outside the pre-explored disc.
    pub outside_accuracy: f64,
    /// Mean fraction of road cells alive at the end of the rollout.
    pub coverage: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocationResult {
    pub id: String,
    pub samples: usize,
    pub mean: f64,
    pub outside_mean: f64,
    pub coverage: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub steps: usize,
    pub trials: usize,
    #[serde(with = "crate::serde_u64")]
    pub seed: u64,
    pub samples: Vec<SampleResult>,
    pub locations: Vec<LocationResult>,
    /// Unweighted mean of the location means.
    pub overall_mean: f64,
    pub overall_outside: f64,
    pub overall_coverage: f64,
    /// Share of road cells carrying the most common class over the evaluated samples.
    pub majority_baseline: f64,
}

impl EvalReport {
    /// Aligned text table: one row per location plus the overall mean.
    pub fn to_table(&self) -> String {
        let width = self.locations.iter().map(|l| l.id.len()).max().unwrap_or(0).max(8);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>7}  {:>8}  {:>8}  {:>8}",
            "location", "samples", "accuracy", "outside", "coverage"
        );
        for l in &self.locations {
            let _ = writeln!(
                out,
                "{:<width$}  {:>7}  {:>8.4}  {:>8.4}  {:>8.4}",
                l.id, l.samples, l.mean, l.outside_mean, l.coverage
            );
        }
        let total: usize = self.locations.iter().map(|l| l.samples).sum();
        let _ = writeln!(
            out,
            "{:<width$}  {:>7}  {:>8.4}  {:>8.4}  {:>8.4}",
            "overall", total, self.overall_mean, self.overall_outside, self.overall_coverage
        );
        let _ = writeln!(out, "{:<width$}  {:>7}  {:>8.4}", "majority", "", self.majority_baseline);
        out
    }
}

/// Share of road cells labeled with the most common class.
pub fn majority_baseline(samples: &[&MapSample], k: usize) -> f64 {
    let mut counts = vec![0usize; k];
    for s in samples {
        for (c, n) in counts.iter_mut().zip(s.classes.histogram(k)) {
            *c += n;
        }
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        0.0
    } else {
        *counts.iter().max().expect("k > 0") as f64 / total as f64
    }
}

/// Grow-mode start on `target`: dead map except the alive, forced pre-explored cells.
pub fn grow_start<S: Scalar>(
    target: &TrainTarget<S>,
    disc: &Disc,
    layout: crate::ChannelLayout,
) -> Result<(CellGrid<S>, InductionField<S>)> {
    let field = induction_for(target, disc, layout.k())?;
    let state = grow_state(layout, field.region());
    Ok((state, field))
}

fn trial_rng(seed: u64, sample: usize, trial: usize, trials: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((sample * trials + trial) as u64);
    rng
}

/// Runs `trials` grow rollouts per sample from fresh random discs and aggregates accuracy
/// per sample, per location (in order of first appearance) and overall.
pub fn evaluate<S: Scalar>(params: &ModelParams<S>, samples: &[&MapSample], cfg: &EvalConfig) -> Result<EvalReport> {
    if cfg.trials == 0 {
        return Err(contract("trials must be at least 1"));
    }
    if cfg.steps == 0 {
        return Err(contract("steps must be at least 1"));
    }
    cfg.step.validate()?;
    let layout = params.layout();
    let targets = samples
        .iter()
        .map(|s| s.target::<S>(layout.k()))
        .collect::<Result<Vec<_>>>()?;

    let jobs: Vec<(usize, usize)> = (0..samples.len())
        .flat_map(|i| (0..cfg.trials).map(move |j| (i, j)))
        .collect();
    let scores = jobs
        .par_iter()
        .map(|&(i, j)| {
            let target = &targets[i];
            let mut rng = trial_rng(cfg.seed, i, j, cfg.trials);
            let disc = fresh_disc(&mut rng, target.height(), target.width(), cfg.diameter_ratio)?;
            let (state, field) = grow_start(target, &disc, layout)?;
            let traj = Stepper::new().run(
                &state,
                params,
                &cfg.step,
                target.legality(),
                Some(&field),
                &mut rng,
                cfg.steps,
                None,
            )?;
            let t = cfg.step.alive_threshold;
            let (hits, total) = match_counts_outside(&traj.final_state, target, t, field.region())?;
            Ok([
                accuracy(&traj.final_state, target, t)?,
                if total == 0 { 0.0 } else { hits as f64 / total as f64 },
                coverage(&traj.final_state, target.legality(), t),
            ])
        })
        .collect::<Result<Vec<[f64; 3]>>>()?;

    let results: Vec<SampleResult> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let rows = &scores[i * cfg.trials..(i + 1) * cfg.trials];
            let mean = |m: usize| rows.iter().map(|r| r[m]).sum::<f64>() / cfg.trials as f64;
            SampleResult {
                location: s.location.clone(),
                timestamp: s.timestamp.clone(),
                accuracy: mean(0),
                trials: rows.iter().map(|r| r[0]).collect(),
                outside_accuracy: mean(1),
                coverage: mean(2),
            }
        })
        .collect();
    let mut locations: Vec<LocationResult> = Vec::new();
    for r in &results {
        match locations.iter_mut().find(|l| l.id == r.location) {
            Some(l) => {
                l.samples += 1;
                l.mean += r.accuracy;
                l.outside_mean += r.outside_accuracy;
                l.coverage += r.coverage;
            }
            None => locations.push(LocationResult {
                id: r.location.clone(),
                samples: 1,
                mean: r.accuracy,
                outside_mean: r.outside_accuracy,
                coverage: r.coverage,
            }),
        }
    }
    for l in &mut locations {
        let n = l.samples as f64;
        l.mean /= n;
        l.outside_mean /= n;
        l.coverage /= n;
    }
    let over = |f: fn(&LocationResult) -> f64| {
        if locations.is_empty() {
            0.0
        } else {
            locations.iter().map(f).sum::<f64>() / locations.len() as f64
        }
    };
    let (overall_mean, overall_outside, overall_coverage) =
        (over(|l| l.mean), over(|l| l.outside_mean), over(|l| l.coverage));
    Ok(EvalReport {
        schema_version: REPORT_SCHEMA,
        steps: cfg.steps,
        trials: cfg.trials,
        seed: cfg.seed,
        samples: results,
        locations,
        overall_mean,
        overall_outside,
        overall_coverage,
        majority_baseline: majority_baseline(samples, layout.k()),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub runs: usize,
    pub steps: usize,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

/// Nearest-rank percentile of sorted values.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Wall time of `runs` independent `steps`-step rollouts from `start`, on the calling thread.
#[allow(clippy::too_many_arguments)]
pub fn time_rollouts<S: Scalar>(
    params: &ModelParams<S>,
    start: &CellGrid<S>,
    legality: &BoolGrid,
    field: Option<&InductionField<S>>,
    cfg: &StepConfig,
    steps: usize,
    runs: usize,
    seed: u64,
) -> Result<TimingStats> {
    if runs == 0 {
        return Err(contract("runs must be at least 1"));
    }
    let mut stepper = Stepper::new();
    let mut times = Vec::with_capacity(runs);
    for run in 0..runs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(run as u64);
        let t0 = Instant::now();
        let traj = stepper.run(start, params, cfg, legality, field, &mut rng, steps, None)?;
        times.push(t0.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(traj);
    }
    let mut sorted = times.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(TimingStats {
        runs,
        steps,
        median_ms: if runs % 2 == 1 {
            sorted[runs / 2]
        } else {
            0.5 * (sorted[runs / 2 - 1] + sorted[runs / 2])
        },
        p95_ms: percentile(&sorted, 0.95),
        min_ms: sorted[0],
        max_ms: sorted[runs - 1],
    })
}
