use std::path::PathBuf;

use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use geonca::data::{Dataset, Disc};
use geonca::eval::{accuracy, export_frames};
use geonca::trainer::{make_rollout_start, Checkpoint, PoolEntry, StartParams, Task, TrainTarget};
use geonca::{Scalar, Stepper};

use crate::common::{checkpoint_layout_matches, find_sample, load_dataset, read_checkpoint, select_split, write_json};
use crate::config::RunConfig;
use crate::error::{data, usage, CliResult};

pub const SUMMARY_JSON: &str = "summary.json";

#[derive(Debug, Args)]
pub struct GrowArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Frame directory.
    #[arg(long)]
    out: PathBuf,
    /// grow, persist, regenerate or transform.
    #[arg(long)]
    task: Option<Task>,
    /// Steps of the exported rollout. Tasks other than grow first grow the map for as many steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Write a frame every this many steps.
    #[arg(long)]
    stride: Option<usize>,
    /// Radius of the disc zeroed by the regenerate task.
    #[arg(long)]
    damage_radius: Option<f64>,
    /// Pre-explored disc diameter as a fraction of the shorter map side.
    #[arg(long)]
    diameter_ratio: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// `location/timestamp`; the first test sample by default.
    #[arg(long)]
    sample: Option<String>,
    /// Transform target as `location/timestamp`; the next sample of the same location by default.
    #[arg(long)]
    to: Option<String>,
}

#[derive(Debug, Serialize)]
struct Summary {
    task: Task,
    sample: String,
    /// Sample the rollout is steered toward; differs from `sample` for transform.
    target: String,
    steps: usize,
    stride: usize,
    seed: u64,
    disc: Disc,
    #[serde(skip_serializing_if = "Option::is_none")]
    damage: Option<Disc>,
    frames: Vec<String>,
    accuracy: f64,
    /// Same continuation without the damage, for regenerate.
    #[serde(skip_serializing_if = "Option::is_none")]
    undamaged_accuracy: Option<f64>,
}

pub fn run(args: GrowArgs, mut cfg: RunConfig) -> CliResult<()> {
    let g = &mut cfg.grow;
    if let Some(v) = args.task {
        g.task = v;
    }
    if let Some(v) = args.steps {
        g.steps = v;
    }
    if let Some(v) = args.stride {
        g.stride = v;
    }
    if let Some(v) = args.damage_radius {
        g.damage_radius = v;
    }
    if let Some(v) = args.diameter_ratio {
        g.diameter_ratio = v;
    }
    if let Some(v) = args.seed {
        g.seed = v;
    }
    if args.sample.is_some() {
        g.sample = args.sample.clone();
    }
    if args.to.is_some() {
        g.to = args.to.clone();
    }
    if g.steps == 0 || g.stride == 0 {
        return Err(usage("--steps and --stride must be at least 1"));
    }
    if !(g.damage_radius >= 0.0) {
        return Err(usage("--damage-radius must be non-negative"));
    }
    let ckpt = read_checkpoint(&args.checkpoint)?;
    if g.step.is_none() {
        g.step = Some(ckpt.config.step.clone());
    }
    if ckpt.scalar_width == f32::WIDTH {
        grow_as::<f32>(&args, &cfg, &ckpt)
    } else {
        grow_as::<f64>(&args, &cfg, &ckpt)
    }
}

fn sample_name(dataset: &Dataset, i: usize) -> String {
    let s = &dataset.samples[i];
    format!("{}/{}", s.location, s.timestamp)
}

fn grow_as<S: Scalar>(args: &GrowArgs, cfg: &RunConfig, ckpt: &Checkpoint) -> CliResult<()> {
    let g = &cfg.grow;
    let dataset = load_dataset(&args.data)?;
    checkpoint_layout_matches(ckpt, &dataset)?;
    let params = ckpt.params::<S>()?;
    let layout = params.layout();
    let step = g.step.clone().expect("step rule resolved");

    let first = match &g.sample {
        Some(name) => find_sample(&dataset, name)?,
        None => {
            let s = select_split(&dataset, "test").or_else(|_| select_split(&dataset, "all"))?[0];
            dataset.samples.iter().position(|x| std::ptr::eq(x, s)).expect("sample from this dataset")
        }
    };
    let second = match (&g.to, g.task) {
        (Some(name), _) => Some(find_sample(&dataset, name)?),
        (None, Task::Transform) => {
            let loc = &dataset.samples[first].location;
            let same: Vec<usize> = (0..dataset.samples.len()).filter(|&i| &dataset.samples[i].location == loc).collect();
            let at = same.iter().position(|&i| i == first).expect("sample is in its location");
            let next = same[(at + 1) % same.len()];
            (next != first).then_some(next)
        }
        _ => None,
    };
    let mut targets: Vec<TrainTarget<S>> = vec![dataset.samples[first].target(layout.k())?];
    if let Some(i) = second {
        let t = dataset.samples[i].target(layout.k())?;
        if !t.legality().same_shape(targets[0].legality()) {
            return Err(data("transform target has a different map size"));
        }
        targets.push(t);
    }

    let starts = StartParams {
        diameter_ratio: g.diameter_ratio,
        damage_radius: [g.damage_radius, g.damage_radius],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
    let mut stepper = Stepper::new();
    let mut entry = PoolEntry {
        sample: 0,
        state: None,
        disc: Disc { cy: 0.0, cx: 0.0, radius: 0.0 },
        task: Task::Grow,
        age: 0,
    };
    let grown = make_rollout_start(&entry, Task::Grow, &targets, None, layout, &starts, &mut rng)?;
    let (start, undamaged) = if g.task == Task::Grow {
        (grown, None)
    } else {
        let legality = targets[0].legality();
        let warm = stepper.run(&grown.state, &params, &step, legality, Some(&grown.field), &mut rng, g.steps, None)?;
        entry.state = Some(warm.final_state);
        entry.disc = grown.disc;
        let alternative = (targets.len() > 1).then_some(1);
        let start = make_rollout_start(&entry, g.task, &targets, alternative, layout, &starts, &mut rng)?;
        let undamaged = (g.task == Task::Regenerate).then(|| (entry.state.clone().expect("warm state"), rng.clone()));
        (start, undamaged)
    };

    let target = &targets[start.sample];
    let traj = stepper.run(
        &start.state,
        &params,
        &step,
        target.legality(),
        Some(&start.field),
        &mut rng,
        g.steps,
        Some(g.stride),
    )?;
    let final_accuracy = accuracy(&traj.final_state, target, step.alive_threshold)?;
    let undamaged_accuracy = match undamaged {
        Some((state, mut twin)) => {
            let t = stepper.run(&state, &params, &step, target.legality(), Some(&start.field), &mut twin, g.steps, None)?;
            Some(accuracy(&t.final_state, target, step.alive_threshold)?)
        }
        None => None,
    };

    cfg.echo(&args.out)?;
    let frames = export_frames(&traj, target.legality(), &dataset.manifest.legend, step.alive_threshold, &args.out)
        .map_err(usage)?;
    let sample_index = |i: usize| if i == 0 { first } else { second.expect("second target") };
    let summary = Summary {
        task: start.task,
        sample: sample_name(&dataset, first),
        target: sample_name(&dataset, sample_index(start.sample)),
        steps: g.steps,
        stride: g.stride,
        seed: g.seed,
        disc: start.disc,
        damage: start.damage,
        frames: frames
            .iter()
            .map(|p| p.file_name().expect("frame file").to_string_lossy().into_owned())
            .collect(),
        accuracy: final_accuracy,
        undamaged_accuracy,
    };
    write_json(&args.out.join(SUMMARY_JSON), &summary)?;
    log::info!("{} frames, final accuracy {final_accuracy:.4}", summary.frames.len());
    println!("{}", args.out.display());
    Ok(())
}
