use std::path::PathBuf;

use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use geonca::eval::{evaluate, grow_start, time_rollouts};
use geonca::trainer::{Checkpoint, TrainTarget};
use geonca::data::Disc;
use geonca::Scalar;

use crate::common::{checkpoint_layout_matches, load_dataset, read_checkpoint, select_split, write_json};
use crate::config::RunConfig;
use crate::error::{usage, CliResult};

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TABLE: &str = "report.txt";
/// Wall-clock measurements live apart from the report so the report stays reproducible.
pub const TIMING_JSON: &str = "timing.json";

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Rollouts per sample, each from its own random pre-explored disc.
    #[arg(long)]
    trials: Option<usize>,
    /// Steps per rollout.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// `test`, `train` or `all`.
    #[arg(long)]
    split: Option<String>,
    /// Rollouts timed for the timing report; 0 skips timing.
    #[arg(long)]
    timing_runs: Option<usize>,
}

pub fn run(args: EvalArgs, mut cfg: RunConfig) -> CliResult<()> {
    let e = &mut cfg.eval;
    if let Some(v) = args.trials {
        e.protocol.trials = v;
    }
    if let Some(v) = args.steps {
        e.protocol.steps = v;
    }
    if let Some(v) = args.seed {
        e.protocol.seed = v;
    }
    if let Some(v) = &args.split {
        e.split = v.clone();
    }
    if let Some(v) = args.timing_runs {
        e.timing_runs = v;
    }
    if e.protocol.trials == 0 || e.protocol.steps == 0 {
        return Err(usage("--trials and --steps must be at least 1"));
    }
    let ckpt = read_checkpoint(&args.checkpoint)?;
    if e.step.is_none() {
        e.step = Some(ckpt.config.step.clone());
    }
    if ckpt.scalar_width == f32::WIDTH {
        eval_as::<f32>(&args, &cfg, &ckpt)
    } else {
        eval_as::<f64>(&args, &cfg, &ckpt)
    }
}

fn eval_as<S: Scalar>(args: &EvalArgs, cfg: &RunConfig, ckpt: &Checkpoint) -> CliResult<()> {
    let dataset = load_dataset(&args.data)?;
    checkpoint_layout_matches(ckpt, &dataset)?;
    let samples = select_split(&dataset, &cfg.eval.split)?;
    let params = ckpt.params::<S>()?;
    let step = cfg.eval.step.clone().expect("step rule resolved");
    let ecfg = cfg.eval.protocol.with_step(step.clone());
    cfg.echo(&args.out)?;

    let report = evaluate(&params, &samples, &ecfg)?;
    let path = args.out.join(REPORT_JSON);
    write_json(&path, &report)?;
    std::fs::write(args.out.join(REPORT_TABLE), report.to_table()).map_err(usage)?;
    log::info!(
        "accuracy {:.4} over {} samples (majority baseline {:.4})",
        report.overall_mean,
        report.samples.len(),
        report.majority_baseline
    );

    if cfg.eval.timing_runs > 0 {
        let target: TrainTarget<S> = samples[0].target(params.layout().k())?;
        let mut rng = ChaCha8Rng::seed_from_u64(ecfg.seed);
        let (h, w) = (target.height(), target.width());
        let disc = Disc::sample_inside(&mut rng, h, w, ecfg.diameter_ratio * h.min(w) as f64)?;
        let (start, field) = grow_start(&target, &disc, params.layout())?;
        let timing = time_rollouts(
            &params,
            &start,
            target.legality(),
            Some(&field),
            &step,
            ecfg.steps,
            cfg.eval.timing_runs,
            ecfg.seed,
        )?;
        log::info!(
            "{}-step rollout on {h}x{w}: median {:.1} ms, p95 {:.1} ms",
            timing.steps,
            timing.median_ms,
            timing.p95_ms
        );
        write_json(&args.out.join(TIMING_JSON), &timing)?;
    }
    println!("{}", path.display());
    Ok(())
}
