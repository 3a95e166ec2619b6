use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::Args;

use geonca::trainer::{Checkpoint, EpochLog, TrainSet, Trainer};
use geonca::{NcaError, Scalar};

use crate::common::{layout_for, load_dataset, read_checkpoint, select_split};
use crate::config::{Precision, RunConfig};
use crate::error::{data, usage, CliResult};

pub const LOSS_LOG: &str = "loss.jsonl";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

pub fn periodic_name(epoch: u64) -> String {
    format!("epoch_{epoch:06}.ckpt")
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory; its training split is used.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoints, the loss log and the effective config.
    #[arg(long)]
    out: PathBuf,
    /// Continue from this checkpoint. Only --epochs and --checkpoint-every may change.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Total number of optimizer updates.
    #[arg(long)]
    epochs: Option<u64>,
    /// Steps per training rollout.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    pool_size: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    #[arg(long, value_enum)]
    precision: Option<Precision>,
    /// Comma-separated location ids to train on.
    #[arg(long, value_delimiter = ',')]
    locations: Vec<String>,
}

impl TrainArgs {
    /// Flags that would change the model or its training trajectory.
    fn model_overrides(&self) -> Vec<&'static str> {
        let set = [
            ("--seed", self.seed.is_some()),
            ("--steps", self.steps.is_some()),
            ("--batch-size", self.batch_size.is_some()),
            ("--pool-size", self.pool_size.is_some()),
            ("--hidden", self.hidden.is_some()),
            ("--lr", self.lr.is_some()),
            ("--precision", self.precision.is_some()),
            ("--locations", !self.locations.is_empty()),
        ];
        set.into_iter().filter(|(_, on)| *on).map(|(n, _)| n).collect()
    }

    fn apply(&self, cfg: &mut RunConfig) {
        let t = &mut cfg.train;
        let m = &mut t.model;
        if let Some(v) = self.seed {
            m.seed = v;
        }
        if let Some(v) = self.epochs {
            m.epochs = v;
        }
        if let Some(v) = self.steps {
            m.steps = v;
        }
        if let Some(v) = self.batch_size {
            m.batch_size = v;
        }
        if let Some(v) = self.pool_size {
            m.pool_size = v;
        }
        if let Some(v) = self.hidden {
            m.hidden = v;
        }
        if let Some(v) = self.lr {
            m.lr = v;
        }
        if let Some(v) = self.checkpoint_every {
            t.checkpoint_every = v;
        }
        if let Some(v) = self.precision {
            t.precision = v;
        }
        if !self.locations.is_empty() {
            t.locations = self.locations.clone();
        }
    }
}

pub fn run(args: TrainArgs, mut cfg: RunConfig) -> CliResult<()> {
    let resume = match &args.resume {
        Some(path) => {
            let blocked = args.model_overrides();
            if !blocked.is_empty() {
                return Err(usage(format!("{} cannot change when resuming", blocked.join(", "))));
            }
            let ckpt = read_checkpoint(path)?;
            cfg.train.model = ckpt.config.clone();
            cfg.train.precision = if ckpt.scalar_width == f32::WIDTH { Precision::F32 } else { Precision::F64 };
            Some(ckpt)
        }
        None => None,
    };
    args.apply(&mut cfg);
    match cfg.train.precision {
        Precision::F32 => train_as::<f32>(&args, &cfg, resume.as_ref()),
        Precision::F64 => train_as::<f64>(&args, &cfg, resume.as_ref()),
    }
}

fn train_as<S: Scalar>(args: &TrainArgs, cfg: &RunConfig, resume: Option<&Checkpoint>) -> CliResult<()> {
    let mut dataset = load_dataset(&args.data)?;
    if !cfg.train.locations.is_empty() {
        dataset = dataset.select_locations(&cfg.train.locations).map_err(data)?;
    }
    let layout = layout_for(&dataset)?;
    let samples = select_split(&dataset, "train")?;
    let set = TrainSet::<S>::from_samples(&samples, layout.k())?;
    let mut trainer = match resume {
        Some(ckpt) => {
            let mut t = Trainer::resume(ckpt, set).map_err(data)?;
            t.set_epochs(cfg.train.model.epochs);
            t
        }
        None => Trainer::new(cfg.train.model.clone(), layout, set)?,
    };
    cfg.echo(&args.out)?;
    let mut log = open_loss_log(&args.out.join(LOSS_LOG), trainer.epoch())?;

    let every = cfg.train.checkpoint_every;
    let total = cfg.train.model.epochs;
    let report_every = (total / 20).max(1);
    log::info!(
        "training on {} samples from epoch {} to {total} ({} precision)",
        samples.len(),
        trainer.epoch(),
        if S::WIDTH == 4 { "f32" } else { "f64" }
    );
    let log_path = args.out.join(LOSS_LOG);
    trainer
        .fit(|t, entry: &EpochLog| {
            let line = serde_json::to_string(entry).expect("epoch log serializes");
            writeln!(log, "{line}").map_err(|source| NcaError::Io {
                path: log_path.clone(),
                source,
            })?;
            if entry.epoch % report_every == 0 || entry.epoch == total {
                log::info!("epoch {} loss {:.4} lr {:.1e}", entry.epoch, entry.loss, entry.lr);
            }
            if every > 0 && entry.epoch % every == 0 {
                t.save_checkpoint(&args.out.join(periodic_name(entry.epoch)))?;
            }
            Ok(())
        })
        .map_err(|e| match e {
            NcaError::Io { .. } => usage(e),
            other => data(other),
        })?;
    let path = args.out.join(FINAL_CHECKPOINT);
    trainer.save_checkpoint(&path).map_err(usage)?;
    println!("{}", path.display());
    Ok(())
}

/// Opens the loss log for appending after `epoch`, dropping records of later epochs left
/// behind by an interrupted run.
fn open_loss_log(path: &Path, epoch: u64) -> CliResult<File> {
    let io = |e: std::io::Error| usage(format!("{}: {e}", path.display()));
    let mut kept = Vec::new();
    if epoch > 0 {
        if let Ok(f) = File::open(path) {
            for line in BufReader::new(f).lines() {
                let line = line.map_err(io)?;
                let e = serde_json::from_str::<serde_json::Value>(&line)
                    .ok()
                    .and_then(|v| v["epoch"].as_u64());
                if matches!(e, Some(n) if n <= epoch) {
                    kept.push(line);
                }
            }
        }
    }
    let mut f = OpenOptions::new().create(true).write(true).truncate(true).open(path).map_err(io)?;
    for line in kept {
        writeln!(f, "{line}").map_err(io)?;
    }
    Ok(f)
}
