use std::path::PathBuf;

use clap::Args;

use geonca::data::{synth_generate, MANIFEST_FILE};

use crate::config::RunConfig;
use crate::error::{usage, CliResult};

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    locations: Option<usize>,
    #[arg(long)]
    per_location: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
}

pub fn run(args: SynthArgs, mut cfg: RunConfig) -> CliResult<()> {
    let s = &mut cfg.synth;
    if let Some(v) = args.seed {
        s.seed = v;
    }
    if let Some(v) = args.locations {
        s.locations = v;
    }
    if let Some(v) = args.per_location {
        s.per_location = v;
    }
    if let Some(v) = args.height {
        s.height = v;
    }
    if let Some(v) = args.width {
        s.width = v;
    }
    if s.locations == 0 || s.per_location == 0 {
        return Err(usage("--locations and --per-location must be at least 1"));
    }
    let dataset = synth_generate(s)?;
    cfg.echo(&args.out)?;
    dataset.write(&args.out).map_err(usage)?;
    println!("{}", args.out.join(MANIFEST_FILE).display());
    Ok(())
}
