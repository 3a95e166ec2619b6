use std::path::Path;

use geonca::data::{Dataset, MapSample, Split};
use geonca::trainer::Checkpoint;
use geonca::ChannelLayout;

use crate::error::{data, usage, CliResult};

pub fn load_dataset(dir: &Path) -> CliResult<Dataset> {
    Dataset::load(dir).map_err(|e| data(format!("dataset {}: {e}", dir.display())))
}

pub fn read_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    Checkpoint::read(path).map_err(|e| data(format!("checkpoint {}: {e}", path.display())))
}

/// Default channel count with the dataset's number of classes.
pub fn layout_for(dataset: &Dataset) -> CliResult<ChannelLayout> {
    ChannelLayout::new(dataset.manifest.legend.k(), ChannelLayout::default().n()).map_err(data)
}

/// Samples of `split`: `train`, `test` or `all`.
pub fn select_split<'a>(dataset: &'a Dataset, split: &str) -> CliResult<Vec<&'a MapSample>> {
    let samples = match split {
        "train" => dataset.split(Split::Train),
        "test" => dataset.split(Split::Test),
        "all" => dataset.samples.iter().collect(),
        other => return Err(usage(format!("unknown split {other:?} (expected train, test or all)"))),
    };
    if samples.is_empty() {
        return Err(data(format!("the dataset has no {split} samples")));
    }
    Ok(samples)
}

/// Index of the sample named `location/timestamp`.
pub fn find_sample(dataset: &Dataset, name: &str) -> CliResult<usize> {
    let (loc, ts) = name
        .split_once('/')
        .ok_or_else(|| usage(format!("sample {name:?} must be written location/timestamp")))?;
    dataset
        .samples
        .iter()
        .position(|s| s.location == loc && s.timestamp == ts)
        .ok_or_else(|| data(format!("no sample {name:?} in the dataset")))
}

pub fn checkpoint_layout_matches(ckpt: &Checkpoint, dataset: &Dataset) -> CliResult<()> {
    let k = dataset.manifest.legend.k();
    if ckpt.layout.k() != k {
        return Err(data(format!(
            "checkpoint predicts {} classes but the dataset legend has {k}",
            ckpt.layout.k()
        )));
    }
    Ok(())
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| usage(format!("{}: {e}", path.display())))
}
