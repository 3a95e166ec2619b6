//! Rollout frame export for qualitative inspection.

use std::path::{Path, PathBuf};

use crate::data::{encode_prediction, save_png, ClassLegend};
use crate::error::{contract, Result};
use crate::eval::accuracy::predicted_classes;
use crate::grid::{BoolGrid, CellGrid};
use crate::scalar::Scalar;
use crate::step::Trajectory;

pub fn frame_name(step: usize) -> String {
    format!("frame_{step:05}.png")
}

/// Writes one PNG per snapshot of `trajectory` into `dir`, named by step index.
pub fn export_frames<S: Scalar>(
    trajectory: &Trajectory<S>,
    legality: &BoolGrid,
    legend: &ClassLegend,
    alive_threshold: f64,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    if trajectory.snapshots.is_empty() {
        return Err(contract("trajectory has no snapshots; run it with a snapshot stride"));
    }
    trajectory
        .snapshots
        .iter()
        .map(|(step, grid)| write_frame(grid, *step, legality, legend, alive_threshold, dir))
        .collect()
}

pub fn write_frame<S: Scalar>(
    grid: &CellGrid<S>,
    step: usize,
    legality: &BoolGrid,
    legend: &ClassLegend,
    alive_threshold: f64,
    dir: &Path,
) -> Result<PathBuf> {
    let predicted = predicted_classes(grid, legality, alive_threshold);
    let path = dir.join(frame_name(step));
    save_png(&path, &encode_prediction(&predicted, legality, legend))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{load_rgb, Disc};
    use crate::eval::protocol::grow_start;
    use crate::grid::ChannelLayout;
    use crate::model::ModelParams;
    use crate::step::{StepConfig, Stepper};
    use crate::trainer::TrainTarget;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rollout(steps: usize, stride: usize) -> (Trajectory<f32>, TrainTarget<f32>, Disc) {
        let labels: Vec<Option<u8>> = (0..144).map(|i| (i % 5 != 0).then_some((i % 4) as u8)).collect();
        let target = TrainTarget::from_labels(12, 12, 4, &labels).unwrap();
        let disc = Disc::around_cell(6, 6, 3.0);
        let layout = ChannelLayout::default();
        let (state, field) = grow_start(&target, &disc, layout).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ModelParams::init(layout, 8, &mut rng);
        let traj = Stepper::new()
            .run(&state, &p, &StepConfig::default(), target.legality(), Some(&field), &mut rng, steps, Some(stride))
            .unwrap();
        (traj, target, disc)
    }

    #[test]
    fn frame_count_and_names() {
        let dir = tempfile::tempdir().unwrap();
        let legend = ClassLegend::traffic();
        for (steps, stride, want) in [(16, 16, 2), (16, 5, 4), (128, 16, 9)] {
            let (traj, target, _) = rollout(steps, stride);
            let sub = dir.path().join(format!("{steps}-{stride}"));
            let files = export_frames(&traj, target.legality(), &legend, 0.1, &sub).unwrap();
            assert_eq!(files.len(), want);
            assert_eq!(files.len(), steps / stride + 1);
            assert!(files[0].ends_with("frame_00000.png"));
        }
    }

    #[test]
    fn first_frame_shows_only_the_disc() {
        let dir = tempfile::tempdir().unwrap();
        let legend = ClassLegend::traffic();
        let (traj, target, disc) = rollout(8, 8);
        let files = export_frames(&traj, target.legality(), &legend, 0.1, dir.path()).unwrap();
        let img = load_rgb(&files[0]).unwrap();
        let inside = disc.mask(12, 12).and(target.legality());
        for (i, p) in img.pixels().enumerate() {
            let (r, c) = (i / 12, i % 12);
            if !target.legality().get(r, c) {
                assert_eq!(p.0, legend.background);
            } else if inside.get(r, c) {
                assert_ne!(p.0, legend.dead);
            } else {
                assert_eq!(p.0, legend.dead);
            }
        }
    }
}
