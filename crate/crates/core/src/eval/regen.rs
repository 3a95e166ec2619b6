//! Damage-and-recover trials on grown maps.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Disc;
use crate::error::{contract, Result};
use crate::eval::accuracy::accuracy;
use crate::eval::protocol::grow_start;
use crate::model::ModelParams;
use crate::scalar::Scalar;
use crate::step::{StepConfig, Stepper};
use crate::trainer::pool::fresh_disc;
use crate::trainer::TrainTarget;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegenTrial {
    pub damage: Disc,
    /// Accuracy after growing and continuing without damage.
    pub undamaged: f64,
    /// Accuracy after the same continuation with a disc of cells zeroed first.
    pub damaged: f64,
}

/// Grows `target` from a fresh pre-explored disc for `grow_steps`, zeroes a disc of radius
/// `damage_radius` centered on a random cell, then continues both the damaged and the
/// undamaged state for `recover_steps` with identical update randomness.
#[allow(clippy::too_many_arguments)]
pub fn regeneration_trial<S: Scalar, R: Rng + Clone>(
    params: &ModelParams<S>,
    target: &TrainTarget<S>,
    cfg: &StepConfig,
    diameter_ratio: f64,
    grow_steps: usize,
    recover_steps: usize,
    damage_radius: f64,
    rng: &mut R,
) -> Result<RegenTrial> {
    if !(damage_radius >= 0.0) {
        return Err(contract("damage radius must be non-negative"));
    }
    let (h, w) = (target.height(), target.width());
    let disc = fresh_disc(rng, h, w, diameter_ratio)?;
    let (start, field) = grow_start(target, &disc, params.layout())?;
    let mut stepper = Stepper::new();
    let grown = stepper
        .run(&start, params, cfg, target.legality(), Some(&field), rng, grow_steps, None)?
        .final_state;
    let damage = Disc::sample_on_cell(rng, h, w, damage_radius);
    let mut hurt = grown.clone();
    hurt.clear_where(&damage.mask(h, w));

    let mut twin = rng.clone();
    let healthy = stepper.run(&grown, params, cfg, target.legality(), Some(&field), rng, recover_steps, None)?;
    let healed = stepper.run(&hurt, params, cfg, target.legality(), Some(&field), &mut twin, recover_steps, None)?;
    Ok(RegenTrial {
        damage,
        undamaged: accuracy(&healthy.final_state, target, cfg.alive_threshold)?,
        damaged: accuracy(&healed.final_state, target, cfg.alive_threshold)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ChannelLayout;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_damage_changes_nothing() {
        let labels: Vec<Option<u8>> = (0..100).map(|i| (i % 3 != 0).then_some((i % 4) as u8)).collect();
        let target = TrainTarget::<f64>::from_labels(10, 10, 4, &labels).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = ModelParams::init(ChannelLayout::default(), 8, &mut rng);
        let t = regeneration_trial(&p, &target, &StepConfig::default(), 0.5, 6, 6, 0.0, &mut rng).unwrap();
        assert_eq!(t.undamaged, t.damaged);
    }
}
