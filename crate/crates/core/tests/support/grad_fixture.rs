//! Shared gradient-check fixture.
#![allow(dead_code)]

use geonca::trainer::{RecordedRollout, TrainTarget};
use geonca::{BoolGrid, CellGrid, ChannelLayout, InductionField, Layer, ModelParams, Scalar, StepConfig, Stepper};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: usize = 12;
pub const W: usize = 12;
pub const T: usize = 8;

pub struct Fixture<S> {
    pub rollout: RecordedRollout<S>,
    pub target: TrainTarget<S>,
    pub params: ModelParams<S>,
    pub cfg: StepConfig,
}

/// 12×12 map, T = 8, n = 16, k = 4, hidden width 32; forced region plus a perturbed network.
pub fn fixture<S: Scalar>(seed: u64) -> Fixture<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = ChannelLayout::default();
    let mut params = ModelParams::<S>::init(layout, 32, &mut rng);
    for w in params.layer_mut(Layer::W2) {
        *w = S::of(rng.random_range(-0.1..0.1));
    }
    for b in params.layer_mut(Layer::B1) {
        *b = S::of(rng.random_range(-0.05..0.05));
    }

    // A plus-shaped road network; the arms carry alternating classes.
    let legality = BoolGrid::from_fn(H, W, |r, c| r == 5 || r == 6 || c == 3 || c == 8);
    let labels: Vec<Option<u8>> = (0..H * W)
        .map(|i| legality.get(i / W, i % W).then_some(((i / W + i % W) % 4) as u8))
        .collect();
    let target = TrainTarget::from_labels(H, W, 4, &labels).unwrap();

    let region = BoolGrid::from_fn(H, W, |r, c| legality.get(r, c) && r >= 4 && r <= 7 && c <= 4);
    let field = InductionField::one_hot(region.clone(), 4, |r, c| (r + c) % 4).unwrap();
    let start = CellGrid::from_fn(H, W, layout, |r, c, ch| {
        if !region.get(r, c) {
            S::zero()
        } else if ch >= 4 {
            S::one()
        } else {
            S::of(((r * 3 + c + ch) % 5) as f64 * 0.1 - 0.2)
        }
    });

    let cfg = StepConfig::default();
    let mut stepper = Stepper::new();
    let rollout = RecordedRollout::record(&mut stepper, &start, &params, &cfg, &legality, Some(&field), &mut rng, T)
        .unwrap();
    Fixture {
        rollout,
        target,
        params,
        cfg,
    }
}
