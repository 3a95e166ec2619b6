//! Central-difference verification of [`backward`].
//!
//! Analytic gradients are computed at the rollout's own precision. The numeric
//! reference replays the rollout with the recorded masks and forcing, either at the
//! same precision or in `f64`.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{Layer, ModelParams};
use crate::scalar::Scalar;
use crate::step::{StepConfig, Stepper};
use crate::trainer::backward::{backward, RecordedRollout};
use crate::trainer::loss::{loss, TrainTarget};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckOptions {
    pub samples_per_layer: usize,
    pub eps: f64,
    pub tolerance: f64,
    /// Differences below this are treated as agreement regardless of relative error.
    pub abs_floor: f64,
    pub seed: u64,
    /// Replay perturbed rollouts in `f64` instead of the rollout's own precision.
    pub replay_in_f64: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            samples_per_layer: 50,
            eps: 1e-6,
            tolerance: 1e-2,
            abs_floor: 1e-7,
            seed: 0,
            replay_in_f64: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoordinateCheck {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    pub ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerCheck {
    pub layer: Layer,
    pub coordinates: Vec<CoordinateCheck>,
    pub failures: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub layers: Vec<LayerCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.layers.iter().all(|l| l.failures == 0)
    }

    pub fn checked(&self) -> usize {
        self.layers.iter().map(|l| l.coordinates.len()).sum()
    }
}

/// Compares [`backward`] against central differences on sampled coordinates of every layer.
///
/// Half the samples of a layer are uniform over its coordinates, the rest are drawn from
/// coordinates with a non-zero analytic gradient (topped up uniformly when there are too few).
/// Layers smaller than `samples_per_layer` are checked exhaustively.
pub fn check_gradients<S: Scalar>(
    rollout: &RecordedRollout<S>,
    target: &TrainTarget<S>,
    params: &ModelParams<S>,
    cfg: &StepConfig,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let analytic = backward(rollout, target, params, cfg, &Stepper::new())?;
    let rollout64 = rollout.cast::<f64>();
    let target64 = target.cast::<f64>();
    let mut stepper = Stepper::<S>::new();
    let mut stepper64 = Stepper::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut eval = |p: &ModelParams<S>, layer: Layer, i: usize, shift: f64| -> Result<f64> {
        if opts.replay_in_f64 {
            let mut p = p.cast::<f64>();
            p.layer_mut(layer)[i] += shift;
            let last = rollout64.replay(&mut stepper64, &p, cfg);
            Ok(loss(&last, &target64)?.total)
        } else {
            let mut p = p.clone();
            let x = &mut p.layer_mut(layer)[i];
            *x = S::of(x.as_f64() + shift);
            let last = rollout.replay(&mut stepper, &p, cfg);
            Ok(loss(&last, target)?.total)
        }
    };

    let mut layers = Vec::new();
    for layer in Layer::ALL {
        let grads = analytic.layer(layer);
        let len = grads.len();
        let mut picks: Vec<usize> = index::sample(&mut rng, len, (opts.samples_per_layer / 2).min(len)).into_vec();
        let nonzero: Vec<usize> = (0..len).filter(|&i| grads[i] != S::zero() && !picks.contains(&i)).collect();
        let want = opts.samples_per_layer.saturating_sub(picks.len()).min(nonzero.len());
        picks.extend(index::sample(&mut rng, nonzero.len(), want).into_iter().map(|j| nonzero[j]));
        let rest: Vec<usize> = (0..len).filter(|i| !picks.contains(i)).collect();
        let short = opts.samples_per_layer.min(len) - picks.len();
        picks.extend(index::sample(&mut rng, rest.len(), short).into_iter().map(|j| rest[j]));
        picks.sort_unstable();

        let mut coordinates = Vec::with_capacity(picks.len());
        for i in picks {
            let numeric =
                (eval(params, layer, i, opts.eps)? - eval(params, layer, i, -opts.eps)?) / (2.0 * opts.eps);
            let a = grads[i].as_f64();
            let diff = (a - numeric).abs();
            let scale = a.abs().max(numeric.abs());
            let rel_error = if diff == 0.0 { 0.0 } else { diff / scale };
            coordinates.push(CoordinateCheck {
                index: i,
                analytic: a,
                numeric,
                rel_error,
                ok: diff <= opts.abs_floor || rel_error <= opts.tolerance,
            });
        }
        let failures = coordinates.iter().filter(|c| !c.ok).count();
        let max_rel_error = coordinates
            .iter()
            .filter(|c| c.analytic != 0.0 || c.numeric != 0.0)
            .map(|c| c.rel_error)
            .fold(0.0, f64::max);
        layers.push(LayerCheck {
            layer,
            coordinates,
            failures,
            max_rel_error,
        });
    }
    Ok(GradCheckReport { layers })
}
