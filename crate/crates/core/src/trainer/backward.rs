//! Reverse-mode differentiation of a recorded rollout (backpropagation through time).
//!
//! Conventions: the update, alive and legality masks are constants of the
//! rollout; the induction increment is an external forcing with no gradient;
//! the relu subgradient at zero is zero; the clamp passes gradient only where
//! the pre-clamp value lies inside the state range.

use rand::Rng;

use crate::error::{contract, Result};
use crate::grid::{BoolGrid, CellGrid, STATE_LIMIT};
use crate::model::ModelParams;
use crate::perception::{perceive_cell, perceive_cell_backward};
use crate::scalar::Scalar;
use crate::step::{Forcing, InductionField, StepConfig, StepRecord, Stepper};
use crate::trainer::loss::{loss_gradient, TrainTarget};

/// Every state of a rollout plus the per-step records needed to replay it.
#[derive(Clone, Debug)]
pub struct RecordedRollout<S> {
    /// `states[0]` is the start, `states[t + 1]` the state after step `t`.
    pub states: Vec<CellGrid<S>>,
    pub records: Vec<StepRecord<S>>,
    pub legality: BoolGrid,
}

impl<S: Scalar> RecordedRollout<S> {
    #[allow(clippy::too_many_arguments)]
    pub fn record<R: Rng + ?Sized>(
        stepper: &mut Stepper<S>,
        start: &CellGrid<S>,
        params: &ModelParams<S>,
        cfg: &StepConfig,
        legality: &BoolGrid,
        field: Option<&InductionField<S>>,
        rng: &mut R,
        steps: usize,
    ) -> Result<Self> {
        if steps == 0 {
            return Err(contract("a rollout needs at least one step"));
        }
        let mut states = Vec::with_capacity(steps + 1);
        let mut records = Vec::with_capacity(steps);
        states.push(start.clone());
        for _ in 0..steps {
            let (next, record) =
                stepper.step_recorded(states.last().expect("non-empty"), params, cfg, legality, field, rng)?;
            states.push(next);
            records.push(record);
        }
        Ok(Self {
            states,
            records,
            legality: legality.clone(),
        })
    }

    pub fn cast<T: Scalar>(&self) -> RecordedRollout<T> {
        RecordedRollout {
            states: self.states.iter().map(|s| s.cast()).collect(),
            records: self
                .records
                .iter()
                .map(|r| StepRecord {
                    update_mask: r.update_mask.clone(),
                    forcing: r.forcing.as_ref().map(|f| Forcing {
                        region: f.region.clone(),
                        delta: f.delta.cast(),
                    }),
                })
                .collect(),
            legality: self.legality.clone(),
        }
    }

    pub fn steps(&self) -> usize {
        self.records.len()
    }

    pub fn final_state(&self) -> &CellGrid<S> {
        self.states.last().expect("rollouts hold at least the start state")
    }

    /// Re-runs the rollout from its start with other parameters, reusing the recorded masks
    /// and forcing.
    pub fn replay(&self, stepper: &mut Stepper<S>, params: &ModelParams<S>, cfg: &StepConfig) -> CellGrid<S> {
        let mut state = self.states[0].clone();
        for record in &self.records {
            state = stepper.apply(&state, params, cfg, &self.legality, record);
        }
        state
    }
}

/// Gradient of the loss at the rollout's final state with respect to `w1`, `b1`, `w2` and `b2`,
/// returned in a parameter-shaped container.
pub fn backward<S: Scalar>(
    rollout: &RecordedRollout<S>,
    target: &TrainTarget<S>,
    params: &ModelParams<S>,
    cfg: &StepConfig,
    stepper: &Stepper<S>,
) -> Result<ModelParams<S>> {
    let last = rollout.final_state();
    if rollout.states.len() != rollout.records.len() + 1 {
        return Err(contract("rollout states and records are inconsistent"));
    }
    if params.layout() != last.layout() {
        return Err(contract("parameter layout does not match rollout"));
    }
    if !target.legality().matches(last) {
        return Err(contract("target does not match rollout"));
    }

    let layout = last.layout();
    let (n, k) = (layout.n(), layout.k());
    let (d_p, d_h) = (params.perception_dim(), params.hidden());
    let (h, w) = (last.height(), last.width());
    let beta = S::of(cfg.beta);
    let conc = S::of(cfg.concentration);
    let limit = S::of(STATE_LIMIT);

    let mut grads = ModelParams::zeros(layout, d_h);
    let mut upstream = vec![S::zero(); last.values().len()];
    loss_gradient(last, target, &mut upstream);
    let mut downstream = vec![S::zero(); upstream.len()];

    let mut v = vec![S::zero(); d_p];
    let mut z = vec![S::zero(); d_h];
    let mut delta = vec![S::zero(); n];
    let mut d_delta = vec![S::zero(); n];
    let mut dz = vec![S::zero(); d_h];
    let mut dv = vec![S::zero(); d_p];
    let mut pre = vec![S::zero(); n];
    let mut active = vec![false; h * w];

    for t in (0..rollout.steps()).rev() {
        let x = &rollout.states[t];
        let record = &rollout.records[t];
        downstream.fill(S::zero());
        active.iter_mut().for_each(|a| *a = false);

        for (r, c) in record.update_mask.iter_set() {
            let cell = r * w + c;
            active[cell] = true;
            let base = cell * n;
            perceive_cell(x, stepper.bank(), r, c, &mut v);
            params.forward_cell(&v, &mut z, &mut delta);

            for ch in 0..n {
                pre[ch] = x.values()[base + ch] + beta * delta[ch];
            }
            if let Some(f) = record.forcing.as_ref().filter(|f| f.region.get(r, c)) {
                for (p, d) in pre[..k].iter_mut().zip(f.delta.at(r, c)) {
                    *p -= conc * *d;
                }
            }
            let mut any = false;
            for ch in 0..n {
                let g = if pre[ch] >= -limit && pre[ch] <= limit {
                    upstream[base + ch]
                } else {
                    S::zero()
                };
                downstream[base + ch] += g;
                d_delta[ch] = beta * g;
                any |= g != S::zero();
            }
            if !any {
                continue;
            }

            // Output layer.
            for ch in 0..n {
                grads.b2[ch] += d_delta[ch];
            }
            for j in 0..d_h {
                let row = &params.w2[j * n..(j + 1) * n];
                if z[j] > S::zero() {
                    let a = z[j];
                    let grow = &mut grads.w2[j * n..(j + 1) * n];
                    let mut acc = S::zero();
                    for ch in 0..n {
                        grow[ch] += a * d_delta[ch];
                        acc += row[ch] * d_delta[ch];
                    }
                    dz[j] = acc;
                } else {
                    dz[j] = S::zero();
                }
            }

            // Hidden layer.
            for j in 0..d_h {
                grads.b1[j] += dz[j];
            }
            for i in 0..d_p {
                let row = &params.w1[i * d_h..(i + 1) * d_h];
                let xi = v[i];
                let mut acc = S::zero();
                if xi != S::zero() {
                    let grow = &mut grads.w1[i * d_h..(i + 1) * d_h];
                    for j in 0..d_h {
                        grow[j] += xi * dz[j];
                        acc += row[j] * dz[j];
                    }
                } else {
                    for j in 0..d_h {
                        acc += row[j] * dz[j];
                    }
                }
                dv[i] = acc;
            }
            perceive_cell_backward(x, stepper.bank(), r, c, &dv, &mut downstream);
        }

        for r in 0..h {
            for c in 0..w {
                let cell = r * w + c;
                if active[cell] {
                    continue;
                }
                let base = cell * n;
                if !rollout.legality.get(r, c) {
                    for ch in 0..n {
                        downstream[base + ch] += upstream[base + ch];
                    }
                    continue;
                }
                for ch in 0..n {
                    pre[ch] = x.values()[base + ch];
                }
                if let Some(f) = record.forcing.as_ref().filter(|f| f.region.get(r, c)) {
                    for (p, d) in pre[..k].iter_mut().zip(f.delta.at(r, c)) {
                        *p -= conc * *d;
                    }
                }
                for ch in 0..n {
                    if pre[ch] >= -limit && pre[ch] <= limit {
                        downstream[base + ch] += upstream[base + ch];
                    }
                }
            }
        }
        std::mem::swap(&mut upstream, &mut downstream);
    }
    Ok(grads)
}
