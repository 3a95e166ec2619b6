//! Bias-corrected Adam with 64-bit moment accumulators.

use crate::error::{contract, Result};
use crate::model::{Layer, ModelParams};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of updates applied so far.
    pub step: u64,
    /// First moments, indexed like [`Layer::ALL`].
    pub(crate) m: Vec<Vec<f64>>,
    pub(crate) v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<S: Scalar>(params: &ModelParams<S>, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = Layer::ALL
            .iter()
            .map(|&l| vec![0.0; params.layer(l).len()])
            .collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn moments(&self, layer: Layer) -> (&[f64], &[f64]) {
        let i = layer_index(layer);
        (&self.m[i], &self.v[i])
    }

    pub(crate) fn from_parts(
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        step: u64,
        m: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
    ) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step,
            m,
            v,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.m.iter().chain(&self.v).flatten().all(|x| x.is_finite())
    }
}

fn layer_index(layer: Layer) -> usize {
    Layer::ALL.iter().position(|&l| l == layer).expect("known layer")
}

/// One Adam update of the trained layers (`w1`, `b1`, `w2`); `b2` stays fixed.
pub fn adam_step<S: Scalar>(
    params: &mut ModelParams<S>,
    grads: &ModelParams<S>,
    state: &mut AdamState,
) -> Result<()> {
    if !params.same_shape(grads) {
        return Err(contract("gradient shape does not match parameters"));
    }
    if state.m.len() != Layer::ALL.len()
        || Layer::ALL
            .iter()
            .any(|&l| state.m[layer_index(l)].len() != params.layer(l).len())
    {
        return Err(contract("optimizer state does not match parameters"));
    }
    state.step += 1;
    let t = state.step as i32;
    let correction1 = 1.0 - state.beta1.powi(t);
    let correction2 = 1.0 - state.beta2.powi(t);
    for layer in Layer::TRAINED {
        let i = layer_index(layer);
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let g = grads.layer(layer);
        for (j, p) in params.layer_mut(layer).iter_mut().enumerate() {
            let gj = g[j].as_f64();
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * gj;
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * gj * gj;
            let m_hat = m[j] / correction1;
            let v_hat = v[j] / correction2;
            *p = S::of(p.as_f64() - state.lr * m_hat / (v_hat.sqrt() + state.eps));
        }
    }
    Ok(())
}
