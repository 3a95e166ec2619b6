//! The learned update rule: two dense layers applied to every cell's perception vector.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::grid::{ChannelLayout, Field};
use crate::perception::PERCEPTION_BLOCKS;
use crate::scalar::Scalar;

/// Default hidden width of the update network.
pub const DEFAULT_HIDDEN: usize = 128;

/// Identifies one parameter tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    W1,
    B1,
    W2,
    B2,
}

impl Layer {
    pub const ALL: [Layer; 4] = [Layer::W1, Layer::B1, Layer::W2, Layer::B2];
    /// Layers updated by the optimizer; the output bias stays at zero.
    pub const TRAINED: [Layer; 3] = [Layer::W1, Layer::B1, Layer::W2];

    pub fn name(self) -> &'static str {
        match self {
            Layer::W1 => "w1",
            Layer::B1 => "b1",
            Layer::W2 => "w2",
            Layer::B2 => "b2",
        }
    }
}

/// `δ = w2ᵀ · relu(w1ᵀ · v + b1) + b2`.
///
/// `w1` is `d_p × d_h` and `w2` is `d_h × n`, both row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<S> {
    layout: ChannelLayout,
    d_p: usize,
    d_h: usize,
    pub(crate) w1: Vec<S>,
    pub(crate) b1: Vec<S>,
    pub(crate) w2: Vec<S>,
    pub(crate) b2: Vec<S>,
}

impl<S: Scalar> ModelParams<S> {
    pub fn zeros(layout: ChannelLayout, hidden: usize) -> Self {
        let d_p = PERCEPTION_BLOCKS * layout.n();
        Self {
            layout,
            d_p,
            d_h: hidden,
            w1: vec![S::zero(); d_p * hidden],
            b1: vec![S::zero(); hidden],
            w2: vec![S::zero(); hidden * layout.n()],
            b2: vec![S::zero(); layout.n()],
        }
    }

    /// Glorot-uniform first layer, zero biases, zero output layer.
    ///
    /// With `w2 = 0` the freshly initialized rule leaves every state unchanged.
    pub fn init<R: Rng + ?Sized>(layout: ChannelLayout, hidden: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(layout, hidden);
        let limit = (6.0 / (p.d_p + hidden) as f64).sqrt();
        for w in &mut p.w1 {
            *w = S::of(rng.random_range(-limit..limit));
        }
        p
    }

    pub fn from_layers(
        layout: ChannelLayout,
        hidden: usize,
        w1: Vec<S>,
        b1: Vec<S>,
        w2: Vec<S>,
        b2: Vec<S>,
    ) -> Result<Self> {
        let mut p = Self::zeros(layout, hidden);
        for (layer, data) in [(Layer::W1, w1), (Layer::B1, b1), (Layer::W2, w2), (Layer::B2, b2)] {
            if data.len() != p.layer(layer).len() {
                return Err(contract(format!(
                    "{} has {} values, expected {}",
                    layer.name(),
                    data.len(),
                    p.layer(layer).len()
                )));
            }
            if data.iter().any(|v| !v.is_finite()) {
                return Err(contract(format!("{} contains non-finite values", layer.name())));
            }
            *p.layer_vec_mut(layer) = data;
        }
        Ok(p)
    }

    #[inline]
    pub fn layout(&self) -> ChannelLayout {
        self.layout
    }

    #[inline]
    pub fn perception_dim(&self) -> usize {
        self.d_p
    }

    #[inline]
    pub fn hidden(&self) -> usize {
        self.d_h
    }

    pub fn layer(&self, layer: Layer) -> &[S] {
        match layer {
            Layer::W1 => &self.w1,
            Layer::B1 => &self.b1,
            Layer::W2 => &self.w2,
            Layer::B2 => &self.b2,
        }
    }

    pub fn layer_mut(&mut self, layer: Layer) -> &mut [S] {
        self.layer_vec_mut(layer)
    }

    fn layer_vec_mut(&mut self, layer: Layer) -> &mut Vec<S> {
        match layer {
            Layer::W1 => &mut self.w1,
            Layer::B1 => &mut self.b1,
            Layer::W2 => &mut self.w2,
            Layer::B2 => &mut self.b2,
        }
    }

    pub fn all_finite(&self) -> bool {
        Layer::ALL
            .iter()
            .all(|&l| self.layer(l).iter().all(|v| v.is_finite()))
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.layout == other.layout && self.d_h == other.d_h
    }

    pub fn cast<T: Scalar>(&self) -> ModelParams<T> {
        let conv = |v: &[S]| v.iter().map(|x| T::of(x.as_f64())).collect::<Vec<T>>();
        ModelParams {
            layout: self.layout,
            d_p: self.d_p,
            d_h: self.d_h,
            w1: conv(&self.w1),
            b1: conv(&self.b1),
            w2: conv(&self.w2),
            b2: conv(&self.b2),
        }
    }

    /// Evaluates the network on one perception vector.
    ///
    /// `hidden` receives the pre-activation `w1ᵀ v + b1`; `delta` receives δ.
    #[inline]
    pub(crate) fn forward_cell(&self, v: &[S], hidden: &mut [S], delta: &mut [S]) {
        let d_h = self.d_h;
        hidden.copy_from_slice(&self.b1);
        for (i, &x) in v.iter().enumerate() {
            if x == S::zero() {
                continue;
            }
            let row = &self.w1[i * d_h..(i + 1) * d_h];
            for (z, w) in hidden.iter_mut().zip(row) {
                *z += x * *w;
            }
        }
        let n = self.layout.n();
        delta.copy_from_slice(&self.b2);
        for (j, &z) in hidden.iter().enumerate() {
            if z <= S::zero() {
                continue;
            }
            let row = &self.w2[j * n..(j + 1) * n];
            for (d, w) in delta.iter_mut().zip(row) {
                *d += z * *w;
            }
        }
    }
}

/// Applies the update network to every cell of a perception field (`H × W × d_p` → `H × W × n`).
pub fn compute_delta<S: Scalar>(perception: &Field<S>, params: &ModelParams<S>) -> Result<Field<S>> {
    if perception.depth() != params.perception_dim() {
        return Err(contract(format!(
            "perception depth {} does not match parameter input width {}",
            perception.depth(),
            params.perception_dim()
        )));
    }
    let n = params.layout().n();
    let mut out = Field::zeros(perception.height(), perception.width(), n);
    let mut hidden = vec![S::zero(); params.hidden()];
    for r in 0..perception.height() {
        for c in 0..perception.width() {
            params.forward_cell(perception.at(r, c), &mut hidden, out.at_mut(r, c));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_field(h: usize, w: usize, d: usize, seed: u64) -> Field<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..h * w * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        Field::from_values(h, w, d, values).unwrap()
    }

    #[test]
    fn zero_output_layer_gives_zero_delta() {
        let layout = ChannelLayout::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ModelParams::<f64>::init(layout, 32, &mut rng);
        assert!(p.layer(Layer::W2).iter().all(|&w| w == 0.0));
        let v = random_field(3, 4, 128, 2);
        let d = compute_delta(&v, &p).unwrap();
        assert!(d.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn bias_only_hidden_layer() {
        // w1 = 0, b1 = 1, w2 column 2 = 1: every hidden unit outputs 1 and feeds channel 2.
        let layout = ChannelLayout::default();
        let d_h = 24;
        let mut p = ModelParams::<f64>::zeros(layout, d_h);
        p.layer_mut(Layer::B1).fill(1.0);
        for j in 0..d_h {
            p.layer_mut(Layer::W2)[j * 16 + 2] = 1.0;
        }
        let d = compute_delta(&random_field(2, 2, 128, 3), &p).unwrap();
        for r in 0..2 {
            for c in 0..2 {
                for ch in 0..16 {
                    let expected = if ch == 2 { d_h as f64 } else { 0.0 };
                    assert_eq!(d.get(r, c, ch), expected);
                }
            }
        }
    }

    #[test]
    fn matches_scalar_loop_oracle() {
        let layout = ChannelLayout::default();
        let d_h = 20;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut p = ModelParams::<f64>::init(layout, d_h, &mut rng);
        for l in [Layer::B1, Layer::W2, Layer::B2] {
            for w in p.layer_mut(l) {
                *w = rng.random_range(-0.5..0.5);
            }
        }
        let v = random_field(1, 1, 128, 4);
        let d = compute_delta(&v, &p).unwrap();
        let (w1, b1, w2, b2) = (p.layer(Layer::W1), p.layer(Layer::B1), p.layer(Layer::W2), p.layer(Layer::B2));
        for ch in 0..16 {
            let mut acc = b2[ch];
            for j in 0..d_h {
                let mut z = b1[j];
                for i in 0..128 {
                    z += w1[i * d_h + j] * v.get(0, 0, i);
                }
                acc += z.max(0.0) * w2[j * 16 + ch];
            }
            assert!((acc - d.get(0, 0, ch)).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_mismatched_perception() {
        let p = ModelParams::<f32>::zeros(ChannelLayout::default(), 8);
        let bad = Field::<f32>::zeros(2, 2, 64);
        assert!(compute_delta(&bad, &p).is_err());
        assert!(ModelParams::<f32>::from_layers(
            ChannelLayout::default(),
            8,
            vec![0.0; 3],
            vec![0.0; 8],
            vec![0.0; 128],
            vec![0.0; 16]
        )
        .is_err());
    }
}
