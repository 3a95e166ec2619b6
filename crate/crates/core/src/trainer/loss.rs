//! Training objective: KL on alive cells plus squared aliveness error.

use crate::error::{contract, Result};
use crate::grid::{BoolGrid, CellGrid, Field};
use crate::scalar::Scalar;

/// Ground truth for one map: class distributions, which cells should be alive, and legality.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainTarget<S> {
    class_probs: Field<S>,
    alive: BoolGrid,
    legality: BoolGrid,
}

impl<S: Scalar> TrainTarget<S> {
    pub fn new(class_probs: Field<S>, alive: BoolGrid, legality: BoolGrid) -> Result<Self> {
        if !alive.same_shape(&legality)
            || class_probs.height() != alive.height()
            || class_probs.width() != alive.width()
        {
            return Err(contract("target components differ in shape"));
        }
        if !alive.is_subset_of(&legality) {
            return Err(contract("alive cells must be legal"));
        }
        for (r, c) in alive.iter_set() {
            let total: f64 = class_probs.at(r, c).iter().map(|p| p.as_f64()).sum();
            if (total - 1.0).abs() > 1e-6 {
                return Err(contract(format!("class distribution at ({r},{c}) does not sum to 1")));
            }
        }
        Ok(Self {
            class_probs,
            alive,
            legality,
        })
    }

    /// One-hot targets from per-cell labels; `None` marks a non-road cell (dead and illegal).
    pub fn from_labels(height: usize, width: usize, k: usize, labels: &[Option<u8>]) -> Result<Self> {
        if labels.len() != height * width {
            return Err(contract("label grid has the wrong size"));
        }
        let mut probs = Field::zeros(height, width, k);
        let mut alive = BoolGrid::filled(height, width, false);
        for (i, label) in labels.iter().enumerate() {
            if let Some(j) = *label {
                let j = j as usize;
                if j >= k {
                    return Err(contract(format!("label {j} out of range for {k} classes")));
                }
                let (r, c) = (i / width, i % width);
                probs.at_mut(r, c)[j] = S::one();
                alive.set(r, c, true);
            }
        }
        let legality = alive.clone();
        Self::new(probs, alive, legality)
    }

    pub fn class_probs(&self) -> &Field<S> {
        &self.class_probs
    }

    pub fn alive(&self) -> &BoolGrid {
        &self.alive
    }

    pub fn legality(&self) -> &BoolGrid {
        &self.legality
    }

    pub fn height(&self) -> usize {
        self.alive.height()
    }

    pub fn width(&self) -> usize {
        self.alive.width()
    }

    /// Most probable class of an alive cell.
    pub fn label(&self, r: usize, c: usize) -> Option<usize> {
        if !self.alive.get(r, c) {
            return None;
        }
        Some(argmax(self.class_probs.at(r, c)))
    }

    pub fn cast<T: Scalar>(&self) -> TrainTarget<T> {
        TrainTarget {
            class_probs: self.class_probs.cast(),
            alive: self.alive.clone(),
            legality: self.legality.clone(),
        }
    }
}

/// Index of the first maximal entry.
pub(crate) fn argmax<S: PartialOrd + Copy>(v: &[S]) -> usize {
    let mut best = 0;
    for (j, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = j;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub total: f64,
    /// Row-major per-cell contributions; zero on illegal cells.
    pub per_cell: Vec<f64>,
}

fn check_shapes<S: Scalar>(grid: &CellGrid<S>, target: &TrainTarget<S>) -> Result<()> {
    if !target.legality.matches(grid) || target.class_probs.depth() != grid.layout().k() {
        return Err(contract("target does not match grid"));
    }
    Ok(())
}

/// Log-softmax of one logit vector in 64-bit.
#[inline]
fn log_softmax<S: Scalar>(logits: &[S], out: &mut [f64]) {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, x| m.max(x.as_f64()));
    let lse = logits.iter().map(|x| (x.as_f64() - max).exp()).sum::<f64>().ln() + max;
    for (o, x) in out.iter_mut().zip(logits) {
        *o = x.as_f64() - lse;
    }
}

/// `Σ_legal [ KL(p‖h)·alive + (α − alive)² ]`, accumulated row-major in 64-bit.
pub fn loss<S: Scalar>(grid: &CellGrid<S>, target: &TrainTarget<S>) -> Result<LossReport> {
    check_shapes(grid, target)?;
    let layout = grid.layout();
    let mut log_h = vec![0.0; layout.k()];
    let mut per_cell = vec![0.0; grid.cells()];
    let mut total = 0.0;
    for r in 0..grid.height() {
        for c in 0..grid.width() {
            if !target.legality.get(r, c) {
                continue;
            }
            let alive = target.alive.get(r, c);
            let want = if alive { 1.0 } else { 0.0 };
            let mut cell = (grid.alpha(r, c).as_f64() - want).powi(2);
            if alive {
                log_softmax(grid.logits(r, c), &mut log_h);
                for (p, lh) in target.class_probs.at(r, c).iter().zip(&log_h) {
                    let p = p.as_f64();
                    if p > 0.0 {
                        cell += p * (p.ln() - lh);
                    }
                }
            }
            per_cell[r * grid.width() + c] = cell;
            total += cell;
        }
    }
    Ok(LossReport { total, per_cell })
}

/// Gradient of [`loss`] with respect to every state value, written into `out` (shaped like the grid).
pub(crate) fn loss_gradient<S: Scalar>(grid: &CellGrid<S>, target: &TrainTarget<S>, out: &mut [S]) {
    let layout = grid.layout();
    let (n, k) = (layout.n(), layout.k());
    out.fill(S::zero());
    let mut log_h = vec![0.0; k];
    for r in 0..grid.height() {
        for c in 0..grid.width() {
            if !target.legality.get(r, c) {
                continue;
            }
            let base = (r * grid.width() + c) * n;
            let alive = target.alive.get(r, c);
            let want = if alive { 1.0 } else { 0.0 };
            out[base + layout.alpha_index()] = S::of(2.0 * (grid.alpha(r, c).as_f64() - want));
            if alive {
                log_softmax(grid.logits(r, c), &mut log_h);
                let p = target.class_probs.at(r, c);
                let mass: f64 = p.iter().map(|x| x.as_f64()).sum();
                for j in 0..k {
                    out[base + j] = S::of(mass * log_h[j].exp() - p[j].as_f64());
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ChannelLayout;

    fn target(labels: &[Option<u8>], h: usize, w: usize) -> TrainTarget<f64> {
        TrainTarget::from_labels(h, w, 4, labels).unwrap()
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let t = target(&[Some(0), None, Some(2), Some(3)], 2, 2);
        let mut g = CellGrid::<f64>::zeros(2, 2, ChannelLayout::default());
        for (r, c) in t.alive().iter_set().collect::<Vec<_>>() {
            let j = t.label(r, c).unwrap();
            g.set(r, c, j, 30.0);
            for other in 0..4 {
                if other != j {
                    g.set(r, c, other, -30.0);
                }
            }
            g.set(r, c, 4, 1.0);
        }
        let l = loss(&g, &t).unwrap();
        assert!(l.total < 1e-20, "{}", l.total);
    }

    #[test]
    fn uniform_prediction_of_one_hot_costs_ln4() {
        let t = target(&[Some(1)], 1, 1);
        let mut g = CellGrid::<f64>::zeros(1, 1, ChannelLayout::default());
        g.set(0, 0, 4, 1.0);
        let l = loss(&g, &t).unwrap();
        assert!((l.total - 4f64.ln()).abs() < 1e-12);
        assert!((l.total - 1.3863).abs() < 1e-4);
    }

    #[test]
    fn dead_target_squared_error() {
        let m = 12;
        let probs = Field::zeros(3, 4, 4);
        let t = TrainTarget::new(probs, BoolGrid::filled(3, 4, false), BoolGrid::filled(3, 4, true)).unwrap();
        let g = CellGrid::from_fn(3, 4, ChannelLayout::default(), |_, _, ch| if ch == 4 { 0.5 } else { 0.0 });
        let l = loss(&g, &t).unwrap();
        assert_eq!(l.total, 0.25 * m as f64);
    }

    #[test]
    fn target_validation() {
        let probs = Field::<f64>::zeros(2, 2, 4);
        let alive = BoolGrid::filled(2, 2, true);
        let legal = BoolGrid::filled(2, 2, false);
        assert!(TrainTarget::new(probs.clone(), alive.clone(), legal).is_err());
        assert!(TrainTarget::new(probs, alive.clone(), alive).is_err());
        assert!(TrainTarget::<f64>::from_labels(1, 1, 4, &[Some(4)]).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let t = target(&[Some(0), Some(3), None, Some(1)], 2, 2);
        let g = CellGrid::from_fn(2, 2, ChannelLayout::default(), |r, c, ch| {
            ((r * 7 + c * 3 + ch * 5) % 11) as f64 / 5.0 - 1.0
        });
        let mut grad = vec![0.0; g.values().len()];
        loss_gradient(&g, &t, &mut grad);
        let eps = 1e-6;
        for i in 0..grad.len() {
            let mut plus = g.clone();
            plus.values_mut()[i] += eps;
            let mut minus = g.clone();
            minus.values_mut()[i] -= eps;
            let fd = (loss(&plus, &t).unwrap().total - loss(&minus, &t).unwrap().total) / (2.0 * eps);
            assert!((fd - grad[i]).abs() < 1e-6, "coordinate {i}: {fd} vs {}", grad[i]);
        }
    }
}
