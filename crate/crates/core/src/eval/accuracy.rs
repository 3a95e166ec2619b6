//! Map accuracy: matched (cell, class) pairs over predicted-alive cells.

use crate::data::ClassGrid;
use crate::error::{contract, Result};
use crate::grid::CellGrid;
use crate::scalar::Scalar;
use crate::trainer::loss::argmax;
use crate::trainer::TrainTarget;

/// Argmax class of every legal cell whose α exceeds `threshold`; `None` elsewhere.
pub fn predicted_classes<S: Scalar>(grid: &CellGrid<S>, legality: &crate::BoolGrid, threshold: f64) -> ClassGrid {
    let t = S::of(threshold);
    let cells = (0..grid.cells())
        .map(|i| {
            let (r, c) = (i / grid.width(), i % grid.width());
            (legality.get(r, c) && grid.alpha(r, c) > t).then(|| argmax(grid.logits(r, c)) as u8)
        })
        .collect();
    ClassGrid::new(grid.height(), grid.width(), cells).expect("matching size")
}

/// Counts `(|T ∩ P|, |P|)`.
pub fn match_counts<S: Scalar>(grid: &CellGrid<S>, target: &TrainTarget<S>, threshold: f64) -> Result<(usize, usize)> {
    if !target.legality().matches(grid) {
        return Err(contract("target does not match grid"));
    }
    let predicted = predicted_classes(grid, target.legality(), threshold);
    let mut hits = 0;
    let mut total = 0;
    for r in 0..grid.height() {
        for c in 0..grid.width() {
            if let Some(p) = predicted.get(r, c) {
                total += 1;
                if target.label(r, c) == Some(p as usize) {
                    hits += 1;
                }
            }
        }
    }
    Ok((hits, total))
}

/// Like [`match_counts`] but ignoring cells where `exclude` is set.
pub fn match_counts_outside<S: Scalar>(
    grid: &CellGrid<S>,
    target: &TrainTarget<S>,
    threshold: f64,
    exclude: &crate::BoolGrid,
) -> Result<(usize, usize)> {
    if !target.legality().matches(grid) || !exclude.matches(grid) {
        return Err(contract("target or mask does not match grid"));
    }
    let predicted = predicted_classes(grid, target.legality(), threshold);
    let mut hits = 0;
    let mut total = 0;
    for (i, p) in predicted.cells().iter().enumerate() {
        let (r, c) = (i / grid.width(), i % grid.width());
        if let (Some(p), false) = (p, exclude.get(r, c)) {
            total += 1;
            hits += usize::from(target.label(r, c) == Some(*p as usize));
        }
    }
    Ok((hits, total))
}

/// Fraction of legal cells predicted alive.
pub fn coverage<S: Scalar>(grid: &CellGrid<S>, legality: &crate::BoolGrid, threshold: f64) -> f64 {
    let legal = legality.count();
    if legal == 0 {
        return 0.0;
    }
    let alive = predicted_classes(grid, legality, threshold).cells().iter().filter(|c| c.is_some()).count();
    alive as f64 / legal as f64
}

/// `|T ∩ P| / |P|`, with 0 when nothing is predicted alive.
pub fn accuracy<S: Scalar>(grid: &CellGrid<S>, target: &TrainTarget<S>, threshold: f64) -> Result<f64> {
    let (hits, total) = match_counts(grid, target, threshold)?;
    Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ChannelLayout;

    fn labels(n: usize) -> Vec<Option<u8>> {
        (0..n).map(|i| if i % 7 == 6 { None } else { Some((i % 4) as u8) }).collect()
    }

    fn paint(labels: &[Option<u8>], w: usize, wrong: impl Fn(usize) -> bool) -> CellGrid<f64> {
        let h = labels.len() / w;
        let mut g = CellGrid::zeros(h, w, ChannelLayout::default());
        for (i, l) in labels.iter().enumerate() {
            if let Some(j) = l {
                let (r, c) = (i / w, i % w);
                let j = if wrong(i) { (*j as usize + 1) % 4 } else { *j as usize };
                g.set(r, c, j, 5.0);
                g.set(r, c, 4, 1.0);
            }
        }
        g
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let l = labels(64);
        let t = TrainTarget::from_labels(8, 8, 4, &l).unwrap();
        assert_eq!(accuracy(&paint(&l, 8, |_| false), &t, 0.1).unwrap(), 1.0);
    }

    #[test]
    fn all_wrong_scores_zero() {
        let l = labels(64);
        let t = TrainTarget::from_labels(8, 8, 4, &l).unwrap();
        assert_eq!(accuracy(&paint(&l, 8, |_| true), &t, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn eighty_of_hundred() {
        let l: Vec<Option<u8>> = (0..100).map(|i| Some((i % 4) as u8)).collect();
        let t = TrainTarget::from_labels(10, 10, 4, &l).unwrap();
        let g = paint(&l, 10, |i| i >= 80);
        assert_eq!(match_counts(&g, &t, 0.1).unwrap(), (80, 100));
        assert_eq!(accuracy(&g, &t, 0.1).unwrap(), 0.8);
    }

    #[test]
    fn nothing_alive_scores_zero() {
        let l = labels(16);
        let t = TrainTarget::<f64>::from_labels(4, 4, 4, &l).unwrap();
        let g = CellGrid::zeros(4, 4, ChannelLayout::default());
        assert_eq!(accuracy(&g, &t, 0.1).unwrap(), 0.0);
    }
}
