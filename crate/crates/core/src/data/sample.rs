//! Ground-truth maps.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::grid::BoolGrid;
use crate::scalar::Scalar;
use crate::trainer::TrainTarget;

/// Per-cell class labels; `None` is background (not a road).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ClassGrid {
    height: usize,
    width: usize,
    cells: Vec<Option<u8>>,
}

impl ClassGrid {
    pub fn new(height: usize, width: usize, cells: Vec<Option<u8>>) -> Result<Self> {
        if cells.len() != height * width {
            return Err(contract(format!(
                "class grid has {} cells, expected {}",
                cells.len(),
                height * width
            )));
        }
        Ok(Self { height, width, cells })
    }

    pub fn background(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            cells: vec![None; height * width],
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn cells(&self) -> &[Option<u8>] {
        &self.cells
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Option<u8> {
        self.cells[r * self.width + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, class: Option<u8>) {
        self.cells[r * self.width + c] = class;
    }

    /// Road cells: true exactly where the class is not background.
    pub fn legality(&self) -> BoolGrid {
        BoolGrid::from_bits(self.height, self.width, self.cells.iter().map(Option::is_some).collect())
            .expect("matching size")
    }

    /// Cell count per class, for classes `0..k`.
    pub fn histogram(&self, k: usize) -> Vec<usize> {
        let mut counts = vec![0; k];
        for c in self.cells.iter().flatten() {
            if let Some(slot) = counts.get_mut(*c as usize) {
                *slot += 1;
            }
        }
        counts
    }

    pub fn max_class(&self) -> Option<u8> {
        self.cells.iter().flatten().copied().max()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Decoded,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapSample {
    pub location: String,
    pub timestamp: String,
    /// Time of day in hours, when known.
    pub hour: Option<f64>,
    pub classes: ClassGrid,
    pub provenance: Provenance,
}

impl MapSample {
    pub fn height(&self) -> usize {
        self.classes.height()
    }

    pub fn width(&self) -> usize {
        self.classes.width()
    }

    pub fn legality(&self) -> BoolGrid {
        self.classes.legality()
    }

    /// One-hot training target: every road cell should end alive with its labeled class.
    pub fn target<S: Scalar>(&self, k: usize) -> Result<TrainTarget<S>> {
        TrainTarget::from_labels(self.height(), self.width(), k, self.classes.cells())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legality_tracks_background() {
        let g = ClassGrid::new(2, 3, vec![Some(0), None, Some(3), None, None, Some(1)]).unwrap();
        assert_eq!(g.legality().bits(), &[true, false, true, false, false, true]);
        assert_eq!(g.histogram(4), vec![1, 1, 0, 1]);
        assert!(ClassGrid::new(2, 2, vec![None; 3]).is_err());
    }

    #[test]
    fn target_marks_roads_alive() {
        let s = MapSample {
            location: "a".into(),
            timestamp: "t".into(),
            hour: None,
            classes: ClassGrid::new(1, 3, vec![Some(2), None, Some(0)]).unwrap(),
            provenance: Provenance::Synthetic,
        };
        let t = s.target::<f32>(4).unwrap();
        assert_eq!(t.alive().bits(), &[true, false, true]);
        assert_eq!(t.label(0, 0), Some(2));
        assert_eq!(t.label(0, 1), None);
    }
}
