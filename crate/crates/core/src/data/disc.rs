//! Circular regions: pre-explored areas and damage brushes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::grid::BoolGrid;

/// A closed Euclidean disc in continuous map coordinates, where cell `(r, c)` has its
/// center at `(r + 0.5, c + 0.5)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Disc {
    pub cy: f64,
    pub cx: f64,
    pub radius: f64,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        lo
    } else {
        lo + (hi - lo) * rng.random::<f64>()
    }
}

impl Disc {
    /// Disc of the given diameter with its center uniform over positions that keep it inside
    /// the `height × width` map.
    pub fn sample_inside<R: Rng + ?Sized>(
        rng: &mut R,
        height: usize,
        width: usize,
        diameter: f64,
    ) -> Result<Self> {
        let radius = diameter / 2.0;
        if !(radius >= 0.0) || diameter > height.min(width) as f64 {
            return Err(contract(format!(
                "disc of diameter {diameter} does not fit a {height}x{width} map"
            )));
        }
        let cy = uniform(rng, radius, height as f64 - radius);
        let cx = uniform(rng, radius, width as f64 - radius);
        Ok(Self { cy, cx, radius })
    }

    /// Disc centered on a uniformly chosen cell (may extend past the border).
    pub fn sample_on_cell<R: Rng + ?Sized>(rng: &mut R, height: usize, width: usize, radius: f64) -> Self {
        let r = rng.random_range(0..height);
        let c = rng.random_range(0..width);
        Self::around_cell(r, c, radius)
    }

    pub fn around_cell(r: usize, c: usize, radius: f64) -> Self {
        Self {
            cy: r as f64 + 0.5,
            cx: c as f64 + 0.5,
            radius,
        }
    }

    /// Whether cell `(r, c)` has its center in the disc. A zero radius selects nothing.
    pub fn contains(&self, r: usize, c: usize) -> bool {
        if self.radius <= 0.0 {
            return false;
        }
        let dy = r as f64 + 0.5 - self.cy;
        let dx = c as f64 + 0.5 - self.cx;
        dy * dy + dx * dx <= self.radius * self.radius
    }

    pub fn mask(&self, height: usize, width: usize) -> BoolGrid {
        BoolGrid::from_fn(height, width, |r, c| self.contains(r, c))
    }
}

/// Pre-explored region: a disc of diameter `ratio · min(height, width)` fully inside the map.
pub fn sample_disc<R: Rng + ?Sized>(rng: &mut R, height: usize, width: usize, ratio: f64) -> Result<BoolGrid> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(contract(format!("diameter ratio must be in (0, 1], got {ratio}")));
    }
    let d = ratio * height.min(width) as f64;
    Ok(Disc::sample_inside(rng, height, width, d)?.mask(height, width))
}
