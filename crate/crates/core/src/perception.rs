//! Fixed multi-scale filter bank and per-cell perception vectors.
//!
//! A perception vector concatenates, channel-block by channel-block:
//!
//! ```text
//! [ identity | sobel_x_3 | sobel_y_3 | sobel_x_5 | sobel_y_5 | sobel_x_7 | sobel_y_7 | max_3 ]
//! ```
//!
//! Each block holds one value per state channel, so the dimension is `8 · n`.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::grid::{window_max, CellGrid, ChannelLayout, Field, Kernel};
use crate::scalar::Scalar;

/// Number of per-channel blocks in a perception vector.
pub const PERCEPTION_BLOCKS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    /// Derivative along columns (left to right).
    X,
    /// Derivative along rows (top to bottom).
    Y,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FilterLabel {
    SobelX3,
    SobelY3,
    SobelX5,
    SobelY5,
    SobelX7,
    SobelY7,
}

impl FilterLabel {
    pub const ALL: [FilterLabel; 6] = [
        FilterLabel::SobelX3,
        FilterLabel::SobelY3,
        FilterLabel::SobelX5,
        FilterLabel::SobelY5,
        FilterLabel::SobelX7,
        FilterLabel::SobelY7,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FilterLabel::SobelX3 => "sobel_x_3",
            FilterLabel::SobelY3 => "sobel_y_3",
            FilterLabel::SobelX5 => "sobel_x_5",
            FilterLabel::SobelY5 => "sobel_y_5",
            FilterLabel::SobelX7 => "sobel_x_7",
            FilterLabel::SobelY7 => "sobel_y_7",
        }
    }

    pub fn size(self) -> usize {
        match self {
            FilterLabel::SobelX3 | FilterLabel::SobelY3 => 3,
            FilterLabel::SobelX5 | FilterLabel::SobelY5 => 5,
            FilterLabel::SobelX7 | FilterLabel::SobelY7 => 7,
        }
    }

    pub fn axis(self) -> Axis {
        match self {
            FilterLabel::SobelX3 | FilterLabel::SobelX5 | FilterLabel::SobelX7 => Axis::X,
            _ => Axis::Y,
        }
    }
}

fn binomial_row(len: usize) -> Vec<f64> {
    let mut row = vec![1.0];
    for _ in 1..len {
        let mut next = vec![1.0; row.len() + 1];
        for i in 1..row.len() {
            next[i] = row[i - 1] + row[i];
        }
        row = next;
    }
    row
}

fn convolve_1d(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Separable Sobel kernel: binomial smoothing across the axis, binomial-smoothed
/// central difference along it, scaled so the absolute weights sum to one.
pub fn make_sobel<S: Scalar>(size: usize, axis: Axis) -> Result<Kernel<S>> {
    if !matches!(size, 3 | 5 | 7) {
        return Err(contract(format!("sobel size must be 3, 5 or 7, got {size}")));
    }
    let smooth = binomial_row(size);
    let deriv = convolve_1d(&[-1.0, 0.0, 1.0], &binomial_row(size - 2));
    let mut weights: Vec<f64> = smooth
        .iter()
        .flat_map(|s| deriv.iter().map(move |d| s * d))
        .collect();
    let norm: f64 = weights.iter().map(|w| w.abs()).sum();
    for w in &mut weights {
        *w /= norm;
    }
    let kernel = Kernel::new(size, weights.into_iter().map(S::of).collect())?;
    Ok(match axis {
        Axis::X => kernel,
        Axis::Y => kernel.transpose(),
    })
}

type Taps<S> = Vec<(isize, isize, S)>;

/// The six Sobel kernels plus the identity and 3×3 max features.
#[derive(Clone, Debug)]
pub struct FilterBank<S> {
    filters: Vec<(FilterLabel, Kernel<S>)>,
    taps: Vec<Taps<S>>,
    max_window: usize,
}

impl<S: Scalar> FilterBank<S> {
    pub fn standard() -> Self {
        let filters: Vec<_> = FilterLabel::ALL
            .iter()
            .map(|&l| (l, make_sobel(l.size(), l.axis()).expect("standard sizes")))
            .collect();
        let taps = filters.iter().map(|(_, k)| k.taps()).collect();
        Self {
            filters,
            taps,
            max_window: 3,
        }
    }

    pub fn filters(&self) -> &[(FilterLabel, Kernel<S>)] {
        &self.filters
    }

    pub fn max_window(&self) -> usize {
        self.max_window
    }

    pub fn perception_dim(&self, layout: ChannelLayout) -> usize {
        layout.n() * (self.filters.len() + 2)
    }
}

impl<S: Scalar> Default for FilterBank<S> {
    fn default() -> Self {
        Self::standard()
    }
}

/// Perception vectors for every cell (`H × W × 8n`).
pub fn perceive<S: Scalar>(grid: &CellGrid<S>, bank: &FilterBank<S>) -> Field<S> {
    let d = bank.perception_dim(grid.layout());
    let mut out = Field::zeros(grid.height(), grid.width(), d);
    for r in 0..grid.height() {
        for c in 0..grid.width() {
            perceive_cell(grid, bank, r, c, out.at_mut(r, c));
        }
    }
    out
}

/// Writes the perception vector of cell `(r, c)` into `out`.
pub(crate) fn perceive_cell<S: Scalar>(
    grid: &CellGrid<S>,
    bank: &FilterBank<S>,
    r: usize,
    c: usize,
    out: &mut [S],
) {
    let n = grid.layout().n();
    let (h, w) = (grid.height() as isize, grid.width() as isize);
    out.fill(S::zero());
    out[..n].copy_from_slice(grid.cell(r, c));
    for (f, taps) in bank.taps.iter().enumerate() {
        let block = &mut out[(f + 1) * n..(f + 2) * n];
        for &(dr, dc, wt) in taps {
            let (rr, cc) = (r as isize + dr, c as isize + dc);
            if rr < 0 || cc < 0 || rr >= h || cc >= w {
                continue;
            }
            let src = grid.cell(rr as usize, cc as usize);
            for (o, s) in block.iter_mut().zip(src) {
                *o += wt * *s;
            }
        }
    }
    let max_block = (bank.taps.len() + 1) * n;
    let half = (bank.max_window / 2) as isize;
    let block = &mut out[max_block..max_block + n];
    let mut first = true;
    for dr in -half..=half {
        for dc in -half..=half {
            let (rr, cc) = (r as isize + dr, c as isize + dc);
            if rr < 0 || cc < 0 || rr >= h || cc >= w {
                if first {
                    block.fill(S::zero());
                } else {
                    for o in block.iter_mut() {
                        if S::zero() > *o {
                            *o = S::zero();
                        }
                    }
                }
            } else {
                let src = grid.cell(rr as usize, cc as usize);
                if first {
                    block.copy_from_slice(src);
                } else {
                    for (o, s) in block.iter_mut().zip(src) {
                        if *s > *o {
                            *o = *s;
                        }
                    }
                }
            }
            first = false;
        }
    }
}

/// Adds the transpose of [`perceive_cell`] applied to `grad` (a perception-vector
/// gradient of cell `(r, c)`) into `dgrid`, a buffer shaped like `grid`.
///
/// The max feature routes its gradient to the first maximal in-grid cell of the window.
pub(crate) fn perceive_cell_backward<S: Scalar>(
    grid: &CellGrid<S>,
    bank: &FilterBank<S>,
    r: usize,
    c: usize,
    grad: &[S],
    dgrid: &mut [S],
) {
    let n = grid.layout().n();
    let (h, w) = (grid.height(), grid.width());
    let at = |rr: usize, cc: usize| (rr * w + cc) * n;
    let own = at(r, c);
    for ch in 0..n {
        dgrid[own + ch] += grad[ch];
    }
    for (f, taps) in bank.taps.iter().enumerate() {
        let block = &grad[(f + 1) * n..(f + 2) * n];
        for &(dr, dc, wt) in taps {
            let (rr, cc) = (r as isize + dr, c as isize + dc);
            if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                continue;
            }
            let base = at(rr as usize, cc as usize);
            for (d, g) in dgrid[base..base + n].iter_mut().zip(block) {
                *d += wt * *g;
            }
        }
    }
    let max_block = (bank.taps.len() + 1) * n;
    for ch in 0..n {
        let g = grad[max_block + ch];
        if g == S::zero() {
            continue;
        }
        let (_, pos) = window_max(h, w, bank.max_window, r, c, |rr, cc| grid.get(rr, cc, ch));
        if let Some((rr, cc)) = pos {
            dgrid[at(rr, cc) + ch] += g;
        }
    }
}
