//! Dense multi-channel grids and the fixed-filter primitives built on them.
//!
//! Every buffer is row-major with the channel index varying fastest, so one
//! cell's channels are contiguous.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::scalar::Scalar;

/// Magnitude bound applied to every channel after each automaton step.
pub const STATE_LIMIT: f64 = 30.0;

/// Partition of a cell's channels into class logits, aliveness and hidden signals.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawLayout", into = "RawLayout")]
pub struct ChannelLayout {
    k: usize,
    n: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLayout {
    classes: usize,
    channels: usize,
}

impl TryFrom<RawLayout> for ChannelLayout {
    type Error = String;

    fn try_from(raw: RawLayout) -> std::result::Result<Self, String> {
        ChannelLayout::new(raw.classes, raw.channels).map_err(|e| e.to_string())
    }
}

impl From<ChannelLayout> for RawLayout {
    fn from(l: ChannelLayout) -> Self {
        RawLayout {
            classes: l.k,
            channels: l.n,
        }
    }
}

impl Default for ChannelLayout {
    fn default() -> Self {
        Self { k: 4, n: 16 }
    }
}

impl ChannelLayout {
    pub fn new(k: usize, n: usize) -> Result<Self> {
        if k == 0 {
            return Err(contract("layout needs at least one class channel"));
        }
        if n < k + 2 {
            return Err(contract(format!(
                "layout with {k} classes needs at least {} channels, got {n}",
                k + 2
            )));
        }
        Ok(Self { k, n })
    }

    /// Number of class-logit channels.
    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    /// Total channels per cell.
    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn alpha_index(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn hidden_range(&self) -> std::ops::Range<usize> {
        self.k + 1..self.n
    }
}

/// The automaton state: `height × width` cells of `layout.n()` reals each.
#[derive(Clone, Debug, PartialEq)]
pub struct CellGrid<S> {
    height: usize,
    width: usize,
    layout: ChannelLayout,
    values: Vec<S>,
}

impl<S: Scalar> CellGrid<S> {
    pub fn zeros(height: usize, width: usize, layout: ChannelLayout) -> Self {
        Self {
            height,
            width,
            layout,
            values: vec![S::zero(); height * width * layout.n()],
        }
    }

    pub fn from_values(
        height: usize,
        width: usize,
        layout: ChannelLayout,
        values: Vec<S>,
    ) -> Result<Self> {
        let expected = height * width * layout.n();
        if values.len() != expected {
            return Err(contract(format!(
                "grid buffer has {} values, expected {expected}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(contract("grid values must be finite"));
        }
        Ok(Self {
            height,
            width,
            layout,
            values,
        })
    }

    /// Builds a grid by evaluating `f(row, col, channel)` everywhere.
    pub fn from_fn(
        height: usize,
        width: usize,
        layout: ChannelLayout,
        mut f: impl FnMut(usize, usize, usize) -> S,
    ) -> Self {
        let n = layout.n();
        let mut values = Vec::with_capacity(height * width * n);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..n {
                    values.push(f(r, c, ch));
                }
            }
        }
        Self {
            height,
            width,
            layout,
            values,
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
    pub fn layout(&self) -> ChannelLayout {
        self.layout
    }

    #[inline]
    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn values(&self) -> &[S] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<S> {
        self.values
    }

    #[inline]
    pub fn cell(&self, r: usize, c: usize) -> &[S] {
        let n = self.layout.n();
        let at = (r * self.width + c) * n;
        &self.values[at..at + n]
    }

    #[inline]
    pub fn cell_mut(&mut self, r: usize, c: usize) -> &mut [S] {
        let n = self.layout.n();
        let at = (r * self.width + c) * n;
        &mut self.values[at..at + n]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize, ch: usize) -> S {
        self.values[(r * self.width + c) * self.layout.n() + ch]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, ch: usize, v: S) {
        let n = self.layout.n();
        self.values[(r * self.width + c) * n + ch] = v;
    }

    #[inline]
    pub fn alpha(&self, r: usize, c: usize) -> S {
        self.get(r, c, self.layout.alpha_index())
    }

    #[inline]
    pub fn logits(&self, r: usize, c: usize) -> &[S] {
        &self.cell(r, c)[..self.layout.k()]
    }

    pub fn same_shape<T>(&self, other: &CellGrid<T>) -> bool {
        self.height == other.height && self.width == other.width && self.layout == other.layout
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Zeroes every channel of the cells selected by `mask`.
    pub fn clear_where(&mut self, mask: &BoolGrid) {
        let n = self.layout.n();
        for (cell, &hit) in self.values.chunks_exact_mut(n).zip(mask.bits()) {
            if hit {
                cell.fill(S::zero());
            }
        }
    }

    /// Converts every value to another scalar type.
    pub fn cast<T: Scalar>(&self) -> CellGrid<T> {
        CellGrid {
            height: self.height,
            width: self.width,
            layout: self.layout,
            values: self.values.iter().map(|v| T::of(v.as_f64())).collect(),
        }
    }
}

/// One boolean per cell.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BoolGrid {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BoolGrid {
    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Self {
            height,
            width,
            bits: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                bits.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            bits,
        }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(contract(format!(
                "mask has {} cells, expected {}",
                bits.len(),
                height * width
            )));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
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
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.width + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.bits[r * self.width + c] = v;
    }

    #[inline]
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn and(&self, other: &BoolGrid) -> BoolGrid {
        debug_assert!(self.same_shape(other));
        BoolGrid {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a && *b).collect(),
        }
    }

    pub fn or(&self, other: &BoolGrid) -> BoolGrid {
        debug_assert!(self.same_shape(other));
        BoolGrid {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a || *b).collect(),
        }
    }

    pub fn not(&self) -> BoolGrid {
        BoolGrid {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    /// True when every set cell of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BoolGrid) -> bool {
        self.bits.iter().zip(&other.bits).all(|(a, b)| !a || *b)
    }

    pub fn same_shape(&self, other: &BoolGrid) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn matches<S>(&self, grid: &CellGrid<S>) -> bool {
        self.height == grid.height && self.width == grid.width
    }

    /// Row-major iterator over the coordinates of set cells.
    pub fn iter_set(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i / w, i % w))
    }
}

/// A generic `height × width × depth` real field (perception vectors, distributions, increments).
#[derive(Clone, Debug, PartialEq)]
pub struct Field<S> {
    height: usize,
    width: usize,
    depth: usize,
    values: Vec<S>,
}

impl<S: Scalar> Field<S> {
    pub fn zeros(height: usize, width: usize, depth: usize) -> Self {
        Self {
            height,
            width,
            depth,
            values: vec![S::zero(); height * width * depth],
        }
    }

    pub fn from_values(height: usize, width: usize, depth: usize, values: Vec<S>) -> Result<Self> {
        if values.len() != height * width * depth {
            return Err(contract(format!(
                "field buffer has {} values, expected {}",
                values.len(),
                height * width * depth
            )));
        }
        Ok(Self {
            height,
            width,
            depth,
            values,
        })
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
    pub fn depth(&self) -> usize {
        self.depth
    }

    #[inline]
    pub fn values(&self) -> &[S] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [S] {
        &mut self.values
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> &[S] {
        let at = (r * self.width + c) * self.depth;
        &self.values[at..at + self.depth]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut [S] {
        let at = (r * self.width + c) * self.depth;
        &mut self.values[at..at + self.depth]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize, d: usize) -> S {
        self.values[(r * self.width + c) * self.depth + d]
    }

    pub fn cast<T: Scalar>(&self) -> Field<T> {
        Field {
            height: self.height,
            width: self.width,
            depth: self.depth,
            values: self.values.iter().map(|v| T::of(v.as_f64())).collect(),
        }
    }
}

/// Border rule for neighborhood reads.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Reads outside the grid return zero.
    #[default]
    Zero,
}

/// Square correlation kernel of odd size 3, 5 or 7.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel<S> {
    size: usize,
    weights: Vec<S>,
}

impl<S: Scalar> Kernel<S> {
    pub fn new(size: usize, weights: Vec<S>) -> Result<Self> {
        if !matches!(size, 3 | 5 | 7) {
            return Err(contract(format!("kernel size must be 3, 5 or 7, got {size}")));
        }
        if weights.len() != size * size {
            return Err(contract(format!(
                "{size}x{size} kernel needs {} weights, got {}",
                size * size,
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(contract("kernel weights must be finite"));
        }
        Ok(Self { size, weights })
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn weight(&self, dr: usize, dc: usize) -> S {
        self.weights[dr * self.size + dc]
    }

    pub fn weights(&self) -> &[S] {
        &self.weights
    }

    pub fn transpose(&self) -> Self {
        let s = self.size;
        let mut weights = Vec::with_capacity(s * s);
        for dr in 0..s {
            for dc in 0..s {
                weights.push(self.weights[dc * s + dr]);
            }
        }
        Self { size: s, weights }
    }

    /// Non-zero taps as `(row offset, col offset, weight)` in row-major kernel order.
    pub(crate) fn taps(&self) -> Vec<(isize, isize, S)> {
        let half = (self.size / 2) as isize;
        let mut taps = Vec::new();
        for dr in 0..self.size {
            for dc in 0..self.size {
                let w = self.weight(dr, dc);
                if w != S::zero() {
                    taps.push((dr as isize - half, dc as isize - half, w));
                }
            }
        }
        taps
    }
}

/// Applies `kernel` to every channel independently.
///
/// `out[r,c,ch] = Σ kernel[dr,dc] · grid[r+dr−s/2, c+dc−s/2, ch]`, summed in
/// row-major kernel order; reads outside the grid contribute zero.
pub fn depthwise_convolve<S: Scalar>(
    grid: &CellGrid<S>,
    kernel: &Kernel<S>,
    padding: Padding,
) -> CellGrid<S> {
    let Padding::Zero = padding;
    let (h, w, n) = (grid.height(), grid.width(), grid.layout().n());
    let taps = kernel.taps();
    let mut out = CellGrid::zeros(h, w, grid.layout());
    for r in 0..h {
        for c in 0..w {
            let dst = out.cell_mut(r, c);
            for &(dr, dc, wt) in &taps {
                let (rr, cc) = (r as isize + dr, c as isize + dc);
                if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                    continue;
                }
                let src = grid.cell(rr as usize, cc as usize);
                for ch in 0..n {
                    dst[ch] += wt * src[ch];
                }
            }
        }
    }
    out
}

/// Maximum of one channel over an odd `window × window` neighborhood, self included.
///
/// Zero padding applies, so border outputs are never below zero.
pub fn neighborhood_max<S: Scalar>(
    grid: &CellGrid<S>,
    channel: usize,
    window: usize,
) -> Result<Field<S>> {
    if channel >= grid.layout().n() {
        return Err(contract(format!(
            "channel {channel} out of range for {} channels",
            grid.layout().n()
        )));
    }
    if window % 2 == 0 {
        return Err(contract(format!("window must be odd, got {window}")));
    }
    let (h, w) = (grid.height(), grid.width());
    let mut out = Field::zeros(h, w, 1);
    for r in 0..h {
        for c in 0..w {
            out.values_mut()[r * w + c] =
                window_max(h, w, window, r, c, |rr, cc| grid.get(rr, cc, channel)).0;
        }
    }
    Ok(out)
}

/// Max over the window centered at `(r, c)` and the in-grid position that attains it
/// (first in row-major scan order), or `None` when only padding attains it.
#[inline]
pub(crate) fn window_max<S: Scalar>(
    h: usize,
    w: usize,
    window: usize,
    r: usize,
    c: usize,
    read: impl Fn(usize, usize) -> S,
) -> (S, Option<(usize, usize)>) {
    let half = (window / 2) as isize;
    let mut best: Option<(S, Option<(usize, usize)>)> = None;
    for dr in -half..=half {
        for dc in -half..=half {
            let (rr, cc) = (r as isize + dr, c as isize + dc);
            let (v, pos) = if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                (S::zero(), None)
            } else {
                let (rr, cc) = (rr as usize, cc as usize);
                (read(rr, cc), Some((rr, cc)))
            };
            match best {
                Some((b, _)) if v <= b => {}
                _ => best = Some((v, pos)),
            }
        }
    }
    best.expect("window is non-empty")
}

/// Per-cell softmax over the class logits, max-subtracted.
pub fn softmax_logits<S: Scalar>(grid: &CellGrid<S>) -> Field<S> {
    let k = grid.layout().k();
    let mut out = Field::zeros(grid.height(), grid.width(), k);
    let mut buf = vec![0.0f64; k];
    for r in 0..grid.height() {
        for c in 0..grid.width() {
            softmax_into(grid.logits(r, c), &mut buf);
            for (dst, p) in out.at_mut(r, c).iter_mut().zip(&buf) {
                *dst = S::of(*p);
            }
        }
    }
    out
}

/// Softmax of one logit vector evaluated in 64-bit.
#[inline]
pub(crate) fn softmax_into<S: Scalar>(logits: &[S], out: &mut [f64]) {
    let max = logits
        .iter()
        .fold(f64::NEG_INFINITY, |m, x| m.max(x.as_f64()));
    let mut total = 0.0;
    for (o, x) in out.iter_mut().zip(logits) {
        *o = (x.as_f64() - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_channel(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> CellGrid<f64> {
        // k = 1, n = 3 is the smallest legal layout.
        let layout = ChannelLayout::new(1, 3).unwrap();
        CellGrid::from_fn(h, w, layout, |r, c, ch| if ch == 0 { f(r, c) } else { 0.0 })
    }

    #[test]
    fn layout_invariants() {
        let l = ChannelLayout::default();
        assert_eq!((l.k(), l.n(), l.alpha_index()), (4, 16, 4));
        assert_eq!(l.hidden_range(), 5..16);
        assert!(ChannelLayout::new(4, 5).is_err());
        assert!(ChannelLayout::new(0, 5).is_err());
        assert!(ChannelLayout::new(4, 6).is_ok());
    }

    #[test]
    fn grid_rejects_bad_buffers() {
        let l = ChannelLayout::default();
        assert!(CellGrid::<f32>::from_values(2, 2, l, vec![0.0; 10]).is_err());
        let mut v = vec![0.0f32; 64];
        v[3] = f32::NAN;
        assert!(CellGrid::from_values(2, 2, l, v).is_err());
    }

    #[test]
    fn kernel_sizes() {
        assert!(Kernel::<f32>::new(4, vec![0.0; 16]).is_err());
        assert!(Kernel::<f32>::new(3, vec![0.0; 8]).is_err());
        assert!(Kernel::new(3, vec![f32::INFINITY; 9]).is_err());
    }

    #[test]
    fn convolve_zero_grid() {
        let g = CellGrid::<f64>::zeros(5, 6, ChannelLayout::default());
        let k = Kernel::new(5, (0..25).map(|i| i as f64 - 3.0).collect()).unwrap();
        let out = depthwise_convolve(&g, &k, Padding::Zero);
        assert!(out.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn convolve_identity_kernel() {
        let g = CellGrid::from_fn(4, 5, ChannelLayout::default(), |r, c, ch| {
            (r * 31 + c * 7 + ch) as f32 * 0.37 - 5.0
        });
        let mut w = vec![0.0f32; 9];
        w[4] = 1.0;
        let out = depthwise_convolve(&g, &Kernel::new(3, w).unwrap(), Padding::Zero);
        assert_eq!(out, g);
    }

    #[test]
    fn convolve_impulse_stamps_flipped_kernel() {
        // Sobel-x by hand: [[-1,0,1],[-2,0,2],[-1,0,1]].
        let sobel = vec![-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0];
        let k = Kernel::new(3, sobel.clone()).unwrap();
        let g = single_channel(5, 5, |r, c| if (r, c) == (2, 2) { 1.0 } else { 0.0 });
        let out = depthwise_convolve(&g, &k, Padding::Zero);
        for r in 0..5 {
            for c in 0..5 {
                let expected = if (1..=3).contains(&r) && (1..=3).contains(&c) {
                    // out[2+a, 2+b] = K[1-a, 1-b]
                    sobel[(3 - r) * 3 + (3 - c)]
                } else {
                    0.0
                };
                assert_eq!(out.get(r, c, 0), expected, "at ({r},{c})");
            }
        }
    }

    #[test]
    fn max_of_zero_channel() {
        let g = CellGrid::<f32>::zeros(6, 6, ChannelLayout::default());
        let m = neighborhood_max(&g, 4, 3).unwrap();
        assert!(m.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn max_dilates_indicator() {
        let g = single_channel(6, 6, |r, c| if (r, c) == (2, 2) { 1.0 } else { 0.0 });
        let m = neighborhood_max(&g, 0, 3).unwrap();
        for r in 0..6 {
            for c in 0..6 {
                let inside = (1..=3).contains(&r) && (1..=3).contains(&c);
                assert_eq!(m.get(r, c, 0), if inside { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn max_of_row_ramp() {
        let g = single_channel(4, 4, |r, _| r as f64);
        let m = neighborhood_max(&g, 0, 3).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(m.get(r, c, 0), (r + 1).min(3) as f64);
            }
        }
    }

    #[test]
    fn max_rejects_bad_arguments() {
        let g = CellGrid::<f32>::zeros(3, 3, ChannelLayout::default());
        assert!(neighborhood_max(&g, 16, 3).is_err());
        assert!(neighborhood_max(&g, 0, 2).is_err());
    }

    #[test]
    fn softmax_examples() {
        let l = ChannelLayout::default();
        let mut g = CellGrid::<f64>::zeros(1, 3, l);
        g.set(0, 1, 0, 2f64.ln());
        g.set(0, 2, 0, 30.0);
        for j in 1..4 {
            g.set(0, 2, j, -30.0);
        }
        let p = softmax_logits(&g);
        for j in 0..4 {
            assert!((p.get(0, 0, j) - 0.25).abs() < 1e-12);
        }
        let expected = [0.4, 0.2, 0.2, 0.2];
        for j in 0..4 {
            assert!((p.get(0, 1, j) - expected[j]).abs() < 1e-12);
        }
        assert!(p.get(0, 2, 0) >= 1.0 - 1e-9);
    }

    #[test]
    fn bool_grid_ops() {
        let a = BoolGrid::from_fn(3, 3, |r, _| r == 0);
        let b = BoolGrid::from_fn(3, 3, |_, c| c == 0);
        assert_eq!(a.and(&b).count(), 1);
        assert_eq!(a.or(&b).count(), 5);
        assert_eq!(a.not().count(), 6);
        assert!(a.and(&b).is_subset_of(&a));
        assert_eq!(a.iter_set().collect::<Vec<_>>(), vec![(0, 0), (0, 1), (0, 2)]);
    }
}
