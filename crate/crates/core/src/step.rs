//! One synchronous automaton update and multi-step rollouts.
//!
//! A step draws the stochastic mask, derives the alive mask from the current
//! state, applies `x ← x + β·δ_update` where all three masks allow it, then
//! forces the class logits of pre-explored cells by `−C·δ_pre` and clamps.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::grid::{softmax_into, window_max, BoolGrid, CellGrid, ChannelLayout, Field, STATE_LIMIT};
use crate::model::ModelParams;
use crate::perception::{perceive_cell, FilterBank};
use crate::scalar::Scalar;

/// How the induction increment `δ_pre` is computed from the target `p` and prediction `h`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InductionMode {
    /// `δ_pre[j] = −p_j · (1 − h_j)`, the diagonal-only derivative.
    #[default]
    PaperFormula,
    /// `δ_pre[j] = h_j − p_j`, the full gradient of `KL(p‖h)` with respect to logit `j`.
    ExactKlGradient,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepConfig {
    /// Step size applied to the network increment.
    pub beta: f64,
    /// Induction concentration `C`.
    pub concentration: f64,
    pub stochastic_p: f64,
    pub alive_threshold: f64,
    pub alive_window: usize,
    pub induction_mode: InductionMode,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            concentration: 0.5,
            stochastic_p: 0.5,
            alive_threshold: 0.1,
            alive_window: 3,
            induction_mode: InductionMode::PaperFormula,
        }
    }
}

impl StepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(contract(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.concentration.is_finite() && self.concentration >= 0.0) {
            return Err(contract(format!(
                "concentration must be non-negative, got {}",
                self.concentration
            )));
        }
        if !(self.stochastic_p > 0.0 && self.stochastic_p <= 1.0) {
            return Err(contract(format!(
                "stochastic_p must be in (0, 1], got {}",
                self.stochastic_p
            )));
        }
        if !(self.alive_threshold > 0.0 && self.alive_threshold < 1.0) {
            return Err(contract(format!(
                "alive_threshold must be in (0, 1), got {}",
                self.alive_threshold
            )));
        }
        if self.alive_window % 2 == 0 {
            return Err(contract(format!(
                "alive_window must be odd, got {}",
                self.alive_window
            )));
        }
        Ok(())
    }
}

/// Known class distributions over a pre-explored region.
#[derive(Clone, Debug, PartialEq)]
pub struct InductionField<S> {
    region: BoolGrid,
    targets: Field<S>,
}

impl<S: Scalar> InductionField<S> {
    /// `targets` is `H × W × k`; entries off the region are ignored and zeroed.
    pub fn new(region: BoolGrid, mut targets: Field<S>) -> Result<Self> {
        if targets.height() != region.height() || targets.width() != region.width() {
            return Err(contract("induction targets and region differ in shape"));
        }
        for r in 0..region.height() {
            for c in 0..region.width() {
                let t = targets.at_mut(r, c);
                if !region.get(r, c) {
                    t.fill(S::zero());
                    continue;
                }
                let total: f64 = t.iter().map(|p| p.as_f64()).sum();
                if t.iter().any(|p| !(p.as_f64() >= 0.0)) || (total - 1.0).abs() > 1e-6 {
                    return Err(contract(format!(
                        "induction target at ({r},{c}) is not a distribution"
                    )));
                }
            }
        }
        Ok(Self { region, targets })
    }

    /// No pre-explored cells.
    pub fn empty(height: usize, width: usize, k: usize) -> Self {
        Self {
            region: BoolGrid::filled(height, width, false),
            targets: Field::zeros(height, width, k),
        }
    }

    /// One-hot targets on `region` from a per-cell class lookup.
    pub fn one_hot(region: BoolGrid, k: usize, class_at: impl Fn(usize, usize) -> usize) -> Result<Self> {
        let mut targets = Field::zeros(region.height(), region.width(), k);
        for (r, c) in region.iter_set() {
            let j = class_at(r, c);
            if j >= k {
                return Err(contract(format!("class {j} out of range for {k} classes")));
            }
            targets.at_mut(r, c)[j] = S::one();
        }
        Ok(Self { region, targets })
    }

    pub fn region(&self) -> &BoolGrid {
        &self.region
    }

    pub fn targets(&self) -> &Field<S> {
        &self.targets
    }

    pub fn is_empty(&self) -> bool {
        self.region.count() == 0
    }

    /// Installs a one-hot target for `class` on every cell of `mask`, overwriting existing ones.
    pub fn paint(&mut self, mask: &BoolGrid, class: usize) -> Result<()> {
        if class >= self.targets.depth() {
            return Err(contract(format!("class {class} out of range")));
        }
        for (r, c) in mask.iter_set() {
            self.region.set(r, c, true);
            let t = self.targets.at_mut(r, c);
            t.fill(S::zero());
            t[class] = S::one();
        }
        Ok(())
    }

    /// Removes the targets on every cell of `mask`.
    pub fn clear(&mut self, mask: &BoolGrid) {
        for (r, c) in mask.iter_set() {
            self.region.set(r, c, false);
            self.targets.at_mut(r, c).fill(S::zero());
        }
    }
}

/// Induction increments recorded for replay, defined on `region`.
#[derive(Clone, Debug, PartialEq)]
pub struct Forcing<S> {
    pub region: BoolGrid,
    pub delta: Field<S>,
}

/// The random and state-dependent inputs of one step, sufficient to replay it exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord<S> {
    /// Alive ∧ stochastic ∧ legality.
    pub update_mask: BoolGrid,
    pub forcing: Option<Forcing<S>>,
}

/// Cells whose window (self included) holds an α above the threshold.
///
/// α outside `legality` reads as zero.
pub fn alive_mask<S: Scalar>(grid: &CellGrid<S>, cfg: &StepConfig, legality: &BoolGrid) -> BoolGrid {
    let (h, w) = (grid.height(), grid.width());
    let a = grid.layout().alpha_index();
    let threshold = S::of(cfg.alive_threshold);
    BoolGrid::from_fn(h, w, |r, c| {
        let (m, _) = window_max(h, w, cfg.alive_window, r, c, |rr, cc| {
            if legality.get(rr, cc) {
                grid.get(rr, cc, a)
            } else {
                S::zero()
            }
        });
        m > threshold
    })
}

/// Independent Bernoulli(`p`) draws, one `f64` per cell in row-major order.
pub fn stochastic_mask<R: Rng + ?Sized>(rng: &mut R, height: usize, width: usize, p: f64) -> BoolGrid {
    BoolGrid::from_fn(height, width, |_, _| rng.random::<f64>() < p)
}

/// `δ_pre` on the region cells (zero elsewhere), shaped `H × W × k`.
pub fn induction_delta<S: Scalar>(
    grid: &CellGrid<S>,
    field: &InductionField<S>,
    cfg: &StepConfig,
) -> Result<Field<S>> {
    if !field.region.matches(grid) {
        return Err(contract("induction region does not match grid"));
    }
    let k = grid.layout().k();
    if field.targets.depth() != k {
        return Err(contract(format!(
            "induction targets have {} classes, grid has {k}",
            field.targets.depth()
        )));
    }
    let mut out = Field::zeros(grid.height(), grid.width(), k);
    let mut h = vec![0.0; k];
    for (r, c) in field.region.iter_set() {
        let p = field.targets.at(r, c);
        let total: f64 = p.iter().map(|x| x.as_f64()).sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(contract(format!("induction target at ({r},{c}) is off the simplex")));
        }
        softmax_into(grid.logits(r, c), &mut h);
        write_induction(cfg.induction_mode, p, &h, out.at_mut(r, c));
    }
    Ok(out)
}

#[inline]
fn write_induction<S: Scalar>(mode: InductionMode, p: &[S], h: &[f64], out: &mut [S]) {
    for j in 0..p.len() {
        let pj = p[j].as_f64();
        out[j] = S::of(match mode {
            InductionMode::PaperFormula => -pj * (1.0 - h[j]),
            InductionMode::ExactKlGradient => h[j] - pj,
        });
    }
}

/// Where the seed cell of a fresh configuration goes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeedPosition {
    At(usize, usize),
    Random,
}

/// All-zero grid except one cell whose α and hidden channels are 1.
pub fn seed_configuration<S: Scalar, R: Rng + ?Sized>(
    height: usize,
    width: usize,
    layout: ChannelLayout,
    position: SeedPosition,
    rng: &mut R,
) -> Result<CellGrid<S>> {
    let (r, c) = match position {
        SeedPosition::At(r, c) => {
            if r >= height || c >= width {
                return Err(contract(format!(
                    "seed position ({r},{c}) outside {height}x{width} grid"
                )));
            }
            (r, c)
        }
        SeedPosition::Random => (rng.random_range(0..height), rng.random_range(0..width)),
    };
    let mut grid = CellGrid::zeros(height, width, layout);
    let cell = grid.cell_mut(r, c);
    cell[layout.alpha_index()] = S::one();
    for ch in layout.hidden_range() {
        cell[ch] = S::one();
    }
    Ok(grid)
}

/// Reusable stepping engine: the filter bank plus per-cell scratch buffers.
#[derive(Clone, Debug)]
pub struct Stepper<S> {
    bank: FilterBank<S>,
    perception: Vec<S>,
    hidden: Vec<S>,
    delta: Vec<S>,
}

impl<S: Scalar> Default for Stepper<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Stepper<S> {
    pub fn new() -> Self {
        Self {
            bank: FilterBank::standard(),
            perception: Vec::new(),
            hidden: Vec::new(),
            delta: Vec::new(),
        }
    }

    pub fn bank(&self) -> &FilterBank<S> {
        &self.bank
    }

    fn check(
        grid: &CellGrid<S>,
        params: &ModelParams<S>,
        legality: &BoolGrid,
        field: Option<&InductionField<S>>,
    ) -> Result<()> {
        if params.layout() != grid.layout() {
            return Err(contract("parameter layout does not match grid layout"));
        }
        if !legality.matches(grid) {
            return Err(contract("legality mask does not match grid"));
        }
        if let Some(f) = field {
            if !f.region.matches(grid) || f.targets.depth() != grid.layout().k() {
                return Err(contract("induction field does not match grid"));
            }
        }
        Ok(())
    }

    /// Draws the masks and forcing for one step from the current state.
    pub fn prepare<R: Rng + ?Sized>(
        &self,
        grid: &CellGrid<S>,
        cfg: &StepConfig,
        legality: &BoolGrid,
        field: Option<&InductionField<S>>,
        rng: &mut R,
    ) -> Result<StepRecord<S>> {
        let stochastic = stochastic_mask(rng, grid.height(), grid.width(), cfg.stochastic_p);
        let update_mask = alive_mask(grid, cfg, legality).and(&stochastic).and(legality);
        let forcing = match field {
            Some(f) if !f.is_empty() => {
                let region = f.region.and(legality);
                let mut delta = Field::zeros(grid.height(), grid.width(), grid.layout().k());
                let mut h = vec![0.0; grid.layout().k()];
                for (r, c) in region.iter_set() {
                    softmax_into(grid.logits(r, c), &mut h);
                    write_induction(cfg.induction_mode, f.targets.at(r, c), &h, delta.at_mut(r, c));
                }
                Some(Forcing { region, delta })
            }
            _ => None,
        };
        Ok(StepRecord {
            update_mask,
            forcing,
        })
    }

    /// Applies one step with fixed masks and forcing. Pure in its inputs.
    pub fn apply(
        &mut self,
        grid: &CellGrid<S>,
        params: &ModelParams<S>,
        cfg: &StepConfig,
        legality: &BoolGrid,
        record: &StepRecord<S>,
    ) -> CellGrid<S> {
        let layout = grid.layout();
        let (n, k) = (layout.n(), layout.k());
        self.perception.resize(params.perception_dim(), S::zero());
        self.hidden.resize(params.hidden(), S::zero());
        self.delta.resize(n, S::zero());
        let beta = S::of(cfg.beta);
        let limit = S::of(STATE_LIMIT);
        let mut out = grid.clone();
        for (r, c) in record.update_mask.iter_set() {
            perceive_cell(grid, &self.bank, r, c, &mut self.perception);
            params.forward_cell(&self.perception, &mut self.hidden, &mut self.delta);
            for (x, d) in out.cell_mut(r, c).iter_mut().zip(&self.delta) {
                *x += beta * *d;
            }
        }
        if let Some(forcing) = &record.forcing {
            let conc = S::of(cfg.concentration);
            for (r, c) in forcing.region.iter_set() {
                let d = forcing.delta.at(r, c);
                for (x, dj) in out.cell_mut(r, c)[..k].iter_mut().zip(d) {
                    *x -= conc * *dj;
                }
            }
        }
        let cells = out.values_mut().chunks_exact_mut(n);
        for (cell, &legal) in cells.zip(legality.bits()) {
            if legal {
                for x in cell {
                    *x = x.max(-limit).min(limit);
                }
            }
        }
        out
    }

    /// One full step: draw masks from `rng`, then apply.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        grid: &CellGrid<S>,
        params: &ModelParams<S>,
        cfg: &StepConfig,
        legality: &BoolGrid,
        field: Option<&InductionField<S>>,
        rng: &mut R,
    ) -> Result<CellGrid<S>> {
        Self::check(grid, params, legality, field)?;
        let record = self.prepare(grid, cfg, legality, field, rng)?;
        Ok(self.apply(grid, params, cfg, legality, &record))
    }

    /// Like [`Stepper::step`] but also returns the record needed to replay or differentiate it.
    pub fn step_recorded<R: Rng + ?Sized>(
        &mut self,
        grid: &CellGrid<S>,
        params: &ModelParams<S>,
        cfg: &StepConfig,
        legality: &BoolGrid,
        field: Option<&InductionField<S>>,
        rng: &mut R,
    ) -> Result<(CellGrid<S>, StepRecord<S>)> {
        Self::check(grid, params, legality, field)?;
        let record = self.prepare(grid, cfg, legality, field, rng)?;
        let next = self.apply(grid, params, cfg, legality, &record);
        Ok((next, record))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn run<R: Rng + ?Sized>(
        &mut self,
        grid: &CellGrid<S>,
        params: &ModelParams<S>,
        cfg: &StepConfig,
        legality: &BoolGrid,
        field: Option<&InductionField<S>>,
        rng: &mut R,
        steps: usize,
        snapshot_stride: Option<usize>,
    ) -> Result<Trajectory<S>> {
        if steps == 0 {
            return Err(contract("a rollout needs at least one step"));
        }
        if snapshot_stride == Some(0) {
            return Err(contract("snapshot stride must be at least 1"));
        }
        cfg.validate()?;
        Self::check(grid, params, legality, field)?;
        let mut snapshots = Vec::new();
        let mut state = grid.clone();
        for t in 0..steps {
            if let Some(stride) = snapshot_stride {
                if t % stride == 0 {
                    snapshots.push((t, state.clone()));
                }
            }
            let record = self.prepare(&state, cfg, legality, field, rng)?;
            state = self.apply(&state, params, cfg, legality, &record);
        }
        if let Some(stride) = snapshot_stride {
            if steps % stride == 0 {
                snapshots.push((steps, state.clone()));
            }
        }
        Ok(Trajectory {
            steps,
            snapshots,
            final_state: state,
        })
    }
}

/// Result of a multi-step rollout.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<S> {
    pub steps: usize,
    /// `(steps completed, state)` at every multiple of the stride up to and including `steps`.
    pub snapshots: Vec<(usize, CellGrid<S>)>,
    pub final_state: CellGrid<S>,
}

/// One step with a fresh [`Stepper`].
pub fn step<S: Scalar, R: Rng + ?Sized>(
    grid: &CellGrid<S>,
    params: &ModelParams<S>,
    cfg: &StepConfig,
    legality: &BoolGrid,
    field: Option<&InductionField<S>>,
    rng: &mut R,
) -> Result<CellGrid<S>> {
    Stepper::new().step(grid, params, cfg, legality, field, rng)
}

/// `steps` applications of [`step`], optionally keeping every `snapshot_stride`-th state.
#[allow(clippy::too_many_arguments)]
pub fn run<S: Scalar, R: Rng + ?Sized>(
    grid: &CellGrid<S>,
    params: &ModelParams<S>,
    cfg: &StepConfig,
    legality: &BoolGrid,
    field: Option<&InductionField<S>>,
    rng: &mut R,
    steps: usize,
    snapshot_stride: Option<usize>,
) -> Result<Trajectory<S>> {
    Stepper::new().run(grid, params, cfg, legality, field, rng, steps, snapshot_stride)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layout() -> ChannelLayout {
        ChannelLayout::default()
    }

    fn one_hot_disc(h: usize, w: usize, class: usize, cells: &[(usize, usize)]) -> InductionField<f64> {
        let region = BoolGrid::from_fn(h, w, |r, c| cells.contains(&(r, c)));
        InductionField::one_hot(region, 4, |_, _| class).unwrap()
    }

    fn kl(p: &[f64], h: &[f64]) -> f64 {
        p.iter()
            .zip(h)
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, h)| p * (p / h).ln())
            .sum()
    }

    #[test]
    fn config_validation() {
        assert!(StepConfig::default().validate().is_ok());
        let bad = [
            StepConfig { stochastic_p: 0.0, ..Default::default() },
            StepConfig { stochastic_p: 1.5, ..Default::default() },
            StepConfig { alive_threshold: 1.0, ..Default::default() },
            StepConfig { alive_window: 4, ..Default::default() },
            StepConfig { beta: 0.0, ..Default::default() },
            StepConfig { concentration: -1.0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn alive_mask_examples() {
        let cfg = StepConfig::default();
        let legal = BoolGrid::filled(9, 9, true);
        let dead = CellGrid::<f32>::zeros(9, 9, layout());
        assert_eq!(alive_mask(&dead, &cfg, &legal).count(), 0);

        let mut one = dead.clone();
        one.set(4, 4, 4, 1.0);
        let m = alive_mask(&one, &cfg, &legal);
        for r in 0..9 {
            for c in 0..9 {
                assert_eq!(m.get(r, c), (3..=5).contains(&r) && (3..=5).contains(&c));
            }
        }

        let edge = CellGrid::from_fn(9, 9, layout(), |_, _, ch| if ch == 4 { 0.1f32 } else { 0.0 });
        assert_eq!(alive_mask(&edge, &cfg, &legal).count(), 0);
    }

    #[test]
    fn alive_mask_ignores_illegal_alpha() {
        let cfg = StepConfig::default();
        let mut g = CellGrid::<f32>::zeros(5, 5, layout());
        g.set(2, 2, 4, 1.0);
        let legal = BoolGrid::from_fn(5, 5, |r, c| (r, c) != (2, 2));
        assert_eq!(alive_mask(&g, &cfg, &legal).count(), 0);
    }

    #[test]
    fn stochastic_mask_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        assert_eq!(stochastic_mask(&mut rng, 7, 9, 1.0).count(), 63);
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        let ma = stochastic_mask(&mut a, 80, 80, 0.5);
        assert_eq!(ma, stochastic_mask(&mut b, 80, 80, 0.5));
        let mean = ma.count() as f64 / 6400.0;
        assert!((mean - 0.5).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn induction_delta_examples() {
        let cfg = StepConfig::default();
        let g = CellGrid::<f64>::zeros(3, 3, layout());
        let f = one_hot_disc(3, 3, 0, &[(1, 1)]);
        let d = induction_delta(&g, &f, &cfg).unwrap();
        assert_eq!(d.at(1, 1), &[-0.75, 0.0, 0.0, 0.0]);
        assert!(d.at(0, 0).iter().all(|&x| x == 0.0));

        let region = BoolGrid::from_fn(3, 3, |r, c| (r, c) == (0, 2));
        let mut targets = Field::zeros(3, 3, 4);
        targets.at_mut(0, 2)[..2].copy_from_slice(&[0.5, 0.5]);
        let f = InductionField::new(region, targets).unwrap();
        let d = induction_delta(&g, &f, &cfg).unwrap();
        assert_eq!(d.at(0, 2), &[-0.375, -0.375, 0.0, 0.0]);
    }

    #[test]
    fn exact_mode_vanishes_at_target() {
        let cfg = StepConfig {
            induction_mode: InductionMode::ExactKlGradient,
            ..Default::default()
        };
        let mut g = CellGrid::<f64>::zeros(1, 1, layout());
        let logits = [0.3, -1.2, 2.0, 0.1];
        g.cell_mut(0, 0)[..4].copy_from_slice(&logits);
        let mut h = vec![0.0; 4];
        softmax_into(&logits, &mut h);
        let region = BoolGrid::filled(1, 1, true);
        let targets = Field::from_values(1, 1, 4, h.clone()).unwrap();
        let f = InductionField::new(region, targets).unwrap();
        let d = induction_delta(&g, &f, &cfg).unwrap();
        assert!(d.values().iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn off_simplex_targets_are_rejected() {
        let region = BoolGrid::filled(1, 1, true);
        let targets = Field::from_values(1, 1, 4, vec![0.5, 0.2, 0.0, 0.0]).unwrap();
        assert!(InductionField::<f64>::new(region.clone(), targets).is_err());
        let negative = Field::from_values(1, 1, 4, vec![1.5, -0.5, 0.0, 0.0]).unwrap();
        assert!(InductionField::<f64>::new(region, negative).is_err());
    }

    #[test]
    fn seed_configuration_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g: CellGrid<f32> = seed_configuration(80, 80, layout(), SeedPosition::At(40, 40), &mut rng).unwrap();
        let nonzero: Vec<_> = g.values().iter().filter(|&&v| v != 0.0).collect();
        assert_eq!(nonzero.len(), 12);
        assert!(nonzero.iter().all(|&&v| v == 1.0));
        assert_eq!(g.values().iter().sum::<f32>(), 12.0);
        assert!(g.logits(40, 40).iter().all(|&v| v == 0.0));

        let m = alive_mask(&g, &StepConfig::default(), &BoolGrid::filled(80, 80, true));
        assert_eq!(m.count(), 9);
        assert!(m.get(39, 39) && m.get(41, 41) && !m.get(42, 40));

        assert!(seed_configuration::<f32, _>(4, 4, layout(), SeedPosition::At(4, 0), &mut rng).is_err());
        let random: CellGrid<f32> = seed_configuration(10, 10, layout(), SeedPosition::Random, &mut rng).unwrap();
        assert_eq!(random.values().iter().sum::<f32>(), 12.0);
    }

    #[test]
    fn zero_params_without_induction_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = CellGrid::from_fn(10, 10, layout(), |r, c, ch| ((r + 2 * c + ch) % 5) as f32 * 0.3);
        let params = ModelParams::init(layout(), 16, &mut rng);
        let legal = BoolGrid::filled(10, 10, true);
        let cfg = StepConfig::default();
        let next = step(&g, &params, &cfg, &legal, None, &mut rng).unwrap();
        assert_eq!(next, g);
        let traj = run(&g, &params, &cfg, &legal, None, &mut rng, 128, None).unwrap();
        assert_eq!(traj.final_state, g);
    }

    #[test]
    fn induction_increments_target_logit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = CellGrid::<f64>::zeros(5, 5, layout());
        let params = ModelParams::zeros(layout(), 8);
        let legal = BoolGrid::filled(5, 5, true);
        let cfg = StepConfig {
            concentration: 1.0,
            ..Default::default()
        };
        let field = one_hot_disc(5, 5, 0, &[(2, 2), (2, 3)]);
        let next = step(&g, &params, &cfg, &legal, Some(&field), &mut rng).unwrap();
        for (r, c) in [(2, 2), (2, 3)] {
            assert_eq!(next.logits(r, c), &[0.75, 0.0, 0.0, 0.0]);
            assert!(next.cell(r, c)[4..].iter().all(|&v| v == 0.0));
        }
        let changed = (0..5)
            .flat_map(|r| (0..5).map(move |c| (r, c)))
            .filter(|&(r, c)| next.cell(r, c) != g.cell(r, c))
            .count();
        assert_eq!(changed, 2);
    }

    #[test]
    fn masks_irrelevant_with_zero_params() {
        let g = CellGrid::from_fn(6, 6, layout(), |r, c, ch| ((r * c + ch) % 3) as f32);
        let params = ModelParams::zeros(layout(), 8);
        let legal = BoolGrid::filled(6, 6, true);
        let cfg = StepConfig {
            stochastic_p: 1.0,
            ..Default::default()
        };
        let a = step(&g, &params, &cfg, &legal, None, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = step(&g, &params, &cfg, &legal, None, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn one_step_run_equals_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut params = ModelParams::<f32>::init(layout(), 16, &mut rng);
        for w in params.layer_mut(crate::model::Layer::W2) {
            *w = rng.random_range(-0.1..0.1);
        }
        let g = seed_configuration(12, 12, layout(), SeedPosition::At(6, 6), &mut rng).unwrap();
        let legal = BoolGrid::filled(12, 12, true);
        let cfg = StepConfig::default();
        let a = step(&g, &params, &cfg, &legal, None, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let t = run(&g, &params, &cfg, &legal, None, &mut ChaCha8Rng::seed_from_u64(4), 1, None).unwrap();
        assert_eq!(a, t.final_state);
        assert_ne!(a, g);
    }

    #[test]
    fn run_snapshots_follow_stride() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = CellGrid::<f32>::zeros(4, 4, layout());
        let params = ModelParams::zeros(layout(), 4);
        let legal = BoolGrid::filled(4, 4, true);
        let t = run(&g, &params, &StepConfig::default(), &legal, None, &mut rng, 128, Some(16)).unwrap();
        let steps: Vec<_> = t.snapshots.iter().map(|(s, _)| *s).collect();
        assert_eq!(steps, (0..=128).step_by(16).collect::<Vec<_>>());
        assert!(run(&g, &params, &StepConfig::default(), &legal, None, &mut rng, 0, None).is_err());
    }

    #[test]
    fn shape_mismatches_are_contract_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = CellGrid::<f32>::zeros(4, 4, layout());
        let params = ModelParams::zeros(layout(), 4);
        let cfg = StepConfig::default();
        assert!(step(&g, &params, &cfg, &BoolGrid::filled(4, 5, true), None, &mut rng).is_err());
        let other = ModelParams::zeros(ChannelLayout::new(4, 8).unwrap(), 4);
        assert!(step(&g, &other, &cfg, &BoolGrid::filled(4, 4, true), None, &mut rng).is_err());
    }

    /// Scalar recurrence for one region cell with a one-hot target: only the target logit moves.
    fn one_hot_recurrence(c: f64, steps: usize) -> Vec<f64> {
        let mut x = 0.0f64;
        let mut out = vec![x];
        for _ in 0..steps {
            let h = x.exp() / (x.exp() + 3.0);
            x += c * (1.0 - h);
            out.push(x);
        }
        out
    }

    #[test]
    fn paper_formula_mode_matches_scalar_recurrence() {
        let oracle = one_hot_recurrence(0.5, 128);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut g = CellGrid::<f64>::zeros(3, 3, layout());
        let params = ModelParams::zeros(layout(), 4);
        let legal = BoolGrid::filled(3, 3, true);
        let field = one_hot_disc(3, 3, 1, &[(1, 1)]);
        let cfg = StepConfig::default();
        let mut stepper = Stepper::new();
        for (t, expected) in oracle.iter().enumerate().skip(1) {
            g = stepper.step(&g, &params, &cfg, &legal, Some(&field), &mut rng).unwrap();
            assert!((g.get(1, 1, 1) - expected).abs() < 1e-12, "step {t}");
        }
        // Frozen oracle value: target mass after 128 forced steps.
        let mut h = vec![0.0; 4];
        softmax_into(g.logits(1, 1), &mut h);
        assert!((h[1] - 0.983_635_650_120_211_7).abs() < 1e-9, "{}", h[1]);
    }

    #[test]
    fn exact_induction_never_increases_kl() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cfg = StepConfig {
            induction_mode: InductionMode::ExactKlGradient,
            ..Default::default()
        };
        let params = ModelParams::zeros(layout(), 4);
        let legal = BoolGrid::filled(1, 1, true);
        let mut stepper = Stepper::new();
        for _ in 0..20 {
            let raw: Vec<f64> = (0..4).map(|_| rng.random::<f64>()).collect();
            let total: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|x| x / total).collect();
            let field = InductionField::new(
                BoolGrid::filled(1, 1, true),
                Field::from_values(1, 1, 4, p.clone()).unwrap(),
            )
            .unwrap();
            let mut g = CellGrid::<f64>::zeros(1, 1, layout());
            let mut h = vec![0.0; 4];
            softmax_into(g.logits(0, 0), &mut h);
            let mut prev = kl(&p, &h);
            for _ in 0..64 {
                g = stepper.step(&g, &params, &cfg, &legal, Some(&field), &mut rng).unwrap();
                softmax_into(g.logits(0, 0), &mut h);
                let now = kl(&p, &h);
                assert!(now <= prev + 1e-15);
                prev = now;
            }
        }
    }

    #[test]
    fn illegal_cells_never_change() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut params = ModelParams::<f32>::init(layout(), 16, &mut rng);
        for w in params.layer_mut(crate::model::Layer::W2) {
            *w = rng.random_range(-0.5..0.5);
        }
        let g = CellGrid::from_fn(10, 10, layout(), |r, c, ch| ((r + c + ch) % 4) as f32 * 0.4);
        let legal = BoolGrid::from_fn(10, 10, |r, c| (r + c) % 3 != 0);
        let field = InductionField::one_hot(BoolGrid::filled(10, 10, true), 4, |r, _| r % 4).unwrap();
        let t = run(&g, &params, &StepConfig::default(), &legal, Some(&field), &mut rng, 20, None).unwrap();
        for r in 0..10 {
            for c in 0..10 {
                if !legal.get(r, c) {
                    assert_eq!(t.final_state.cell(r, c), g.cell(r, c));
                }
            }
        }
        assert!(t.final_state.all_finite());
    }
}
