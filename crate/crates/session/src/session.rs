//! One live automaton: state, forcing, playback and frame bookkeeping.
//!
//! A [`Session`] is a plain synchronous value; the server serializes commands into it.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use geonca::data::Disc;
use geonca::eval::grow_start;
use geonca::trainer::TrainTarget;
use geonca::{
    seed_configuration, BoolGrid, CellGrid, InductionField, ModelParams, SeedPosition, StepConfig, Stepper,
};

use crate::frame::{pack_cells, Frame, MAX_CLASSES};
use crate::protocol::{Command, ConfigPatch, ErrorCode};

pub const DEFAULT_RATE_CAP: f64 = 30.0;
/// Largest `count` a single `step` command may ask for.
pub const MAX_STEP_COUNT: u64 = 100_000;
/// Largest map side a frame can describe.
pub const MAX_SIDE: usize = u16::MAX as usize;

#[derive(Clone, Debug, Error, PartialEq)]
#[error("{message}")]
pub struct CommandError {
    pub code: ErrorCode,
    pub message: String,
}

impl CommandError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

fn invalid(message: impl Into<String>) -> CommandError {
    CommandError::new(ErrorCode::InvalidValue, message)
}

/// What `reset` returns to.
#[derive(Clone, Debug)]
pub enum Origin {
    Blank { seed: SeedPosition },
    Grown { state: CellGrid<f32>, field: InductionField<f32> },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Playback {
    Paused,
    Running { rate: f64 },
}

/// Result of applying one command.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Outcome {
    pub frames: Vec<Frame>,
    /// Effective play rate, set by `play`.
    pub rate: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Session {
    id: u64,
    params: Arc<ModelParams<f32>>,
    legality: BoolGrid,
    origin: Origin,
    grid: CellGrid<f32>,
    field: InductionField<f32>,
    cfg: StepConfig,
    rng: ChaCha8Rng,
    stepper: Stepper<f32>,
    step: u64,
    seq: u64,
    stride: u64,
    playback: Playback,
    rate_cap: f64,
}

impl Session {
    fn assemble(
        id: u64,
        params: Arc<ModelParams<f32>>,
        legality: BoolGrid,
        origin: Origin,
        grid: CellGrid<f32>,
        field: InductionField<f32>,
        rng: ChaCha8Rng,
    ) -> Result<Self, CommandError> {
        let (h, w) = (legality.height(), legality.width());
        if h == 0 || w == 0 || h > MAX_SIDE || w > MAX_SIDE {
            return Err(invalid(format!("map size {h}x{w} is not supported")));
        }
        if params.layout().k() > MAX_CLASSES {
            return Err(CommandError::new(ErrorCode::BadCheckpoint, "too many classes for the frame format"));
        }
        Ok(Self {
            id,
            params,
            legality,
            origin,
            grid,
            field,
            cfg: StepConfig::default(),
            rng,
            stepper: Stepper::new(),
            step: 0,
            seq: 0,
            stride: 1,
            playback: Playback::Paused,
            rate_cap: DEFAULT_RATE_CAP,
        })
    }

    /// Fully legal `height × width` map, dead except one seed cell.
    pub fn blank(
        id: u64,
        params: Arc<ModelParams<f32>>,
        height: usize,
        width: usize,
        seed: Option<[usize; 2]>,
        rng_seed: u64,
    ) -> Result<Self, CommandError> {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let position = match seed {
            Some([r, c]) if r >= height || c >= width => {
                return Err(CommandError::new(ErrorCode::OutOfBounds, format!("seed ({r},{c}) is outside the map")))
            }
            Some([r, c]) => SeedPosition::At(r, c),
            None => SeedPosition::Random,
        };
        if height == 0 || width == 0 || height > MAX_SIDE || width > MAX_SIDE {
            return Err(invalid(format!("map size {height}x{width} is not supported")));
        }
        let layout = params.layout();
        let grid = seed_configuration(height, width, layout, position, &mut rng).map_err(|e| invalid(e.to_string()))?;
        let field = InductionField::empty(height, width, layout.k());
        Self::assemble(
            id,
            params,
            BoolGrid::filled(height, width, true),
            Origin::Blank { seed: position },
            grid,
            field,
            rng,
        )
    }

    /// Grow-mode start on `target` from a random pre-explored disc.
    pub fn grown(
        id: u64,
        params: Arc<ModelParams<f32>>,
        target: &TrainTarget<f32>,
        diameter_ratio: f64,
        rng_seed: u64,
    ) -> Result<Self, CommandError> {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let (h, w) = (target.height(), target.width());
        let diameter = diameter_ratio * h.min(w) as f64;
        let disc = Disc::sample_inside(&mut rng, h, w, diameter).map_err(|e| invalid(e.to_string()))?;
        let (state, field) = grow_start(target, &disc, params.layout()).map_err(|e| invalid(e.to_string()))?;
        Self::assemble(
            id,
            params,
            target.legality().clone(),
            Origin::Grown {
                state: state.clone(),
                field: field.clone(),
            },
            state,
            field,
            rng,
        )
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn height(&self) -> usize {
        self.grid.height()
    }

    pub fn width(&self) -> usize {
        self.grid.width()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn grid(&self) -> &CellGrid<f32> {
        &self.grid
    }

    pub fn legality(&self) -> &BoolGrid {
        &self.legality
    }

    pub fn field(&self) -> &InductionField<f32> {
        &self.field
    }

    pub fn config(&self) -> &StepConfig {
        &self.cfg
    }

    pub fn playback(&self) -> Playback {
        self.playback
    }

    pub fn rate_cap(&self) -> f64 {
        self.rate_cap
    }

    pub fn set_rate_cap(&mut self, cap: f64) {
        self.rate_cap = cap;
        if let Playback::Running { rate } = self.playback {
            self.playback = Playback::Running { rate: rate.min(cap) };
        }
    }

    /// Snapshot of the current state with the next sequence number.
    pub fn frame(&mut self) -> Frame {
        self.seq += 1;
        Frame {
            session: self.id,
            step: self.step,
            seq: self.seq,
            height: self.grid.height() as u16,
            width: self.grid.width() as u16,
            cells: pack_cells(&self.grid, &self.legality, self.cfg.alive_threshold),
        }
    }

    /// Advances `count` steps, emitting a frame whenever the step counter hits a stride multiple.
    /// The final state is always emitted.
    pub fn advance(&mut self, count: u64) -> Vec<Frame> {
        self.run(count, true)
    }

    /// One playback step; emits a frame only on stride multiples.
    pub fn tick(&mut self) -> Option<Frame> {
        self.run(1, false).pop()
    }

    fn run(&mut self, count: u64, emit_final: bool) -> Vec<Frame> {
        let mut frames = Vec::new();
        let field = self.field.clone();
        let field = (!field.is_empty()).then_some(&field);
        let mut emitted_last = false;
        for _ in 0..count {
            self.grid = self
                .stepper
                .step(&self.grid, &self.params, &self.cfg, &self.legality, field, &mut self.rng)
                .expect("session state is validated on every mutation");
            self.step += 1;
            emitted_last = self.step % self.stride == 0;
            if emitted_last {
                frames.push(self.frame());
            }
        }
        if emit_final && count > 0 && !emitted_last {
            frames.push(self.frame());
        }
        frames
    }

    fn check_center(&self, [r, c]: [usize; 2]) -> Result<(), CommandError> {
        if r >= self.height() || c >= self.width() {
            return Err(CommandError::new(
                ErrorCode::OutOfBounds,
                format!("({r},{c}) is outside the {}x{} map", self.height(), self.width()),
            ));
        }
        Ok(())
    }

    fn check_radius(radius: f64) -> Result<(), CommandError> {
        if !(radius.is_finite() && radius >= 0.0) {
            return Err(invalid(format!("radius must be finite and non-negative, got {radius}")));
        }
        Ok(())
    }

    /// Validates and applies one command. On error the session is unchanged.
    pub fn apply(&mut self, cmd: &Command) -> Result<Outcome, CommandError> {
        let mut out = Outcome::default();
        match cmd {
            Command::Reset { seed } => {
                self.reset(*seed)?;
                out.frames.push(self.frame());
            }
            Command::Step { count } => {
                if *count == 0 || *count > MAX_STEP_COUNT {
                    return Err(invalid(format!("step count must be in 1..={MAX_STEP_COUNT}")));
                }
                out.frames = self.advance(*count);
            }
            Command::Play { rate } => {
                if !(rate.is_finite() && *rate > 0.0) {
                    return Err(invalid("play rate must be positive"));
                }
                let rate = rate.min(self.rate_cap);
                self.playback = Playback::Running { rate };
                out.rate = Some(rate);
            }
            Command::Pause => self.playback = Playback::Paused,
            Command::BrushDamage { center, radius } => {
                self.check_center(*center)?;
                Self::check_radius(*radius)?;
                let disc = Disc::around_cell(center[0], center[1], *radius);
                let mask = disc.mask(self.height(), self.width()).and(&self.legality);
                self.grid.clear_where(&mask);
                out.frames.push(self.frame());
            }
            Command::BrushInduce {
                center,
                radius,
                class,
                concentration,
            } => {
                self.check_center(*center)?;
                Self::check_radius(*radius)?;
                let k = self.params.layout().k();
                if *class >= k {
                    return Err(invalid(format!("class {class} out of range for {k} classes")));
                }
                if !(concentration.is_finite() && *concentration >= 0.0) {
                    return Err(invalid("concentration must be finite and non-negative"));
                }
                if *radius == 0.0 {
                    self.field = InductionField::empty(self.height(), self.width(), k);
                } else {
                    let disc = Disc::around_cell(center[0], center[1], *radius);
                    let mask = disc.mask(self.height(), self.width()).and(&self.legality);
                    self.field.paint(&mask, *class).map_err(|e| invalid(e.to_string()))?;
                    self.cfg.concentration = *concentration;
                }
                out.frames.push(self.frame());
            }
            Command::SetConfig { config } => self.set_config(config)?,
            Command::Subscribe { stride } => {
                if *stride == 0 {
                    return Err(invalid("stride must be at least 1"));
                }
                self.stride = *stride;
            }
        }
        Ok(out)
    }

    fn reset(&mut self, seed: Option<[usize; 2]>) -> Result<(), CommandError> {
        let layout = self.params.layout();
        let (h, w) = (self.height(), self.width());
        match &self.origin {
            Origin::Blank { seed: original } => {
                let position = match seed {
                    Some(p) => {
                        self.check_center(p)?;
                        SeedPosition::At(p[0], p[1])
                    }
                    None => *original,
                };
                self.grid =
                    seed_configuration(h, w, layout, position, &mut self.rng).map_err(|e| invalid(e.to_string()))?;
                self.field = InductionField::empty(h, w, layout.k());
            }
            Origin::Grown { state, field } => {
                if seed.is_some() {
                    return Err(invalid("seed positions apply to blank maps only"));
                }
                self.grid = state.clone();
                self.field = field.clone();
            }
        }
        self.step = 0;
        Ok(())
    }

    fn set_config(&mut self, patch: &ConfigPatch) -> Result<(), CommandError> {
        let mut cfg = self.cfg.clone();
        if let Some(v) = patch.beta {
            cfg.beta = v;
        }
        if let Some(v) = patch.concentration {
            cfg.concentration = v;
        }
        if let Some(v) = patch.stochastic_p {
            cfg.stochastic_p = v;
        }
        if let Some(v) = patch.alive_threshold {
            cfg.alive_threshold = v;
        }
        if let Some(v) = patch.alive_window {
            cfg.alive_window = v;
        }
        if let Some(v) = patch.induction_mode {
            cfg.induction_mode = v;
        }
        cfg.validate().map_err(|e| invalid(e.to_string()))?;
        self.cfg = cfg;
        Ok(())
    }
}
