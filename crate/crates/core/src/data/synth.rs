//! Procedural multi-location traffic datasets.
//!
//! Each location gets a fixed road skeleton: two-cell-wide axis-aligned arterials
//! crossed by one-cell-wide connectors. Each sample draws a time of day and assigns
//! congestion per road segment from a two-peak diurnal curve, a daily offset, a
//! per-segment bias and a smooth spatial noise field, then quantizes it to 4 classes.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::legend::ClassLegend;
use crate::data::manifest::{
    sample_file, Dataset, DatasetManifest, GeneratorInfo, LocationEntry, SampleEntry, Split, MANIFEST_SCHEMA,
};
use crate::data::sample::{ClassGrid, MapSample, Provenance};
use crate::error::{contract, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Peak {
    pub hour: f64,
    pub width: f64,
    pub height: f64,
}

/// Statistical knobs of the generator; recorded in the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthKnobs {
    pub hour_range: [f64; 2],
    pub base_level: f64,
    pub morning: Peak,
    pub evening: Peak,
    /// Half-width of the uniform per-sample offset added everywhere.
    pub day_offset: f64,
    pub arterial_bias: [f64; 2],
    pub connector_bias: [f64; 2],
    /// Half-width of the uniform per-sample, per-segment jitter.
    pub segment_jitter: f64,
    pub noise_amplitude: f64,
    pub noise_waves: usize,
    pub noise_wavelength: [f64; 2],
    /// Level cut points between classes 0|1, 1|2 and 2|3.
    pub thresholds: [f64; 3],
    pub test_fraction: f64,
}

impl Default for SynthKnobs {
    fn default() -> Self {
        Self {
            hour_range: [6.0, 23.0],
            base_level: 0.1,
            morning: Peak {
                hour: 9.0,
                width: 2.0,
                height: 1.4,
            },
            evening: Peak {
                hour: 18.0,
                width: 2.2,
                height: 1.5,
            },
            day_offset: 0.3,
            arterial_bias: [0.0, 0.4],
            connector_bias: [-0.4, 0.0],
            segment_jitter: 0.15,
            noise_amplitude: 0.3,
            noise_waves: 3,
            noise_wavelength: [8.0, 24.0],
            thresholds: [0.7, 1.25, 1.75],
            test_fraction: 0.25,
        }
    }
}

impl SynthKnobs {
    pub fn diurnal(&self, hour: f64) -> f64 {
        let bump = |p: &Peak| p.height * (-(hour - p.hour).powi(2) / (2.0 * p.width * p.width)).exp();
        self.base_level + bump(&self.morning) + bump(&self.evening)
    }

    pub fn quantize(&self, level: f64) -> u8 {
        self.thresholds.iter().filter(|&&t| level >= t).count() as u8
    }

    fn validate(&self) -> Result<()> {
        let ordered = |r: [f64; 2]| r[0] <= r[1];
        if !ordered(self.hour_range)
            || !ordered(self.arterial_bias)
            || !ordered(self.connector_bias)
            || !ordered(self.noise_wavelength)
            || self.noise_wavelength[0] <= 0.0
            || !(self.thresholds[0] < self.thresholds[1] && self.thresholds[1] < self.thresholds[2])
            || !(0.0..1.0).contains(&self.test_fraction)
        {
            return Err(contract("inconsistent generator knobs"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    #[serde(with = "crate::serde_u64")]
    pub seed: u64,
    pub locations: usize,
    pub per_location: usize,
    pub height: usize,
    pub width: usize,
    #[serde(default)]
    pub knobs: SynthKnobs,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            locations: 1,
            per_location: 64,
            height: 80,
            width: 80,
            knobs: SynthKnobs::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SegmentKind {
    Arterial,
    Connector,
}

/// Fixed road geometry of one location.
#[derive(Clone, Debug, PartialEq)]
pub struct RoadNetwork {
    pub height: usize,
    pub width: usize,
    /// Segment index per cell, `None` off-road.
    pub segment_of: Vec<Option<usize>>,
    pub kinds: Vec<SegmentKind>,
    pub bias: Vec<f64>,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, range: [f64; 2]) -> f64 {
    range[0] + (range[1] - range[0]) * rng.random::<f64>()
}

fn pick_lines<R: Rng + ?Sized>(rng: &mut R, extent: usize, count: usize) -> Vec<usize> {
    let mut lines: Vec<usize> = Vec::new();
    let gap = (extent / 4).max(3);
    for _ in 0..50 {
        if lines.len() == count {
            break;
        }
        let p = rng.random_range(1..extent - 2);
        if lines.iter().all(|&q| p.abs_diff(q) >= gap) {
            lines.push(p);
        }
    }
    lines.sort_unstable();
    lines
}

impl RoadNetwork {
    pub fn generate<R: Rng + ?Sized>(rng: &mut R, height: usize, width: usize, knobs: &SynthKnobs) -> Self {
        let mut net = Self {
            height,
            width,
            segment_of: vec![None; height * width],
            kinds: Vec::new(),
            bias: Vec::new(),
        };
        let n_rows = 1 + rng.random_range(0..=height / 24);
        let rows = pick_lines(rng, height, n_rows);
        let n_cols = 1 + rng.random_range(0..=width / 24);
        let cols = pick_lines(rng, width, n_cols);

        // Horizontal arterials, split into segments between vertical arterials.
        for &r in &rows {
            let mut seg = None;
            for c in 0..width {
                if seg.is_none() || cols.iter().any(|&v| v == c) {
                    seg = Some(net.new_segment(rng, SegmentKind::Arterial, knobs));
                }
                for rr in [r, r + 1] {
                    net.segment_of[rr * width + c] = seg;
                }
            }
        }
        for &c in &cols {
            let mut seg = None;
            for r in 0..height {
                if seg.is_none() || rows.iter().any(|&h| h == r) {
                    seg = Some(net.new_segment(rng, SegmentKind::Arterial, knobs));
                }
                for cc in [c, c + 1] {
                    let cell = &mut net.segment_of[r * width + cc];
                    if cell.is_none() {
                        *cell = seg;
                    }
                }
            }
        }

        let connectors = (height * width / 120).max(2);
        for _ in 0..connectors {
            net.add_connector(rng, knobs);
        }
        net
    }

    fn new_segment<R: Rng + ?Sized>(&mut self, rng: &mut R, kind: SegmentKind, knobs: &SynthKnobs) -> usize {
        let range = match kind {
            SegmentKind::Arterial => knobs.arterial_bias,
            SegmentKind::Connector => knobs.connector_bias,
        };
        self.kinds.push(kind);
        self.bias.push(uniform(rng, range));
        self.kinds.len() - 1
    }

    /// Walks out of a random road cell, optionally turning once, until it meets another road.
    fn add_connector<R: Rng + ?Sized>(&mut self, rng: &mut R, knobs: &SynthKnobs) {
        const DIRS: [(isize, isize); 4] = [(0, 1), (1, 0), (0, -1), (-1, 0)];
        let roads: Vec<usize> = (0..self.segment_of.len()).filter(|&i| self.segment_of[i].is_some()).collect();
        let Some(&start) = roads.get(rng.random_range(0..roads.len().max(1))) else {
            return;
        };
        let mut dir = DIRS[rng.random_range(0..4)];
        let max_len = (self.height.min(self.width) / 2).max(4);
        let length = rng.random_range(3..=max_len);
        let turn_at = if rng.random::<f64>() < 0.5 {
            Some(rng.random_range(1..length))
        } else {
            None
        };
        let turn_left = rng.random::<bool>();

        let seg = self.new_segment(rng, SegmentKind::Connector, knobs);
        let (mut r, mut c) = ((start / self.width) as isize, (start % self.width) as isize);
        let mut placed = 0;
        let mut crossed = 0;
        while placed < length {
            if turn_at == Some(placed) && placed > 0 {
                dir = if turn_left { (-dir.1, dir.0) } else { (dir.1, -dir.0) };
            }
            r += dir.0;
            c += dir.1;
            if r < 0 || c < 0 || r >= self.height as isize || c >= self.width as isize {
                break;
            }
            let cell = &mut self.segment_of[r as usize * self.width + c as usize];
            match cell {
                Some(_) if placed == 0 => {
                    crossed += 1;
                    if crossed > 3 {
                        break;
                    }
                }
                Some(_) => break,
                None => {
                    *cell = Some(seg);
                    placed += 1;
                }
            }
        }
    }

    /// Labels for one time of day.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, hour: f64, knobs: &SynthKnobs) -> ClassGrid {
        let base = knobs.diurnal(hour) + knobs.day_offset * (2.0 * rng.random::<f64>() - 1.0);
        let levels: Vec<f64> = self
            .bias
            .iter()
            .map(|b| base + b + knobs.segment_jitter * (2.0 * rng.random::<f64>() - 1.0))
            .collect();
        let waves: Vec<(f64, f64, f64)> = (0..knobs.noise_waves)
            .map(|_| {
                let angle = 2.0 * PI * rng.random::<f64>();
                let k = 2.0 * PI / uniform(rng, knobs.noise_wavelength);
                (k * angle.cos(), k * angle.sin(), 2.0 * PI * rng.random::<f64>())
            })
            .collect();
        let norm = knobs.noise_amplitude / (knobs.noise_waves.max(1) as f64).sqrt();
        let cells = self
            .segment_of
            .iter()
            .enumerate()
            .map(|(i, seg)| {
                seg.map(|s| {
                    let (r, c) = ((i / self.width) as f64, (i % self.width) as f64);
                    let noise: f64 = waves.iter().map(|(ky, kx, phi)| (ky * r + kx * c + phi).cos()).sum();
                    knobs.quantize(levels[s] + norm * noise)
                })
            })
            .collect();
        ClassGrid::new(self.height, self.width, cells).expect("matching size")
    }
}

fn timestamp(day: usize, hour: f64) -> String {
    let minutes = (hour * 60.0).round() as usize;
    format!("d{day:03}-{:02}{:02}", minutes / 60, minutes % 60)
}

fn location_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Generates a dataset; identical configs give bitwise-identical results.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Dataset> {
    if cfg.height < 8 || cfg.width < 8 {
        return Err(contract("synthetic maps must be at least 8x8"));
    }
    if cfg.locations == 0 || cfg.per_location == 0 {
        return Err(contract("need at least one location and one sample per location"));
    }
    let knobs = &cfg.knobs;
    knobs.validate()?;
    let legend = ClassLegend::traffic();
    let width_digits = cfg.locations.to_string().len().max(2);

    let mut locations = Vec::with_capacity(cfg.locations);
    let mut samples = Vec::with_capacity(cfg.locations * cfg.per_location);
    for l in 0..cfg.locations {
        let id = format!("loc{l:0width_digits$}");
        let mut rng = location_rng(cfg.seed, 1 + l as u64);
        let net = RoadNetwork::generate(&mut rng, cfg.height, cfg.width, knobs);

        let mut order: Vec<usize> = (0..cfg.per_location).collect();
        order.shuffle(&mut location_rng(cfg.seed, u64::MAX - l as u64));
        let n_test = ((cfg.per_location as f64) * knobs.test_fraction).round() as usize;
        let n_test = n_test.min(cfg.per_location.saturating_sub(1));
        let mut is_test = vec![false; cfg.per_location];
        for &i in &order[..n_test] {
            is_test[i] = true;
        }

        let mut entries = Vec::with_capacity(cfg.per_location);
        for (day, test) in is_test.into_iter().enumerate() {
            let hour = uniform(&mut rng, knobs.hour_range);
            let classes = net.sample(&mut rng, hour, knobs);
            let ts = timestamp(day, hour);
            entries.push(SampleEntry {
                timestamp: ts.clone(),
                hour: Some(hour),
                file: sample_file(&id, &ts),
                split: if test { Split::Test } else { Split::Train },
            });
            samples.push(MapSample {
                location: id.clone(),
                timestamp: ts,
                hour: Some(hour),
                classes,
                provenance: Provenance::Synthetic,
            });
        }
        locations.push(LocationEntry {
            id,
            lon: None,
            lat: None,
            samples: entries,
        });
    }

    let manifest = DatasetManifest {
        schema_version: MANIFEST_SCHEMA,
        height: cfg.height,
        width: cfg.width,
        split_seed: cfg.seed,
        generator: Some(GeneratorInfo {
            seed: cfg.seed,
            knobs: knobs.clone(),
        }),
        legend,
        locations,
    };
    manifest.validate()?;
    Ok(Dataset { manifest, samples })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(seed: u64) -> SynthConfig {
        SynthConfig {
            seed,
            locations: 2,
            per_location: 12,
            height: 24,
            width: 24,
            knobs: SynthKnobs::default(),
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        assert_eq!(synth_generate(&cfg(3)).unwrap(), synth_generate(&cfg(3)).unwrap());
        assert_ne!(synth_generate(&cfg(3)).unwrap(), synth_generate(&cfg(4)).unwrap());
    }

    #[test]
    fn legality_is_fixed_per_location() {
        let d = synth_generate(&cfg(5)).unwrap();
        for loc in ["loc00", "loc01"] {
            let masks: Vec<_> = d.samples.iter().filter(|s| s.location == loc).map(|s| s.legality()).collect();
            assert_eq!(masks.len(), 12);
            assert!(masks.iter().all(|m| *m == masks[0]));
            assert!(masks[0].count() > 0);
        }
    }

    #[test]
    fn off_peak_is_less_congested_than_peak() {
        let knobs = SynthKnobs::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = RoadNetwork::generate(&mut rng, 40, 40, &knobs);
        let mean_free = |hour: f64, rng: &mut ChaCha8Rng| {
            (0..24).map(|_| net.sample(rng, hour, &knobs).histogram(4)[0] as f64).sum::<f64>() / 24.0
        };
        let off = mean_free(13.0, &mut rng);
        let peak = mean_free(9.0, &mut rng);
        assert!(off > peak, "off-peak {off} vs peak {peak}");
    }

    #[test]
    fn splits_are_disjoint_and_sized() {
        let d = synth_generate(&cfg(6)).unwrap();
        for loc in &d.manifest.locations {
            let test = loc.samples.iter().filter(|s| s.split == Split::Test).count();
            assert_eq!(test, 3);
        }
        assert_eq!(d.split(Split::Train).len() + d.split(Split::Test).len(), d.samples.len());
    }

    #[test]
    fn default_maps_are_80_by_80() {
        let d = synth_generate(&SynthConfig {
            per_location: 2,
            ..SynthConfig::default()
        })
        .unwrap();
        assert!(d.samples.iter().all(|s| s.height() == 80 && s.width() == 80));
    }

    #[test]
    fn rejects_degenerate_sizes() {
        assert!(synth_generate(&SynthConfig {
            height: 7,
            ..cfg(1)
        })
        .is_err());
        assert!(synth_generate(&SynthConfig {
            locations: 0,
            ..cfg(1)
        })
        .is_err());
    }

    #[test]
    fn disk_round_trip() {
        let d = synth_generate(&cfg(8)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        d.write(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back, d);
    }
}
