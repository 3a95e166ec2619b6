//! Dataset manifest and on-disk layout: `<root>/manifest.toml` plus
//! `<root>/<location>/<timestamp>.png`.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::codec::{decode_map, encode_map, load_rgb, save_png};
use crate::data::legend::ClassLegend;
use crate::data::sample::{MapSample, Provenance};
use crate::data::synth::SynthKnobs;
use crate::error::{io_err, NcaError, Result};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const MANIFEST_SCHEMA: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorInfo {
    #[serde(with = "crate::serde_u64")]
    pub seed: u64,
    pub knobs: SynthKnobs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    pub timestamp: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hour: Option<f64>,
    /// Path relative to the dataset root.
    pub file: String,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocationEntry {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lat: Option<f64>,
    pub samples: Vec<SampleEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub height: usize,
    pub width: usize,
    /// Seed of the train/test assignment.
    #[serde(with = "crate::serde_u64")]
    pub split_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorInfo>,
    pub legend: ClassLegend,
    pub locations: Vec<LocationEntry>,
}

fn valid_component(s: &str) -> bool {
    !s.is_empty()
        && s != "."
        && s != ".."
        && s.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NcaError::Format(m));
        if self.schema_version != MANIFEST_SCHEMA {
            return bad(format!(
                "unsupported manifest schema {} (expected {MANIFEST_SCHEMA})",
                self.schema_version
            ));
        }
        if self.height == 0 || self.width == 0 {
            return bad("map dimensions must be positive".into());
        }
        self.legend.validate()?;
        let mut ids = HashSet::new();
        for loc in &self.locations {
            if !valid_component(&loc.id) || !ids.insert(&loc.id) {
                return bad(format!("invalid or duplicate location id {:?}", loc.id));
            }
            let mut stamps = HashSet::new();
            for s in &loc.samples {
                if !valid_component(&s.timestamp) || !stamps.insert(&s.timestamp) {
                    return bad(format!("invalid or duplicate timestamp {:?} in {}", s.timestamp, loc.id));
                }
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| NcaError::Format(format!("manifest serialization: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let m: Self = toml::from_str(text).map_err(|e| NcaError::Format(format!("manifest: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    pub fn sample_count(&self) -> usize {
        self.locations.iter().map(|l| l.samples.len()).sum()
    }
}

/// A manifest together with its decoded samples, in manifest order.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<MapSample>,
}

impl Dataset {
    /// Samples and their split, in manifest order.
    pub fn entries(&self) -> impl Iterator<Item = (&MapSample, Split)> {
        self.manifest
            .locations
            .iter()
            .flat_map(|l| l.samples.iter().map(|s| s.split))
            .zip(&self.samples)
            .map(|(split, s)| (s, split))
    }

    pub fn split(&self, split: Split) -> Vec<&MapSample> {
        self.entries().filter(|(_, s)| *s == split).map(|(m, _)| m).collect()
    }

    /// Restricts the dataset to the named locations, keeping manifest order.
    pub fn select_locations(&self, ids: &[String]) -> Result<Self> {
        for id in ids {
            if !self.manifest.locations.iter().any(|l| &l.id == id) {
                return Err(NcaError::Format(format!("unknown location {id:?}")));
            }
        }
        let mut manifest = self.manifest.clone();
        manifest.locations.retain(|l| ids.contains(&l.id));
        let samples = self.samples.iter().filter(|s| ids.contains(&s.location)).cloned().collect();
        Ok(Self { manifest, samples })
    }

    pub fn write(&self, root: &Path) -> Result<()> {
        self.manifest.validate()?;
        std::fs::create_dir_all(root).map_err(io_err(root))?;
        let files = self.manifest.locations.iter().flat_map(|l| l.samples.iter().map(|s| &s.file));
        for (file, sample) in files.zip(&self.samples) {
            save_png(&root.join(file), &encode_map(&sample.classes, &self.manifest.legend))?;
        }
        let path = root.join(MANIFEST_FILE);
        std::fs::write(&path, self.manifest.to_toml()?).map_err(io_err(&path))?;
        Ok(())
    }

    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        let manifest = DatasetManifest::from_toml(&text)?;
        let provenance = if manifest.generator.is_some() {
            Provenance::Synthetic
        } else {
            Provenance::Decoded
        };
        let mut samples = Vec::with_capacity(manifest.sample_count());
        for loc in &manifest.locations {
            for entry in &loc.samples {
                let image = load_rgb(&root.join(&entry.file))?;
                let classes = decode_map(&image, &manifest.legend, manifest.height, manifest.width)
                    .map_err(|e| NcaError::Format(format!("{}: {e}", entry.file)))?;
                samples.push(MapSample {
                    location: loc.id.clone(),
                    timestamp: entry.timestamp.clone(),
                    hour: entry.hour,
                    classes,
                    provenance,
                });
            }
        }
        Ok(Self { manifest, samples })
    }
}

/// Relative file name of a sample.
pub fn sample_file(location: &str, timestamp: &str) -> String {
    format!("{location}/{timestamp}.png")
}
