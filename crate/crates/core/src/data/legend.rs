//! Color legend for traffic-condition rasters.

use serde::{Deserialize, Serialize};

use crate::error::{NcaError, Result};

pub type Rgb = [u8; 3];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassColor {
    pub name: String,
    pub rgb: Rgb,
}

/// An extra source color that decodes to an existing class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColorAlias {
    pub name: String,
    pub rgb: Rgb,
    pub class: u8,
}

/// Ordered class colors plus background, dead-cell gray and decode-only aliases.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassLegend {
    pub classes: Vec<ClassColor>,
    #[serde(default)]
    pub aliases: Vec<ColorAlias>,
    pub background: Rgb,
    /// Rendering color for legal cells that are not alive.
    pub dead: Rgb,
}

impl Default for ClassLegend {
    fn default() -> Self {
        Self::traffic()
    }
}

impl ClassLegend {
    /// Four traffic classes; the extremely-congested purple decodes as severe (red).
    pub fn traffic() -> Self {
        let class = |name: &str, rgb| ClassColor {
            name: name.to_string(),
            rgb,
        };
        Self {
            classes: vec![
                class("unobstructed", [52, 176, 80]),
                class("slight", [255, 208, 0]),
                class("moderate", [255, 128, 0]),
                class("severe", [223, 2, 2]),
            ],
            aliases: vec![ColorAlias {
                name: "extreme".to_string(),
                rgb: [128, 0, 128],
                class: 3,
            }],
            background: [255, 255, 255],
            dead: [150, 150, 150],
        }
    }

    pub fn k(&self) -> usize {
        self.classes.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.len() != 4 {
            return Err(NcaError::Format(format!(
                "legend must define exactly 4 classes, found {}",
                self.classes.len()
            )));
        }
        let mut colors: Vec<Rgb> = self.classes.iter().map(|c| c.rgb).collect();
        colors.extend(self.aliases.iter().map(|a| a.rgb));
        colors.push(self.background);
        colors.push(self.dead);
        for i in 0..colors.len() {
            for j in i + 1..colors.len() {
                if colors[i] == colors[j] {
                    return Err(NcaError::Format(format!(
                        "legend colors must be distinct: {:?} appears twice",
                        colors[i]
                    )));
                }
            }
        }
        if let Some(a) = self.aliases.iter().find(|a| a.class as usize >= self.classes.len()) {
            return Err(NcaError::Format(format!(
                "alias {} points at missing class {}",
                a.name, a.class
            )));
        }
        Ok(())
    }

    pub fn color(&self, class: u8) -> Rgb {
        self.classes[class as usize].rgb
    }

    /// Nearest source color in RGB Euclidean distance; `None` for background.
    ///
    /// Candidates are scanned classes, aliases, background; ties keep the first.
    pub fn nearest(&self, px: Rgb) -> Option<u8> {
        let dist = |c: Rgb| -> u32 {
            c.iter()
                .zip(px)
                .map(|(a, b)| (*a as i32 - b as i32).pow(2) as u32)
                .sum()
        };
        let candidates = self
            .classes
            .iter()
            .enumerate()
            .map(|(i, c)| (c.rgb, Some(i as u8)))
            .chain(self.aliases.iter().map(|a| (a.rgb, Some(a.class))))
            .chain(std::iter::once((self.background, None)));
        let mut best = (u32::MAX, None);
        for (rgb, class) in candidates {
            let d = dist(rgb);
            if d < best.0 {
                best = (d, class);
            }
        }
        best.1
    }
}
