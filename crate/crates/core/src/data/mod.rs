//! Map datasets: color legend, raster codec, synthetic generator and on-disk layout.

pub mod codec;
pub mod disc;
pub mod legend;
pub mod manifest;
pub mod sample;
pub mod synth;

pub use codec::{decode_map, encode_map, encode_prediction, load_rgb, save_png};
pub use disc::{sample_disc, Disc};
pub use legend::{ClassColor, ClassLegend, ColorAlias, Rgb};
pub use manifest::{sample_file, Dataset, DatasetManifest, GeneratorInfo, LocationEntry, SampleEntry, Split, MANIFEST_FILE};
pub use sample::{ClassGrid, MapSample, Provenance};
pub use synth::{synth_generate, RoadNetwork, SynthConfig, SynthKnobs};
