//! Raster encoding and decoding of class maps.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::data::legend::ClassLegend;
use crate::data::sample::ClassGrid;
use crate::error::{io_err, NcaError, Result};
use crate::grid::BoolGrid;

/// Maps each pixel to its nearest legend color.
pub fn decode_map(image: &RgbImage, legend: &ClassLegend, height: usize, width: usize) -> Result<ClassGrid> {
    if image.height() as usize != height || image.width() as usize != width {
        return Err(NcaError::Format(format!(
            "image is {}x{}, expected {height}x{width}",
            image.height(),
            image.width()
        )));
    }
    let cells = image.pixels().map(|p| legend.nearest(p.0)).collect();
    ClassGrid::new(height, width, cells)
}

/// Renders ground-truth classes; background cells get the background color.
pub fn encode_map(classes: &ClassGrid, legend: &ClassLegend) -> RgbImage {
    RgbImage::from_fn(classes.width() as u32, classes.height() as u32, |x, y| {
        Rgb(match classes.get(y as usize, x as usize) {
            Some(c) => legend.color(c),
            None => legend.background,
        })
    })
}

/// Renders a prediction: alive legal cells in their class color, dead legal cells gray,
/// everything else background.
pub fn encode_prediction(predicted: &ClassGrid, legality: &BoolGrid, legend: &ClassLegend) -> RgbImage {
    RgbImage::from_fn(predicted.width() as u32, predicted.height() as u32, |x, y| {
        let (r, c) = (y as usize, x as usize);
        Rgb(match (legality.get(r, c), predicted.get(r, c)) {
            (true, Some(class)) => legend.color(class),
            (true, None) => legend.dead,
            (false, _) => legend.background,
        })
    })
}

pub fn save_png(path: &Path, image: &RgbImage) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    image.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    Ok(image::load_from_memory(&bytes)?.to_rgb8())
}
