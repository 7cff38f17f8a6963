//! Visual overlays: classified regions painted over the thermal-infrared
//! frame, storm-positive detections in red and rejected candidates in green.

use std::path::Path;

use anyhow::Context;
use image::{Rgb, RgbImage};
use stormflow::field_analysis::VortexRegion;
use stormflow::geo_imaging::SatelliteFrame;

use crate::{data_error, CliResult};

const STORM_COLOR: [f64; 3] = [220.0, 40.0, 40.0];
const REJECT_COLOR: [f64; 3] = [40.0, 180.0, 60.0];
const ALPHA: f64 = 0.45;

/// Renders `frame` as grayscale and alpha-blends each region's pixels in
/// the color of its predicted class. Masked frame pixels render black.
pub fn write_overlay(
    path: &Path,
    frame: &SatelliteFrame,
    regions: &[(&VortexRegion, bool)],
) -> CliResult<()> {
    let (w, h) = (frame.width() as u32, frame.height() as u32);
    let mut img = RgbImage::new(w, h);
    for ((y, x), &v) in frame.pixels.indexed_iter() {
        let gray = if frame.mask[(y, x)] {
            (v.clamp(0.0, 1.0) * 255.0).round() as u8
        } else {
            0
        };
        img.put_pixel(x as u32, y as u32, Rgb([gray, gray, gray]));
    }
    for &(region, predicted) in regions {
        let color = if predicted { STORM_COLOR } else { REJECT_COLOR };
        for &(x, y) in &region.pixels {
            let px = img.get_pixel_mut(x as u32, y as u32);
            for c in 0..3 {
                let blended = f64::from(px.0[c]) * (1.0 - ALPHA) + color[c] * ALPHA;
                px.0[c] = blended.round() as u8;
            }
        }
    }
    img.save(path)
        .with_context(|| format!("cannot write overlay {}", path.display()))
        .map_err(data_error)
}
