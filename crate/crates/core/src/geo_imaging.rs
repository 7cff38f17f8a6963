//! Satellite frame handling: equirectangular pixel↔geographic mapping,
//! frame/sidecar file I/O, and the paired histogram equalization applied to
//! both frames of a pair before motion estimation.
//!
//! Frames arrive pre-projected: a single-band brightness grid plus a JSON
//! sidecar describing channel, timestamp, and the affine pixel→degree
//! transform. Brightness is normalized to `[0,1]`; pixels marked as nodata
//! (or stored as NaN in float inputs) carry `mask = false` and are excluded
//! from every statistic downstream.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Duration, Utc};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Number of histogram bins used by `equalize_pair`, independent of the
/// input bit depth.
pub const EQUALIZE_BINS: usize = 256;

/// Imager channel of a frame: water-vapor (`Ch3`, 6.5–7.0 µm) or thermal
/// infrared (`Ch4`, 10.2–11.2 µm).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    #[serde(rename = "ch3")]
    Ch3,
    #[serde(rename = "ch4")]
    Ch4,
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Channel::Ch3 => write!(f, "ch3"),
            Channel::Ch4 => write!(f, "ch4"),
        }
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ch3" => Ok(Channel::Ch3),
            "ch4" => Ok(Channel::Ch4),
            other => Err(Error::InvalidParameter(format!(
                "unknown channel {other:?}; expected \"ch3\" or \"ch4\""
            ))),
        }
    }
}

/// Affine mapping between pixel indices and geographic degrees on an
/// equirectangular grid.
///
/// Columns run east (`dlon > 0`), rows run south (`dlat < 0`). Geographic
/// coordinates refer to pixel centers: pixel `(x, y)` sits at
/// `(lon_origin + (x+0.5)·dlon, lat_origin + (y+0.5)·dlat)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoTransform {
    pub lon_origin: f64,
    pub lat_origin: f64,
    pub dlon: f64,
    pub dlat: f64,
    pub width: usize,
    pub height: usize,
}

impl GeoTransform {
    pub fn new(
        lon_origin: f64,
        lat_origin: f64,
        dlon: f64,
        dlat: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let t = GeoTransform {
            lon_origin,
            lat_origin,
            dlon,
            dlat,
            width,
            height,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParameter(
                "transform dimensions must be positive".into(),
            ));
        }
        if !(self.dlon > 0.0) || !(self.dlat < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "expected dlon > 0 and dlat < 0, got dlon={}, dlat={}",
                self.dlon, self.dlat
            )));
        }
        let lon_end = self.lon_origin + self.width as f64 * self.dlon;
        let lat_end = self.lat_origin + self.height as f64 * self.dlat;
        let lon_ok = (-180.0..=180.0).contains(&self.lon_origin) && (-180.0..=180.0).contains(&lon_end);
        let lat_ok = (-90.0..=90.0).contains(&self.lat_origin) && (-90.0..=90.0).contains(&lat_end);
        if !lon_ok || !lat_ok {
            return Err(Error::InvalidParameter(format!(
                "transform extent [{}, {}] x [{}, {}] leaves the world bounds",
                self.lon_origin, lon_end, lat_end, self.lat_origin
            )));
        }
        Ok(())
    }

    /// Geographic position of the (possibly fractional) pixel `(x, y)`,
    /// pixel-center convention.
    pub fn pixel_to_geo(&self, x: f64, y: f64) -> Result<(f64, f64)> {
        if !(0.0..self.width as f64).contains(&x) || !(0.0..self.height as f64).contains(&y) {
            return Err(Error::InvalidParameter(format!(
                "pixel ({x}, {y}) outside grid {}x{}",
                self.width, self.height
            )));
        }
        Ok((
            self.lon_origin + (x + 0.5) * self.dlon,
            self.lat_origin + (y + 0.5) * self.dlat,
        ))
    }

    /// Inverse of [`pixel_to_geo`](Self::pixel_to_geo).
    pub fn geo_to_pixel(&self, lon: f64, lat: f64) -> Result<(f64, f64)> {
        let x = (lon - self.lon_origin) / self.dlon - 0.5;
        let y = (lat - self.lat_origin) / self.dlat - 0.5;
        if !(-0.5..self.width as f64).contains(&x) || !(-0.5..self.height as f64).contains(&y) {
            return Err(Error::InvalidParameter(format!(
                "geographic point ({lon}, {lat}) outside grid coverage"
            )));
        }
        Ok((x, y))
    }
}

/// One satellite frame: normalized brightness, validity mask, acquisition
/// time, and grid geometry.
#[derive(Clone, Debug)]
pub struct SatelliteFrame {
    pub channel: Channel,
    /// Brightness in `[0,1]`, indexed `[(y, x)]`. Masked pixels hold `0.0`.
    pub pixels: Array2<f64>,
    /// `true` where the pixel carries valid data.
    pub mask: Array2<bool>,
    pub timestamp: DateTime<Utc>,
    pub transform: GeoTransform,
}

impl SatelliteFrame {
    pub fn new(
        channel: Channel,
        pixels: Array2<f64>,
        mask: Array2<bool>,
        timestamp: DateTime<Utc>,
        transform: GeoTransform,
    ) -> Result<Self> {
        transform.validate()?;
        let (h, w) = pixels.dim();
        if (w, h) != (transform.width, transform.height) || pixels.dim() != mask.dim() {
            return Err(Error::DimensionMismatch {
                context: "satellite frame construction".into(),
                expected_w: transform.width,
                expected_h: transform.height,
                actual_w: w,
                actual_h: h,
            });
        }
        for ((y, x), &v) in pixels.indexed_iter() {
            if mask[(y, x)] && !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParameter(format!(
                    "brightness {v} at pixel ({x}, {y}) outside [0,1]"
                )));
            }
        }
        Ok(SatelliteFrame {
            channel,
            pixels,
            mask,
            timestamp,
            transform,
        })
    }

    pub fn width(&self) -> usize {
        self.transform.width
    }

    pub fn height(&self) -> usize {
        self.transform.height
    }

    /// Count of valid pixels.
    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Sidecar metadata accompanying each brightness grid on disk.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FrameMeta {
    pub channel: Channel,
    pub timestamp: DateTime<Utc>,
    pub lon_origin: f64,
    pub lat_origin: f64,
    pub dlon: f64,
    pub dlat: f64,
    pub width: usize,
    pub height: usize,
    /// Raw pixel value (in the stored encoding) to treat as missing data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodata: Option<f64>,
}

impl FrameMeta {
    pub fn transform(&self) -> Result<GeoTransform> {
        GeoTransform::new(
            self.lon_origin,
            self.lat_origin,
            self.dlon,
            self.dlat,
            self.width,
            self.height,
        )
    }

    pub fn for_frame(frame: &SatelliteFrame, nodata: Option<f64>) -> Self {
        let t = frame.transform;
        FrameMeta {
            channel: frame.channel,
            timestamp: frame.timestamp,
            lon_origin: t.lon_origin,
            lat_origin: t.lat_origin,
            dlon: t.dlon,
            dlat: t.dlat,
            width: t.width,
            height: t.height,
            nodata,
        }
    }
}

/// Loads a frame from a brightness grid (`.png` grayscale or `.f32` raw
/// little-endian floats) plus its JSON sidecar.
///
/// PNG values are rescaled by the full range of their bit depth; `.f32`
/// values must already lie in `[0,1]`. The sidecar's `nodata` value is
/// compared in raw stored units; NaNs in float grids are always masked.
pub fn load_frame(image_path: &Path, meta_path: &Path) -> Result<SatelliteFrame> {
    let meta_text = fs::read_to_string(meta_path).map_err(|e| Error::io(meta_path, e))?;
    let meta: FrameMeta = serde_json::from_str(&meta_text).map_err(|e| Error::Metadata {
        path: meta_path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let transform = meta.transform()?;

    let ext = image_path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();

    let (pixels, mask) = match ext.as_str() {
        "f32" => load_f32_grid(image_path, &meta)?,
        "png" => load_png_grid(image_path, &meta)?,
        other => {
            return Err(Error::ImageDecode {
                path: image_path.to_path_buf(),
                reason: format!("unsupported extension {other:?}; expected .png or .f32"),
            })
        }
    };

    let (h, w) = pixels.dim();
    if (w, h) != (meta.width, meta.height) {
        return Err(Error::DimensionMismatch {
            context: format!("image {} vs sidecar", image_path.display()),
            expected_w: meta.width,
            expected_h: meta.height,
            actual_w: w,
            actual_h: h,
        });
    }

    SatelliteFrame::new(meta.channel, pixels, mask, meta.timestamp, transform)
}

fn load_f32_grid(path: &Path, meta: &FrameMeta) -> Result<(Array2<f64>, Array2<bool>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = meta
        .width
        .checked_mul(meta.height)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Metadata {
            path: path.to_path_buf(),
            reason: "grid dimensions overflow".into(),
        })?;
    if bytes.len() != expected {
        return Err(Error::ImageDecode {
            path: path.to_path_buf(),
            reason: format!(
                "expected {expected} bytes for {}x{} float32 grid, found {}",
                meta.width,
                meta.height,
                bytes.len()
            ),
        });
    }
    let mut pixels = Array2::<f64>::zeros((meta.height, meta.width));
    let mut mask = Array2::<bool>::from_elem((meta.height, meta.width), true);
    for (i, chunk) in bytes.chunks_exact(4).enumerate() {
        let raw = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        let y = i / meta.width;
        let x = i % meta.width;
        let is_nodata = meta.nodata.is_some_and(|nd| f64::from(raw) == nd);
        if raw.is_nan() || is_nodata {
            mask[(y, x)] = false;
        } else {
            pixels[(y, x)] = f64::from(raw);
        }
    }
    Ok((pixels, mask))
}

fn load_png_grid(path: &Path, meta: &FrameMeta) -> Result<(Array2<f64>, Array2<bool>)> {
    let img = image::open(path).map_err(|e| Error::ImageDecode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (pixels_raw, scale): (Vec<f64>, f64) = match img {
        image::DynamicImage::ImageLuma8(g) => (g.pixels().map(|p| f64::from(p.0[0])).collect(), 255.0),
        image::DynamicImage::ImageLuma16(g) => {
            (g.pixels().map(|p| f64::from(p.0[0])).collect(), 65535.0)
        }
        other => {
            return Err(Error::ImageDecode {
                path: path.to_path_buf(),
                reason: format!(
                    "expected a single-band grayscale image, found {:?}",
                    other.color()
                ),
            })
        }
    };
    if (w, h) != (meta.width, meta.height) {
        return Err(Error::DimensionMismatch {
            context: format!("image {} vs sidecar", path.display()),
            expected_w: meta.width,
            expected_h: meta.height,
            actual_w: w,
            actual_h: h,
        });
    }
    let mut pixels = Array2::<f64>::zeros((h, w));
    let mut mask = Array2::<bool>::from_elem((h, w), true);
    for (i, raw) in pixels_raw.iter().enumerate() {
        let y = i / w;
        let x = i % w;
        if meta.nodata.is_some_and(|nd| *raw == nd) {
            mask[(y, x)] = false;
        } else {
            pixels[(y, x)] = raw / scale;
        }
    }
    Ok((pixels, mask))
}

/// Writes a frame back to disk in the format implied by the image extension.
///
/// `.f32` grids store masked pixels as NaN and round-trip exactly through
/// [`load_frame`]. PNG output quantizes to 8 bits and requires a fully valid
/// mask, since the byte encoding reserves no missing-data value.
pub fn write_frame(frame: &SatelliteFrame, image_path: &Path, meta_path: &Path) -> Result<()> {
    let ext = image_path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    match ext.as_str() {
        "f32" => {
            let mut bytes = Vec::with_capacity(frame.pixels.len() * 4);
            for ((y, x), &v) in frame.pixels.indexed_iter() {
                let out = if frame.mask[(y, x)] { v as f32 } else { f32::NAN };
                bytes.extend_from_slice(&out.to_le_bytes());
            }
            fs::write(image_path, bytes).map_err(|e| Error::io(image_path, e))?;
        }
        "png" => {
            if !frame.mask.iter().all(|&m| m) {
                return Err(Error::InvalidParameter(
                    "PNG output cannot represent masked pixels; use .f32".into(),
                ));
            }
            let (h, w) = frame.pixels.dim();
            let mut img = image::GrayImage::new(w as u32, h as u32);
            for ((y, x), &v) in frame.pixels.indexed_iter() {
                img.put_pixel(x as u32, y as u32, image::Luma([(v * 255.0).round() as u8]));
            }
            img.save(image_path).map_err(|e| Error::ImageDecode {
                path: image_path.to_path_buf(),
                reason: e.to_string(),
            })?;
        }
        other => {
            return Err(Error::InvalidParameter(format!(
                "unsupported output extension {other:?}; expected .png or .f32"
            )))
        }
    }
    let meta = FrameMeta::for_frame(frame, None);
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Serialization(e.to_string()))?;
    fs::write(meta_path, text).map_err(|e| Error::io(meta_path, e))
}

/// The monotone brightness remapping fitted by [`equalize_pair`].
#[derive(Clone, Debug)]
pub struct EqualizationMap {
    /// Inclusive empirical CDF per bin: `levels[b]` is the fraction of valid
    /// reference pixels falling in bins `0..=b`.
    levels: Vec<f64>,
}

impl EqualizationMap {
    /// Fits the 256-bin empirical CDF of the valid pixels of `reference`.
    pub fn fit(reference: &SatelliteFrame) -> Result<Self> {
        let mut hist = vec![0u64; EQUALIZE_BINS];
        let mut total = 0u64;
        for ((y, x), &v) in reference.pixels.indexed_iter() {
            if reference.mask[(y, x)] {
                hist[Self::bin(v)] += 1;
                total += 1;
            }
        }
        if total == 0 {
            return Err(Error::EmptyInput(
                "cannot fit an equalization map on a frame with zero valid pixels".into(),
            ));
        }
        let mut levels = Vec::with_capacity(EQUALIZE_BINS);
        let mut acc = 0u64;
        for count in hist {
            acc += count;
            levels.push(acc as f64 / total as f64);
        }
        Ok(EqualizationMap { levels })
    }

    fn bin(v: f64) -> usize {
        ((v * EQUALIZE_BINS as f64) as usize).min(EQUALIZE_BINS - 1)
    }

    /// Remapped brightness for `v ∈ [0,1]`.
    pub fn apply(&self, v: f64) -> f64 {
        self.levels[Self::bin(v)]
    }

    /// Applies the mapping to every valid pixel of `frame`; masked pixels are
    /// zeroed so they cannot leak information downstream.
    pub fn apply_frame(&self, frame: &SatelliteFrame) -> SatelliteFrame {
        let mut out = frame.clone();
        for ((y, x), v) in out.pixels.indexed_iter_mut() {
            *v = if frame.mask[(y, x)] { self.apply(*v) } else { 0.0 };
        }
        out
    }
}

/// Fits a single histogram-equalization mapping on `f_prev`'s valid pixels
/// and applies it to both frames, so the pair stays radiometrically
/// consistent for motion estimation.
pub fn equalize_pair(
    f_prev: &SatelliteFrame,
    f_next: &SatelliteFrame,
) -> Result<(SatelliteFrame, SatelliteFrame)> {
    if f_prev.channel != f_next.channel {
        return Err(Error::FrameMismatch(format!(
            "cannot equalize across channels {} and {}",
            f_prev.channel, f_next.channel
        )));
    }
    if f_prev.transform != f_next.transform {
        return Err(Error::FrameMismatch(
            "cannot equalize frames with different geo transforms".into(),
        ));
    }
    let map = EqualizationMap::fit(f_prev)?;
    Ok((map.apply_frame(f_prev), map.apply_frame(f_next)))
}

/// A (Ch3, Ch4) frame pair acquired at (nearly) the same instant.
#[derive(Clone, Debug)]
pub struct FramePair {
    pub ch3: SatelliteFrame,
    pub ch4: SatelliteFrame,
}

impl FramePair {
    pub fn new(ch3: SatelliteFrame, ch4: SatelliteFrame) -> Result<Self> {
        if ch3.channel != Channel::Ch3 || ch4.channel != Channel::Ch4 {
            return Err(Error::FrameMismatch(
                "frame pair fields must hold their namesake channels".into(),
            ));
        }
        if ch3.transform != ch4.transform {
            return Err(Error::FrameMismatch(
                "paired frames must share one geo transform".into(),
            ));
        }
        Ok(FramePair { ch3, ch4 })
    }

    pub fn frame(&self, channel: Channel) -> &SatelliteFrame {
        match channel {
            Channel::Ch3 => &self.ch3,
            Channel::Ch4 => &self.ch4,
        }
    }

    /// Acquisition time of the pair (by convention, the Ch4 scan time).
    pub fn timestamp(&self) -> DateTime<Utc> {
        self.ch4.timestamp
    }
}

/// An ordered sequence of frame pairs sharing one transform, with a nominal
/// acquisition cadence.
#[derive(Clone, Debug)]
pub struct FrameSequence {
    pairs: Vec<FramePair>,
    nominal_spacing: Duration,
}

impl FrameSequence {
    /// Validates strictly increasing timestamps per channel and consecutive
    /// spacing within ±10% of `nominal_spacing`.
    pub fn new(pairs: Vec<FramePair>, nominal_spacing: Duration) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyInput("frame sequence has no pairs".into()));
        }
        if nominal_spacing <= Duration::zero() {
            return Err(Error::InvalidParameter(
                "nominal spacing must be positive".into(),
            ));
        }
        let transform = pairs[0].ch3.transform;
        for p in &pairs {
            if p.ch3.transform != transform || p.ch4.transform != transform {
                return Err(Error::FrameMismatch(
                    "all frames in a sequence must share one geo transform".into(),
                ));
            }
        }
        let nominal_ms = nominal_spacing.num_milliseconds() as f64;
        for pair in pairs.windows(2) {
            for channel in [Channel::Ch3, Channel::Ch4] {
                let t0 = pair[0].frame(channel).timestamp;
                let t1 = pair[1].frame(channel).timestamp;
                if t1 <= t0 {
                    return Err(Error::FrameMismatch(format!(
                        "{channel} timestamps not strictly increasing: {t0} then {t1}"
                    )));
                }
                let gap_ms = (t1 - t0).num_milliseconds() as f64;
                if (gap_ms - nominal_ms).abs() > 0.1 * nominal_ms {
                    return Err(Error::FrameMismatch(format!(
                        "{channel} spacing {gap_ms} ms deviates more than 10% from nominal {nominal_ms} ms"
                    )));
                }
            }
        }
        Ok(FrameSequence {
            pairs,
            nominal_spacing,
        })
    }

    pub fn pairs(&self) -> &[FramePair] {
        &self.pairs
    }

    pub fn nominal_spacing(&self) -> Duration {
        self.nominal_spacing
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}
