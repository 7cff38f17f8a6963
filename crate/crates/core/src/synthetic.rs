//! Analytic flow fields and rendered image pairs with known ground truth.
//!
//! These are the oracles for the numerical pipeline: closed-form velocity
//! fields whose vorticity, divergence, and Q-criterion are known exactly, and
//! seeded band-limited textures warped through those fields so that flow
//! estimation can be scored against the truth. Everything here is a pure
//! function of its seed and parameters.

use chrono::{DateTime, Duration, TimeZone, Utc};
use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geo_imaging::{Channel, GeoTransform, SatelliteFrame};
use crate::optical_flow::FlowField;
use crate::raster;
use crate::spectral;
use crate::{Error, Result};

/// Default acquisition time of synthetic frames.
pub fn default_epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2008, 6, 21, 12, 0, 0).unwrap()
}

/// Default spacing between synthetic frames (two frames per hour).
pub fn default_spacing() -> Duration {
    Duration::minutes(30)
}

/// Closed-form velocity field families, in pixels per frame interval.
#[derive(Clone, Debug, PartialEq)]
pub enum FieldKind {
    /// Solid-body rotation about `center`: `u = −ω·(y−cy)`, `v = ω·(x−cx)`.
    RigidRotation { center: (f64, f64), omega: f64 },
    /// Solid-body core of radius `core_r` with `1/r` tangential decay
    /// outside; tangential speed peaks at `ω·core_r` on the core edge.
    Rankine {
        center: (f64, f64),
        core_r: f64,
        omega: f64,
    },
    /// Horizontal shear `u = γ·y`, `v = 0`.
    Shear { gamma: f64 },
    /// Uniform translation.
    Translation { u: f64, v: f64 },
    /// Radial expansion about `center`: `u = rate·(x−cx)`, `v = rate·(y−cy)`.
    Radial { center: (f64, f64), rate: f64 },
}

/// A closed-form field bound to a pixel grid.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalyticField {
    pub kind: FieldKind,
    pub domain: GeoTransform,
}

impl AnalyticField {
    /// Velocity at (possibly fractional) pixel coordinates.
    pub fn velocity_at(&self, x: f64, y: f64) -> (f64, f64) {
        match self.kind {
            FieldKind::RigidRotation { center, omega } => {
                (-omega * (y - center.1), omega * (x - center.0))
            }
            FieldKind::Rankine {
                center,
                core_r,
                omega,
            } => {
                let dx = x - center.0;
                let dy = y - center.1;
                let r2 = dx * dx + dy * dy;
                if r2 <= core_r * core_r {
                    (-omega * dy, omega * dx)
                } else {
                    let scale = omega * core_r * core_r / r2;
                    (-scale * dy, scale * dx)
                }
            }
            FieldKind::Shear { gamma } => (gamma * y, 0.0),
            FieldKind::Translation { u, v } => (u, v),
            FieldKind::Radial { center, rate } => (rate * (x - center.0), rate * (y - center.1)),
        }
    }
}

/// Evaluates the closed form at every pixel of the field's domain.
pub fn sample_field(a: &AnalyticField) -> FlowField {
    sample_composite(std::slice::from_ref(a)).expect("single field shares its own domain")
}

/// Superposes several closed-form fields sharing one domain.
pub fn sample_composite(parts: &[AnalyticField]) -> Result<FlowField> {
    let first = parts
        .first()
        .ok_or_else(|| Error::EmptyInput("no analytic fields to sample".into()))?;
    let domain = first.domain;
    if parts.iter().any(|p| p.domain != domain) {
        return Err(Error::FrameMismatch(
            "composite analytic fields must share one domain".into(),
        ));
    }
    let (h, w) = (domain.height, domain.width);
    let mut u = Array2::<f64>::zeros((h, w));
    let mut v = Array2::<f64>::zeros((h, w));
    for part in parts {
        for y in 0..h {
            for x in 0..w {
                let (du, dv) = part.velocity_at(x as f64, y as f64);
                u[(y, x)] += du;
                v[(y, x)] += dv;
            }
        }
    }
    let t0 = default_epoch();
    FlowField::new(
        u,
        v,
        Array2::from_elem((h, w), true),
        domain,
        t0,
        t0 + default_spacing(),
    )
}

/// A rendered two-frame scene with its exact ground-truth flow.
#[derive(Clone, Debug)]
pub struct RenderedPair {
    pub prev: SatelliteFrame,
    pub next: SatelliteFrame,
    pub truth: FlowField,
}

/// Seeded band-limited random texture in `[0.15, 0.85]`.
///
/// White noise is low-passed at a quarter of the Nyquist frequency, so local
/// brightness varies smoothly enough for gradient-based matching while
/// keeping texture everywhere. The result is periodic by construction.
pub fn band_limited_texture(seed: u64, width: usize, height: usize) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = Array2::<Complex64>::zeros((height, width));
    for v in spec.iter_mut() {
        *v = Complex64::new(rng.gen_range(-1.0..1.0), 0.0);
    }
    spectral::fft2(&mut spec, false);
    let kxs = spectral::axis_frequencies(width);
    let kys = spectral::axis_frequencies(height);
    let cutoff = std::f64::consts::PI / 4.0;
    for y in 0..height {
        for x in 0..width {
            if kxs[x].hypot(kys[y]) > cutoff {
                spec[(y, x)] = Complex64::new(0.0, 0.0);
            }
        }
    }
    spectral::fft2(&mut spec, true);
    let real = spec.mapv(|c| c.re);
    let min = real.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = real.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max - min < 1e-12 {
        return Array2::from_elem((height, width), 0.5);
    }
    real.mapv(|v| 0.15 + 0.7 * (v - min) / (max - min))
}

/// Renders a frame pair moved by `carrier`: the earlier frame is a seeded
/// texture, the later frame is the texture warped backward through the
/// carrier field (bilinear, periodic wrap), so the flow from `prev` to
/// `next` is the carrier itself.
pub fn render_pair(texture_seed: u64, carrier: &AnalyticField) -> RenderedPair {
    render_pair_from_flow(texture_seed, &sample_field(carrier), Channel::Ch4)
}

/// Renders a frame pair from an arbitrary ground-truth flow field.
pub fn render_pair_from_flow(texture_seed: u64, truth: &FlowField, channel: Channel) -> RenderedPair {
    let (h, w) = truth.u.dim();
    let texture = band_limited_texture(texture_seed, w, h);
    let mut warped = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            warped[(y, x)] = raster::sample_wrapped(
                &texture,
                x as f64 - truth.u[(y, x)],
                y as f64 - truth.v[(y, x)],
            );
        }
    }
    let mask = Array2::from_elem((h, w), true);
    let prev = SatelliteFrame::new(channel, texture, mask.clone(), truth.t_prev, truth.transform)
        .expect("texture values stay inside [0,1]");
    let next = SatelliteFrame::new(channel, warped, mask, truth.t_next, truth.transform)
        .expect("warped values stay inside [0,1]");
    RenderedPair {
        prev,
        next,
        truth: truth.clone(),
    }
}

/// Renders an `n_frames`-long sequence under a stationary motion field: the
/// first frame is a seeded texture and each later frame is the previous one
/// warped backward through `truth`, so `truth` is the exact frame-to-frame
/// flow of every adjacent pair. Frames are stamped `truth.t_prev + k·spacing`.
pub fn render_sequence(
    texture_seed: u64,
    truth: &FlowField,
    channel: Channel,
    n_frames: usize,
    spacing: Duration,
) -> Vec<SatelliteFrame> {
    let (h, w) = truth.u.dim();
    let mask = Array2::from_elem((h, w), true);
    let mut frames = Vec::with_capacity(n_frames);
    let mut current = band_limited_texture(texture_seed, w, h);
    for k in 0..n_frames {
        let t = truth.t_prev + spacing * k as i32;
        frames.push(
            SatelliteFrame::new(channel, current.clone(), mask.clone(), t, truth.transform)
                .expect("warped texture values stay inside [0,1]"),
        );
        if k + 1 < n_frames {
            let prev = current;
            current = Array2::from_shape_fn((h, w), |(y, x)| {
                raster::sample_wrapped(
                    &prev,
                    x as f64 - truth.u[(y, x)],
                    y as f64 - truth.v[(y, x)],
                )
            });
        }
    }
    frames
}
