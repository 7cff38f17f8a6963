//! Dense optical flow between consecutive frames and its fluid-dynamics
//! smoothing.
//!
//! Estimation is dense pyramid Lucas-Kanade: coarse-to-fine refinement of a
//! per-pixel displacement that minimizes windowed brightness-constancy
//! residuals, with window sums taken over summed-area tables so each
//! refinement sweep is linear in the pixel count.
//!
//! The raw estimate is then smoothed by treating it as the external force of
//! an incompressible-fluid step: repeatedly add the raw field, self-advect
//! semi-Lagrangianly, and diffuse spectrally. The accumulated field is
//! finally rescaled by the total forcing time (`iterations · step`) so the
//! output stays commensurate with the raw input flow. Mass conservation is
//! deliberately not enforced.
//!
//! Flow convention: `(u, v)` at pixel `(x, y)` of the earlier frame points to
//! the matching location `(x+u, y+v)` in the later frame. A scene translating
//! by `(3, 1)` pixels per frame yields `u = 3, v = 1`.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use chrono::{DateTime, Utc};
use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::geo_imaging::{GeoTransform, SatelliteFrame};
use crate::raster;
use crate::spectral;
use crate::{Error, Result};

/// Fixed number of Lucas-Kanade refinement sweeps per pyramid level.
const REFINEMENT_SWEEPS: usize = 3;

/// Determinant floor below which a 2×2 structure tensor is treated as
/// singular and the refinement update is skipped.
const SINGULAR_DET: f64 = 1e-12;

/// A dense displacement field between two frames, in pixels per frame
/// interval.
#[derive(Clone, Debug)]
pub struct FlowField {
    /// Horizontal displacement, indexed `[(y, x)]`.
    pub u: Array2<f64>,
    /// Vertical displacement (positive = down the rows), indexed `[(y, x)]`.
    pub v: Array2<f64>,
    /// `true` where the estimate is reliable; invalid pixels hold `(0, 0)`.
    pub mask: Array2<bool>,
    pub transform: GeoTransform,
    pub t_prev: DateTime<Utc>,
    pub t_next: DateTime<Utc>,
}

impl FlowField {
    pub fn new(
        u: Array2<f64>,
        v: Array2<f64>,
        mask: Array2<bool>,
        transform: GeoTransform,
        t_prev: DateTime<Utc>,
        t_next: DateTime<Utc>,
    ) -> Result<Self> {
        let (h, w) = u.dim();
        if (w, h) != (transform.width, transform.height) || v.dim() != u.dim() || mask.dim() != u.dim()
        {
            return Err(Error::DimensionMismatch {
                context: "flow field construction".into(),
                expected_w: transform.width,
                expected_h: transform.height,
                actual_w: w,
                actual_h: h,
            });
        }
        Ok(FlowField {
            u,
            v,
            mask,
            transform,
            t_prev,
            t_next,
        })
    }

    /// All-zero flow with a fully valid mask.
    pub fn zeros(transform: GeoTransform, t_prev: DateTime<Utc>, t_next: DateTime<Utc>) -> Self {
        let shape = (transform.height, transform.width);
        FlowField {
            u: Array2::zeros(shape),
            v: Array2::zeros(shape),
            mask: Array2::from_elem(shape, true),
            transform,
            t_prev,
            t_next,
        }
    }

    pub fn width(&self) -> usize {
        self.transform.width
    }

    pub fn height(&self) -> usize {
        self.transform.height
    }

    /// Per-pixel speed `‖(u, v)‖`.
    pub fn magnitude(&self) -> Array2<f64> {
        let mut out = Array2::zeros(self.u.dim());
        Zip::from(&mut out)
            .and(&self.u)
            .and(&self.v)
            .for_each(|m, &a, &b| *m = a.hypot(b));
        out
    }

    /// Mean displacement vector over valid pixels; `None` when all pixels are
    /// invalid.
    pub fn mean_vector(&self) -> Option<(f64, f64)> {
        let mut su = 0.0;
        let mut sv = 0.0;
        let mut n = 0usize;
        for ((y, x), &m) in self.mask.indexed_iter() {
            if m {
                su += self.u[(y, x)];
                sv += self.v[(y, x)];
                n += 1;
            }
        }
        (n > 0).then(|| (su / n as f64, sv / n as f64))
    }

    fn same_grid(&self, other: &FlowField) -> Result<()> {
        if self.u.dim() != other.u.dim() {
            let (h, w) = other.u.dim();
            return Err(Error::DimensionMismatch {
                context: "flow field pair".into(),
                expected_w: self.width(),
                expected_h: self.height(),
                actual_w: w,
                actual_h: h,
            });
        }
        if self.transform != other.transform {
            return Err(Error::FrameMismatch(
                "flow fields live on different geo transforms".into(),
            ));
        }
        Ok(())
    }
}

/// Parameters of the iterative fluid smoothing pass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothingParams {
    /// Fluid viscosity ν of the spectral diffusion step.
    pub viscosity: f64,
    /// Time step Δt shared by forcing, advection, and diffusion.
    pub step: f64,
    /// Number of force/advect/diffuse rounds.
    pub iterations: usize,
}

impl Default for SmoothingParams {
    fn default() -> Self {
        SmoothingParams {
            viscosity: 0.001,
            step: 1.0,
            iterations: 5,
        }
    }
}

/// Parameters of the full flow-estimation stage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    /// Pyramid depth; level 0 is full resolution.
    pub pyramid_levels: usize,
    /// Half-width of the square matching window (full side `2r+1`).
    pub window_radius: usize,
    /// Reliability threshold on the least eigenvalue of the window-averaged
    /// structure tensor, in squared brightness units per pixel.
    pub min_eigen_threshold: f64,
    pub smoothing: SmoothingParams,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            pyramid_levels: 3,
            window_radius: 8,
            min_eigen_threshold: 1e-4,
            smoothing: SmoothingParams::default(),
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        if self.pyramid_levels < 1 {
            return Err(Error::InvalidParameter("pyramid_levels must be ≥ 1".into()));
        }
        if self.window_radius < 1 {
            return Err(Error::InvalidParameter("window_radius must be ≥ 1".into()));
        }
        if !(self.min_eigen_threshold >= 0.0) {
            return Err(Error::InvalidParameter(
                "min_eigen_threshold must be non-negative".into(),
            ));
        }
        if !(self.smoothing.viscosity >= 0.0) {
            return Err(Error::InvalidParameter("viscosity must be ≥ 0".into()));
        }
        if !(self.smoothing.step > 0.0) {
            return Err(Error::InvalidParameter("smoothing step must be > 0".into()));
        }
        Ok(())
    }
}

/// One pyramid level of a frame: brightness, validity, and brightness
/// gradients.
struct PyramidLevel {
    values: Array2<f64>,
    mask: Array2<bool>,
}

fn build_pyramid(frame: &SatelliteFrame, levels: usize) -> Vec<PyramidLevel> {
    let mut pyr = Vec::with_capacity(levels);
    // A light base-level blur regularizes the brightness gradients; applied
    // identically to both frames it commutes with the motion, so brightness
    // constancy is preserved.
    pyr.push(PyramidLevel {
        values: raster::blur_121(&frame.pixels, &frame.mask),
        mask: frame.mask.clone(),
    });
    for _ in 1..levels {
        let prev = pyr.last().unwrap();
        let (values, mask) = raster::downsample_half(&prev.values, &prev.mask);
        pyr.push(PyramidLevel { values, mask });
    }
    pyr
}

/// Central-difference x-gradient with one-sided stencils at the borders.
pub(crate) fn ddx(grid: &Array2<f64>) -> Array2<f64> {
    let (h, w) = grid.dim();
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            out[(y, x)] = if w == 1 {
                0.0
            } else if x == 0 {
                grid[(y, 1)] - grid[(y, 0)]
            } else if x == w - 1 {
                grid[(y, w - 1)] - grid[(y, w - 2)]
            } else {
                (grid[(y, x + 1)] - grid[(y, x - 1)]) / 2.0
            };
        }
    }
    out
}

/// Central-difference y-gradient with one-sided stencils at the borders.
pub(crate) fn ddy(grid: &Array2<f64>) -> Array2<f64> {
    let (h, w) = grid.dim();
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            out[(y, x)] = if h == 1 {
                0.0
            } else if y == 0 {
                grid[(1, x)] - grid[(0, x)]
            } else if y == h - 1 {
                grid[(h - 1, x)] - grid[(h - 2, x)]
            } else {
                (grid[(y + 1, x)] - grid[(y - 1, x)]) / 2.0
            };
        }
    }
    out
}

/// One unnormalized box-sum pass of half-width `a` over the whole grid,
/// truncated at the borders.
fn box_pass(grid: &Array2<f64>, a: usize) -> Array2<f64> {
    let (h, w) = grid.dim();
    let ii = raster::integral_image(grid);
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        let y0 = y.saturating_sub(a);
        let y1 = (y + a).min(h - 1);
        for x in 0..w {
            let x0 = x.saturating_sub(a);
            let x1 = (x + a).min(w - 1);
            out[(y, x)] = raster::box_sum(&ii, x0, y0, x1, y1);
        }
    }
    out
}

/// Window sums for the least-squares flow solve, taken under a triangle
/// weight profile (two cascaded box sums of half-width `a`, support `±2a`).
///
/// The weight shape matters for the iterative refinement: the update each
/// sweep applies to the flow error behaves like `1 − K(q)` per frequency,
/// where `K` is the window's normalized frequency response. A flat box has
/// negative sidelobes (`K` down to −0.22), so error modes near the first
/// sidelobe grow by over 20% per sweep and the refinement visibly diverges
/// into ripple artifacts on repetitive texture. The triangle window is a
/// Fejér kernel with `K(q) ∈ [0, 1]`, which makes every mode non-expanding.
fn triangle_window_sums(grid: &Array2<f64>, a: usize) -> Array2<f64> {
    let once = box_pass(grid, a);
    box_pass(&once, a)
}

/// Estimates dense flow from `prev` to `next` by coarse-to-fine Lucas-Kanade.
///
/// Both frames must share channel and transform and should already be
/// equalized as a pair. Pixels whose window-averaged structure tensor has a
/// least eigenvalue below `p.min_eigen_threshold` — untextured or
/// aperture-degenerate neighborhoods — come back as `(0, 0)` with
/// `mask = false`.
pub fn lucas_kanade_dense(
    prev: &SatelliteFrame,
    next: &SatelliteFrame,
    p: &FlowParams,
) -> Result<FlowField> {
    p.validate()?;
    if prev.channel != next.channel {
        return Err(Error::FrameMismatch(format!(
            "flow between channels {} and {}",
            prev.channel, next.channel
        )));
    }
    if prev.transform != next.transform {
        return Err(Error::FrameMismatch(
            "flow frames must share one geo transform".into(),
        ));
    }
    if next.timestamp <= prev.timestamp {
        return Err(Error::FrameMismatch(
            "flow frames must be in increasing time order".into(),
        ));
    }
    let (h, w) = prev.pixels.dim();
    let window = 2 * p.window_radius + 1;
    let coarsest_w = w >> (p.pyramid_levels - 1);
    let coarsest_h = h >> (p.pyramid_levels - 1);
    if coarsest_w < window || coarsest_h < window {
        return Err(Error::InvalidParameter(format!(
            "frames of {w}x{h} are too small for {} pyramid levels with a {window}-pixel window",
            p.pyramid_levels
        )));
    }

    let prev_pyr = build_pyramid(prev, p.pyramid_levels);
    let next_pyr = build_pyramid(next, p.pyramid_levels);

    let coarsest = prev_pyr.last().unwrap().values.dim();
    let mut u = Array2::<f64>::zeros(coarsest);
    let mut v = Array2::<f64>::zeros(coarsest);

    // Kept from the finest level for the reliability test below.
    let mut finest_tensor: Option<(Array2<f64>, Array2<f64>, Array2<f64>, Array2<f64>)> = None;

    for level in (0..p.pyramid_levels).rev() {
        let pl = &prev_pyr[level];
        let nl = &next_pyr[level];
        let (lh, lw) = pl.values.dim();

        if u.dim() != (lh, lw) {
            u = raster::upsample_to(&u, lh, lw).mapv(|d| d * 2.0);
            v = raster::upsample_to(&v, lh, lw).mapv(|d| d * 2.0);
        }

        let ix = ddx(&pl.values);
        let iy = ddy(&pl.values);
        let weight = pl.mask.mapv(|m| if m { 1.0 } else { 0.0 });
        // Triangle half-width: two cascades of `a` span ±2a ≈ ±window_radius.
        let a = p.window_radius.div_ceil(2);
        let g11 = triangle_window_sums(&(&ix * &ix * &weight), a);
        let g12 = triangle_window_sums(&(&ix * &iy * &weight), a);
        let g22 = triangle_window_sums(&(&iy * &iy * &weight), a);
        let ns = triangle_window_sums(&weight, a);

        // Sampling grid for the later frame, with invalid pixels in-filled so
        // interpolation near mask holes stays finite.
        let next_values = raster::infill_nearest(&nl.values, &nl.mask)
            .unwrap_or_else(|| Array2::zeros((lh, lw)));

        for _ in 0..REFINEMENT_SWEEPS {
            let mut bx = Array2::<f64>::zeros((lh, lw));
            let mut by = Array2::<f64>::zeros((lh, lw));
            for y in 0..lh {
                for x in 0..lw {
                    if pl.mask[(y, x)] {
                        let warped = raster::sample_clamped(
                            &next_values,
                            x as f64 + u[(y, x)],
                            y as f64 + v[(y, x)],
                        );
                        let residual = pl.values[(y, x)] - warped;
                        bx[(y, x)] = ix[(y, x)] * residual;
                        by[(y, x)] = iy[(y, x)] * residual;
                    }
                }
            }
            let b1s = triangle_window_sums(&bx, a);
            let b2s = triangle_window_sums(&by, a);

            for y in 0..lh {
                for x in 0..lw {
                    let det = g11[(y, x)] * g22[(y, x)] - g12[(y, x)] * g12[(y, x)];
                    if det > SINGULAR_DET {
                        let b1 = b1s[(y, x)];
                        let b2 = b2s[(y, x)];
                        u[(y, x)] += (g22[(y, x)] * b1 - g12[(y, x)] * b2) / det;
                        v[(y, x)] += (g11[(y, x)] * b2 - g12[(y, x)] * b1) / det;
                    }
                }
            }
            // Pixels that locked onto a false correspondence (aliasing on
            // repetitive texture) are outliers against their neighborhood;
            // a median pass after each sweep pulls them back into the basin
            // of the true motion and suppresses per-window solve scatter.
            u = raster::median_3x3(&u);
            v = raster::median_3x3(&v);
        }

        if level == 0 {
            finest_tensor = Some((g11, g12, g22, ns));
        }
    }

    let (g11s, g12s, g22s, ns) = finest_tensor.expect("finest level always processed");
    let mut mask = Array2::<bool>::from_elem((h, w), false);
    for y in 0..h {
        for x in 0..w {
            let n = ns[(y, x)];
            let reliable = prev.mask[(y, x)] && n > 0.0 && {
                let g11 = g11s[(y, x)];
                let g12 = g12s[(y, x)];
                let g22 = g22s[(y, x)];
                let tr = g11 + g22;
                let disc = ((g11 - g22).powi(2) + 4.0 * g12 * g12).sqrt();
                let lambda_min = (tr - disc) / 2.0 / n;
                lambda_min >= p.min_eigen_threshold
            };
            if reliable {
                mask[(y, x)] = true;
            } else {
                u[(y, x)] = 0.0;
                v[(y, x)] = 0.0;
            }
        }
    }

    FlowField::new(u, v, mask, prev.transform, prev.timestamp, next.timestamp)
}

/// Semi-Lagrangian transport: each output pixel backtraces through `carrier`
/// by `dt` and bilinearly samples `f` there (clamped at the domain edge).
/// Self-advection is `advect(f, f, dt)`.
pub fn advect(f: &FlowField, carrier: &FlowField, dt: f64) -> Result<FlowField> {
    f.same_grid(carrier)?;
    let (h, w) = f.u.dim();
    let mut out = f.clone();
    for y in 0..h {
        for x in 0..w {
            let src_x = x as f64 - dt * carrier.u[(y, x)];
            let src_y = y as f64 - dt * carrier.v[(y, x)];
            out.u[(y, x)] = raster::sample_clamped(&f.u, src_x, src_y);
            out.v[(y, x)] = raster::sample_clamped(&f.v, src_x, src_y);
        }
    }
    Ok(out)
}

/// Spectral diffusion: every Fourier mode of each component is attenuated by
/// `exp(−ν·k²·dt)`, where `k` is the mode's distance from the origin of the
/// frequency plane measured in transform bins of the mirror-extended grid —
/// equivalently, the number of half-waves the mode fits across the frame.
///
/// Measuring `k` in bins (rather than radians per pixel) is what makes the
/// kernel a usable low-pass: the bandwidth is `1/√(ν·dt)` bins, ≈ 32 at the
/// defaults, so small-scale estimation noise is crushed while frame-scale
/// motion passes through almost untouched. In radians per pixel, `k` would
/// never exceed π and `exp(−0.001·π²)` ≈ 0.99 would leave even Nyquist
/// ripple intact.
///
/// `viscosity == 0` returns the input bit-for-bit. Invalid pixels are
/// in-filled with their nearest valid neighbor before the transform and
/// zeroed again afterwards, so masked data never leaks into the result.
pub fn diffuse_fft(f: &FlowField, viscosity: f64, dt: f64) -> Result<FlowField> {
    if !(viscosity >= 0.0) {
        return Err(Error::InvalidParameter("viscosity must be ≥ 0".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter("diffusion step must be > 0".into()));
    }
    if viscosity == 0.0 {
        return Ok(f.clone());
    }
    let mut out = f.clone();
    let all_valid = f.mask.iter().all(|&m| m);
    let (h, w) = f.u.dim();
    // rad/px → bin index on the extended axis: a half-sample cosine with m
    // half-waves across the frame lands in bin m, at k = π·m/width.
    let (bx, by) = (w as f64 / PI, h as f64 / PI);
    for grid in [&mut out.u, &mut out.v] {
        let source = if all_valid {
            grid.clone()
        } else {
            match raster::infill_nearest(grid, &f.mask) {
                Some(filled) => filled,
                None => continue, // fully masked component stays zero
            }
        };
        let filtered = spectral::filter_extended(&source, |kx, ky| {
            let (mx, my) = (kx * bx, ky * by);
            (-(mx * mx + my * my) * viscosity * dt).exp()
        });
        *grid = filtered;
    }
    for ((y, x), &m) in f.mask.indexed_iter() {
        if !m {
            out.u[(y, x)] = 0.0;
            out.v[(y, x)] = 0.0;
        }
    }
    Ok(out)
}

/// Smooths a raw flow estimate by iterated fluid steps.
///
/// Starting from a zero field, each round adds the raw flow as a force
/// (`F += raw·Δt`), self-advects, and diffuses. The sum of the injected
/// forces grows linearly with the round count, so the final field is rescaled
/// by `1/(iterations·Δt)`; a constant raw field therefore passes through
/// unchanged, while unstructured high-frequency noise is transported and
/// damped away. Zero iterations yield the zero field.
pub fn stabilize_flow(raw: &FlowField, p: &FlowParams) -> Result<FlowField> {
    p.validate()?;
    let s = p.smoothing;
    let mut f = FlowField {
        u: Array2::zeros(raw.u.dim()),
        v: Array2::zeros(raw.v.dim()),
        mask: raw.mask.clone(),
        transform: raw.transform,
        t_prev: raw.t_prev,
        t_next: raw.t_next,
    };
    if s.iterations == 0 {
        return Ok(f);
    }
    for _ in 0..s.iterations {
        Zip::from(&mut f.u).and(&raw.u).for_each(|a, &b| *a += b * s.step);
        Zip::from(&mut f.v).and(&raw.v).for_each(|a, &b| *a += b * s.step);
        f = advect(&f, &f, s.step)?;
        f = diffuse_fft(&f, s.viscosity, s.step)?;
    }
    let scale = 1.0 / (s.iterations as f64 * s.step);
    f.u.mapv_inplace(|x| x * scale);
    f.v.mapv_inplace(|x| x * scale);
    for ((y, x), &m) in f.mask.indexed_iter() {
        if !m {
            f.u[(y, x)] = 0.0;
            f.v[(y, x)] = 0.0;
        }
    }
    Ok(f)
}

/// Sidecar describing a flow field stored as two raw float32 grids.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlowMeta {
    pub t_prev: DateTime<Utc>,
    pub t_next: DateTime<Utc>,
    pub transform: GeoTransform,
}

/// Writes `flow` as two little-endian row-major float32 grids plus a JSON
/// sidecar. Masked pixels are stored as NaN.
pub fn write_flow(flow: &FlowField, u_path: &Path, v_path: &Path, meta_path: &Path) -> Result<()> {
    for (grid, path) in [(&flow.u, u_path), (&flow.v, v_path)] {
        let mut bytes = Vec::with_capacity(grid.len() * 4);
        for ((y, x), &val) in grid.indexed_iter() {
            let out = if flow.mask[(y, x)] { val as f32 } else { f32::NAN };
            bytes.extend_from_slice(&out.to_le_bytes());
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    }
    let meta = FlowMeta {
        t_prev: flow.t_prev,
        t_next: flow.t_next,
        transform: flow.transform,
    };
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Serialization(e.to_string()))?;
    fs::write(meta_path, text).map_err(|e| Error::io(meta_path, e))
}

/// Reads a flow field written by [`write_flow`]. NaN samples become masked
/// pixels with value zero.
pub fn read_flow(u_path: &Path, v_path: &Path, meta_path: &Path) -> Result<FlowField> {
    let meta_text = fs::read_to_string(meta_path).map_err(|e| Error::io(meta_path, e))?;
    let meta: FlowMeta = serde_json::from_str(&meta_text).map_err(|e| Error::Metadata {
        path: meta_path.to_path_buf(),
        reason: e.to_string(),
    })?;
    meta.transform.validate()?;
    let (w, h) = (meta.transform.width, meta.transform.height);
    let mut grids = Vec::with_capacity(2);
    let mut mask = Array2::<bool>::from_elem((h, w), true);
    for path in [u_path, v_path] {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() != w * h * 4 {
            return Err(Error::ImageDecode {
                path: path.to_path_buf(),
                reason: format!(
                    "expected {} bytes for {w}x{h} float32 grid, found {}",
                    w * h * 4,
                    bytes.len()
                ),
            });
        }
        let mut grid = Array2::<f64>::zeros((h, w));
        for (i, chunk) in bytes.chunks_exact(4).enumerate() {
            let raw = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            let (y, x) = (i / w, i % w);
            if raw.is_nan() {
                mask[(y, x)] = false;
            } else {
                grid[(y, x)] = f64::from(raw);
            }
        }
        grids.push(grid);
    }
    let v = grids.pop().expect("two grids pushed");
    let u = grids.pop().expect("two grids pushed");
    FlowField::new(u, v, mask, meta.transform, meta.t_prev, meta.t_next)
}
