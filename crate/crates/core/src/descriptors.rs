//! Eight-feature vortex descriptors and the batch pipeline that produces
//! them from a frame sequence.
//!
//! Each detected region Φ is summarized by
//! `X(Φ) = (w1, …, w8)`:
//!
//! | feature | meaning                                          | units        |
//! |---------|--------------------------------------------------|--------------|
//! | w1      | mean channel-3 brightness over Φ                 | [0, 1]       |
//! | w2      | mean channel-4 brightness over Φ                 | [0, 1]       |
//! | w3      | mean flow speed over Φ                           | px/frame     |
//! | w4      | mean flow direction over Φ (circular)            | (−π, π] rad  |
//! | w5      | mean vorticity of the solenoidal component       | 1/frame      |
//! | w6      | mean divergence of the irrotational component    | 1/frame      |
//! | w7      | maximum Q over Φ                                 | 1/frame²     |
//! | w8      | mean climatological storm density over Φ         | storms/day   |
//!
//! Brightness features use the *raw* frames; histogram equalization is a
//! preprocessing step for motion estimation only.

use chrono::{DateTime, NaiveDate, Utc};
use ndarray::Zip;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

use crate::climatology::{
    build_density_grid, label_vortex, DensityGrid, LabelDomain, StormDB,
};
use crate::field_analysis::{
    divergence, extract_vortices_dilated, q_criterion, vorticity, ScalarField, VortexRegion,
};
use crate::geo_imaging::{equalize_pair, Channel, FramePair, FrameSequence, SatelliteFrame};
use crate::optical_flow::{lucas_kanade_dense, stabilize_flow, FlowField, FlowParams};
use crate::{Error, Result};

/// Version tag of the feature-vector layout, embedded in trained models so a
/// classifier refuses descriptors whose meaning has drifted.
pub const FEATURE_LAYOUT: &str = "stormflow-features-v1:w1-w8";

/// Column names, in feature-vector order.
pub const FEATURE_NAMES: [&str; 8] = ["w1", "w2", "w3", "w4", "w5", "w6", "w7", "w8"];

/// How the mean flow direction (w4) is aggregated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionStat {
    /// Circular mean `atan2(Σ sin θ, Σ cos θ)` — well-defined under angle
    /// wrap-around and returned in `(−π, π]`.
    #[default]
    CircularMean,
    /// Arithmetic mean of the absolute per-pixel angle `|θ|`. Collapses the
    /// direction sign and jumps at the ±π seam; kept only for comparison
    /// runs against the circular mean.
    MeanAbsoluteAngle,
}

/// The 8-feature summary of one detected vortex region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VortexDescriptor {
    pub region_id: String,
    pub timestamp: DateTime<Utc>,
    /// `(lon, lat)` of the region centroid.
    pub centroid_geo: (f64, f64),
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
    pub w5: f64,
    pub w6: f64,
    pub w7: f64,
    pub w8: f64,
}

impl VortexDescriptor {
    /// The feature vector in the fixed order named by [`FEATURE_NAMES`].
    pub fn features(&self) -> [f64; 8] {
        [
            self.w1, self.w2, self.w3, self.w4, self.w5, self.w6, self.w7, self.w8,
        ]
    }
}

/// Computes the descriptor of `region` with the default (circular) direction
/// statistic. All grids must share one geo transform, and every region pixel
/// must be valid in every input.
#[allow(clippy::too_many_arguments)]
pub fn compute_descriptor(
    region: &VortexRegion,
    ch3: &SatelliteFrame,
    ch4: &SatelliteFrame,
    flow: &FlowField,
    sol: &FlowField,
    irr: &FlowField,
    q: &ScalarField,
    grid: &DensityGrid,
) -> Result<VortexDescriptor> {
    compute_descriptor_with(
        region,
        ch3,
        ch4,
        flow,
        sol,
        irr,
        q,
        grid,
        DirectionStat::CircularMean,
    )
}

/// [`compute_descriptor`] with an explicit direction statistic.
#[allow(clippy::too_many_arguments)]
pub fn compute_descriptor_with(
    region: &VortexRegion,
    ch3: &SatelliteFrame,
    ch4: &SatelliteFrame,
    flow: &FlowField,
    sol: &FlowField,
    irr: &FlowField,
    q: &ScalarField,
    grid: &DensityGrid,
    direction: DirectionStat,
) -> Result<VortexDescriptor> {
    let vort_sol = vorticity(sol);
    let div_irr = divergence(irr);
    descriptor_from_fields(
        region, ch3, ch4, flow, &vort_sol, &div_irr, q, Some(grid), direction,
    )
}

/// Shared core: takes the already-differentiated diagnostic fields so batch
/// extraction can reuse them across the regions of one frame pair. A missing
/// density grid (no report archive configured) yields `w8 = 0`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn descriptor_from_fields(
    region: &VortexRegion,
    ch3: &SatelliteFrame,
    ch4: &SatelliteFrame,
    flow: &FlowField,
    vort_sol: &ScalarField,
    div_irr: &ScalarField,
    q: &ScalarField,
    grid: Option<&DensityGrid>,
    direction: DirectionStat,
) -> Result<VortexDescriptor> {
    let transform = &flow.transform;
    let same = [
        ("channel-3 frame", &ch3.transform),
        ("channel-4 frame", &ch4.transform),
        ("solenoidal vorticity", &vort_sol.transform),
        ("irrotational divergence", &div_irr.transform),
        ("Q field", &q.transform),
    ];
    for (name, t) in same {
        if t != transform {
            return Err(Error::FrameMismatch(format!(
                "descriptor inputs disagree on grid geometry: {name} differs from the flow field"
            )));
        }
    }
    if region.pixels.is_empty() {
        return Err(Error::EmptyInput("vortex region has no pixels".into()));
    }

    let n = region.pixels.len() as f64;
    let (mut s1, mut s2, mut s3, mut s5, mut s6, mut s8) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut sin_sum, mut cos_sum, mut abs_angle_sum) = (0.0, 0.0, 0.0);
    let mut w7 = f64::NEG_INFINITY;

    for &(x, y) in &region.pixels {
        if y >= transform.height || x >= transform.width {
            return Err(Error::InvalidParameter(format!(
                "region pixel ({x}, {y}) lies outside the {}×{} grid",
                transform.width, transform.height
            )));
        }
        let idx = (y, x);
        let valid = ch3.mask[idx]
            && ch4.mask[idx]
            && flow.mask[idx]
            && vort_sol.mask[idx]
            && div_irr.mask[idx]
            && q.mask[idx];
        if !valid {
            return Err(Error::InvalidParameter(format!(
                "region pixel ({x}, {y}) is masked in at least one descriptor input"
            )));
        }

        s1 += ch3.pixels[idx];
        s2 += ch4.pixels[idx];
        let (u, v) = (flow.u[idx], flow.v[idx]);
        s3 += u.hypot(v);
        let theta = v.atan2(u);
        sin_sum += theta.sin();
        cos_sum += theta.cos();
        abs_angle_sum += theta.abs();
        s5 += vort_sol.values[idx];
        s6 += div_irr.values[idx];
        w7 = w7.max(q.values[idx]);
        let (lon, lat) = transform.pixel_to_geo(x as f64, y as f64)?;
        s8 += grid.and_then(|g| g.density_at(lon, lat)).unwrap_or(0.0);
    }

    let w4 = match direction {
        DirectionStat::CircularMean => {
            let angle = sin_sum.atan2(cos_sum);
            // atan2 ranges over [−π, π]; fold the lower seam onto +π so the
            // direction statistic has a single representation.
            if angle == -std::f64::consts::PI {
                std::f64::consts::PI
            } else {
                angle
            }
        }
        DirectionStat::MeanAbsoluteAngle => abs_angle_sum / n,
    };

    Ok(VortexDescriptor {
        region_id: region.region_id.clone(),
        timestamp: region.timestamp,
        centroid_geo: region.centroid_geo,
        w1: s1 / n,
        w2: s2 / n,
        w3: s3 / n,
        w4,
        w5: s5 / n,
        w6: s6 / n,
        w7,
        w8: s8 / n,
    })
}

/// Configuration of the extraction pipeline.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExtractConfig {
    pub flow: FlowParams,
    /// Regions smaller than this many pixels are discarded.
    pub min_area_px: usize,
    /// Rounds of 8-neighbor growth applied to the positive-Q support before
    /// connected-component labeling.
    pub dilation_px: usize,
    /// Channel used for motion estimation.
    pub flow_channel: Channel,
    pub direction: DirectionStat,
    /// Domain inside which ground-truth labels are defined.
    pub domain: LabelDomain,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            flow: FlowParams::default(),
            min_area_px: 20,
            dilation_px: 0,
            flow_channel: Channel::Ch4,
            direction: DirectionStat::CircularMean,
            domain: LabelDomain::default(),
        }
    }
}

/// Diagnostic for a frame pair the pipeline could not process.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SkippedPair {
    pub t_prev: DateTime<Utc>,
    pub t_next: DateTime<Utc>,
    pub reason: String,
}

/// Result of running the pipeline over a sequence.
#[derive(Clone, Debug, Default)]
pub struct BatchExtract {
    /// Descriptors sorted by `(timestamp, region_id)`; the label is present
    /// when a report archive was supplied and the centroid lies inside the
    /// labeled domain.
    pub rows: Vec<(VortexDescriptor, Option<bool>)>,
    pub skipped: Vec<SkippedPair>,
}

/// Runs the full per-pair pipeline over every adjacent pair of the sequence:
/// equalize → dense optical flow → stabilization → Helmholtz split →
/// Q-criterion → region extraction → descriptors (and labels, when `db` is
/// given). Pairs are processed concurrently; the output order is the
/// deterministic `(timestamp, region_id)` order regardless of scheduling. A
/// pair that fails is recorded in `skipped` instead of aborting the run.
///
/// Each descriptor is stamped with the *later* frame time of its pair, and
/// regions must be observable in both channels: the positive-Q support is
/// intersected with both frames' validity masks before labeling.
pub fn batch_extract(
    seq: &FrameSequence,
    db: Option<&StormDB>,
    cfg: &ExtractConfig,
) -> Result<BatchExtract> {
    cfg.flow.validate()?;
    if seq.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "pipeline needs at least 2 frame pairs, found {}",
            seq.len()
        )));
    }

    // Density grids are date-conditioned; build one per distinct date up
    // front so the parallel section only reads.
    let mut grids: HashMap<NaiveDate, DensityGrid> = HashMap::new();
    if let Some(db) = db {
        for pair in &seq.pairs()[1..] {
            let date = pair.timestamp().date_naive();
            grids
                .entry(date)
                .or_insert_with(|| build_density_grid(db, date));
        }
    }

    let pairs = seq.pairs();
    let outcomes: Vec<std::result::Result<Vec<(VortexDescriptor, Option<bool>)>, SkippedPair>> =
        (0..pairs.len() - 1)
            .into_par_iter()
            .map(|i| {
                let (prev, next) = (&pairs[i], &pairs[i + 1]);
                process_pair(prev, next, db, grids.get(&next.timestamp().date_naive()), cfg)
                    .map_err(|e| SkippedPair {
                        t_prev: prev.timestamp(),
                        t_next: next.timestamp(),
                        reason: e.to_string(),
                    })
            })
            .collect();

    let mut out = BatchExtract::default();
    for outcome in outcomes {
        match outcome {
            Ok(rows) => out.rows.extend(rows),
            Err(skip) => out.skipped.push(skip),
        }
    }
    out.rows.sort_by(|(a, _), (b, _)| {
        (a.timestamp, &a.region_id).cmp(&(b.timestamp, &b.region_id))
    });
    Ok(out)
}

fn process_pair(
    prev: &FramePair,
    next: &FramePair,
    db: Option<&StormDB>,
    grid: Option<&DensityGrid>,
    cfg: &ExtractConfig,
) -> Result<Vec<(VortexDescriptor, Option<bool>)>> {
    let flow = estimate_pair_flow(prev, next, cfg)?;
    descriptors_from_flow(&flow, next, db, grid, cfg)
}

/// Motion-estimation half of the per-pair pipeline: shared-mapping
/// equalization on the configured channel, dense matching, stabilization.
/// Exposed separately so callers can cache the (expensive) stabilized flow.
pub fn estimate_pair_flow(
    prev: &FramePair,
    next: &FramePair,
    cfg: &ExtractConfig,
) -> Result<FlowField> {
    let (prev_eq, next_eq) = equalize_pair(prev.frame(cfg.flow_channel), next.frame(cfg.flow_channel))?;
    let raw = lucas_kanade_dense(&prev_eq, &next_eq, &cfg.flow)?;
    stabilize_flow(&raw, &cfg.flow)
}

/// Downstream half of the per-pair pipeline, reusable with a cached flow:
/// Helmholtz split, Q-criterion on the rotational component, region
/// extraction, descriptors, and (when `db` is given) ground-truth labels.
pub fn descriptors_from_flow(
    flow: &FlowField,
    next: &FramePair,
    db: Option<&StormDB>,
    grid: Option<&DensityGrid>,
    cfg: &ExtractConfig,
) -> Result<Vec<(VortexDescriptor, Option<bool>)>> {
    Ok(analyze_flow(flow, next, db, grid, cfg)?
        .into_iter()
        .map(|(_, descriptor, label)| (descriptor, label))
        .collect())
}

/// Like [`descriptors_from_flow`], but keeps each detected region (pixel
/// support and all) alongside its descriptor, for callers that render or
/// export region geometry.
pub fn analyze_flow(
    flow: &FlowField,
    next: &FramePair,
    db: Option<&StormDB>,
    grid: Option<&DensityGrid>,
    cfg: &ExtractConfig,
) -> Result<Vec<(VortexRegion, VortexDescriptor, Option<bool>)>> {
    if flow.width() != next.ch4.width()
        || flow.height() != next.ch4.height()
        || flow.t_next != next.timestamp()
    {
        return Err(Error::InvalidParameter(format!(
            "flow field {}x{} at {} does not belong to the {}x{} frame pair at {}",
            flow.width(),
            flow.height(),
            flow.t_next,
            next.ch4.width(),
            next.ch4.height(),
            next.timestamp()
        )));
    }
    let (sol, irr) = crate::field_analysis::helmholtz_decompose(flow)?;
    let mut q = q_criterion(&sol);
    Zip::from(&mut q.mask)
        .and(&next.ch3.mask)
        .and(&next.ch4.mask)
        .for_each(|m, &a, &b| *m = *m && a && b);

    let regions = extract_vortices_dilated(&q, cfg.min_area_px, next.timestamp(), cfg.dilation_px);
    let vort_sol = vorticity(&sol);
    let div_irr = divergence(&irr);

    let mut rows = Vec::with_capacity(regions.len());
    for region in regions {
        let descriptor = descriptor_from_fields(
            &region,
            &next.ch3,
            &next.ch4,
            flow,
            &vort_sol,
            &div_irr,
            &q,
            grid,
            cfg.direction,
        )?;
        let label = db.and_then(|db| label_vortex(db, &region, &cfg.domain));
        rows.push((region, descriptor, label));
    }
    Ok(rows)
}

/// Writes descriptor rows as CSV with the header
/// `region_id,timestamp,lon,lat,w1,…,w8,label`; the label cell is `1`, `0`,
/// or empty for unlabeled rows.
pub fn write_descriptor_csv(
    rows: &[(VortexDescriptor, Option<bool>)],
    path: &Path,
) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::CsvRow {
        path: path.to_path_buf(),
        line: 0,
        reason: e.to_string(),
    })?;
    let mut header = vec!["region_id", "timestamp", "lon", "lat"];
    header.extend(FEATURE_NAMES);
    header.push("label");
    writer
        .write_record(&header)
        .map_err(|e| Error::Serialization(e.to_string()))?;
    for (d, label) in rows {
        let mut record = vec![
            d.region_id.clone(),
            d.timestamp.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            format!("{}", d.centroid_geo.0),
            format!("{}", d.centroid_geo.1),
        ];
        record.extend(d.features().iter().map(|w| format!("{w}")));
        record.push(match label {
            Some(true) => "1".into(),
            Some(false) => "0".into(),
            None => String::new(),
        });
        writer
            .write_record(&record)
            .map_err(|e| Error::Serialization(e.to_string()))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Reads a descriptor CSV produced by [`write_descriptor_csv`].
pub fn read_descriptor_csv(path: &Path) -> Result<Vec<(VortexDescriptor, Option<bool>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::CsvRow {
            path: path.to_path_buf(),
            line: 0,
            reason: e.to_string(),
        })?;
    let row_err = |line: u64, reason: String| Error::CsvRow {
        path: path.to_path_buf(),
        line,
        reason,
    };

    {
        let headers = reader.headers().map_err(|e| row_err(1, e.to_string()))?;
        let mut expected = vec!["region_id", "timestamp", "lon", "lat"];
        expected.extend(FEATURE_NAMES);
        expected.push("label");
        let actual: Vec<&str> = headers.iter().collect();
        if actual != expected {
            return Err(row_err(
                1,
                format!("expected header {expected:?}, found {actual:?}"),
            ));
        }
    }

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            row_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| -> Result<f64> {
            record[i]
                .parse::<f64>()
                .map_err(|e| row_err(line, format!("bad number {:?}: {e}", &record[i])))
        };
        let timestamp: DateTime<Utc> = record[1]
            .parse()
            .map_err(|e| row_err(line, format!("bad timestamp {:?}: {e}", &record[1])))?;
        let descriptor = VortexDescriptor {
            region_id: record[0].to_string(),
            timestamp,
            centroid_geo: (field(2)?, field(3)?),
            w1: field(4)?,
            w2: field(5)?,
            w3: field(6)?,
            w4: field(7)?,
            w5: field(8)?,
            w6: field(9)?,
            w7: field(10)?,
            w8: field(11)?,
        };
        let label = match &record[12] {
            "" => None,
            "1" => Some(true),
            "0" => Some(false),
            other => return Err(row_err(line, format!("bad label {other:?}; expected 1, 0, or empty"))),
        };
        rows.push((descriptor, label));
    }
    Ok(rows)
}
