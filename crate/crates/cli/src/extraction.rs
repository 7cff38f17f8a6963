//! Cached extraction driver.
//!
//! Processes discovered sessions one at a time (bounding peak memory) and
//! the frame pairs inside each session concurrently. Per pair it resolves
//! the stabilized flow through the content-addressed cache, then runs the
//! downstream field analysis and descriptor computation. Output rows carry
//! the same deterministic `(timestamp, region_id)` order as the underlying
//! library driver, regardless of scheduling or cache state.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use chrono::{DateTime, NaiveDate, Utc};
use ndarray::Zip;
use rayon::prelude::*;
use stormflow::climatology::{build_density_grid, DensityGrid, StormDB};
use stormflow::descriptors::{analyze_flow, estimate_pair_flow, SkippedPair, VortexDescriptor};
use stormflow::field_analysis::{helmholtz_decompose, q_criterion, VortexRegion};
use stormflow::geo_imaging::FramePair;
use stormflow::optical_flow::FlowField;

use crate::cache::{flow_key, quantize_to_f32, FlowCache};
use crate::config::PipelineConfig;
use crate::frames::Discovery;
use crate::{data_error, CliResult};

/// One detected vortex with everything downstream consumers need.
pub struct ExtractedRow {
    pub region: VortexRegion,
    pub descriptor: VortexDescriptor,
    pub label: Option<bool>,
}

/// Everything produced for one frame pair.
struct PairOutcome {
    t_next: DateTime<Utc>,
    rows: Result<Vec<ExtractedRow>, SkippedPair>,
    cache_hit: bool,
}

/// Aggregated result over all sessions.
pub struct ExtractionResult {
    /// Detections sorted by `(timestamp, region_id)`.
    pub rows: Vec<ExtractedRow>,
    /// Pairs that failed mid-pipeline, in time order.
    pub skipped: Vec<SkippedPair>,
    /// Timestamps of all processed pairs, in time order.
    pub pair_times: Vec<DateTime<Utc>>,
    pub cache_hits: usize,
}

impl ExtractionResult {
    /// Rows in the `(descriptor, label)` shape used by the table writer and
    /// the classifier.
    pub fn descriptor_rows(&self) -> Vec<(VortexDescriptor, Option<bool>)> {
        self.rows
            .iter()
            .map(|r| (r.descriptor.clone(), r.label))
            .collect()
    }
}

/// Optional per-pair artifacts written during extraction.
pub struct ArtifactSink {
    /// Directory for vortex-indicator rasters (`<UTC time>.q.f32` + sidecar).
    pub q_dir: Option<PathBuf>,
}

impl ArtifactSink {
    pub fn none() -> Self {
        ArtifactSink { q_dir: None }
    }
}

/// Runs cached extraction over every discovered session.
pub fn run_extraction(
    discovery: &Discovery,
    cfg: &PipelineConfig,
    db: Option<&StormDB>,
    artifacts: &ArtifactSink,
) -> CliResult<ExtractionResult> {
    let cache = FlowCache::open(&cfg.output_dir)?;
    if let Some(dir) = &artifacts.q_dir {
        fs::create_dir_all(dir)
            .with_context(|| format!("cannot create {}", dir.display()))
            .map_err(data_error)?;
    }

    // Density grids are date-conditioned; build each date once up front so
    // the parallel sections only read.
    let mut grids: HashMap<NaiveDate, DensityGrid> = HashMap::new();
    if let Some(db) = db {
        for session in &discovery.sessions {
            for pair in &session[1..] {
                let date = pair.timestamp().date_naive();
                grids
                    .entry(date)
                    .or_insert_with(|| build_density_grid(db, date));
            }
        }
    }

    let mut result = ExtractionResult {
        rows: Vec::new(),
        skipped: Vec::new(),
        pair_times: Vec::new(),
        cache_hits: 0,
    };

    for session in &discovery.sessions {
        let seq = crate::frames::load_session(session, cfg)?;
        let pairs = seq.pairs();
        let outcomes: Vec<CliResult<PairOutcome>> = (0..pairs.len() - 1)
            .into_par_iter()
            .map(|i| {
                process_pair(
                    &pairs[i],
                    &pairs[i + 1],
                    i,
                    db,
                    &grids,
                    cfg,
                    &cache,
                    artifacts,
                )
            })
            .collect();

        for outcome in outcomes {
            let outcome = outcome?;
            result.pair_times.push(outcome.t_next);
            result.cache_hits += usize::from(outcome.cache_hit);
            match outcome.rows {
                Ok(rows) => result.rows.extend(rows),
                Err(skip) => result.skipped.push(skip),
            }
        }
    }

    result.rows.sort_by(|a, b| {
        (a.descriptor.timestamp, &a.descriptor.region_id)
            .cmp(&(b.descriptor.timestamp, &b.descriptor.region_id))
    });
    Ok(result)
}

#[allow(clippy::too_many_arguments)]
fn process_pair(
    prev: &FramePair,
    next: &FramePair,
    index_in_session: usize,
    db: Option<&StormDB>,
    grids: &HashMap<NaiveDate, DensityGrid>,
    cfg: &PipelineConfig,
    cache: &FlowCache,
    artifacts: &ArtifactSink,
) -> CliResult<PairOutcome> {
    let skip = |e: stormflow::Error| SkippedPair {
        t_prev: prev.timestamp(),
        t_next: next.timestamp(),
        reason: e.to_string(),
    };

    let channel = cfg.extract.flow_channel;
    let key = flow_key(prev.frame(channel), next.frame(channel), &cfg.flow);
    let (flow, cache_hit) = match cache.load(&key) {
        Some(flow) => (flow, true),
        None => {
            let flow = match estimate_pair_flow(prev, next, &cfg.extract) {
                Ok(flow) => quantize_to_f32(&flow),
                Err(e) => {
                    return Ok(PairOutcome {
                        t_next: next.timestamp(),
                        rows: Err(skip(e)),
                        cache_hit: false,
                    })
                }
            };
            cache.store(&key, &flow, index_in_session)?;
            (flow, false)
        }
    };

    if let Some(dir) = &artifacts.q_dir {
        write_q_raster(dir, &flow, next)?;
    }

    let grid = grids.get(&next.timestamp().date_naive());
    let rows = analyze_flow(&flow, next, db, grid, &cfg.extract)
        .map(|triples| {
            triples
                .into_iter()
                .map(|(region, descriptor, label)| ExtractedRow {
                    region,
                    descriptor,
                    label,
                })
                .collect()
        })
        .map_err(skip);
    Ok(PairOutcome {
        t_next: next.timestamp(),
        rows,
        cache_hit,
    })
}

/// File-name-safe UTC stamp, e.g. `20080621T120000Z`.
pub fn compact_stamp(t: DateTime<Utc>) -> String {
    t.format("%Y%m%dT%H%M%SZ").to_string()
}

/// Writes the vortex-indicator raster for one pair: raw little-endian
/// float32 values (masked pixels as NaN) plus a JSON sidecar describing the
/// geometry and the frame times. Diagnostic output only — nothing reads it
/// back.
fn write_q_raster(dir: &Path, flow: &FlowField, next: &FramePair) -> CliResult<()> {
    let (sol, _) = helmholtz_decompose(flow).map_err(data_error)?;
    let mut q = q_criterion(&sol);
    Zip::from(&mut q.mask)
        .and(&next.ch3.mask)
        .and(&next.ch4.mask)
        .for_each(|m, &a, &b| *m = *m && a && b);

    let stem = compact_stamp(next.timestamp());
    let raster_path = dir.join(format!("{stem}.q.f32"));
    let mut bytes = Vec::with_capacity(q.values.len() * 4);
    for ((y, x), &val) in q.values.indexed_iter() {
        let out = if q.mask[(y, x)] { val as f32 } else { f32::NAN };
        bytes.extend_from_slice(&out.to_le_bytes());
    }
    fs::write(&raster_path, bytes)
        .with_context(|| format!("cannot write {}", raster_path.display()))
        .map_err(data_error)?;

    let meta = serde_json::json!({
        "t_prev": flow.t_prev.to_rfc3339(),
        "t_next": flow.t_next.to_rfc3339(),
        "transform": flow.transform,
        "units": "per frame-interval squared",
    });
    let meta_path = dir.join(format!("{stem}.q.json"));
    fs::write(&meta_path, serde_json::to_string_pretty(&meta).expect("json"))
        .with_context(|| format!("cannot write {}", meta_path.display()))
        .map_err(data_error)
}
