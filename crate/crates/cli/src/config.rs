//! Pipeline configuration: a single JSON file shared by every subcommand.
//!
//! Only the input/output locations are mandatory; every tuning knob has a
//! default matching the library's defaults. Flow and forest knobs may be
//! given partially — omitted fields keep their defaults.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::Deserialize;
use stormflow::climatology::LabelDomain;
use stormflow::descriptors::{DirectionStat, ExtractConfig};
use stormflow::forest::ForestConfig;
use stormflow::geo_imaging::Channel;
use stormflow::optical_flow::FlowParams;

use crate::{usage_error, CliResult};

/// Partial override of the optical-flow parameters.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlowKnobs {
    pyramid_levels: Option<usize>,
    window_radius: Option<usize>,
    min_eigen_threshold: Option<f64>,
    viscosity: Option<f64>,
    step: Option<f64>,
    iterations: Option<usize>,
}

impl FlowKnobs {
    fn apply(&self) -> FlowParams {
        let mut p = FlowParams::default();
        if let Some(v) = self.pyramid_levels {
            p.pyramid_levels = v;
        }
        if let Some(v) = self.window_radius {
            p.window_radius = v;
        }
        if let Some(v) = self.min_eigen_threshold {
            p.min_eigen_threshold = v;
        }
        if let Some(v) = self.viscosity {
            p.smoothing.viscosity = v;
        }
        if let Some(v) = self.step {
            p.smoothing.step = v;
        }
        if let Some(v) = self.iterations {
            p.smoothing.iterations = v;
        }
        p
    }
}

/// Partial override of the random-forest parameters. The seed is not a knob
/// here: it comes from the top-level `seed` (or `--seed`) so that one value
/// governs every output of a run.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ForestKnobs {
    n_trees: Option<usize>,
    max_depth: Option<usize>,
    min_leaf: Option<usize>,
    features_per_split: Option<usize>,
}

impl ForestKnobs {
    fn apply(&self, seed: u64) -> ForestConfig {
        let mut c = ForestConfig {
            seed,
            ..ForestConfig::default()
        };
        if let Some(v) = self.n_trees {
            c.n_trees = v;
        }
        if let Some(v) = self.max_depth {
            c.max_depth = v;
        }
        if let Some(v) = self.min_leaf {
            c.min_leaf = v;
        }
        if let Some(v) = self.features_per_split {
            c.features_per_split = v;
        }
        c
    }
}

fn default_seed() -> u64 {
    7
}
fn default_min_area() -> usize {
    20
}
fn default_channel() -> Channel {
    Channel::Ch4
}
fn default_spacing_minutes() -> i64 {
    30
}
fn default_skew_minutes() -> i64 {
    2
}
/// Benchmark hours: daylight frames only, 10:00 through 18:00 GMT inclusive.
/// Set `"hours_gmt": null` to process every hour of the day.
fn default_hours() -> Option<(u32, u32)> {
    Some((10, 18))
}
fn default_train_days() -> (u32, u32) {
    (1, 10)
}
fn default_test_days() -> (u32, u32) {
    (18, 22)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    /// Directory of water-vapor channel frames (image + JSON sidecar each).
    ch3_dir: PathBuf,
    /// Directory of thermal-infrared channel frames.
    ch4_dir: PathBuf,
    /// Storm-report table (CSV). Required by climatology/train/evaluate.
    storm_csv: Option<PathBuf>,
    /// All outputs (tables, models, rasters, caches) land under here.
    output_dir: PathBuf,
    #[serde(default = "default_seed")]
    seed: u64,
    #[serde(default)]
    flow: FlowKnobs,
    #[serde(default)]
    forest: ForestKnobs,
    #[serde(default = "default_min_area")]
    min_area_px: usize,
    #[serde(default)]
    dilation_px: usize,
    #[serde(default = "default_channel")]
    flow_channel: Channel,
    /// Labeling domain; defaults to the CONUS bounding box.
    #[serde(default)]
    domain: LabelDomain,
    /// Optional polygon (CSV of `lon,lat` vertices) refining the domain.
    polygon_path: Option<PathBuf>,
    #[serde(default = "default_spacing_minutes")]
    nominal_spacing_minutes: i64,
    #[serde(default = "default_skew_minutes")]
    max_channel_skew_minutes: i64,
    #[serde(default = "default_hours")]
    hours_gmt: Option<(u32, u32)>,
    #[serde(default = "default_train_days")]
    train_days: (u32, u32),
    #[serde(default = "default_test_days")]
    test_days: (u32, u32),
    /// Model file location; defaults to `<output_dir>/model.json`.
    model_path: Option<PathBuf>,
    /// Lead-time histogram edges in hours; defaults to 0,1,...,6.
    lead_time_edges_hours: Option<Vec<f64>>,
}

/// Fully resolved configuration used by the commands.
pub struct PipelineConfig {
    pub ch3_dir: PathBuf,
    pub ch4_dir: PathBuf,
    pub storm_csv: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub flow: FlowParams,
    pub forest: ForestConfig,
    pub extract: ExtractConfig,
    pub nominal_spacing_minutes: i64,
    pub max_channel_skew_minutes: i64,
    pub hours_gmt: Option<(u32, u32)>,
    pub train_days: (u32, u32),
    pub test_days: (u32, u32),
    pub model_path: PathBuf,
    pub lead_time_edges: Vec<f64>,
    /// SHA-256 of the configuration file bytes, recorded in run manifests.
    pub config_digest: String,
}

impl PipelineConfig {
    /// Loads, validates, and resolves the configuration. `seed_override`
    /// comes from `--seed`. Any problem here is a usage error.
    pub fn load(path: &Path, seed_override: Option<u64>) -> CliResult<Self> {
        let bytes = fs::read(path)
            .with_context(|| format!("cannot read config file {}", path.display()))
            .map_err(usage_error)?;
        let raw: RawConfig = serde_json::from_slice(&bytes)
            .with_context(|| format!("invalid config file {}", path.display()))
            .map_err(usage_error)?;

        let seed = seed_override.unwrap_or(raw.seed);
        let flow = raw.flow.apply();
        flow.validate().map_err(usage_error)?;
        let forest = raw.forest.apply(seed);
        forest.validate().map_err(usage_error)?;

        let mut domain = raw.domain;
        if let Some(poly) = &raw.polygon_path {
            domain.polygon = Some(read_polygon(poly)?);
        }

        if let Some((start, end)) = raw.hours_gmt {
            if start > 23 || end > 23 || start > end {
                return Err(usage_error(anyhow!(
                    "hours_gmt must be an inclusive range of hours within 0..=23, got {start}..={end}"
                )));
            }
        }
        for (name, (start, end)) in [("train_days", raw.train_days), ("test_days", raw.test_days)] {
            if start == 0 || end > 31 || start > end {
                return Err(usage_error(anyhow!(
                    "{name} must be an inclusive range of days within 1..=31, got {start}..={end}"
                )));
            }
        }
        if raw.nominal_spacing_minutes <= 0 {
            return Err(usage_error(anyhow!(
                "nominal_spacing_minutes must be positive, got {}",
                raw.nominal_spacing_minutes
            )));
        }
        if raw.max_channel_skew_minutes < 0 {
            return Err(usage_error(anyhow!(
                "max_channel_skew_minutes must be non-negative, got {}",
                raw.max_channel_skew_minutes
            )));
        }

        let lead_time_edges = raw
            .lead_time_edges_hours
            .unwrap_or_else(stormflow::evaluation::default_lead_time_edges);
        if lead_time_edges.len() < 2 || lead_time_edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(usage_error(anyhow!(
                "lead_time_edges_hours must be at least two strictly increasing values"
            )));
        }

        // Every referenced input path must exist before any work starts.
        for (name, dir) in [("ch3_dir", &raw.ch3_dir), ("ch4_dir", &raw.ch4_dir)] {
            if !dir.is_dir() {
                return Err(usage_error(anyhow!(
                    "{name} {} does not exist or is not a directory",
                    dir.display()
                )));
            }
        }
        if let Some(csv) = &raw.storm_csv {
            if !csv.is_file() {
                return Err(usage_error(anyhow!(
                    "storm_csv {} does not exist",
                    csv.display()
                )));
            }
        }

        let extract = ExtractConfig {
            flow: flow.clone(),
            min_area_px: raw.min_area_px,
            dilation_px: raw.dilation_px,
            flow_channel: raw.flow_channel,
            direction: DirectionStat::CircularMean,
            domain,
        };

        let model_path = raw
            .model_path
            .unwrap_or_else(|| raw.output_dir.join("model.json"));

        Ok(PipelineConfig {
            ch3_dir: raw.ch3_dir,
            ch4_dir: raw.ch4_dir,
            storm_csv: raw.storm_csv,
            output_dir: raw.output_dir,
            seed,
            flow,
            forest,
            extract,
            nominal_spacing_minutes: raw.nominal_spacing_minutes,
            max_channel_skew_minutes: raw.max_channel_skew_minutes,
            hours_gmt: raw.hours_gmt,
            train_days: raw.train_days,
            test_days: raw.test_days,
            model_path,
            lead_time_edges,
            config_digest: crate::cache::sha256_hex(&bytes),
        })
    }

    /// The storm-report path, or a usage error naming the command needing it.
    pub fn require_storm_csv(&self, command: &str) -> CliResult<&Path> {
        self.storm_csv.as_deref().ok_or_else(|| {
            usage_error(anyhow!(
                "the {command} command needs storm reports: set storm_csv in the config"
            ))
        })
    }
}

/// Reads a polygon as CSV lines of `lon,lat`. Blank lines, a `lon,lat`
/// header, and `#` comments are allowed.
fn read_polygon(path: &Path) -> CliResult<Vec<(f64, f64)>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read polygon file {}", path.display()))
        .map_err(usage_error)?;
    let mut vertices = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.eq_ignore_ascii_case("lon,lat") {
            continue;
        }
        let mut parts = line.split(',');
        let parse = |field: Option<&str>| -> Option<f64> { field?.trim().parse().ok() };
        match (parse(parts.next()), parse(parts.next()), parts.next()) {
            (Some(lon), Some(lat), None) => vertices.push((lon, lat)),
            _ => {
                return Err(usage_error(anyhow!(
                    "{}:{}: expected `lon,lat`, got {line:?}",
                    path.display(),
                    lineno + 1
                )))
            }
        }
    }
    if vertices.len() < 3 {
        return Err(usage_error(anyhow!(
            "polygon file {} needs at least three vertices",
            path.display()
        )));
    }
    Ok(vertices)
}
