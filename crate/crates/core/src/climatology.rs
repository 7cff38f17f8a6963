//! Historical storm-report handling: ingestion, date-conditioned density
//! grids, ground-truth labeling of vortices, and earliest-nearby-storm
//! queries for lead-time evaluation.
//!
//! Labeling rule: a vortex centered at `(lat u, lon v)` observed at time `t`
//! is storm-related iff some report satisfies `|lat_i − u| < 3°` and
//! `|lon_i − v| < 3°` (strict, per axis) with `t − 0.5 h ≤ t_i ≤ t + 2 h`
//! (inclusive). Vortices outside the labeled domain are *unlabeled* — neither
//! positive nor negative — and are excluded from training and testing.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use chrono::{DateTime, Datelike, Duration, NaiveDate, Utc};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::descriptors::VortexDescriptor;
use crate::field_analysis::VortexRegion;
use crate::{Error, Result};

/// Days counted per coverage year when building a density window (±5 days
/// around the anchor date).
pub const WINDOW_DAYS_PER_YEAR: u32 = 11;

/// Strict spatial half-width of the storm-association box, degrees per axis.
pub const ASSOCIATION_DEG: f64 = 3.0;

/// Report category from the storm database.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StormKind {
    Hail,
    Tornado,
    Wind,
    Other,
}

impl std::str::FromStr for StormKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "hail" => Ok(StormKind::Hail),
            "tornado" => Ok(StormKind::Tornado),
            "wind" => Ok(StormKind::Wind),
            "other" => Ok(StormKind::Other),
            other => Err(format!(
                "unknown storm kind {other:?}; expected hail|tornado|wind|other"
            )),
        }
    }
}

/// One storm report: onset position and time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StormReport {
    pub lat: f64,
    pub lon: f64,
    pub start_time: DateTime<Utc>,
    pub kind: StormKind,
}

/// The report archive, sorted by start time and spatially indexed by 1°
/// buckets.
#[derive(Clone, Debug)]
pub struct StormDB {
    /// Sorted by `start_time` (ties keep ingest order).
    reports: Vec<StormReport>,
    /// `(floor(lat), floor(lon))` → indices into `reports`.
    buckets: HashMap<(i32, i32), Vec<usize>>,
    coverage_years: BTreeSet<i32>,
}

impl StormDB {
    pub fn new(mut reports: Vec<StormReport>) -> Self {
        reports.sort_by_key(|r| r.start_time);
        let mut buckets: HashMap<(i32, i32), Vec<usize>> = HashMap::new();
        let mut coverage_years = BTreeSet::new();
        for (i, r) in reports.iter().enumerate() {
            buckets
                .entry((r.lat.floor() as i32, r.lon.floor() as i32))
                .or_default()
                .push(i);
            coverage_years.insert(r.start_time.year());
        }
        StormDB {
            reports,
            buckets,
            coverage_years,
        }
    }

    pub fn reports(&self) -> &[StormReport] {
        &self.reports
    }

    pub fn coverage_years(&self) -> &BTreeSet<i32> {
        &self.coverage_years
    }

    pub fn len(&self) -> usize {
        self.reports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reports.is_empty()
    }

    /// Reports within the inclusive time window, in time order.
    fn in_time_window(&self, lo: DateTime<Utc>, hi: DateTime<Utc>) -> &[StormReport] {
        let start = self.reports.partition_point(|r| r.start_time < lo);
        let end = self.reports.partition_point(|r| r.start_time <= hi);
        &self.reports[start..end]
    }

    /// Indices of reports within the strict per-axis box around `(lat, lon)`.
    fn in_box(&self, lat: f64, lon: f64, half_width: f64) -> Vec<usize> {
        let lat_lo = (lat - half_width).floor() as i32;
        let lat_hi = (lat + half_width).floor() as i32;
        let lon_lo = (lon - half_width).floor() as i32;
        let lon_hi = (lon + half_width).floor() as i32;
        let mut out = Vec::new();
        for by in lat_lo..=lat_hi {
            for bx in lon_lo..=lon_hi {
                if let Some(idxs) = self.buckets.get(&(by, bx)) {
                    for &i in idxs {
                        let r = &self.reports[i];
                        if (r.lat - lat).abs() < half_width && (r.lon - lon).abs() < half_width {
                            out.push(i);
                        }
                    }
                }
            }
        }
        out
    }
}

/// Parses a storm-report CSV with header `time,lat,lon,kind` (ISO-8601 UTC
/// times). Every malformed or out-of-range row is reported with its line
/// number; duplicates are retained, since reports are events rather than
/// keys.
pub fn ingest_reports(csv_path: &Path) -> Result<StormDB> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(csv_path)
        .map_err(|e| Error::CsvRow {
            path: csv_path.to_path_buf(),
            line: 0,
            reason: e.to_string(),
        })?;

    let row_err = |line: u64, reason: String| Error::CsvRow {
        path: csv_path.to_path_buf(),
        line,
        reason,
    };

    {
        let headers = reader
            .headers()
            .map_err(|e| row_err(1, e.to_string()))?
            .clone();
        let expected = ["time", "lat", "lon", "kind"];
        let actual: Vec<&str> = headers.iter().collect();
        if actual != expected {
            return Err(row_err(
                1,
                format!("expected header {expected:?}, found {actual:?}"),
            ));
        }
    }

    let mut reports = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            row_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 4 {
            return Err(row_err(line, format!("expected 4 fields, found {}", record.len())));
        }
        let time: DateTime<Utc> = record[0]
            .parse()
            .map_err(|e| row_err(line, format!("bad time {:?}: {e}", &record[0])))?;
        let lat: f64 = record[1]
            .parse()
            .map_err(|e| row_err(line, format!("bad lat {:?}: {e}", &record[1])))?;
        let lon: f64 = record[2]
            .parse()
            .map_err(|e| row_err(line, format!("bad lon {:?}: {e}", &record[2])))?;
        if !(-90.0..=90.0).contains(&lat) {
            return Err(row_err(line, format!("latitude {lat} outside [-90, 90]")));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(row_err(line, format!("longitude {lon} outside [-180, 180]")));
        }
        let kind: StormKind = record[3].parse().map_err(|e| row_err(line, e))?;
        reports.push(StormReport {
            lat,
            lon,
            start_time: time,
            kind,
        });
    }
    if reports.is_empty() {
        return Err(Error::EmptyInput(format!(
            "storm CSV {} has no data rows",
            csv_path.display()
        )));
    }
    Ok(StormDB::new(reports))
}

/// Date-conditioned storm density over a coarse geographic grid.
///
/// Cell `(i, j)` spans `[lon_origin + i·cell_deg, +cell_deg)` ×
/// `[lat_origin + j·cell_deg, +cell_deg)`. The density is the storm count in
/// the ±5-day calendar window around the query date, pooled over all coverage
/// years, divided by the total window length `11 · |years|` — storms per day
/// per cell.
#[derive(Clone, Debug)]
pub struct DensityGrid {
    pub date: NaiveDate,
    pub cell_deg: f64,
    pub lon_origin: f64,
    pub lat_origin: f64,
    /// Raw counts indexed `[(j, i)]` = `[(lat cell, lon cell)]`.
    pub counts: Array2<u64>,
    pub window_days: u32,
}

impl DensityGrid {
    pub fn n_cols(&self) -> usize {
        self.counts.dim().1
    }

    pub fn n_rows(&self) -> usize {
        self.counts.dim().0
    }

    /// Grid cell containing the point, or `None` outside the grid.
    pub fn cell_of(&self, lon: f64, lat: f64) -> Option<(usize, usize)> {
        let i = (lon - self.lon_origin) / self.cell_deg;
        let j = (lat - self.lat_origin) / self.cell_deg;
        if i < 0.0 || j < 0.0 {
            return None;
        }
        let (i, j) = (i.floor() as usize, j.floor() as usize);
        (i < self.n_cols() && j < self.n_rows()).then_some((i, j))
    }

    /// Density of cell `(i, j)` in storms per day.
    pub fn density(&self, i: usize, j: usize) -> f64 {
        self.counts[(j, i)] as f64 / self.window_days as f64
    }

    /// Density at a geographic point; `None` outside the grid.
    pub fn density_at(&self, lon: f64, lat: f64) -> Option<f64> {
        self.cell_of(lon, lat).map(|(i, j)| self.density(i, j))
    }

    /// Total raw count over all cells.
    pub fn total_count(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// The continental-US analysis window used by the default grids.
pub const CONUS_LON_RANGE: (f64, f64) = (-124.0, -60.0);
pub const CONUS_LAT_RANGE: (f64, f64) = (20.0, 52.0);

/// Builds the default 4°×4° density grid over the continental-US window.
pub fn build_density_grid(db: &StormDB, date: NaiveDate) -> DensityGrid {
    build_density_grid_over(
        db,
        date,
        CONUS_LON_RANGE.0,
        CONUS_LAT_RANGE.0,
        ((CONUS_LON_RANGE.1 - CONUS_LON_RANGE.0) / 4.0) as usize,
        ((CONUS_LAT_RANGE.1 - CONUS_LAT_RANGE.0) / 4.0) as usize,
        4.0,
    )
}

/// Builds a density grid over an arbitrary cell layout.
///
/// A report is counted (once) when its calendar day falls within ±5 days of
/// the query date anchored in any coverage year; a February 29 query in a
/// non-leap coverage year anchors at February 28 instead.
pub fn build_density_grid_over(
    db: &StormDB,
    date: NaiveDate,
    lon_origin: f64,
    lat_origin: f64,
    n_cols: usize,
    n_rows: usize,
    cell_deg: f64,
) -> DensityGrid {
    let years: Vec<i32> = db.coverage_years().iter().copied().collect();
    let window_days = WINDOW_DAYS_PER_YEAR * (years.len() as u32).max(1);
    let mut counts = Array2::<u64>::zeros((n_rows, n_cols));

    let mut windows: Vec<(NaiveDate, NaiveDate)> = Vec::with_capacity(years.len());
    for &year in &years {
        let anchor = NaiveDate::from_ymd_opt(year, date.month(), date.day())
            .or_else(|| NaiveDate::from_ymd_opt(year, 2, 28))
            .expect("anchor date always resolvable");
        windows.push((anchor - Duration::days(5), anchor + Duration::days(5)));
    }

    let grid_probe = DensityGrid {
        date,
        cell_deg,
        lon_origin,
        lat_origin,
        counts: Array2::zeros((n_rows, n_cols)),
        window_days,
    };

    for r in db.reports() {
        let day = r.start_time.date_naive();
        if windows.iter().any(|&(lo, hi)| day >= lo && day <= hi) {
            if let Some((i, j)) = grid_probe.cell_of(r.lon, r.lat) {
                counts[(j, i)] += 1;
            }
        }
    }

    DensityGrid {
        date,
        cell_deg,
        lon_origin,
        lat_origin,
        counts,
        window_days,
    }
}

/// Writes a density grid as CSV rows `(i, j, lon_min, lat_min, rho)`.
pub fn write_density_csv(grid: &DensityGrid, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::CsvRow {
        path: path.to_path_buf(),
        line: 0,
        reason: e.to_string(),
    })?;
    writer
        .write_record(["i", "j", "lon_min", "lat_min", "rho"])
        .map_err(|e| Error::Serialization(e.to_string()))?;
    for j in 0..grid.n_rows() {
        for i in 0..grid.n_cols() {
            let lon_min = grid.lon_origin + i as f64 * grid.cell_deg;
            let lat_min = grid.lat_origin + j as f64 * grid.cell_deg;
            writer
                .write_record([
                    i.to_string(),
                    j.to_string(),
                    format!("{lon_min}"),
                    format!("{lat_min}"),
                    format!("{}", grid.density(i, j)),
                ])
                .map_err(|e| Error::Serialization(e.to_string()))?;
        }
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// The geographic domain inside which ground-truth labels are defined.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LabelDomain {
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
    /// Optional polygon `(lon, lat)` refining the bounding box.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polygon: Option<Vec<(f64, f64)>>,
}

impl Default for LabelDomain {
    fn default() -> Self {
        LabelDomain {
            lon_min: CONUS_LON_RANGE.0,
            lon_max: CONUS_LON_RANGE.1,
            lat_min: CONUS_LAT_RANGE.0,
            lat_max: CONUS_LAT_RANGE.1,
            polygon: None,
        }
    }
}

impl LabelDomain {
    pub fn contains(&self, lon: f64, lat: f64) -> bool {
        let in_box = (self.lon_min..=self.lon_max).contains(&lon)
            && (self.lat_min..=self.lat_max).contains(&lat);
        match (&self.polygon, in_box) {
            (_, false) => false,
            (None, true) => true,
            (Some(poly), true) => point_in_polygon(lon, lat, poly),
        }
    }
}

/// Even-odd rule point-in-polygon test in plate-carrée coordinates.
fn point_in_polygon(x: f64, y: f64, polygon: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let n = polygon.len();
    if n < 3 {
        return false;
    }
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = polygon[i];
        let (xj, yj) = polygon[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Whether a storm report matches the association rule around
/// `(lat u, lon v, t)`.
fn report_matches(r: &StormReport, u: f64, v: f64, t: DateTime<Utc>) -> bool {
    (r.lat - u).abs() < ASSOCIATION_DEG
        && (r.lon - v).abs() < ASSOCIATION_DEG
        && r.start_time >= t - Duration::minutes(30)
        && r.start_time <= t + Duration::hours(2)
}

/// Ground-truth label of a vortex: `Some(true)` if a storm report sits within
/// the strict 3° box in the inclusive window `[t − 0.5 h, t + 2 h]`,
/// `Some(false)` if none does, `None` when the centroid lies outside the
/// labeled domain.
pub fn label_vortex(db: &StormDB, v: &VortexRegion, domain: &LabelDomain) -> Option<bool> {
    let (lon, lat) = v.centroid_geo;
    if !domain.contains(lon, lat) {
        return None;
    }
    let t = v.timestamp;
    let window = db.in_time_window(t - Duration::minutes(30), t + Duration::hours(2));
    Some(window.iter().any(|r| report_matches(r, lat, lon, t)))
}

/// Earliest report onset near `(lat u, lon v)` no more than two hours before
/// `t`: the minimum `t_i` over reports with `|lat_i − u| < 3°`,
/// `|lon_i − v| < 3°`, and `t_i > t − 2 h`. `None` when no report qualifies.
pub fn earliest_storm_time(
    db: &StormDB,
    u: f64,
    v: f64,
    t: DateTime<Utc>,
) -> Option<DateTime<Utc>> {
    let cutoff = t - Duration::hours(2);
    db.in_box(u, v, ASSOCIATION_DEG)
        .into_iter()
        .map(|i| db.reports()[i].start_time)
        .filter(|&ti| ti > cutoff)
        .min()
}

/// Keeps every positive sample and a seeded uniform random subset of
/// negatives of equal count (input order preserved within each class).
pub fn sample_balanced_training(
    labeled: &[(VortexDescriptor, bool)],
    seed: u64,
) -> Result<Vec<(VortexDescriptor, bool)>> {
    let positives: Vec<&(VortexDescriptor, bool)> = labeled.iter().filter(|(_, l)| *l).collect();
    let negatives: Vec<&(VortexDescriptor, bool)> = labeled.iter().filter(|(_, l)| !*l).collect();
    if negatives.len() < positives.len() {
        return Err(Error::InsufficientData(format!(
            "balanced sampling needs at least as many negatives as positives ({} < {})",
            negatives.len(),
            positives.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = rand::seq::index::sample(&mut rng, negatives.len(), positives.len()).into_vec();
    chosen.sort_unstable();
    let mut out: Vec<(VortexDescriptor, bool)> = positives.into_iter().cloned().collect();
    out.extend(chosen.into_iter().map(|i| negatives[i].clone()));
    Ok(out)
}
