//! Classifier evaluation: confusion-matrix metrics, the lead-time prediction
//! curve, and the feature-ablation comparison.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::climatology::{earliest_storm_time, StormDB};
use crate::descriptors::VortexDescriptor;
use crate::forest::{cross_validate_subset, CvReport, ForestConfig};
use crate::{Error, Result};

/// Confusion counts with derived ratios. A ratio whose denominator is zero
/// is absent rather than coerced to a number.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// (tp + tn) / total.
    pub overall: Option<f64>,
    /// tp / (tp + fn): fraction of storm-related vortices caught.
    pub sensitivity: Option<f64>,
    /// tn / (tn + fp): fraction of calm vortices passed through.
    pub specificity: Option<f64>,
}

impl Metrics {
    pub fn from_counts(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
        Metrics {
            tp,
            tn,
            fp,
            fn_,
            overall: ratio(tp + tn, tp + tn + fp + fn_),
            sensitivity: ratio(tp, tp + fn_),
            specificity: ratio(tn, tn + fp),
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

/// Tallies predictions against ground truth.
pub fn confusion_metrics(pred: &[bool], truth: &[bool]) -> Result<Metrics> {
    if pred.len() != truth.len() {
        return Err(Error::InvalidParameter(format!(
            "{} predictions but {} truth labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput("no predictions to score".into()));
    }
    let (mut tp, mut tn, mut fp, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(Metrics::from_counts(tp, tn, fp, fn_))
}

/// Default lead-time buckets: 30-minute bins spanning (0, 6 h].
pub fn default_lead_time_edges() -> Vec<f64> {
    (0..=12).map(|i| i as f64 * 0.5).collect()
}

/// How often vortices are classified storm-related, as a function of the
/// time until the first nearby storm onset.
///
/// Bucket `i` holds vortices with `edges[i] ≤ Δt < edges[i+1]` (hours).
/// Vortices whose nearest storm already began (`Δt ≤ 0`, or below the first
/// edge) land in the `ongoing` slot; those beyond the last edge in `beyond`;
/// those with no admissible storm at all are only counted in
/// `undefined_count`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeadTimeCurve {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub positives: Vec<u64>,
    pub ongoing_count: u64,
    pub ongoing_positives: u64,
    pub beyond_count: u64,
    pub beyond_positives: u64,
    pub undefined_count: u64,
}

impl LeadTimeCurve {
    pub fn n_buckets(&self) -> usize {
        self.counts.len()
    }

    /// Fraction of bucket `i` classified storm-related; `None` for an empty
    /// bucket.
    pub fn fraction(&self, i: usize) -> Option<f64> {
        (self.counts[i] > 0).then(|| self.positives[i] as f64 / self.counts[i] as f64)
    }

    pub fn ongoing_fraction(&self) -> Option<f64> {
        (self.ongoing_count > 0).then(|| self.ongoing_positives as f64 / self.ongoing_count as f64)
    }

    pub fn beyond_fraction(&self) -> Option<f64> {
        (self.beyond_count > 0).then(|| self.beyond_positives as f64 / self.beyond_count as f64)
    }

    /// Vortices with a defined Δt (everything except `undefined_count`).
    pub fn defined_total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.ongoing_count + self.beyond_count
    }
}

/// Builds the lead-time curve for classified vortices. For each vortex, Δt
/// is the time from its observation to the earliest storm onset within the
/// 3° association box (and no more than 2 h in the past).
pub fn lead_time_curve(
    rows: &[(VortexDescriptor, bool)],
    db: &StormDB,
    edges: &[f64],
) -> Result<LeadTimeCurve> {
    if edges.len() < 2 {
        return Err(Error::InvalidParameter(
            "lead-time buckets need at least two edges".into(),
        ));
    }
    if edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter(
            "lead-time edges must be strictly increasing".into(),
        ));
    }
    if edges[0] < 0.0 {
        return Err(Error::InvalidParameter(
            "lead-time edges must be non-negative; earlier onsets belong to the ongoing slot"
                .into(),
        ));
    }

    let n = edges.len() - 1;
    let mut curve = LeadTimeCurve {
        edges: edges.to_vec(),
        counts: vec![0; n],
        positives: vec![0; n],
        ongoing_count: 0,
        ongoing_positives: 0,
        beyond_count: 0,
        beyond_positives: 0,
        undefined_count: 0,
    };

    for (d, predicted) in rows {
        let (lon, lat) = d.centroid_geo;
        let Some(onset) = earliest_storm_time(db, lat, lon, d.timestamp) else {
            curve.undefined_count += 1;
            continue;
        };
        let dt_hours = (onset - d.timestamp).num_seconds() as f64 / 3600.0;
        let slot = if dt_hours <= 0.0 || dt_hours < edges[0] {
            None // ongoing
        } else {
            edges.windows(2).position(|w| w[0] <= dt_hours && dt_hours < w[1])
        };
        match slot {
            Some(i) => {
                curve.counts[i] += 1;
                if *predicted {
                    curve.positives[i] += 1;
                }
            }
            None if dt_hours >= *edges.last().unwrap() && dt_hours > 0.0 => {
                curve.beyond_count += 1;
                if *predicted {
                    curve.beyond_positives += 1;
                }
            }
            None => {
                curve.ongoing_count += 1;
                if *predicted {
                    curve.ongoing_positives += 1;
                }
            }
        }
    }
    Ok(curve)
}

/// Cross-validated metrics for the three feature regimes of the ablation
/// study, evaluated on identical folds.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationReport {
    /// w1–w8.
    pub all_features: CvReport,
    /// w1–w7: everything observable from the imagery alone.
    pub visual_only: CvReport,
    /// w8: the climatological prior alone.
    pub prior_only: CvReport,
}

/// Trains and cross-validates three forests — all features, visual-only
/// (w1–w7), and prior-only (w8) — with one seed, so folds and tree random
/// streams coincide across regimes.
pub fn ablation_run(
    samples: &[VortexDescriptor],
    labels: &[bool],
    k: usize,
    cfg: &ForestConfig,
) -> Result<AblationReport> {
    Ok(AblationReport {
        all_features: cross_validate_subset(samples, labels, k, cfg, &[0, 1, 2, 3, 4, 5, 6, 7])?,
        visual_only: cross_validate_subset(samples, labels, k, cfg, &[0, 1, 2, 3, 4, 5, 6])?,
        prior_only: cross_validate_subset(samples, labels, k, cfg, &[7])?,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

/// Writes named metric rows as CSV
/// (`name,tp,tn,fp,fn,overall,sensitivity,specificity`).
pub fn write_metrics_csv(rows: &[(&str, &Metrics)], path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::CsvRow {
        path: path.to_path_buf(),
        line: 0,
        reason: e.to_string(),
    })?;
    writer
        .write_record([
            "name",
            "tp",
            "tn",
            "fp",
            "fn",
            "overall",
            "sensitivity",
            "specificity",
        ])
        .map_err(|e| Error::Serialization(e.to_string()))?;
    for (name, m) in rows {
        writer
            .write_record([
                name.to_string(),
                m.tp.to_string(),
                m.tn.to_string(),
                m.fp.to_string(),
                m.fn_.to_string(),
                fmt_opt(m.overall),
                fmt_opt(m.sensitivity),
                fmt_opt(m.specificity),
            ])
            .map_err(|e| Error::Serialization(e.to_string()))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Writes a lead-time curve as CSV
/// (`bucket,lo_hours,hi_hours,count,positives,fraction`), with the `ongoing`
/// slot first and the `beyond` slot last.
pub fn write_lead_time_csv(curve: &LeadTimeCurve, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::CsvRow {
        path: path.to_path_buf(),
        line: 0,
        reason: e.to_string(),
    })?;
    writer
        .write_record(["bucket", "lo_hours", "hi_hours", "count", "positives", "fraction"])
        .map_err(|e| Error::Serialization(e.to_string()))?;
    let mut row = |bucket: &str, lo: String, hi: String, count: u64, pos: u64| {
        let fraction = (count > 0).then(|| pos as f64 / count as f64);
        writer
            .write_record([
                bucket.to_string(),
                lo,
                hi,
                count.to_string(),
                pos.to_string(),
                fmt_opt(fraction),
            ])
            .map_err(|e| Error::Serialization(e.to_string()))
    };
    row(
        "ongoing",
        String::new(),
        format!("{}", curve.edges[0]),
        curve.ongoing_count,
        curve.ongoing_positives,
    )?;
    for i in 0..curve.n_buckets() {
        row(
            &format!("{i}"),
            format!("{}", curve.edges[i]),
            format!("{}", curve.edges[i + 1]),
            curve.counts[i],
            curve.positives[i],
        )?;
    }
    row(
        "beyond",
        format!("{}", curve.edges[curve.edges.len() - 1]),
        String::new(),
        curve.beyond_count,
        curve.beyond_positives,
    )?;
    writer.flush().map_err(|e| Error::io(path, e))
}
