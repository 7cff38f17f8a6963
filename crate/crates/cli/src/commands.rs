//! The five pipeline commands, sharing one configuration format and the
//! cached extraction driver.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use anyhow::anyhow;
use chrono::{DateTime, NaiveDate, Utc};
use stormflow::climatology::{build_density_grid, ingest_reports, write_density_csv, StormDB};
use stormflow::descriptors::{write_descriptor_csv, VortexDescriptor};
use stormflow::evaluation::{confusion_metrics, lead_time_curve, write_lead_time_csv, write_metrics_csv};
use stormflow::field_analysis::VortexRegion;
use stormflow::forest::{load_model, predict, save_model, train, Forest};
use stormflow::geo_imaging::load_frame;

use crate::config::PipelineConfig;
use crate::extraction::{compact_stamp, run_extraction, ArtifactSink, ExtractedRow, ExtractionResult};
use crate::frames::{discover_sessions, Discovery, ScannedPair};
use crate::manifest::Manifest;
use crate::{data_error, usage_error, Cli, CliResult, Command};

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Extract { common } => cmd_extract(&load_config(&common)?),
        Command::Climatology { common, date } => cmd_climatology(&load_config(&common)?, date),
        Command::Train { common, model } => cmd_train(&load_config(&common)?, model),
        Command::Detect { common, model } => cmd_detect(&load_config(&common)?, model),
        Command::Evaluate { common, model } => cmd_evaluate(&load_config(&common)?, model),
    }
}

fn load_config(common: &crate::CommonArgs) -> CliResult<PipelineConfig> {
    let cfg = PipelineConfig::load(&common.config, common.seed)?;
    fs::create_dir_all(&cfg.output_dir).map_err(|e| {
        usage_error(anyhow!(
            "cannot create output directory {}: {e}",
            cfg.output_dir.display()
        ))
    })?;
    Ok(cfg)
}

fn load_reports(cfg: &PipelineConfig, command: &str) -> CliResult<StormDB> {
    let path = cfg.require_storm_csv(command)?;
    let db = ingest_reports(path).map_err(data_error)?;
    log::info!("ingested {} storm reports from {}", db.len(), path.display());
    Ok(db)
}

fn discover_nonempty(
    cfg: &PipelineConfig,
    day_range: Option<(u32, u32)>,
    what: &str,
) -> CliResult<Discovery> {
    let discovery = discover_sessions(cfg, day_range)?;
    if discovery.sessions.is_empty() {
        return Err(data_error(anyhow!(
            "no processable frame sessions for {what}: need at least two \
             consecutive frame pairs at the nominal cadence"
        )));
    }
    Ok(discovery)
}

fn record_extraction(manifest: &mut Manifest, discovery: &Discovery, result: &ExtractionResult) {
    manifest.insert("sessions", discovery.sessions.len());
    manifest.insert("frames_paired", discovery.matched_pairs);
    manifest.insert("isolated_pairs", discovery.isolated_pairs);
    manifest.insert("flow_pairs", result.pair_times.len());
    manifest.insert("flow_cache_hits", result.cache_hits);
    manifest.insert("detections", result.rows.len());
    manifest.insert("skipped_pairs", result.skipped.len());
}

/// Writes the per-pair failure diagnostics (always, so a clean run is
/// distinguishable from one that never wrote the file).
fn write_skipped(cfg: &PipelineConfig, result: &ExtractionResult) -> CliResult<PathBuf> {
    let path = cfg.output_dir.join("skipped_pairs.json");
    let text = serde_json::to_string_pretty(&result.skipped).expect("diagnostics serialize");
    fs::write(&path, text)
        .map_err(|e| data_error(anyhow!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

fn cmd_extract(cfg: &PipelineConfig) -> CliResult<()> {
    let db = match &cfg.storm_csv {
        Some(_) => Some(load_reports(cfg, "extract")?),
        None => None,
    };
    let discovery = discover_nonempty(cfg, None, "extraction")?;
    let artifacts = ArtifactSink {
        q_dir: Some(cfg.output_dir.join("q_rasters")),
    };
    let result = run_extraction(&discovery, cfg, db.as_ref(), &artifacts)?;

    let csv_path = cfg.output_dir.join("descriptors.csv");
    write_descriptor_csv(&result.descriptor_rows(), &csv_path).map_err(data_error)?;
    let skipped_path = write_skipped(cfg, &result)?;

    let mut manifest = Manifest::new("extract", cfg);
    record_extraction(&mut manifest, &discovery, &result);
    manifest.insert("labeled", db.is_some());
    manifest.add_output(&csv_path);
    manifest.add_output(&skipped_path);
    if let Some(dir) = &artifacts.q_dir {
        manifest.add_output(dir);
    }
    manifest.write(&cfg.output_dir)?;

    log::info!(
        "extracted {} vortex descriptors from {} flow pairs ({} skipped) -> {}",
        result.rows.len(),
        result.pair_times.len(),
        result.skipped.len(),
        csv_path.display()
    );
    Ok(())
}

fn cmd_climatology(cfg: &PipelineConfig, date: NaiveDate) -> CliResult<()> {
    let db = load_reports(cfg, "climatology")?;
    let grid = build_density_grid(&db, date);
    let out = cfg.output_dir.join(format!("density_{date}.csv"));
    write_density_csv(&grid, &out).map_err(data_error)?;

    let mut manifest = Manifest::new("climatology", cfg);
    manifest.insert("date", date.to_string());
    manifest.insert("reports", db.len());
    manifest.insert("coverage_years", db.coverage_years().iter().collect::<Vec<_>>());
    manifest.add_output(&out);
    manifest.write(&cfg.output_dir)?;

    log::info!("wrote storm-density grid for {date} -> {}", out.display());
    Ok(())
}

fn cmd_train(cfg: &PipelineConfig, model_override: Option<PathBuf>) -> CliResult<()> {
    let db = load_reports(cfg, "train")?;
    let discovery = discover_nonempty(cfg, Some(cfg.train_days), "training")?;
    let result = run_extraction(&discovery, cfg, Some(&db), &ArtifactSink::none())?;

    let (samples, labels): (Vec<VortexDescriptor>, Vec<bool>) = result
        .rows
        .iter()
        .filter_map(|r| r.label.map(|l| (r.descriptor.clone(), l)))
        .unzip();
    if samples.is_empty() {
        return Err(data_error(anyhow!(
            "no labeled vortices on days {}..={}: nothing to train on",
            cfg.train_days.0,
            cfg.train_days.1
        )));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    log::info!(
        "training on {} vortices ({} storm-related, {} not)",
        samples.len(),
        positives,
        samples.len() - positives
    );

    let forest = train(&samples, &labels, &cfg.forest).map_err(data_error)?;
    let model_path = model_override.unwrap_or_else(|| cfg.model_path.clone());
    if let Some(parent) = model_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .map_err(|e| data_error(anyhow!("cannot create {}: {e}", parent.display())))?;
    }
    save_model(&forest, &model_path).map_err(data_error)?;

    let mut manifest = Manifest::new("train", cfg);
    record_extraction(&mut manifest, &discovery, &result);
    manifest.insert("train_days", cfg.train_days);
    manifest.insert("training_rows", samples.len());
    manifest.insert("training_positives", positives);
    manifest.insert("forest", &cfg.forest);
    manifest.add_output(&model_path);
    manifest.write(&cfg.output_dir)?;

    log::info!("saved classifier -> {}", model_path.display());
    Ok(())
}

/// Loads the model for `detect`/`evaluate`: a missing file is a
/// configuration problem, a file that fails to parse or validate is a data
/// problem.
fn load_classifier(cfg: &PipelineConfig, model_override: Option<PathBuf>) -> CliResult<(Forest, PathBuf)> {
    let path = model_override.unwrap_or_else(|| cfg.model_path.clone());
    if !path.is_file() {
        return Err(usage_error(anyhow!(
            "model file {} does not exist; train one first or pass --model",
            path.display()
        )));
    }
    let forest = load_model(&path).map_err(data_error)?;
    Ok((forest, path))
}

fn cmd_detect(cfg: &PipelineConfig, model_override: Option<PathBuf>) -> CliResult<()> {
    let (forest, model_path) = load_classifier(cfg, model_override)?;
    let discovery = discover_nonempty(cfg, None, "detection")?;
    let result = run_extraction(&discovery, cfg, None, &ArtifactSink::none())?;

    let mut by_time: BTreeMap<DateTime<Utc>, Vec<&ExtractedRow>> = BTreeMap::new();
    for row in &result.rows {
        by_time.entry(row.descriptor.timestamp).or_default().push(row);
    }
    let pair_index: BTreeMap<DateTime<Utc>, &ScannedPair> = discovery
        .sessions
        .iter()
        .flat_map(|s| s.iter().skip(1))
        .map(|p| (p.timestamp(), p))
        .collect();

    let mut manifest = Manifest::new("detect", cfg);
    let mut storm_positive = 0usize;
    for &t in &result.pair_times {
        let rows = by_time.get(&t).map_or(&[][..], Vec::as_slice);
        let mut predictions = Vec::with_capacity(rows.len());
        for row in rows {
            predictions.push(predict(&forest, &row.descriptor).map_err(data_error)?);
        }
        storm_positive += predictions.iter().filter(|(p, _)| *p).count();

        let scanned = pair_index
            .get(&t)
            .expect("every processed pair came from a discovered session");
        let ch4 = load_frame(&scanned.ch4.image, &scanned.ch4.sidecar).map_err(data_error)?;

        let features = rows
            .iter()
            .zip(&predictions)
            .map(|(row, &(pred, score))| crate::geojson::feature(row, score, pred, &ch4.transform))
            .collect();
        let collection = crate::geojson::feature_collection(features, cfg.seed);
        let stamp = compact_stamp(t);
        let geojson_path = cfg.output_dir.join(format!("detections_{stamp}.geojson"));
        crate::geojson::write_geojson(&geojson_path, &collection)?;

        let painted: Vec<(&VortexRegion, bool)> = rows
            .iter()
            .zip(&predictions)
            .map(|(row, &(pred, _))| (&row.region, pred))
            .collect();
        let overlay_path = cfg.output_dir.join(format!("overlay_{stamp}.png"));
        crate::overlay::write_overlay(&overlay_path, &ch4, &painted)?;

        manifest.add_output(&geojson_path);
        manifest.add_output(&overlay_path);
    }
    let skipped_path = write_skipped(cfg, &result)?;

    record_extraction(&mut manifest, &discovery, &result);
    manifest.insert("model", model_path.display().to_string());
    manifest.insert("storm_positive", storm_positive);
    manifest.add_output(&skipped_path);
    manifest.write(&cfg.output_dir)?;

    log::info!(
        "classified {} vortices over {} flow pairs ({} storm-related)",
        result.rows.len(),
        result.pair_times.len(),
        storm_positive
    );
    Ok(())
}

fn cmd_evaluate(cfg: &PipelineConfig, model_override: Option<PathBuf>) -> CliResult<()> {
    let (forest, model_path) = load_classifier(cfg, model_override)?;
    let db = load_reports(cfg, "evaluate")?;
    let discovery = discover_nonempty(cfg, Some(cfg.test_days), "evaluation")?;
    let result = run_extraction(&discovery, cfg, Some(&db), &ArtifactSink::none())?;
    if result.rows.is_empty() {
        return Err(data_error(anyhow!(
            "no vortices detected on days {}..={}: nothing to evaluate",
            cfg.test_days.0,
            cfg.test_days.1
        )));
    }

    // Classify every detection; score agreement on the labeled subset.
    let mut classified: Vec<(VortexDescriptor, bool)> = Vec::with_capacity(result.rows.len());
    let mut pred_labeled = Vec::new();
    let mut truth_labeled = Vec::new();
    for row in &result.rows {
        let (pred, _) = predict(&forest, &row.descriptor).map_err(data_error)?;
        classified.push((row.descriptor.clone(), pred));
        if let Some(truth) = row.label {
            pred_labeled.push(pred);
            truth_labeled.push(truth);
        }
    }
    if pred_labeled.is_empty() {
        return Err(data_error(anyhow!(
            "none of the {} detections lie in the labeled domain; cannot score",
            result.rows.len()
        )));
    }

    let metrics = confusion_metrics(&pred_labeled, &truth_labeled).map_err(data_error)?;
    let metrics_path = cfg.output_dir.join("metrics.csv");
    write_metrics_csv(&[("test", &metrics)], &metrics_path).map_err(data_error)?;

    let curve = lead_time_curve(&classified, &db, &cfg.lead_time_edges).map_err(data_error)?;
    let curve_csv = cfg.output_dir.join("lead_time.csv");
    write_lead_time_csv(&curve, &curve_csv).map_err(data_error)?;
    let curve_png = cfg.output_dir.join("lead_time.png");
    crate::chart::write_lead_time_chart(&curve, &curve_png)?;

    let mut manifest = Manifest::new("evaluate", cfg);
    record_extraction(&mut manifest, &discovery, &result);
    manifest.insert("test_days", cfg.test_days);
    manifest.insert("model", model_path.display().to_string());
    manifest.insert("scored_rows", pred_labeled.len());
    manifest.insert("tp", metrics.tp);
    manifest.insert("tn", metrics.tn);
    manifest.insert("fp", metrics.fp);
    manifest.insert("fn", metrics.fn_);
    manifest.add_output(&metrics_path);
    manifest.add_output(&curve_csv);
    manifest.add_output(&curve_png);
    manifest.write(&cfg.output_dir)?;

    log::info!(
        "scored {} labeled vortices: {} correct of {} -> {}",
        pred_labeled.len(),
        metrics.tp + metrics.tn,
        metrics.total(),
        metrics_path.display()
    );
    Ok(())
}
