//! End-to-end behavior of the `stormflow` binary: exit codes, file outputs,
//! and output formats, driven over small rendered fixtures.

mod common;

use std::fs;
use std::path::Path;

use chrono::Duration;
use common::{
    epoch, exit_code, rankine_centered, run, stderr_of, w7_only_model, write_config,
    write_rendered_session, write_session_frame, write_static_session,
};
use ndarray::Array2;
use serde_json::{json, Value};
use stormflow::geo_imaging::{Channel, GeoTransform, SatelliteFrame};
use stormflow::synthetic::FieldKind;
use tempfile::TempDir;

fn count_csv_rows(path: &Path) -> usize {
    let mut reader = csv::Reader::from_path(path).unwrap();
    reader.records().count()
}

#[test]
fn a_missing_config_file_is_a_usage_error() {
    let out = run(&["extract", "--config", "/nonexistent/config.json"]);
    assert_eq!(exit_code(&out), 1, "stderr: {}", stderr_of(&out));
    assert!(stderr_of(&out).contains("config"));
}

#[test]
fn malformed_config_json_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("config.json");
    fs::write(&path, "{ not json").unwrap();
    let out = run(&["extract", "--config", path.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 1, "stderr: {}", stderr_of(&out));
}

#[test]
fn a_missing_channel_directory_fails_before_any_work() {
    let tmp = TempDir::new().unwrap();
    fs::create_dir_all(tmp.path().join("ch3")).unwrap();
    // ch4 directory intentionally absent.
    let config = write_config(tmp.path(), json!({}));
    let out = run(&["extract", "--config", config.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 1, "stderr: {}", stderr_of(&out));
    assert!(stderr_of(&out).contains("ch4_dir"), "stderr: {}", stderr_of(&out));
}

#[test]
fn unmatched_channel_timestamps_are_a_data_error() {
    let tmp = TempDir::new().unwrap();
    let t = GeoTransform::new(-100.0, 40.0, 0.02, -0.02, 16, 16).unwrap();
    let pixels = Array2::from_elem((16, 16), 0.5);
    let mask = Array2::from_elem((16, 16), true);
    for (channel, hour) in [(Channel::Ch3, 12), (Channel::Ch4, 13)] {
        let dir = tmp.path().join(channel.to_string());
        fs::create_dir_all(&dir).unwrap();
        let frame =
            SatelliteFrame::new(channel, pixels.clone(), mask.clone(), epoch(hour, 0), t).unwrap();
        write_session_frame(&dir, &frame);
    }
    let config = write_config(tmp.path(), json!({}));
    let out = run(&["extract", "--config", config.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 2, "stderr: {}", stderr_of(&out));
    assert!(stderr_of(&out).contains("no partner"), "stderr: {}", stderr_of(&out));
}

#[test]
fn extract_writes_one_descriptor_row_for_a_rendered_vortex() {
    let tmp = TempDir::new().unwrap();
    write_rendered_session(tmp.path(), rankine_centered(), epoch(12, 0), 2, 5);
    let config = write_config(tmp.path(), json!({}));
    let out = run(&["extract", "--config", config.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));

    let out_dir = tmp.path().join("out");
    assert_eq!(count_csv_rows(&out_dir.join("descriptors.csv")), 1);

    let manifest: Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("run_manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "extract");
    assert_eq!(manifest["detections"], 1);
    assert_eq!(manifest["skipped_pairs"], 0);

    // One vortex-indicator raster for the single flow pair.
    let rasters: Vec<_> = fs::read_dir(out_dir.join("q_rasters"))
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "f32"))
        .collect();
    assert_eq!(rasters.len(), 1);
}

#[test]
fn extract_on_identical_frames_succeeds_with_an_empty_table() {
    let tmp = TempDir::new().unwrap();
    write_static_session(tmp.path(), 128);
    let config = write_config(tmp.path(), json!({}));
    let out = run(&["extract", "--config", config.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));
    assert_eq!(count_csv_rows(&tmp.path().join("out/descriptors.csv")), 0);
}

#[test]
fn the_seed_flag_overrides_the_configured_seed() {
    let tmp = TempDir::new().unwrap();
    write_static_session(tmp.path(), 64);
    let config = write_config(tmp.path(), json!({ "seed": 3 }));
    let out = run(&["extract", "--config", config.to_str().unwrap(), "--seed", "99"]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));
    let manifest: Value = serde_json::from_str(
        &fs::read_to_string(tmp.path().join("out/run_manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["seed"], 99);
}

#[test]
fn detect_writes_a_storm_feature_and_a_red_overlay() {
    let tmp = TempDir::new().unwrap();
    write_rendered_session(tmp.path(), rankine_centered(), epoch(12, 0), 2, 5);
    let config = write_config(tmp.path(), json!({}));
    let model = tmp.path().join("model.json");
    // The rendered vortex rotates at 0.02/frame; its core w7 is near 4e-4.
    w7_only_model(&model, 2e-4);

    let out = run(&[
        "detect",
        "--config",
        config.to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));

    let geojson_path = tmp.path().join("out/detections_20080621T123000Z.geojson");
    let fc: Value = serde_json::from_str(&fs::read_to_string(&geojson_path).unwrap()).unwrap();
    assert_eq!(fc["type"], "FeatureCollection");
    let features = fc["features"].as_array().unwrap();
    assert_eq!(features.len(), 1);

    let feature = &features[0];
    assert_eq!(feature["type"], "Feature");
    assert_eq!(feature["properties"]["label"], true);
    assert!(feature["properties"]["score"].as_f64().unwrap() >= 0.5);

    // Geometry: a polygon whose ring closes, in [longitude, latitude] order
    // (longitudes here are all negative, latitudes positive).
    let geometry = &feature["geometry"];
    assert_eq!(geometry["type"], "Polygon");
    let ring = geometry["coordinates"][0].as_array().unwrap();
    assert!(ring.len() >= 4);
    assert_eq!(ring.first(), ring.last());
    for pos in ring {
        let lon = pos[0].as_f64().unwrap();
        let lat = pos[1].as_f64().unwrap();
        assert!((-101.0..=-89.0).contains(&lon), "lon {lon} out of range");
        assert!((29.0..=41.0).contains(&lat), "lat {lat} out of range");
    }

    // Overlay: the vortex core is painted red (storm class).
    let overlay = image::open(tmp.path().join("out/overlay_20080621T123000Z.png"))
        .unwrap()
        .to_rgb8();
    let px = overlay.get_pixel(255, 255);
    assert!(
        px.0[0] > px.0[1] + 30,
        "expected a red-tinted core, found {:?}",
        px.0
    );
}

#[test]
fn detect_without_vortices_writes_a_valid_empty_collection() {
    let tmp = TempDir::new().unwrap();
    write_static_session(tmp.path(), 128);
    let config = write_config(tmp.path(), json!({}));
    let model = tmp.path().join("model.json");
    w7_only_model(&model, 2e-4);

    let out = run(&[
        "detect",
        "--config",
        config.to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));

    let fc: Value = serde_json::from_str(
        &fs::read_to_string(tmp.path().join("out/detections_20080621T123000Z.geojson")).unwrap(),
    )
    .unwrap();
    assert_eq!(fc["type"], "FeatureCollection");
    assert_eq!(fc["features"].as_array().unwrap().len(), 0);
}

#[test]
fn detect_with_a_missing_model_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    write_static_session(tmp.path(), 64);
    let config = write_config(tmp.path(), json!({}));
    let out = run(&["detect", "--config", config.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 1, "stderr: {}", stderr_of(&out));
    assert!(stderr_of(&out).contains("model"), "stderr: {}", stderr_of(&out));
}

/// Train on one storm-associated vortex and one storm-free vortex, then
/// evaluate on the same days: the memorizing forest must reproduce the
/// hand-computed confusion counts exactly.
#[test]
fn train_then_evaluate_reproduces_hand_tallied_metrics() {
    let tmp = TempDir::new().unwrap();
    // Session 1 (12:00, 12:30): vortex in the south-west quadrant, with a
    // storm report 15 minutes after the pair time right at its centroid.
    write_rendered_session(
        tmp.path(),
        FieldKind::Rankine {
            center: (127.5, 127.5),
            core_r: 64.0,
            omega: 0.02,
        },
        epoch(12, 0),
        2,
        5,
    );
    // Session 2 (15:00, 15:30): vortex in the north-east quadrant, more
    // than 3 degrees from the only report, and outside its time window.
    write_rendered_session(
        tmp.path(),
        FieldKind::Rankine {
            center: (383.5, 383.5),
            core_r: 64.0,
            omega: 0.02,
        },
        epoch(15, 0),
        2,
        9,
    );

    // Centroid of session 1's vortex: lon −100 + 128·0.02, lat 40 − 128·0.02.
    let storm_csv = tmp.path().join("reports.csv");
    fs::write(
        &storm_csv,
        "time,lat,lon,kind\n2008-06-21T12:45:00Z,37.44,-97.44,tornado\n",
    )
    .unwrap();

    let config = write_config(
        tmp.path(),
        json!({
            "storm_csv": storm_csv,
            "train_days": [21, 21],
            "test_days": [21, 21],
            "forest": { "n_trees": 31, "max_depth": 4, "min_leaf": 1, "features_per_split": 8 },
        }),
    );

    let out = run(&["train", "--config", config.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));
    let model = tmp.path().join("out/model.json");
    assert!(model.is_file());

    let out = run(&["evaluate", "--config", config.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));

    // One true positive and one true negative, scored perfectly:
    // tp=1 tn=1 fp=0 fn=0, all three rates equal to 1.
    let metrics = fs::read_to_string(tmp.path().join("out/metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(
        lines.next().unwrap(),
        "name,tp,tn,fp,fn,overall,sensitivity,specificity"
    );
    assert_eq!(lines.next().unwrap(), "test,1,1,0,0,1,1,1");

    assert!(tmp.path().join("out/lead_time.csv").is_file());
    assert!(tmp.path().join("out/lead_time.png").is_file());

    // The storm begins 15 minutes after the labeled vortex: it must land in
    // the first half-hour lead-time bucket as a storm-classified vortex.
    let lead = fs::read_to_string(tmp.path().join("out/lead_time.csv")).unwrap();
    let bucket0: Vec<&str> = lead
        .lines()
        .find(|l| l.starts_with("0,"))
        .expect("bucket 0 present")
        .split(',')
        .collect();
    assert_eq!(bucket0[3], "1", "bucket 0 count: {lead}");
    assert_eq!(bucket0[4], "1", "bucket 0 positives: {lead}");
}

#[test]
fn climatology_writes_the_density_grid_for_a_date() {
    let tmp = TempDir::new().unwrap();
    fs::create_dir_all(tmp.path().join("ch3")).unwrap();
    fs::create_dir_all(tmp.path().join("ch4")).unwrap();
    let storm_csv = tmp.path().join("reports.csv");
    fs::write(
        &storm_csv,
        "time,lat,lon,kind\n\
         2008-06-21T12:45:00Z,35.0,-97.0,hail\n\
         2008-06-19T03:10:00Z,36.5,-95.5,wind\n",
    )
    .unwrap();
    let config = write_config(tmp.path(), json!({ "storm_csv": storm_csv }));

    let out = run(&[
        "climatology",
        "--config",
        config.to_str().unwrap(),
        "--date",
        "2008-06-21",
    ]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));

    let csv = fs::read_to_string(tmp.path().join("out/density_2008-06-21.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "i,j,lon_min,lat_min,rho");
    // Both reports fall inside the ±5-day window around the date, so the
    // grid must hold nonzero density somewhere.
    assert!(
        lines.any(|l| l.split(',').nth(4).is_some_and(|rho| rho.parse::<f64>().unwrap() > 0.0)),
        "no nonzero density rows:\n{csv}"
    );
}

#[test]
fn climatology_without_storm_reports_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    fs::create_dir_all(tmp.path().join("ch3")).unwrap();
    fs::create_dir_all(tmp.path().join("ch4")).unwrap();
    let config = write_config(tmp.path(), json!({}));
    let out = run(&[
        "climatology",
        "--config",
        config.to_str().unwrap(),
        "--date",
        "2008-06-21",
    ]);
    assert_eq!(exit_code(&out), 1, "stderr: {}", stderr_of(&out));
    assert!(stderr_of(&out).contains("storm_csv"), "stderr: {}", stderr_of(&out));
}
