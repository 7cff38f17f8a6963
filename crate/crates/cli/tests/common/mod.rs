//! Shared fixtures for the binary's integration tests: rendered frame
//! sessions on disk, config files, and toy classifier models.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chrono::{DateTime, Duration, TimeZone, Utc};
use ndarray::Array2;
use serde_json::{json, Value};
use stormflow::descriptors::VortexDescriptor;
use stormflow::forest::{save_model, train, ForestConfig};
use stormflow::geo_imaging::{write_frame, Channel, GeoTransform, SatelliteFrame};
use stormflow::synthetic::{render_sequence, sample_field, AnalyticField, FieldKind};

pub fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stormflow"))
}

pub fn run(args: &[&str]) -> Output {
    binary().args(args).output().expect("binary runs")
}

pub fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

pub fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// 512-square grid over the south-central United States.
pub fn fixture_transform() -> GeoTransform {
    GeoTransform::new(-100.0, 40.0, 0.02, -0.02, 512, 512).unwrap()
}

pub fn epoch(h: u32, m: u32) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2008, 6, 21, h, m, 0).unwrap()
}

/// Renders `n_frames` of both channels under one stationary truth flow and
/// writes them into `ch3/`・`ch4/` under `root` as float32 grids with
/// sidecars.
pub fn write_rendered_session(
    root: &Path,
    kind: FieldKind,
    start: DateTime<Utc>,
    n_frames: usize,
    texture_seed: u64,
) {
    let mut truth = sample_field(&AnalyticField {
        kind,
        domain: fixture_transform(),
    });
    truth.t_prev = start;
    truth.t_next = start + Duration::minutes(30);
    for (channel, seed) in [(Channel::Ch3, texture_seed + 1), (Channel::Ch4, texture_seed)] {
        let dir = root.join(channel.to_string());
        fs::create_dir_all(&dir).unwrap();
        let frames = render_sequence(seed, &truth, channel, n_frames, Duration::minutes(30));
        for frame in &frames {
            write_session_frame(&dir, frame);
        }
    }
}

pub fn write_session_frame(dir: &Path, frame: &SatelliteFrame) {
    let stamp = frame.timestamp.format("%Y%m%dT%H%M%SZ");
    let image = dir.join(format!("{stamp}.f32"));
    let sidecar = dir.join(format!("{stamp}.json"));
    write_frame(frame, &image, &sidecar).unwrap();
}

/// Two frames per channel with identical pixels: genuinely zero motion.
pub fn write_static_session(root: &Path, side: usize) {
    let t = GeoTransform::new(-100.0, 40.0, 0.02, -0.02, side, side).unwrap();
    let pixels = Array2::from_shape_fn((side, side), |(y, x)| {
        0.3 + 0.4 * ((x * 7 + y * 13) % 97) as f64 / 97.0
    });
    let mask = Array2::from_elem((side, side), true);
    for channel in [Channel::Ch3, Channel::Ch4] {
        let dir = root.join(channel.to_string());
        fs::create_dir_all(&dir).unwrap();
        for minutes in [0, 30] {
            let frame = SatelliteFrame::new(
                channel,
                pixels.clone(),
                mask.clone(),
                epoch(12, 0) + Duration::minutes(minutes),
                t,
            )
            .unwrap();
            write_session_frame(&dir, &frame);
        }
    }
}

/// The single-vortex regime the detection chain is known to resolve.
pub fn rankine_centered() -> FieldKind {
    FieldKind::Rankine {
        center: (255.5, 255.5),
        core_r: 64.0,
        omega: 0.02,
    }
}

pub fn write_config(root: &Path, extra: Value) -> PathBuf {
    let mut config = json!({
        "ch3_dir": root.join("ch3"),
        "ch4_dir": root.join("ch4"),
        "output_dir": root.join("out"),
        "min_area_px": 5000,
    });
    config
        .as_object_mut()
        .unwrap()
        .extend(extra.as_object().unwrap().clone());
    let path = root.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

/// A classifier that answers purely on the local rotation strength (w7):
/// trained on toy rows where only w7 differs between classes.
pub fn w7_only_model(path: &Path, threshold: f64) {
    let toy = |w7: f64, id: usize| VortexDescriptor {
        region_id: format!("toy{id}"),
        timestamp: epoch(0, 0),
        centroid_geo: (-95.0, 35.0),
        w1: 0.5,
        w2: 0.5,
        w3: 0.5,
        w4: 0.5,
        w5: 0.5,
        w6: 0.5,
        w7,
        w8: 0.25,
    };
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    for i in 0..10 {
        samples.push(toy(threshold * (0.01 + 0.04 * i as f64), i));
        labels.push(false);
        samples.push(toy(threshold * (1.0 + 0.2 * i as f64), 10 + i));
        labels.push(true);
    }
    let cfg = ForestConfig {
        n_trees: 15,
        max_depth: 4,
        min_leaf: 1,
        features_per_split: 8,
        seed: 7,
    };
    let forest = train(&samples, &labels, &cfg).unwrap();
    save_model(&forest, path).unwrap();
}
