//! Vortex extraction on closed-form and rendered scenes: region counts,
//! centroid accuracy, spin signs, and the behavior of the full
//! frames-to-descriptor chain on a known injected vortex.

use chrono::NaiveDate;
use stormflow::climatology::{build_density_grid, StormDB};
use stormflow::descriptors::compute_descriptor;
use stormflow::field_analysis::{extract_vortices, q_criterion, vorticity, VortexRegion};
use stormflow::geo_imaging::{equalize_pair, GeoTransform};
use stormflow::optical_flow::{lucas_kanade_dense, stabilize_flow, FlowParams};
use stormflow::synthetic::{
    default_epoch, default_spacing, render_pair, sample_composite, sample_field, AnalyticField,
    FieldKind,
};

fn domain(w: usize, h: usize) -> GeoTransform {
    GeoTransform::new(-105.0, 42.0, 0.04, -0.04, w, h).unwrap()
}

/// Area gate for the rendered-scene chains: large enough to reject the patchy
/// positive-Q residue that texture noise leaves behind after smoothing, small
/// enough to keep a resolved vortex core (which covers tens of thousands of
/// pixels at this image scale).
const MIN_DETECTION_AREA: usize = 5000;

fn region_mean_vorticity(region: &VortexRegion, spin: &ndarray::Array2<f64>) -> f64 {
    let sum: f64 = region.pixels.iter().map(|&(x, y)| spin[(y, x)]).sum();
    sum / region.pixels.len() as f64
}

#[test]
fn a_single_vortex_yields_one_region_covering_its_core() {
    let (center, core_r, omega) = ((63.5, 63.5), 10.0, 0.15);
    let f = sample_field(&AnalyticField {
        kind: FieldKind::Rankine {
            center,
            core_r,
            omega,
        },
        domain: domain(128, 128),
    });
    let q = q_criterion(&f);
    let regions = extract_vortices(&q, 20, f.t_next);
    assert_eq!(regions.len(), 1, "expected exactly one region");
    let r = &regions[0];

    let (cx, cy) = r.centroid_pixel();
    assert!(
        (cx - center.0).hypot(cy - center.1) <= 1.0,
        "centroid ({cx:.2}, {cy:.2}) vs center {center:?}"
    );

    // Every pixel whose entire difference stencil stays inside the solid-body
    // core must be a member, and no member strays far outside the core.
    let members: std::collections::HashSet<(usize, usize)> = r.pixels.iter().copied().collect();
    for y in 0..128 {
        for x in 0..128 {
            let rad = (x as f64 - center.0).hypot(y as f64 - center.1);
            if rad <= core_r - 1.0 {
                assert!(members.contains(&(x, y)), "core pixel ({x}, {y}) missing");
            }
            if rad > core_r + 2.0 {
                assert!(!members.contains(&(x, y)), "pixel ({x}, {y}) beyond the core");
            }
        }
    }
}

#[test]
fn two_opposite_vortices_yield_two_regions_with_distinguishable_spins() {
    let d = domain(160, 96);
    let left = (49.5, 47.5);
    let right = (109.5, 47.5);
    let f = sample_composite(&[
        AnalyticField {
            kind: FieldKind::Rankine {
                center: left,
                core_r: 10.0,
                omega: 0.15,
            },
            domain: d,
        },
        AnalyticField {
            kind: FieldKind::Rankine {
                center: right,
                core_r: 10.0,
                omega: -0.15,
            },
            domain: d,
        },
    ])
    .unwrap();
    let q = q_criterion(&f);
    let regions = extract_vortices(&q, 20, f.t_next);
    assert_eq!(regions.len(), 2, "expected exactly two regions");

    let spin = vorticity(&f);
    let mut seen_left = false;
    let mut seen_right = false;
    for r in &regions {
        let (cx, cy) = r.centroid_pixel();
        let mean_spin = region_mean_vorticity(r, &spin.values);
        if cx < 80.0 {
            seen_left = true;
            assert!((cx - left.0).hypot(cy - left.1) <= 1.0);
            assert!(mean_spin > 0.0, "left region should spin counter-clockwise");
        } else {
            seen_right = true;
            assert!((cx - right.0).hypot(cy - right.1) <= 1.0);
            assert!(mean_spin < 0.0, "right region should spin clockwise");
        }
    }
    assert!(seen_left && seen_right);
}

#[test]
fn no_spurious_regions_on_unfavorable_fields() {
    let d = domain(96, 96);
    for kind in [
        FieldKind::Shear { gamma: 0.3 },
        FieldKind::Translation { u: 2.0, v: -1.0 },
    ] {
        let f = sample_field(&AnalyticField {
            kind: kind.clone(),
            domain: d,
        });
        let q = q_criterion(&f);
        let regions = extract_vortices(&q, 20, f.t_next);
        assert!(regions.is_empty(), "{kind:?} produced {} regions", regions.len());
    }
}

/// The full estimation chain — render, equalize, match, smooth, split, Q —
/// must find the injected vortex and nothing else, and the descriptor built
/// from the detection must report a strength that matches the analytic spin.
#[test]
fn rendered_vortex_survives_the_whole_estimation_chain() {
    let n = 512;
    let (center, core_r, omega) = ((255.5, 255.5), 64.0, 0.02);
    let carrier = AnalyticField {
        kind: FieldKind::Rankine {
            center,
            core_r,
            omega,
        },
        domain: domain(n, n),
    };
    let pair = render_pair(5, &carrier);
    let (prev_eq, next_eq) = equalize_pair(&pair.prev, &pair.next).unwrap();
    let params = FlowParams::default();
    let raw = lucas_kanade_dense(&prev_eq, &next_eq, &params).unwrap();
    let smooth = stabilize_flow(&raw, &params).unwrap();
    let (sol, irr) = stormflow::field_analysis::helmholtz_decompose(&smooth).unwrap();
    let q = q_criterion(&sol);
    let regions = extract_vortices(&q, MIN_DETECTION_AREA, smooth.t_next);
    assert_eq!(regions.len(), 1, "expected exactly one detected region");
    let (cx, cy) = regions[0].centroid_pixel();
    assert!(
        (cx - center.0).hypot(cy - center.1) <= 1.0,
        "centroid ({cx:.2}, {cy:.2}) vs injected center {center:?}"
    );

    let grid = build_density_grid(
        &StormDB::new(Vec::new()),
        NaiveDate::from_ymd_opt(2008, 6, 15).unwrap(),
    );
    let desc = compute_descriptor(
        &regions[0], &prev_eq, &next_eq, &smooth, &sol, &irr, &q, &grid,
    )
    .unwrap();
    let expected = omega * omega;
    assert!(
        (desc.w7 - expected).abs() <= 0.1 * expected,
        "vortex-strength entry {:.7} vs analytic {expected:.7}",
        desc.w7
    );
}

/// A sheared but rotation-free rendered scene must come out of the same chain
/// with no detections at the same area gate.
#[test]
fn rendered_shear_yields_no_detections() {
    let carrier = AnalyticField {
        kind: FieldKind::Shear { gamma: 0.002 },
        domain: domain(256, 256),
    };
    let pair = render_pair(21, &carrier);
    let (prev_eq, next_eq) = equalize_pair(&pair.prev, &pair.next).unwrap();
    let params = FlowParams::default();
    let raw = lucas_kanade_dense(&prev_eq, &next_eq, &params).unwrap();
    let smooth = stabilize_flow(&raw, &params).unwrap();
    let (sol, _irr) = stormflow::field_analysis::helmholtz_decompose(&smooth).unwrap();
    let q = q_criterion(&sol);
    let regions = extract_vortices(&q, MIN_DETECTION_AREA, smooth.t_next);
    assert!(
        regions.is_empty(),
        "shear scene produced {} spurious regions",
        regions.len()
    );
}

#[test]
fn identical_rendered_frames_detect_nothing() {
    let carrier = AnalyticField {
        kind: FieldKind::Translation { u: 0.0, v: 0.0 },
        domain: domain(96, 96),
    };
    let pair = render_pair(12, &carrier);
    let (prev_eq, next_eq) = equalize_pair(&pair.prev, &pair.next).unwrap();
    let params = FlowParams::default();
    let raw = lucas_kanade_dense(&prev_eq, &next_eq, &params).unwrap();
    let smooth = stabilize_flow(&raw, &params).unwrap();
    let (sol, _) = stormflow::field_analysis::helmholtz_decompose(&smooth).unwrap();
    let q = q_criterion(&sol);
    assert!(extract_vortices(&q, 20, default_epoch() + default_spacing()).is_empty());
}
