//! Algebraic properties of the region descriptor: brightness and climatology
//! features ignore the flow amplitude, kinematic features scale linearly with
//! it, and the vortex-strength feature scales quadratically. Scaling by
//! powers of two keeps IEEE arithmetic exact, so the tolerances can be tight.

use chrono::NaiveDate;
use ndarray::Array2;
use proptest::prelude::*;
use stormflow::climatology::DensityGrid;
use stormflow::descriptors::compute_descriptor;
use stormflow::field_analysis::{q_criterion, VortexRegion};
use stormflow::geo_imaging::{Channel, GeoTransform, SatelliteFrame};
use stormflow::optical_flow::FlowField;
use stormflow::synthetic::{default_epoch, default_spacing};

const N: usize = 24;

fn transform() -> GeoTransform {
    GeoTransform::new(-100.0, 40.0, 0.1, -0.1, N, N).unwrap()
}

fn grid_from(values: Vec<f64>) -> Array2<f64> {
    Array2::from_shape_vec((N, N), values).unwrap()
}

fn flow_from(u: Vec<f64>, v: Vec<f64>) -> FlowField {
    let t = default_epoch();
    FlowField::new(
        grid_from(u),
        grid_from(v),
        Array2::from_elem((N, N), true),
        transform(),
        t,
        t + default_spacing(),
    )
    .unwrap()
}

fn frame_from(channel: Channel, pixels: Vec<f64>) -> SatelliteFrame {
    SatelliteFrame::new(
        channel,
        grid_from(pixels),
        Array2::from_elem((N, N), true),
        default_epoch() + default_spacing(),
        transform(),
    )
    .unwrap()
}

fn block_region() -> VortexRegion {
    let mut pixels = Vec::new();
    for y in 6..18 {
        for x in 6..18 {
            pixels.push((x, y));
        }
    }
    let t = transform();
    let (lon, lat) = t.pixel_to_geo(11.5, 11.5).unwrap();
    VortexRegion {
        pixels,
        centroid_geo: (lon, lat),
        area_px: 144,
        timestamp: default_epoch() + default_spacing(),
        region_id: "block".into(),
    }
}

fn density_grid() -> DensityGrid {
    let mut counts = Array2::zeros((2, 2));
    counts[(0, 0)] = 22;
    counts[(1, 1)] = 7;
    DensityGrid {
        date: NaiveDate::from_ymd_opt(2008, 6, 10).unwrap(),
        cell_deg: 2.0,
        lon_origin: -101.0,
        lat_origin: 37.0,
        counts,
        window_days: 154,
    }
}

fn scale_flow(f: &FlowField, c: f64) -> FlowField {
    let mut out = f.clone();
    out.u.mapv_inplace(|x| x * c);
    out.v.mapv_inplace(|x| x * c);
    out
}

fn vec_strategy() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-2.0f64..2.0, N * N)
}

fn pixel_strategy() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.0f64..1.0, N * N)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn features_obey_their_scaling_laws(
        u in vec_strategy(),
        v in vec_strategy(),
        su in vec_strategy(),
        sv in vec_strategy(),
        iu in vec_strategy(),
        iv in vec_strategy(),
        p3 in pixel_strategy(),
        p4 in pixel_strategy(),
        exp in -3i32..=3,
    ) {
        let c = (2.0f64).powi(exp);
        let flow = flow_from(u, v);
        let sol = flow_from(su, sv);
        let irr = flow_from(iu, iv);
        let q = q_criterion(&flow);
        let ch3 = frame_from(Channel::Ch3, p3);
        let ch4 = frame_from(Channel::Ch4, p4);
        let region = block_region();
        let grid = density_grid();

        let base = compute_descriptor(&region, &ch3, &ch4, &flow, &sol, &irr, &q, &grid).unwrap();

        let flow_c = scale_flow(&flow, c);
        let q_c = q_criterion(&flow_c);
        let scaled = compute_descriptor(
            &region, &ch3, &ch4, &flow_c, &scale_flow(&sol, c), &scale_flow(&irr, c), &q_c, &grid,
        ).unwrap();

        let tight = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1e-12);

        // Brightness and climatology features ignore the flow entirely.
        prop_assert_eq!(scaled.w1, base.w1);
        prop_assert_eq!(scaled.w2, base.w2);
        prop_assert_eq!(scaled.w8, base.w8);
        // Direction is amplitude-free.
        prop_assert!(tight(scaled.w4, base.w4), "w4 {} vs {}", scaled.w4, base.w4);
        // Speed, spin, and spread scale linearly.
        prop_assert!(tight(scaled.w3, c * base.w3), "w3 {} vs {}", scaled.w3, c * base.w3);
        prop_assert!(tight(scaled.w5, c * base.w5), "w5 {} vs {}", scaled.w5, c * base.w5);
        prop_assert!(tight(scaled.w6, c * base.w6), "w6 {} vs {}", scaled.w6, c * base.w6);
        // Vortex strength scales quadratically.
        prop_assert!(tight(scaled.w7, c * c * base.w7), "w7 {} vs {}", scaled.w7, c * c * base.w7);
    }

    #[test]
    fn direction_always_lands_in_the_half_open_circle(
        u in vec_strategy(),
        v in vec_strategy(),
    ) {
        let flow = flow_from(u, v);
        let sol = flow.clone();
        let irr = flow.clone();
        let q = q_criterion(&flow);
        let ch3 = frame_from(Channel::Ch3, vec![0.5; N * N]);
        let ch4 = frame_from(Channel::Ch4, vec![0.5; N * N]);
        let d = compute_descriptor(&block_region(), &ch3, &ch4, &flow, &sol, &irr, &q, &density_grid()).unwrap();
        prop_assert!(d.w4 > -std::f64::consts::PI && d.w4 <= std::f64::consts::PI, "w4 = {}", d.w4);
    }
}

/// A region whose footprint lies outside the climatology grid contributes
/// zero storm density rather than failing.
#[test]
fn out_of_grid_regions_have_zero_climatology_density() {
    let flow = flow_from(vec![0.25; N * N], vec![-0.5; N * N]);
    let q = q_criterion(&flow);
    let ch3 = frame_from(Channel::Ch3, vec![0.3; N * N]);
    let ch4 = frame_from(Channel::Ch4, vec![0.6; N * N]);
    let far_grid = DensityGrid {
        date: NaiveDate::from_ymd_opt(2008, 6, 10).unwrap(),
        cell_deg: 2.0,
        lon_origin: 10.0, // eastern hemisphere; frames sit near 100°W
        lat_origin: -40.0,
        counts: ndarray::Array2::from_elem((4, 4), 9),
        window_days: 154,
    };
    let d = compute_descriptor(
        &block_region(),
        &ch3,
        &ch4,
        &flow,
        &flow.clone(),
        &flow.clone(),
        &q,
        &far_grid,
    )
    .unwrap();
    assert_eq!(d.w8, 0.0);
    assert!((d.w1 - 0.3).abs() <= 1e-12);
    assert!((d.w2 - 0.6).abs() <= 1e-12);
}
