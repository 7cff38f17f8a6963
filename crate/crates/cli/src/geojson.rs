//! GeoJSON export of detected vortex regions.
//!
//! Each region's pixel support is traced into boundary rings on the pixel
//! lattice (corners at integer coordinates), holes are nested under their
//! containing exterior, corners are mapped to geographic coordinates, and
//! rings are oriented per RFC 7946: exteriors counterclockwise, holes
//! clockwise, positions as `[longitude, latitude]`.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use anyhow::Context;
use serde_json::{json, Value};
use stormflow::field_analysis::VortexRegion;
use stormflow::geo_imaging::GeoTransform;

use crate::extraction::ExtractedRow;
use crate::{data_error, CliResult};

type Corner = (i32, i32);

/// Directed boundary edges of the pixel set, each unit edge oriented so the
/// member pixel lies on a fixed side. Keyed by start corner; a corner holds
/// two outgoing edges exactly at "saddles" where two pixels touch
/// diagonally.
fn boundary_edges(members: &HashSet<Corner>) -> BTreeMap<Corner, Vec<Corner>> {
    let mut edges: BTreeMap<Corner, Vec<Corner>> = BTreeMap::new();
    let mut add = |from: Corner, to: Corner| edges.entry(from).or_default().push(to);
    for &(x, y) in members {
        if !members.contains(&(x, y - 1)) {
            add((x, y), (x + 1, y));
        }
        if !members.contains(&(x + 1, y)) {
            add((x + 1, y), (x + 1, y + 1));
        }
        if !members.contains(&(x, y + 1)) {
            add((x + 1, y + 1), (x, y + 1));
        }
        if !members.contains(&(x - 1, y)) {
            add((x, y + 1), (x, y));
        }
    }
    for ends in edges.values_mut() {
        ends.sort_unstable();
    }
    edges
}

/// Stitches the directed edges into closed rings. At a saddle corner the
/// edge making the sharpest turn relative to the incoming direction is
/// taken, which keeps each ring simple instead of figure-eight shaped.
fn trace_rings(mut edges: BTreeMap<Corner, Vec<Corner>>) -> Vec<Vec<Corner>> {
    let mut rings = Vec::new();
    while let Some((&start, _)) = edges.iter().find(|(_, ends)| !ends.is_empty()) {
        let mut ring = vec![start];
        let mut current = edges.get_mut(&start).unwrap().remove(0);
        let mut dir = (current.0 - start.0, current.1 - start.1);
        ring.push(current);
        while current != start {
            let ends = edges
                .get_mut(&current)
                .expect("boundary edges pair up into closed rings");
            let pick = if ends.len() == 1 {
                0
            } else {
                // Sharpest turn: maximize the cross product of the incoming
                // direction with the candidate direction.
                let cross = |to: Corner| {
                    let e = (to.0 - current.0, to.1 - current.1);
                    dir.0 * e.1 - dir.1 * e.0
                };
                (0..ends.len()).max_by_key(|&i| cross(ends[i])).unwrap()
            };
            let next = ends.remove(pick);
            dir = (next.0 - current.0, next.1 - current.1);
            current = next;
            ring.push(current);
        }
        rings.push(simplify_collinear(ring));
    }
    rings
}

/// Drops interior vertices of straight runs; keeps the ring closed.
fn simplify_collinear(ring: Vec<Corner>) -> Vec<Corner> {
    let n = ring.len() - 1; // last == first
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let prev = ring[(i + n - 1) % n];
        let cur = ring[i];
        let next = ring[(i + 1) % n];
        let a = (cur.0 - prev.0, cur.1 - prev.1);
        let b = (next.0 - cur.0, next.1 - cur.1);
        if a != b {
            out.push(cur);
        }
    }
    let first = out[0];
    out.push(first);
    out
}

/// Twice the signed shoelace area; sign identifies ring nesting parity.
fn shoelace2<T: Copy + Into<f64>>(ring: &[(T, T)]) -> f64 {
    let mut sum = 0.0;
    for w in ring.windows(2) {
        let (x0, y0): (f64, f64) = (w[0].0.into(), w[0].1.into());
        let (x1, y1): (f64, f64) = (w[1].0.into(), w[1].1.into());
        sum += x0 * y1 - x1 * y0;
    }
    sum
}

/// Even-odd ray cast. Test points sit at half-integers, ring vertices at
/// integers, so no degenerate intersections occur.
fn point_in_ring(px: f64, py: f64, ring: &[Corner]) -> bool {
    let mut inside = false;
    for w in ring.windows(2) {
        let (x0, y0) = (w[0].0 as f64, w[0].1 as f64);
        let (x1, y1) = (w[1].0 as f64, w[1].1 as f64);
        if (y0 > py) != (y1 > py) {
            let x_cross = x0 + (py - y0) / (y1 - y0) * (x1 - x0);
            if px < x_cross {
                inside = !inside;
            }
        }
    }
    inside
}

/// A point strictly inside the ring, found among half-integer offsets of
/// its vertices.
fn interior_point(ring: &[Corner]) -> Option<(f64, f64)> {
    for &(x, y) in &ring[..ring.len() - 1] {
        for (ox, oy) in [(0.5, 0.5), (-0.5, 0.5), (0.5, -0.5), (-0.5, -0.5)] {
            let p = (x as f64 + ox, y as f64 + oy);
            if point_in_ring(p.0, p.1, ring) {
                return Some(p);
            }
        }
    }
    None
}

/// Groups rings into polygons: exteriors (positive pixel-space area under
/// the tracing convention) each carry the holes they contain.
fn assemble_polygons(rings: Vec<Vec<Corner>>) -> Vec<(Vec<Corner>, Vec<Vec<Corner>>)> {
    let (exteriors, holes): (Vec<_>, Vec<_>) =
        rings.into_iter().partition(|r| shoelace2(r) > 0.0);
    let mut polygons: Vec<(Vec<Corner>, Vec<Vec<Corner>>)> =
        exteriors.into_iter().map(|e| (e, Vec::new())).collect();
    for hole in holes {
        let owner = interior_point(&hole)
            .and_then(|(px, py)| {
                polygons
                    .iter()
                    .position(|(ext, _)| point_in_ring(px, py, ext))
            })
            .unwrap_or(0);
        polygons[owner].1.push(hole);
    }
    polygons
}

/// Maps a pixel-corner ring to `[lon, lat]` positions with the requested
/// orientation (`ccw` = counterclockwise in geographic coordinates).
fn ring_to_geo(ring: &[Corner], t: &GeoTransform, ccw: bool) -> Value {
    let mut coords: Vec<(f64, f64)> = ring
        .iter()
        .map(|&(x, y)| {
            (
                t.lon_origin + x as f64 * t.dlon,
                t.lat_origin + y as f64 * t.dlat,
            )
        })
        .collect();
    if (shoelace2(&coords) > 0.0) != ccw {
        coords.reverse();
    }
    Value::Array(
        coords
            .into_iter()
            .map(|(lon, lat)| json!([lon, lat]))
            .collect(),
    )
}

/// The region's footprint as a Polygon, or a MultiPolygon when the pixel
/// support splits into several boundary components.
pub fn region_geometry(region: &VortexRegion, t: &GeoTransform) -> Value {
    let members: HashSet<Corner> = region
        .pixels
        .iter()
        .map(|&(x, y)| (x as i32, y as i32))
        .collect();
    let polygons = assemble_polygons(trace_rings(boundary_edges(&members)));
    let polygon_coords = |(ext, holes): &(Vec<Corner>, Vec<Vec<Corner>>)| {
        let mut rings = vec![ring_to_geo(ext, t, true)];
        rings.extend(holes.iter().map(|h| ring_to_geo(h, t, false)));
        Value::Array(rings)
    };
    if polygons.len() == 1 {
        json!({ "type": "Polygon", "coordinates": polygon_coords(&polygons[0]) })
    } else {
        json!({
            "type": "MultiPolygon",
            "coordinates": Value::Array(polygons.iter().map(polygon_coords).collect()),
        })
    }
}

/// One detection as a GeoJSON Feature. `score` is the classifier's vote
/// fraction and `predicted` its decision.
pub fn feature(row: &ExtractedRow, score: f64, predicted: bool, t: &GeoTransform) -> Value {
    let d = &row.descriptor;
    json!({
        "type": "Feature",
        "geometry": region_geometry(&row.region, t),
        "properties": {
            "region_id": d.region_id,
            "timestamp": d.timestamp.to_rfc3339(),
            "area_px": row.region.area_px,
            "centroid": [d.centroid_geo.0, d.centroid_geo.1],
            "score": score,
            "label": predicted,
            "w1": d.w1, "w2": d.w2, "w3": d.w3, "w4": d.w4,
            "w5": d.w5, "w6": d.w6, "w7": d.w7, "w8": d.w8,
        },
    })
}

/// Wraps features (possibly none) into a FeatureCollection that records the
/// run seed as a foreign member.
pub fn feature_collection(features: Vec<Value>, seed: u64) -> Value {
    json!({
        "type": "FeatureCollection",
        "seed": seed,
        "features": features,
    })
}

pub fn write_geojson(path: &Path, collection: &Value) -> CliResult<()> {
    let text = serde_json::to_string_pretty(collection).expect("geojson serializes");
    fs::write(path, text)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(data_error)
}
