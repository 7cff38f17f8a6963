//! Minimal PNG chart renderer for the lead-time curve: the fraction of
//! vortices classified storm-related, per time-to-onset bucket, with the
//! ongoing (`< first edge`) and beyond (`> last edge`) slots at the ends.
//!
//! Rendering is hand-rolled on an RGB canvas with a small bitmap font, so
//! the output depends on nothing but this code and the curve values.

use std::path::Path;

use anyhow::Context;
use image::{Rgb, RgbImage};
use stormflow::evaluation::LeadTimeCurve;

use crate::{data_error, CliResult};

const WIDTH: u32 = 720;
const HEIGHT: u32 = 400;
const MARGIN_LEFT: u32 = 64;
const MARGIN_RIGHT: u32 = 24;
const MARGIN_TOP: u32 = 24;
const MARGIN_BOTTOM: u32 = 56;

const BG: Rgb<u8> = Rgb([255, 255, 255]);
const AXIS: Rgb<u8> = Rgb([30, 30, 30]);
const GRID: Rgb<u8> = Rgb([210, 210, 210]);
const CURVE: Rgb<u8> = Rgb([40, 80, 200]);
const TEXT: Rgb<u8> = Rgb([30, 30, 30]);

/// 5×7 glyphs for the characters the axis labels need.
fn glyph(c: char) -> Option<[u8; 7]> {
    let rows = match c {
        '0' => [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110],
        '1' => [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110],
        '2' => [0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111],
        '3' => [0b11110, 0b00001, 0b00001, 0b01110, 0b00001, 0b00001, 0b11110],
        '4' => [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010],
        '5' => [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110],
        '6' => [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110],
        '7' => [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000],
        '8' => [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110],
        '9' => [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100],
        '.' => [0b00000, 0b00000, 0b00000, 0b00000, 0b00000, 0b01100, 0b01100],
        '<' => [0b00010, 0b00100, 0b01000, 0b10000, 0b01000, 0b00100, 0b00010],
        '>' => [0b01000, 0b00100, 0b00010, 0b00001, 0b00010, 0b00100, 0b01000],
        '%' => [0b11001, 0b11010, 0b00010, 0b00100, 0b01000, 0b01011, 0b10011],
        'h' => [0b10000, 0b10000, 0b10110, 0b11001, 0b10001, 0b10001, 0b10001],
        ' ' => [0; 7],
        _ => return None,
    };
    Some(rows)
}

fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, scale: i64) {
    let mut cursor = x;
    for c in text.chars() {
        if let Some(rows) = glyph(c) {
            for (ry, bits) in rows.iter().enumerate() {
                for rx in 0..5 {
                    if bits >> (4 - rx) & 1 == 1 {
                        fill_rect(
                            img,
                            cursor + rx * scale,
                            y + ry as i64 * scale,
                            scale,
                            scale,
                            TEXT,
                        );
                    }
                }
            }
        }
        cursor += 6 * scale;
    }
}

fn text_width(text: &str, scale: i64) -> i64 {
    text.chars().count() as i64 * 6 * scale - scale
}

fn put(img: &mut RgbImage, x: i64, y: i64, color: Rgb<u8>) {
    if (0..i64::from(WIDTH)).contains(&x) && (0..i64::from(HEIGHT)).contains(&y) {
        img.put_pixel(x as u32, y as u32, color);
    }
}

fn fill_rect(img: &mut RgbImage, x: i64, y: i64, w: i64, h: i64, color: Rgb<u8>) {
    for yy in y..y + h {
        for xx in x..x + w {
            put(img, xx, yy, color);
        }
    }
}

fn draw_line(img: &mut RgbImage, x0: i64, y0: i64, x1: i64, y1: i64, color: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        put(img, x, y, color);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

fn fill_dot(img: &mut RgbImage, cx: i64, cy: i64, r: i64, color: Rgb<u8>) {
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                put(img, cx + dx, cy + dy, color);
            }
        }
    }
}

/// Compact number label: drops a trailing `.0`.
fn fmt_edge(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else {
        format!("{v:.1}")
    }
}

/// Renders the curve to a PNG at `path`.
pub fn write_lead_time_chart(curve: &LeadTimeCurve, path: &Path) -> CliResult<()> {
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, BG);
    let plot_left = i64::from(MARGIN_LEFT);
    let plot_right = i64::from(WIDTH - MARGIN_RIGHT);
    let plot_top = i64::from(MARGIN_TOP);
    let plot_bottom = i64::from(HEIGHT - MARGIN_BOTTOM);
    let plot_w = plot_right - plot_left;
    let plot_h = plot_bottom - plot_top;

    // Horizontal gridlines and y labels every 25%.
    for step in 0..=4 {
        let frac = f64::from(step) * 0.25;
        let y = plot_bottom - (frac * plot_h as f64).round() as i64;
        if step > 0 {
            draw_line(&mut img, plot_left, y, plot_right, y, GRID);
        }
        let label = format!("{}%", step * 25);
        draw_text(
            &mut img,
            plot_left - 10 - text_width(&label, 2),
            y - 7,
            &label,
            2,
        );
    }

    // Axes.
    draw_line(&mut img, plot_left, plot_top, plot_left, plot_bottom, AXIS);
    draw_line(&mut img, plot_left, plot_bottom, plot_right, plot_bottom, AXIS);

    // Slots: ongoing, each bucket, beyond.
    let n_slots = curve.n_buckets() + 2;
    let slot_x = |i: usize| plot_left + ((i as f64 + 0.5) / n_slots as f64 * plot_w as f64) as i64;
    let frac_y = |f: f64| plot_bottom - (f * plot_h as f64).round() as i64;

    let mut fractions: Vec<Option<f64>> = Vec::with_capacity(n_slots);
    fractions.push(curve.ongoing_fraction());
    for i in 0..curve.n_buckets() {
        fractions.push(curve.fraction(i));
    }
    fractions.push(curve.beyond_fraction());

    // Tick labels: `<lo` for ongoing, bucket lower edges (every other one
    // when crowded), `>hi h` for beyond.
    let label_step = if curve.n_buckets() > 8 { 2 } else { 1 };
    let ongoing_label = format!("<{}", fmt_edge(curve.edges[0]));
    let ox = slot_x(0);
    draw_text(
        &mut img,
        ox - text_width(&ongoing_label, 2) / 2,
        plot_bottom + 10,
        &ongoing_label,
        2,
    );
    for i in (0..curve.n_buckets()).step_by(label_step) {
        let text = fmt_edge(curve.edges[i]);
        let x = slot_x(i + 1);
        draw_line(&mut img, x, plot_bottom, x, plot_bottom + 4, AXIS);
        draw_text(&mut img, x - text_width(&text, 2) / 2, plot_bottom + 10, &text, 2);
    }
    let beyond_label = format!(">{} h", fmt_edge(*curve.edges.last().expect("validated edges")));
    let bx = slot_x(n_slots - 1);
    draw_text(
        &mut img,
        bx - text_width(&beyond_label, 2) / 2,
        plot_bottom + 10,
        &beyond_label,
        2,
    );

    // Curve: connect consecutive defined slots; dot every defined slot.
    let mut prev: Option<(i64, i64)> = None;
    for (slot, frac) in fractions.iter().enumerate() {
        if let Some(f) = frac {
            let p = (slot_x(slot), frac_y(*f));
            if let Some(q) = prev {
                draw_line(&mut img, q.0, q.1, p.0, p.1, CURVE);
            }
            fill_dot(&mut img, p.0, p.1, 3, CURVE);
            prev = Some(p);
        }
    }

    img.save(path)
        .with_context(|| format!("cannot write chart {}", path.display()))
        .map_err(data_error)
}
