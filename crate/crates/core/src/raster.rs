//! Internal raster helpers: interpolation, nearest-valid infill, integral
//! images, and pyramid resampling.

use std::collections::VecDeque;

use ndarray::Array2;

/// Bilinear sample with coordinates clamped to the valid domain.
///
/// Integer coordinates return the stored value exactly (the interpolation
/// weights degenerate to 1 and 0).
pub(crate) fn sample_clamped(grid: &Array2<f64>, x: f64, y: f64) -> f64 {
    let (h, w) = grid.dim();
    debug_assert!(w > 0 && h > 0);
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let top = grid[(y0, x0)] * (1.0 - fx) + grid[(y0, x1)] * fx;
    let bot = grid[(y1, x0)] * (1.0 - fx) + grid[(y1, x1)] * fx;
    top * (1.0 - fy) + bot * fy
}

/// Bilinear sample on a periodically wrapped grid.
pub(crate) fn sample_wrapped(grid: &Array2<f64>, x: f64, y: f64) -> f64 {
    let (h, w) = grid.dim();
    let wf = w as f64;
    let hf = h as f64;
    let x = x.rem_euclid(wf);
    let y = y.rem_euclid(hf);
    let x0 = x.floor() as usize % w;
    let y0 = y.floor() as usize % h;
    let x1 = (x0 + 1) % w;
    let y1 = (y0 + 1) % h;
    let fx = x - x.floor();
    let fy = y - y.floor();
    let top = grid[(y0, x0)] * (1.0 - fx) + grid[(y0, x1)] * fx;
    let bot = grid[(y1, x0)] * (1.0 - fx) + grid[(y1, x1)] * fx;
    top * (1.0 - fy) + bot * fy
}

/// Replaces invalid pixels with the value of the nearest valid pixel
/// (multi-source BFS over 4-neighbors; ties resolved by scan order).
///
/// Returns `None` when no pixel is valid.
pub(crate) fn infill_nearest(values: &Array2<f64>, mask: &Array2<bool>) -> Option<Array2<f64>> {
    let (h, w) = values.dim();
    if mask.iter().all(|&m| m) {
        return Some(values.clone());
    }
    if !mask.iter().any(|&m| m) {
        return None;
    }
    let mut out = values.clone();
    let mut filled = mask.clone();
    let mut queue: VecDeque<(usize, usize)> = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            if mask[(y, x)] {
                queue.push_back((y, x));
            }
        }
    }
    while let Some((y, x)) = queue.pop_front() {
        let neighbors = [
            (y.wrapping_sub(1), x),
            (y + 1, x),
            (y, x.wrapping_sub(1)),
            (y, x + 1),
        ];
        for (ny, nx) in neighbors {
            if ny < h && nx < w && !filled[(ny, nx)] {
                out[(ny, nx)] = out[(y, x)];
                filled[(ny, nx)] = true;
                queue.push_back((ny, nx));
            }
        }
    }
    Some(out)
}

/// Summed-area table with a zero top row and left column, so
/// `box_sum` needs no boundary branches.
pub(crate) fn integral_image(grid: &Array2<f64>) -> Array2<f64> {
    let (h, w) = grid.dim();
    let mut ii = Array2::<f64>::zeros((h + 1, w + 1));
    for y in 0..h {
        let mut row_acc = 0.0;
        for x in 0..w {
            row_acc += grid[(y, x)];
            ii[(y + 1, x + 1)] = ii[(y, x + 1)] + row_acc;
        }
    }
    ii
}

/// Sum of `grid` over the inclusive pixel rectangle `[x0,x1]×[y0,y1]`.
pub(crate) fn box_sum(ii: &Array2<f64>, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
    ii[(y1 + 1, x1 + 1)] - ii[(y0, x1 + 1)] - ii[(y1 + 1, x0)] + ii[(y0, x0)]
}

/// One separable pass of the normalized binomial `[1, 2, 1]/4` blur.
///
/// Weights are confined to valid pixels (normalized convolution), so masked
/// values never bleed into their neighbors; pixels with no valid support keep
/// their stored value. The mask itself is not changed.
pub(crate) fn blur_121(values: &Array2<f64>, mask: &Array2<bool>) -> Array2<f64> {
    let (h, w) = values.dim();
    let weight = |m: bool, c: f64| if m { c } else { 0.0 };

    let mut horiz = values.clone();
    if w > 1 {
        for y in 0..h {
            for x in 0..w {
                let mut num = weight(mask[(y, x)], 2.0) * values[(y, x)];
                let mut den = weight(mask[(y, x)], 2.0);
                if x > 0 {
                    num += weight(mask[(y, x - 1)], 1.0) * values[(y, x - 1)];
                    den += weight(mask[(y, x - 1)], 1.0);
                }
                if x + 1 < w {
                    num += weight(mask[(y, x + 1)], 1.0) * values[(y, x + 1)];
                    den += weight(mask[(y, x + 1)], 1.0);
                }
                if den > 0.0 {
                    horiz[(y, x)] = num / den;
                }
            }
        }
    }

    let mut out = horiz.clone();
    if h > 1 {
        for y in 0..h {
            for x in 0..w {
                let mut num = weight(mask[(y, x)], 2.0) * horiz[(y, x)];
                let mut den = weight(mask[(y, x)], 2.0);
                if y > 0 {
                    num += weight(mask[(y - 1, x)], 1.0) * horiz[(y - 1, x)];
                    den += weight(mask[(y - 1, x)], 1.0);
                }
                if y + 1 < h {
                    num += weight(mask[(y + 1, x)], 1.0) * horiz[(y + 1, x)];
                    den += weight(mask[(y + 1, x)], 1.0);
                }
                if den > 0.0 {
                    out[(y, x)] = num / den;
                }
            }
        }
    }
    out
}

/// Halves resolution by low-pass filtering and then averaging valid pixels in
/// each 2×2 block. The pre-decimation blur keeps high-frequency texture from
/// aliasing into the coarse levels, where it would derail coarse-to-fine
/// matching. A block with no valid pixel becomes invalid with value 0.
pub(crate) fn downsample_half(
    values: &Array2<f64>,
    mask: &Array2<bool>,
) -> (Array2<f64>, Array2<bool>) {
    let smoothed = blur_121(values, mask);
    let (h, w) = smoothed.dim();
    let nh = (h / 2).max(1);
    let nw = (w / 2).max(1);
    let mut out = Array2::<f64>::zeros((nh, nw));
    let mut out_mask = Array2::<bool>::from_elem((nh, nw), false);
    for y in 0..nh {
        for x in 0..nw {
            let mut sum = 0.0;
            let mut count = 0usize;
            for dy in 0..2 {
                for dx in 0..2 {
                    let sy = (2 * y + dy).min(h - 1);
                    let sx = (2 * x + dx).min(w - 1);
                    if mask[(sy, sx)] {
                        sum += smoothed[(sy, sx)];
                        count += 1;
                    }
                }
            }
            if count > 0 {
                out[(y, x)] = sum / count as f64;
                out_mask[(y, x)] = true;
            }
        }
    }
    (out, out_mask)
}

/// 3×3 median filter (window truncated at the borders).
///
/// Used on intermediate flow estimates: isolated pixels that locked onto a
/// false texture correspondence are snapped back to the local consensus
/// without blurring genuine motion boundaries.
pub(crate) fn median_3x3(grid: &Array2<f64>) -> Array2<f64> {
    let (h, w) = grid.dim();
    let mut out = grid.clone();
    let mut window = [0.0f64; 9];
    for y in 0..h {
        for x in 0..w {
            let mut n = 0usize;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let sy = y as i64 + dy;
                    let sx = x as i64 + dx;
                    if sy >= 0 && sy < h as i64 && sx >= 0 && sx < w as i64 {
                        window[n] = grid[(sy as usize, sx as usize)];
                        n += 1;
                    }
                }
            }
            let slot = &mut window[..n];
            slot.sort_unstable_by(|a, b| a.total_cmp(b));
            out[(y, x)] = if n % 2 == 1 {
                slot[n / 2]
            } else {
                (slot[n / 2 - 1] + slot[n / 2]) / 2.0
            };
        }
    }
    out
}

/// Bilinear upsample to an explicit target size, aligning pixel centers.
pub(crate) fn upsample_to(grid: &Array2<f64>, nh: usize, nw: usize) -> Array2<f64> {
    let (h, w) = grid.dim();
    let sy = h as f64 / nh as f64;
    let sx = w as f64 / nw as f64;
    let mut out = Array2::<f64>::zeros((nh, nw));
    for y in 0..nh {
        for x in 0..nw {
            let src_x = (x as f64 + 0.5) * sx - 0.5;
            let src_y = (y as f64 + 0.5) * sy - 0.5;
            out[(y, x)] = sample_clamped(grid, src_x, src_y);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn clamped_sampling_hits_grid_values_exactly_at_integer_coords() {
        let g = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(sample_clamped(&g, 0.0, 0.0), 1.0);
        assert_eq!(sample_clamped(&g, 1.0, 0.0), 2.0);
        assert_eq!(sample_clamped(&g, 0.0, 1.0), 3.0);
        assert_eq!(sample_clamped(&g, 1.0, 1.0), 4.0);
    }

    #[test]
    fn clamped_sampling_interpolates_midpoints() {
        let g = array![[0.0, 2.0], [4.0, 6.0]];
        assert!((sample_clamped(&g, 0.5, 0.5) - 3.0).abs() < 1e-12);
        // Out-of-domain coordinates clamp to the border.
        assert_eq!(sample_clamped(&g, -5.0, 0.0), 0.0);
        assert_eq!(sample_clamped(&g, 5.0, 5.0), 6.0);
    }

    #[test]
    fn wrapped_sampling_is_periodic() {
        let g = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(sample_wrapped(&g, 2.0, 0.0), 1.0);
        assert_eq!(sample_wrapped(&g, -1.0, 0.0), 2.0);
        assert_eq!(sample_wrapped(&g, 0.0, -2.0), 1.0);
    }

    #[test]
    fn infill_copies_nearest_valid_value() {
        let values = array![[7.0, 0.0], [0.0, 0.0]];
        let mask = array![[true, false], [false, false]];
        let filled = infill_nearest(&values, &mask).unwrap();
        assert!(filled.iter().all(|&v| v == 7.0));
        assert!(infill_nearest(&values, &Array2::from_elem((2, 2), false)).is_none());
    }

    #[test]
    fn integral_image_box_sums_match_direct_sums() {
        let g = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0]];
        let ii = integral_image(&g);
        assert_eq!(box_sum(&ii, 0, 0, 2, 2), 45.0);
        assert_eq!(box_sum(&ii, 1, 1, 2, 2), 5.0 + 6.0 + 8.0 + 9.0);
        assert_eq!(box_sum(&ii, 0, 0, 0, 0), 1.0);
    }

    #[test]
    fn downsample_averages_blocks_and_respects_masks() {
        let values = array![[1.0, 3.0], [5.0, 7.0]];
        let all_valid = Array2::from_elem((2, 2), true);
        let (down, m) = downsample_half(&values, &all_valid);
        assert_eq!(down[(0, 0)], 4.0);
        assert!(m[(0, 0)]);

        let mask = array![[true, false], [false, false]];
        let (down, m) = downsample_half(&values, &mask);
        assert_eq!(down[(0, 0)], 1.0);
        assert!(m[(0, 0)]);
    }

    #[test]
    fn upsample_preserves_constant_grids() {
        let g = Array2::from_elem((3, 3), 2.5);
        let up = upsample_to(&g, 6, 6);
        assert!(up.iter().all(|&v| (v - 2.5).abs() < 1e-12));
    }
}
