//! Internal FFT machinery on mirror-extended grids.
//!
//! Satellite windows are not periodic, so every spectral operation here works
//! on the half-sample even (mirror) extension of the grid to twice each
//! dimension, then crops back. A cosine mode `cos(π m (x+0.5)/W)` extends to a
//! pure wave on the doubled grid, so it lands in exactly one DFT bin pair and
//! spectral multipliers act on it without leakage.
//!
//! Frequency convention on the extended axes: bin `b` of an axis of extended
//! length `N = 2·n` carries angular frequency `k = 2π·s/N = π·s/n` radians per
//! pixel, with `s` the signed bin index.

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;

/// Half-sample even extension: `(h, w)` → `(2h, 2w)` with
/// `ext[y][x] = src[fold(y)][fold(x)]`, `fold(i) = i` for `i < n`, else
/// `2n − 1 − i`.
pub(crate) fn even_extend(src: &Array2<f64>) -> Array2<f64> {
    let (h, w) = src.dim();
    let mut ext = Array2::<f64>::zeros((2 * h, 2 * w));
    for y in 0..2 * h {
        let sy = if y < h { y } else { 2 * h - 1 - y };
        for x in 0..2 * w {
            let sx = if x < w { x } else { 2 * w - 1 - x };
            ext[(y, x)] = src[(sy, sx)];
        }
    }
    ext
}

/// In-place 2-D FFT (rows then columns). The inverse divides by the total
/// element count so `ifft2(fft2(x)) == x` up to rounding.
pub(crate) fn fft2(data: &mut Array2<Complex64>, inverse: bool) {
    let (h, w) = data.dim();
    let mut planner = FftPlanner::<f64>::new();
    let row_fft = if inverse {
        planner.plan_fft_inverse(w)
    } else {
        planner.plan_fft_forward(w)
    };
    let col_fft = if inverse {
        planner.plan_fft_inverse(h)
    } else {
        planner.plan_fft_forward(h)
    };

    let mut row_buf = vec![Complex64::default(); w];
    for y in 0..h {
        for x in 0..w {
            row_buf[x] = data[(y, x)];
        }
        row_fft.process(&mut row_buf);
        for x in 0..w {
            data[(y, x)] = row_buf[x];
        }
    }

    let mut col_buf = vec![Complex64::default(); h];
    for x in 0..w {
        for y in 0..h {
            col_buf[y] = data[(y, x)];
        }
        col_fft.process(&mut col_buf);
        for y in 0..h {
            data[(y, x)] = col_buf[y];
        }
    }

    if inverse {
        let scale = 1.0 / (w as f64 * h as f64);
        data.mapv_inplace(|c| c * scale);
    }
}

/// Angular frequency of each bin on an extended axis of length `n_ext`,
/// in radians per pixel, signed.
pub(crate) fn axis_frequencies(n_ext: usize) -> Vec<f64> {
    (0..n_ext)
        .map(|b| {
            let signed = if b <= n_ext / 2 {
                b as isize
            } else {
                b as isize - n_ext as isize
            };
            std::f64::consts::TAU * signed as f64 / n_ext as f64
        })
        .collect()
}

/// `sin(k)` per bin of an extended axis — the spectral symbol of the
/// first-order central difference (`D f ↦ i·sin(k)·f̂`).
///
/// Entries at `k ∈ {0, π}` are exactly `0.0` so downstream kernels can test
/// for the null space with `== 0.0`.
pub(crate) fn central_diff_symbol(n_ext: usize) -> Vec<f64> {
    axis_frequencies(n_ext)
        .iter()
        .map(|&k| {
            if k == 0.0 || (k.abs() - std::f64::consts::PI).abs() < 1e-15 {
                0.0
            } else {
                k.sin()
            }
        })
        .collect()
}

/// Transforms the mirror extension of `src`, multiplies every bin by the real
/// factor `mult(kx, ky)`, inverse transforms, and crops back to the original
/// size.
pub(crate) fn filter_extended<F>(src: &Array2<f64>, mult: F) -> Array2<f64>
where
    F: Fn(f64, f64) -> f64,
{
    let (h, w) = src.dim();
    let ext = even_extend(src);
    let mut spec = ext.mapv(|v| Complex64::new(v, 0.0));
    fft2(&mut spec, false);
    let kxs = axis_frequencies(2 * w);
    let kys = axis_frequencies(2 * h);
    for y in 0..2 * h {
        for x in 0..2 * w {
            spec[(y, x)] *= mult(kxs[x], kys[y]);
        }
    }
    fft2(&mut spec, true);
    let mut out = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            out[(y, x)] = spec[(y, x)].re;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn even_extension_mirrors_both_axes() {
        let src = ndarray::array![[1.0, 2.0], [3.0, 4.0]];
        let ext = even_extend(&src);
        assert_eq!(ext.dim(), (4, 4));
        assert_eq!(ext[(0, 3)], 1.0);
        assert_eq!(ext[(3, 0)], 1.0);
        assert_eq!(ext[(3, 3)], 1.0);
        assert_eq!(ext[(0, 2)], 2.0);
        assert_eq!(ext[(2, 3)], 3.0);
    }

    #[test]
    fn fft_round_trip_recovers_input() {
        let mut data = Array2::from_shape_fn((8, 8), |(y, x)| {
            Complex64::new((x as f64 * 0.7 + y as f64 * 1.3).sin(), 0.0)
        });
        let original = data.clone();
        fft2(&mut data, false);
        fft2(&mut data, true);
        for (a, b) in data.iter().zip(original.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn half_sample_cosine_occupies_a_single_bin_pair() {
        // cos(π·m·(x+0.5)/W) extends to a pure wave of bin m on the doubled axis.
        let w = 16usize;
        let m = 3usize;
        let src = Array2::from_shape_fn((1, w), |(_, x)| {
            (PI * m as f64 * (x as f64 + 0.5) / w as f64).cos()
        });
        let ext = even_extend(&src);
        // Only check the x-axis structure: take the first extended row.
        let mut spec = Array2::from_shape_fn((1, 2 * w), |(_, x)| Complex64::new(ext[(0, x)], 0.0));
        fft2(&mut spec, false);
        for b in 0..2 * w {
            let mag = spec[(0, b)].norm();
            if b == m || b == 2 * w - m {
                assert!(mag > 1.0, "expected energy in bin {b}, got {mag}");
            } else {
                assert!(mag < 1e-10, "unexpected energy in bin {b}: {mag}");
            }
        }
    }

    #[test]
    fn central_difference_symbol_vanishes_on_the_null_modes() {
        let sym = central_diff_symbol(8);
        assert_eq!(sym[0], 0.0);
        assert_eq!(sym[4], 0.0); // k = π
        assert!(sym[1] > 0.0);
        assert!(sym[7] < 0.0);
    }

    #[test]
    fn unit_filter_is_numerically_the_identity() {
        let src = Array2::from_shape_fn((12, 10), |(y, x)| (x as f64 - 2.0 * y as f64).cos());
        let out = filter_extended(&src, |_, _| 1.0);
        for (a, b) in out.iter().zip(src.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
