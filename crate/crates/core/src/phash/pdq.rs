//! PDQ-256: blur-and-decimate to 64x64, keep the 16x16 low-frequency DCT
//! block (DC excluded), threshold at the median.

use std::f64::consts::PI;
use std::sync::OnceLock;

use super::{Algorithm, PdqResult, PerceptualHash};
use crate::imaging::{to_luminance, ImageBuffer};

/// Side of the downsampled luma buffer.
pub const PDQ_DIM: usize = 64;
const DCT_DIM: usize = 16;
/// Box-filter passes per axis; two passes approximate a tent filter.
const FILTER_PASSES: usize = 2;
/// Below this side length the quality score is forced to zero.
const MIN_QUALITY_DIM: usize = 16;
const GRADIENT_THRESHOLD: f64 = 2.0;

/// Box window that takes `old` samples down to `new` (the Jarosz window).
fn filter_window(old: usize, new: usize) -> usize {
    old.div_ceil(2 * new)
}

/// One centred running-mean pass over a strided vector. Near the ends the
/// window is truncated and the mean is taken over what remains.
fn box_1d(input: &[f64], output: &mut [f64], offset: usize, len: usize, stride: usize, window: usize) {
    let half = (window + 2) / 2;
    let at = |i: usize| offset + i * stride;
    let mut sum = 0.0;
    let mut count = 0usize;
    let (mut left, mut right, mut out) = (0, 0, 0);
    // Prime the sum with the first half window.
    for _ in 0..half - 1 {
        sum += input[at(right)];
        count += 1;
        right += 1;
    }
    // Growing window.
    for _ in 0..window - half + 1 {
        sum += input[at(right)];
        count += 1;
        output[at(out)] = sum / count as f64;
        right += 1;
        out += 1;
    }
    // Full window.
    for _ in 0..len - window {
        sum += input[at(right)];
        sum -= input[at(left)];
        output[at(out)] = sum / count as f64;
        left += 1;
        right += 1;
        out += 1;
    }
    // Shrinking window.
    for _ in 0..half - 1 {
        sum -= input[at(left)];
        count -= 1;
        output[at(out)] = sum / count as f64;
        left += 1;
        out += 1;
    }
}

fn blur(buf: &mut [f64], rows: usize, cols: usize) {
    let row_window = filter_window(cols, PDQ_DIM);
    let col_window = filter_window(rows, PDQ_DIM);
    let mut tmp = vec![0.0; buf.len()];
    for _ in 0..FILTER_PASSES {
        for r in 0..rows {
            box_1d(buf, &mut tmp, r * cols, cols, 1, row_window);
        }
        for c in 0..cols {
            box_1d(&tmp, buf, c, rows, cols, col_window);
        }
    }
}

fn decimate(buf: &[f64], rows: usize, cols: usize) -> Box<[[f64; PDQ_DIM]; PDQ_DIM]> {
    let mut out = Box::new([[0.0; PDQ_DIM]; PDQ_DIM]);
    for (i, out_row) in out.iter_mut().enumerate() {
        let src_r = ((2 * i + 1) * rows) / (2 * PDQ_DIM);
        for (j, v) in out_row.iter_mut().enumerate() {
            let src_c = ((2 * j + 1) * cols) / (2 * PDQ_DIM);
            *v = buf[src_r * cols + src_c];
        }
    }
    out
}

/// `c_f(u) = sqrt(2/64) cos(pi f (2u + 1) / 128)` for `f` in `1..=16`; row `f - 1`.
fn dct_matrix() -> &'static [[f64; PDQ_DIM]; DCT_DIM] {
    static MATRIX: OnceLock<[[f64; PDQ_DIM]; DCT_DIM]> = OnceLock::new();
    MATRIX.get_or_init(|| {
        let scale = (2.0 / PDQ_DIM as f64).sqrt();
        let mut m = [[0.0; PDQ_DIM]; DCT_DIM];
        for (f, row) in m.iter_mut().enumerate() {
            for (u, v) in row.iter_mut().enumerate() {
                *v = scale * (PI * (f + 1) as f64 * (2 * u + 1) as f64 / (2 * PDQ_DIM) as f64).cos();
            }
        }
        m
    })
}

/// Low-frequency block of the orthonormal 2-D DCT-II.
///
/// `out[i][j]` is the coefficient for vertical frequency `i + 1` and horizontal
/// frequency `j + 1`; the DC row and column are never computed.
pub fn dct16_from64(block: &[[f64; PDQ_DIM]; PDQ_DIM]) -> [[f64; DCT_DIM]; DCT_DIM] {
    let d = dct_matrix();
    // rows_done[i][v] = sum_u c_{i+1}(u) block[u][v]
    let mut rows_done = [[0.0; PDQ_DIM]; DCT_DIM];
    for (i, out_row) in rows_done.iter_mut().enumerate() {
        for (u, block_row) in block.iter().enumerate() {
            let c = d[i][u];
            for (acc, &x) in out_row.iter_mut().zip(block_row) {
                *acc += c * x;
            }
        }
    }
    let mut out = [[0.0; DCT_DIM]; DCT_DIM];
    for (i, out_row) in out.iter_mut().enumerate() {
        for (j, v) in out_row.iter_mut().enumerate() {
            *v = rows_done[i].iter().zip(&d[j]).map(|(a, b)| a * b).sum();
        }
    }
    out
}

fn quality(buf: &[[f64; PDQ_DIM]; PDQ_DIM]) -> u8 {
    let mut count = 0u32;
    for i in 0..PDQ_DIM {
        for j in 0..PDQ_DIM {
            if i + 1 < PDQ_DIM && (buf[i][j] - buf[i + 1][j]).abs() > GRADIENT_THRESHOLD {
                count += 1;
            }
            if j + 1 < PDQ_DIM && (buf[i][j] - buf[i][j + 1]).abs() > GRADIENT_THRESHOLD {
                count += 1;
            }
        }
    }
    let max = (2 * PDQ_DIM * (PDQ_DIM - 1)) as u32;
    ((200 * count + max) / (2 * max)).min(100) as u8
}

/// Computes the PDQ hash and quality of `img`.
///
/// A constant image hashes to all zeros with quality 0: the buffer is
/// mean-centred before the transform, so every coefficient is exactly zero
/// and none exceeds the median.
pub fn pdq(img: &ImageBuffer) -> PdqResult {
    let luma = to_luminance(img);
    let (rows, cols) = (luma.height(), luma.width());
    let mut buf: Vec<f64> = luma.data().iter().map(|&v| f64::from(v)).collect();
    blur(&mut buf, rows, cols);
    let mut small = decimate(&buf, rows, cols);

    let quality = if rows.min(cols) < MIN_QUALITY_DIM {
        0
    } else {
        quality(&small)
    };

    // Removing the mean changes only the (discarded) DC term.
    let mean = small.iter().flatten().sum::<f64>() / (PDQ_DIM * PDQ_DIM) as f64;
    small.iter_mut().flatten().for_each(|v| *v -= mean);

    let coeffs = dct16_from64(&small);
    let flat: Vec<f64> = coeffs.iter().flatten().copied().collect();
    let mut sorted = flat.clone();
    sorted.sort_by(f64::total_cmp);
    // Lower median, as in the reference implementation.
    let median = sorted[sorted.len() / 2 - 1];
    PdqResult {
        hash: PerceptualHash::from_bits(Algorithm::Pdq256, flat.iter().map(|&c| c > median)),
        quality,
    }
}
