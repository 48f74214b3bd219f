//! Type-I discrete sine transforms, used by the spectral GFF sampler.
//!
//! DST-I of `x[0..m]` is `X[k-1] = sum_j x[j-1] * sin(pi * j * k / (m + 1))`
//! for `k = 1..=m`. It is computed through a length `2(m+1)` complex FFT of
//! the odd extension, which gives `X[k] = -Im(FFT(y)[k]) / 2`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use num_complex::Complex64;
use once_cell::sync::Lazy;
use rustfft::{Fft, FftPlanner};

static PLAN_CACHE: Lazy<Mutex<HashMap<usize, Arc<dyn Fft<f64>>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

fn plan(len: usize) -> Arc<dyn Fft<f64>> {
    let mut cache = PLAN_CACHE.lock().unwrap();
    cache
        .entry(len)
        .or_insert_with(|| FftPlanner::new().plan_fft_forward(len))
        .clone()
}

/// In-place 2D DST-I of an `m x m` row-major array.
///
/// Applies the 1D transform along rows, then along columns.
pub fn dst1_2d(values: &mut [f64], m: usize) {
    assert_eq!(values.len(), m * m);
    let fft = plan(2 * (m + 1));
    let mut buf = vec![Complex64::new(0.0, 0.0); 2 * (m + 1)];
    for row in 0..m {
        dst1_row(&mut values[row * m..(row + 1) * m], &fft, &mut buf);
    }
    let mut col = vec![0.0; m];
    for j in 0..m {
        for (i, c) in col.iter_mut().enumerate() {
            *c = values[i * m + j];
        }
        dst1_row(&mut col, &fft, &mut buf);
        for (i, c) in col.iter().enumerate() {
            values[i * m + j] = *c;
        }
    }
}

fn dst1_row(row: &mut [f64], fft: &Arc<dyn Fft<f64>>, buf: &mut [Complex64]) {
    let m = row.len();
    let n = 2 * (m + 1);
    debug_assert_eq!(buf.len(), n);
    buf[0] = Complex64::new(0.0, 0.0);
    buf[m + 1] = Complex64::new(0.0, 0.0);
    for (j, &x) in row.iter().enumerate() {
        buf[j + 1] = Complex64::new(x, 0.0);
        buf[n - 1 - j] = Complex64::new(-x, 0.0);
    }
    fft.process(buf);
    for (k, x) in row.iter_mut().enumerate() {
        *x = -buf[k + 1].im / 2.0;
    }
}
