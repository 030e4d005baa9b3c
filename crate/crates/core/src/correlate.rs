//! Real-valued cross-correlation over a lag range, by direct sliding dot
//! product, by FFT, or (for binary templates) by prefix sums.
//!
//! All routes compute `c[l] = sum_j t[j] * x[l + j]` for `l` in `lags`,
//! treating samples outside `x` as zero.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use std::ops::Range;

fn at(x: &[f64], i: i64) -> f64 {
    if i >= 0 && (i as usize) < x.len() {
        x[i as usize]
    } else {
        0.0
    }
}

/// Direct time-domain correlation. Also the oracle for the other routes.
pub fn direct(x: &[f64], template: &[f64], lags: Range<i64>) -> Vec<f64> {
    lags.map(|l| {
        // clip the template to the part that overlaps `x`
        let j0 = (-l).max(0) as usize;
        let j1 = ((x.len() as i64 - l).max(0) as usize).min(template.len());
        (j0..j1).map(|j| template[j] * x[(l + j as i64) as usize]).sum()
    })
    .collect()
}

/// FFT correlation; identical to [`direct`] up to rounding.
pub fn fft(x: &[f64], template: &[f64], lags: Range<i64>) -> Vec<f64> {
    if lags.is_empty() {
        return Vec::new();
    }
    if template.is_empty() {
        return vec![0.0; (lags.end - lags.start) as usize];
    }
    // segment of x that any lag can touch
    let lo = lags.start;
    let hi = lags.end - 1 + template.len() as i64;
    let seg: Vec<f64> = (lo..hi).map(|i| at(x, i)).collect();
    let len = (seg.len() + template.len()).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);
    let mut a: Vec<Complex<f64>> = seg.iter().map(|&v| Complex::new(v, 0.0)).chain(std::iter::repeat(Complex::new(0.0, 0.0))).take(len).collect();
    let mut b: Vec<Complex<f64>> =
        template.iter().map(|&v| Complex::new(v, 0.0)).chain(std::iter::repeat(Complex::new(0.0, 0.0))).take(len).collect();
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (u, v) in a.iter_mut().zip(&b) {
        *u *= v.conj();
    }
    inv.process(&mut a);
    let scale = 1.0 / len as f64;
    (0..(lags.end - lags.start) as usize).map(|k| a[k].re * scale).collect()
}

/// Running sums of `x`: `p[i] = x[0] + ... + x[i - 1]`.
pub fn prefix_sums(x: &[f64]) -> Vec<f64> {
    let mut p = Vec::with_capacity(x.len() + 1);
    let mut acc = 0.0;
    p.push(0.0);
    for v in x {
        acc += v;
        p.push(acc);
    }
    p
}

/// Sum of `x[a..b]` from prefix sums, with out-of-range samples as zero.
pub fn range_sum(prefix: &[f64], a: i64, b: i64) -> f64 {
    let n = prefix.len() as i64 - 1;
    let (a, b) = (a.clamp(0, n), b.clamp(0, n));
    if b <= a {
        0.0
    } else {
        prefix[b as usize] - prefix[a as usize]
    }
}

/// Correlation with a binary template given as runs `(start, len)` of ones,
/// in `O(runs)` per lag.
pub fn runs(prefix: &[f64], runs: &[(usize, usize)], lags: Range<i64>) -> Vec<f64> {
    lags.map(|l| runs.iter().map(|&(s, n)| range_sum(prefix, l + s as i64, l + (s + n) as i64)).sum()).collect()
}

/// Index of the maximum. When the maximum is attained on a run of equal
/// values the midpoint of the longest such run is returned, rounding down
/// when the run has even length. Values within `rel_tol` of the maximum
/// count as equal.
pub fn argmax_plateau(values: &[f64], rel_tol: f64) -> Option<usize> {
    let max = values.iter().cloned().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let tol = rel_tol * max.abs().max(f64::MIN_POSITIVE);
    let mut best: Option<(usize, usize)> = None;
    let mut i = 0;
    while i < values.len() {
        if max - values[i] <= tol {
            let s = i;
            while i < values.len() && max - values[i] <= tol {
                i += 1;
            }
            if best.is_none_or(|(_, n)| i - s > n) {
                best = Some((s, i - s));
            }
        } else {
            i += 1;
        }
    }
    best.map(|(s, n)| s + (n - 1) / 2)
}

/// Default tolerance for [`argmax_plateau`]: equal up to float rounding.
pub const PLATEAU_TOL: f64 = 1e-12;
