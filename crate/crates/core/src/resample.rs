//! Integer-factor band-limited upsampling of packet windows.
//!
//! The default route zero-pads the window's spectrum. A Kaiser-windowed
//! sinc interpolator is available for streaming-style use; both keep the
//! complex samples so the magnitude is taken after interpolation.

use crate::frontend::bessel_i0;
use crate::iq::SampleWindow;
use crate::{Error, Result};
use num_complex::Complex64;
use rustfft::FftPlanner;
use std::cell::RefCell;

pub const MAX_FACTOR: usize = 128;
pub const MIN_WINDOW: usize = 32;
/// Upsamples at each end of a window that estimators leave alone, in units
/// of the factor `N`.
pub const EDGE_GUARD_NATIVE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    #[default]
    Spectral,
    /// Windowed-sinc interpolation with the given half-width in native
    /// samples.
    Polyphase { half_width: usize },
}

/// `N`-times upsampled window. Sample `j` sits at
/// `origin_time_s + j / rate_hz` on the receiver clock.
#[derive(Debug, Clone, PartialEq)]
pub struct UpsampledWindow {
    pub samples: Vec<Complex64>,
    pub n: usize,
    pub fs: f64,
    pub rate_hz: f64,
    pub origin_time_s: f64,
    /// Native index of the window's first sample in its source stream.
    pub source_start_index: usize,
    /// Upsample index of the receiver's leading sample.
    pub leading_index: usize,
}

impl UpsampledWindow {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn grid_step_s(&self) -> f64 {
        1.0 / self.rate_hz
    }

    pub fn time_of(&self, j: f64) -> f64 {
        self.origin_time_s + j / self.rate_hz
    }

    /// Indices estimators may use.
    pub fn usable(&self) -> std::ops::Range<usize> {
        let g = EDGE_GUARD_NATIVE * self.n;
        g.min(self.len())..self.len().saturating_sub(g)
    }

    /// `|s'|` with the edge guard zeroed.
    pub fn magnitude(&self) -> Vec<f64> {
        let u = self.usable();
        self.samples.iter().enumerate().map(|(j, s)| if u.contains(&j) { s.norm() } else { 0.0 }).collect()
    }
}

fn check(window: &SampleWindow, n: usize) -> Result<()> {
    if !(1..=MAX_FACTOR).contains(&n) {
        return Err(Error::InvalidParameter(format!("upsampling factor {n} outside 1..={MAX_FACTOR}")));
    }
    if window.len() < MIN_WINDOW {
        return Err(Error::InvalidParameter(format!("window of {} samples is shorter than {MIN_WINDOW}", window.len())));
    }
    Ok(())
}

pub fn upsample(window: &SampleWindow, n: usize) -> Result<UpsampledWindow> {
    upsample_with(window, n, Method::Spectral)
}

pub fn upsample_with(window: &SampleWindow, n: usize, method: Method) -> Result<UpsampledWindow> {
    check(window, n)?;
    let samples = match method {
        Method::Spectral => spectral(&window.samples, n),
        Method::Polyphase { half_width } => polyphase(&window.samples, n, half_width),
    };
    Ok(UpsampledWindow {
        samples,
        n,
        fs: window.sample_rate_hz,
        rate_hz: n as f64 * window.sample_rate_hz,
        origin_time_s: window.start_time_s,
        source_start_index: window.start_index,
        leading_index: window.leading_offset * n,
    })
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Spectral zero-padding. The output interpolates the periodic extension of
/// `x` and satisfies `y[k * n] = x[k]`.
pub fn spectral(x: &[Complex64], n: usize) -> Vec<Complex64> {
    let l = x.len();
    if n == 1 || l == 0 {
        return x.to_vec();
    }
    let m = l * n;
    let (fwd, inv) = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        (p.plan_fft_forward(l), p.plan_fft_inverse(m))
    });
    let mut spec = x.to_vec();
    fwd.process(&mut spec);
    let mut out = vec![Complex64::new(0.0, 0.0); m];
    let half = l / 2;
    if l.is_multiple_of(2) {
        out[..half].copy_from_slice(&spec[..half]);
        out[m - half + 1..].copy_from_slice(&spec[half + 1..]);
        // the Nyquist bin is shared between +fs/2 and -fs/2
        out[half] = spec[half] * 0.5;
        out[m - half] = spec[half] * 0.5;
    } else {
        out[..=half].copy_from_slice(&spec[..=half]);
        out[m - half..].copy_from_slice(&spec[half + 1..]);
    }
    inv.process(&mut out);
    let scale = 1.0 / l as f64;
    out.iter_mut().for_each(|v| *v *= scale);
    out
}

/// Kaiser-windowed sinc interpolation; samples beyond the window are taken
/// as zero. Exact at the native instants.
pub fn polyphase(x: &[Complex64], n: usize, half_width: usize) -> Vec<Complex64> {
    if n == 1 {
        return x.to_vec();
    }
    let hw = half_width.max(1) as i64;
    let beta = 8.0;
    let norm = bessel_i0(beta);
    // one filter bank row per output phase
    let bank: Vec<Vec<f64>> = (0..n)
        .map(|p| {
            let frac = p as f64 / n as f64;
            (-hw + 1..=hw)
                .map(|k| {
                    // tap for x[i - k] when producing y at i + frac
                    let t = k as f64 + frac;
                    let r = t / hw as f64;
                    if r.abs() >= 1.0 {
                        return 0.0;
                    }
                    let sinc = if t == 0.0 { 1.0 } else { (std::f64::consts::PI * t).sin() / (std::f64::consts::PI * t) };
                    sinc * bessel_i0(beta * (1.0 - r * r).sqrt()) / norm
                })
                .collect()
        })
        .collect();
    let mut out = vec![Complex64::new(0.0, 0.0); x.len() * n];
    for i in 0..x.len() as i64 {
        for (p, row) in bank.iter().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for (c, k) in (-hw + 1..=hw).enumerate() {
                let src = i - k;
                if src >= 0 && (src as usize) < x.len() {
                    acc += x[src as usize] * row[c];
                }
            }
            out[i as usize * n + p] = acc;
        }
    }
    out
}
