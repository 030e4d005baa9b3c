//! Analog front-end model shared by the synthesizer and the smoothed
//! templates: trapezoidal pulses, cell-averaged rendering on a fine
//! simulation grid, and the linear-phase FIR low-pass that stands in for the
//! receiver's IF filter.
//!
//! Pulses are kept in analytic form and only sampled when a concrete grid is
//! known. Each simulation sample is the exact average of the pulse over its
//! cell, so a pulse edge that falls between grid points still moves the
//! filtered output by the right (sub-cell) amount.

use crate::{Error, Result};
use std::f64::consts::PI;

/// Ratio between the internal simulation rate and the receiver sample rate.
pub const SIM_OVERSAMPLING: usize = 40;

/// Stopband attenuation of the front-end filter.
pub const FILTER_ATTENUATION_DB: f64 = 60.0;

/// A trapezoidal pulse. `start` and `end` are the 50 % amplitude points; the
/// leading ramp spans `rise` seconds centred on `start` and the trailing ramp
/// spans `decay` seconds centred on `end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trapezoid {
    pub start: f64,
    pub end: f64,
    pub rise: f64,
    pub decay: f64,
    pub amplitude: f64,
}

impl Trapezoid {
    pub fn rectangle(start: f64, end: f64, amplitude: f64) -> Self {
        Self { start, end, rise: 0.0, decay: 0.0, amplitude }
    }

    /// Time interval outside which the pulse is identically zero.
    pub fn support(&self) -> (f64, f64) {
        (self.start - 0.5 * self.rise, self.end + 0.5 * self.decay)
    }

    pub fn value(&self, t: f64) -> f64 {
        let (a0, b1) = self.support();
        let a1 = self.start + 0.5 * self.rise;
        let b0 = self.end - 0.5 * self.decay;
        let unit = if t < a0 || t >= b1 {
            0.0
        } else if t < a1 {
            (t - a0) / self.rise
        } else if t < b0 {
            1.0
        } else {
            (b1 - t) / self.decay
        };
        self.amplitude * unit
    }

    /// Running integral of the pulse from -inf to `t`.
    pub fn integral(&self, t: f64) -> f64 {
        let (a0, b1) = self.support();
        let a1 = self.start + 0.5 * self.rise;
        let b0 = self.end - 0.5 * self.decay;
        let unit = if t <= a0 {
            0.0
        } else if t <= a1 {
            let x = t - a0;
            x * x / (2.0 * self.rise)
        } else if t <= b0 {
            0.5 * self.rise + (t - a1)
        } else if t <= b1 {
            let x = t - b0;
            0.5 * self.rise + (b0 - a1) + x - x * x / (2.0 * self.decay)
        } else {
            0.5 * self.rise + (b0 - a1) + 0.5 * self.decay
        };
        self.amplitude * unit
    }

    /// Mean of the pulse over `[lo, hi)`.
    pub fn cell_average(&self, lo: f64, hi: f64) -> f64 {
        (self.integral(hi) - self.integral(lo)) / (hi - lo)
    }
}

/// Renders the sum of `pulses` into `len` cells of width `dt`; cell `q` holds
/// the average over `[t0 + q*dt, t0 + (q+1)*dt)`.
pub fn render_cells(pulses: &[Trapezoid], t0: f64, dt: f64, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for p in pulses {
        let (lo, hi) = p.support();
        let first = ((lo - t0) / dt).floor().max(0.0) as usize;
        let last = (((hi - t0) / dt).ceil().max(0.0) as usize).min(len);
        for (q, cell) in out.iter_mut().enumerate().take(last).skip(first) {
            let a = t0 + q as f64 * dt;
            *cell += p.cell_average(a, a + dt);
        }
    }
    out
}

/// Symmetric (linear-phase) FIR low-pass filter running at the simulation
/// rate. Its group delay of `(len - 1) / 2` taps is removed by every user, so
/// filtering never shifts pulse timing.
#[derive(Debug, Clone)]
pub struct LowPass {
    taps: Vec<f64>,
    rate_hz: f64,
}

impl LowPass {
    /// Kaiser-window design with the stopband starting at `stopband_edge_hz`.
    pub fn design(rate_hz: f64, stopband_edge_hz: f64, transition_hz: f64, attenuation_db: f64) -> Result<Self> {
        if !(rate_hz > 0.0) || !(transition_hz > 0.0) || stopband_edge_hz <= transition_hz || stopband_edge_hz >= 0.5 * rate_hz {
            return Err(Error::InvalidParameter(format!(
                "low-pass design: rate {rate_hz} Hz, stopband edge {stopband_edge_hz} Hz, transition {transition_hz} Hz"
            )));
        }
        let beta = if attenuation_db > 50.0 {
            0.1102 * (attenuation_db - 8.7)
        } else if attenuation_db >= 21.0 {
            0.5842 * (attenuation_db - 21.0).powf(0.4) + 0.07886 * (attenuation_db - 21.0)
        } else {
            0.0
        };
        let delta_w = 2.0 * PI * transition_hz / rate_hz;
        let mut len = ((attenuation_db - 8.0) / (2.285 * delta_w)).ceil() as usize + 1;
        if len.is_multiple_of(2) {
            len += 1;
        }
        let cutoff = (stopband_edge_hz - 0.5 * transition_hz) / rate_hz;
        let centre = (len - 1) as f64 / 2.0;
        let i0_beta = bessel_i0(beta);
        let mut taps: Vec<f64> = (0..len)
            .map(|n| {
                let x = n as f64 - centre;
                let ideal = if x == 0.0 { 2.0 * cutoff } else { (2.0 * PI * cutoff * x).sin() / (PI * x) };
                let r = x / centre;
                ideal * bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / i0_beta
            })
            .collect();
        let dc: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|t| *t /= dc);
        Ok(Self { taps, rate_hz })
    }

    /// The receiver IF filter for a complex front end of two-sided bandwidth
    /// `passband_hz`: nothing above `passband_hz / 2` survives the 60 dB
    /// stopband, so sampling at `passband_hz` does not alias.
    pub fn front_end(passband_hz: f64, sim_rate_hz: f64) -> Result<Self> {
        Self::design(sim_rate_hz, 0.5 * passband_hz, passband_hz / 5.0, FILTER_ATTENUATION_DB)
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    /// Group delay in taps.
    pub fn delay(&self) -> usize {
        (self.taps.len() - 1) / 2
    }

    /// Magnitude response at `freq_hz`.
    pub fn gain_at(&self, freq_hz: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / self.rate_hz;
        let c = self.delay() as f64;
        // symmetric taps: zero-phase response is real
        self.taps.iter().enumerate().map(|(n, h)| h * (w * (n as f64 - c)).cos()).sum::<f64>().abs()
    }

    /// Filtered value of the pulse train at time `t` (delay compensated).
    pub fn response_at(&self, pulses: &[Trapezoid], t: f64) -> f64 {
        let dt = 1.0 / self.rate_hz;
        let c = self.delay() as f64;
        let mut acc = 0.0;
        for p in pulses {
            let (lo, hi) = p.support();
            // taps j whose cell centred at t - (j - c) dt overlaps the support
            let j_lo = ((t - hi) / dt + c - 0.5).floor().max(0.0) as usize;
            let j_hi = (((t - lo) / dt + c + 0.5).ceil().max(0.0) as usize).min(self.taps.len());
            for j in j_lo..j_hi {
                let centre = t - (j as f64 - c) * dt;
                acc += self.taps[j] * p.cell_average(centre - 0.5 * dt, centre + 0.5 * dt);
            }
        }
        acc
    }

    /// Filtered pulse train sampled at `t_first + m * decimation * dt` for
    /// `m in 0..count`, where `dt` is the filter's sample period.
    pub fn response_on_grid(&self, pulses: &[Trapezoid], t_first: f64, decimation: usize, count: usize) -> Vec<f64> {
        if count == 0 {
            return Vec::new();
        }
        let dt = 1.0 / self.rate_hz;
        let c = self.delay();
        let n_taps = self.taps.len();
        let n_cells = (count - 1) * decimation + n_taps;
        let cells = render_cells(pulses, t_first - (c as f64 + 0.5) * dt, dt, n_cells);
        (0..count)
            .map(|m| {
                let base = m * decimation;
                let window = &cells[base..base + n_taps];
                // taps are symmetric, so the reversed-index convolution is a dot product
                window.iter().zip(&self.taps).map(|(x, h)| x * h).sum()
            })
            .collect()
    }
}

/// Modified Bessel function of the first kind, order zero.
pub(crate) fn bessel_i0(x: f64) -> f64 {
    let half = 0.5 * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..64 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;

    const SIM_RATE: f64 = 96e6;

    #[test]
    fn trapezoid_area_and_values() {
        let p = Trapezoid { start: 1e-6, end: 1.5e-6, rise: 50e-9, decay: 150e-9, amplitude: 2.0 };
        let total = p.integral(10e-6);
        assert!((total - 2.0 * 0.5e-6).abs() < 1e-18);
        assert!((p.value(1e-6) - 1.0).abs() < 1e-9);
        assert!((p.value(1.5e-6) - 1.0).abs() < 1e-9);
        assert_eq!(p.value(1.25e-6), 2.0);
        assert_eq!(p.value(0.9e-6), 0.0);
    }

    #[test]
    fn cell_average_matches_numeric_integration() {
        let p = Trapezoid { start: 0.3e-6, end: 0.8e-6, rise: 40e-9, decay: 120e-9, amplitude: 1.0 };
        let dt = 1.0 / SIM_RATE;
        for q in 20..90 {
            let lo = q as f64 * dt;
            let steps = 2000;
            let h = dt / steps as f64;
            let numeric: f64 = (0..steps).map(|i| p.value(lo + (i as f64 + 0.5) * h)).sum::<f64>() / steps as f64;
            assert!((p.cell_average(lo, lo + dt) - numeric).abs() < 1e-4, "cell {q}");
        }
    }

    #[test]
    fn rectangle_on_cell_boundaries_renders_binary() {
        let dt = 1.0 / SIM_RATE;
        let p = Trapezoid::rectangle(48.0 * dt, 96.0 * dt, 1.0);
        let cells = render_cells(&[p], 0.0, dt, 150);
        for (q, v) in cells.iter().enumerate() {
            let expect = if (48..96).contains(&q) { 1.0 } else { 0.0 };
            assert!((v - expect).abs() < 1e-12, "cell {q}: {v}");
        }
    }

    #[test]
    fn front_end_filter_meets_band_edges() {
        let lp = LowPass::front_end(2.4e6, SIM_RATE).unwrap();
        assert_eq!(lp.taps().len() % 2, 1);
        assert!((lp.gain_at(0.0) - 1.0).abs() < 1e-12);
        assert!((lp.gain_at(0.3e6) - 1.0).abs() < 2e-3);
        for f in [1.2e6, 1.5e6, 2.4e6, 6e6, 20e6] {
            let db = 20.0 * lp.gain_at(f).log10();
            assert!(db < -59.0, "{f} Hz: {db} dB");
        }
    }

    #[test]
    fn grid_response_matches_pointwise_response() {
        let lp = LowPass::front_end(2.4e6, SIM_RATE).unwrap();
        let pulses = [
            Trapezoid { start: 1.013e-6, end: 1.52e-6, rise: 30e-9, decay: 90e-9, amplitude: 0.7 },
            Trapezoid { start: 2.5e-6, end: 3.49e-6, rise: 10e-9, decay: 0.0, amplitude: 1.1 },
        ];
        let t_first = -3.3e-6 + 1.7e-9;
        let grid = lp.response_on_grid(&pulses, t_first, 40, 30);
        for (m, g) in grid.iter().enumerate() {
            let t = t_first + m as f64 * 40.0 / SIM_RATE;
            assert!((g - lp.response_at(&pulses, t)).abs() < 1e-12);
        }
    }

    #[test]
    fn filtered_symmetric_pulse_is_symmetric_about_its_centre() {
        let lp = LowPass::front_end(2.4e6, SIM_RATE).unwrap();
        let p = [Trapezoid { start: 0.0, end: 0.5e-6, rise: 50e-9, decay: 50e-9, amplitude: 1.0 }];
        for k in 1..40 {
            let d = k as f64 * 13.7e-9;
            let a = lp.response_at(&p, 0.25e-6 - d);
            let b = lp.response_at(&p, 0.25e-6 + d);
            assert!((a - b).abs() < 1e-9, "offset {d}: {a} vs {b}");
        }
    }
}
