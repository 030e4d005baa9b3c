mod common;

use common::FS;
use modes_toa::iq::SampleWindow;
use modes_toa::resample::{upsample, upsample_with, Method};
use num_complex::Complex64;
use proptest::prelude::*;
use std::f64::consts::PI;

const METHODS: [Method; 2] = [Method::Spectral, Method::Polyphase { half_width: 16 }];

fn tone(len: usize, f: f64, t0: f64) -> Vec<Complex64> {
    (0..len).map(|k| Complex64::from_polar(1.0, 2.0 * PI * f * (t0 + k as f64 / FS))).collect()
}

fn window(samples: Vec<Complex64>) -> SampleWindow {
    SampleWindow::from_samples(samples, FS, 0.0, 8)
}

/// Noise-free filtered packet with quiet margins: a real envelope carried
/// at constant phase `phase`.
fn packet(phase: f64) -> Vec<Complex64> {
    let p = modes_toa::signal_model::Payload::from_hex("8d4840d6202cc371c32ce0576098").unwrap();
    let s = common::single_packet_stream(&p, 30e-6, 0.5, &modes_toa::synth::TxImpairments::worst_case(), &common::ideal_front_end(), 3);
    let carrier = (0..s.len()).map(|i| s.sample(i)).max_by(|a, b| a.norm().total_cmp(&b.norm())).unwrap();
    let rot = carrier.conj() / carrier.norm();
    (0..400).map(|i| Complex64::from_polar(1.0, phase) * (s.sample(i) * rot).re).collect()
}

fn rel_rms(a: &[Complex64], b: &[Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}

#[test]
fn factor_one_is_the_identity() {
    let x = packet(0.4);
    for m in METHODS {
        assert_eq!(upsample_with(&window(x.clone()), 1, m).unwrap().samples, x);
    }
}

#[test]
fn grid_steps_at_25_and_83() {
    let w = window(tone(64, 0.3e6, 0.0));
    assert!((upsample(&w, 25).unwrap().grid_step_s() - 16.6667e-9).abs() < 1e-12);
    assert!((upsample(&w, 83).unwrap().grid_step_s() - 5.0201e-9).abs() < 1e-12);
}

#[test]
fn out_of_range_factors_rejected() {
    let w = window(tone(64, 0.3e6, 0.0));
    assert!(upsample(&w, 0).is_err());
    assert!(upsample(&w, 129).is_err());
    assert!(upsample(&window(tone(31, 0.3e6, 0.0)), 4).is_err());
}

fn tone_error(len: usize, n: usize, m: Method) -> f64 {
    let y = upsample_with(&window(tone(len, 0.3e6, 0.0)), n, m).unwrap().samples;
    // interior: a fifth of the window away from either end
    let (lo, hi) = (len / 5 * n, (len - len / 5) * n);
    let want: Vec<Complex64> = (lo..hi).map(|j| Complex64::from_polar(1.0, 2.0 * PI * 0.3e6 * j as f64 / (n as f64 * FS))).collect();
    rel_rms(&y[lo..hi], &want)
}

#[test]
fn tone_interpolated_within_a_thousandth_on_a_packet_window() {
    // 304 samples is the window of a 112-bit packet
    for m in METHODS {
        let err = tone_error(304, 25, m);
        assert!(err <= 1e-3, "{m:?}: {err}");
    }
}

#[test]
fn windowed_sinc_handles_tones_that_do_not_fit_the_window() {
    // the spectral route interpolates the periodic extension, so a tone with
    // a fractional number of cycles is only checked on the local filter
    for len in [300, 301] {
        let err = tone_error(len, 25, Method::Polyphase { half_width: 16 });
        assert!(err <= 1e-3, "{len}: {err}");
    }
}

#[test]
fn decimating_the_output_returns_the_input() {
    let x = packet(1.1);
    for (m, tol) in [(Method::Spectral, 1e-6), (Method::Polyphase { half_width: 16 }, 5e-3)] {
        for n in [2, 25, 83] {
            let y = upsample_with(&window(x.clone()), n, m).unwrap().samples;
            let back: Vec<Complex64> = y.iter().step_by(n).copied().collect();
            assert!(rel_rms(&back[20..380], &x[20..380]) <= tol, "{m:?} N={n}");
        }
    }
}

#[test]
fn constant_phase_survives_interpolation() {
    // the envelope is real with sign changes in the filter ringing, so the
    // phase is checked modulo pi
    let phase = 2.3;
    let rot = Complex64::from_polar(1.0, -phase);
    for m in METHODS {
        let y = upsample_with(&window(packet(phase)), 25, m).unwrap().samples;
        let peak = y.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for v in &y[500..9500] {
            if v.norm() > 0.01 * peak {
                let d = ((v * rot).im / v.norm()).asin();
                assert!(d.abs() <= 1e-3, "{m:?}: phase off by {d}");
            }
        }
    }
}

#[test]
fn amplitude_at_native_instants_preserved() {
    let x = packet(0.0);
    for m in METHODS {
        let y = upsample_with(&window(x.clone()), 83, m).unwrap().samples;
        let peak = x.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for k in 20..380 {
            assert!((y[k * 83].norm() - x[k].norm()).abs() <= 5e-3 * peak);
        }
    }
}

fn roll(x: &[Complex64], s: usize) -> Vec<Complex64> {
    let mut v = x.to_vec();
    v.rotate_right(s);
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn spectral_upsampling_commutes_with_circular_shift(shift in 0usize..400, n in 2usize..40) {
        let x = packet(0.7);
        let a = upsample(&window(roll(&x, shift)), n).unwrap().samples;
        let b = roll(&upsample(&window(x), n).unwrap().samples, shift * n);
        prop_assert!(rel_rms(&a, &b) < 1e-9);
    }

    #[test]
    fn polyphase_upsampling_commutes_with_shift_inside_quiet_margins(shift in 0usize..20, n in 2usize..40) {
        // the packet occupies samples ~50..360; shifting by <20 keeps it clear
        // of both ends
        let x = packet(0.7);
        let m = Method::Polyphase { half_width: 16 };
        let a = upsample_with(&window(roll(&x, shift)), n, m).unwrap().samples;
        let b = roll(&upsample_with(&window(x), n, m).unwrap().samples, shift * n);
        prop_assert!(rel_rms(&a, &b) < 5e-3);
    }
}
