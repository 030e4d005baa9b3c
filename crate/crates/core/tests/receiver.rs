mod common;

use common::{evenly_spaced, scenario, FS};
use modes_toa::iq::IqStream;
use modes_toa::receiver::{detect_and_decode, detect_and_decode_with_stats, packet_samples, ReceiverConfig};
use modes_toa::signal_model::Payload;
use modes_toa::synth::{generate_two_receiver_trace, AmplitudeModel, FrontEndParams, TwoReceiverTrace, TxImpairments};
use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};

/// Peak amplitude giving `snr_db` against per-component noise `sigma`
/// (SNR = A^2 / (2 sigma^2)).
fn amplitude_for(snr_db: f64, sigma: f64) -> f64 {
    (2.0 * sigma * sigma * 10f64.powf(snr_db / 10.0)).sqrt()
}

fn trace(count: usize, amplitude: f64, imp: TxImpairments, seed: u64) -> TwoReceiverTrace {
    let fe = FrontEndParams { noise_sigma: 0.01, ..Default::default() };
    let sc = scenario(evenly_spaced(count, 1e-3, 400e-6), AmplitudeModel::Fixed(amplitude), imp, [(fe, vec![0.0]), (fe, vec![0.0])]);
    generate_two_receiver_trace(&sc, seed).unwrap()
}

fn check_against_truth(t: &TwoReceiverTrace, max_coarse_err_s: f64) {
    let p = detect_and_decode(&t.rx[0], 1, &ReceiverConfig::default());
    assert_eq!(p.len(), t.truth.len());
    for (pk, truth) in p.iter().zip(&t.truth) {
        assert_eq!(pk.payload.to_hex(), truth.payload_hex, "bit errors in packet {}", truth.packet_index);
        let err = pk.coarse_timestamp_s - truth.true_arrival_rx1;
        assert!(err.abs() <= max_coarse_err_s, "packet {}: coarse error {:.1} ns", truth.packet_index, err * 1e9);
    }
}

#[test]
fn hundred_clean_packets_all_decoded() {
    check_against_truth(&trace(100, amplitude_for(20.0, 0.01), TxImpairments::none(), 1), f64::INFINITY);
}

#[test]
fn no_bit_errors_over_a_thousand_packets_at_20_db() {
    check_against_truth(&trace(1000, amplitude_for(20.0, 0.01), TxImpairments::none(), 2), f64::INFINITY);
}

#[test]
fn coarse_timestamp_within_a_sample_period_and_the_jitter_bound() {
    check_against_truth(&trace(300, 0.5, TxImpairments::worst_case(), 3), 1.0 / FS + 50e-9);
}

#[test]
fn noise_alone_yields_no_packets() {
    let mut rng = common::rng(4);
    let v: Vec<Complex64> = (0..FS as usize)
        .map(|_| {
            let (i, q): (f64, f64) = (StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
            Complex64::new(i, q) * 0.01
        })
        .collect();
    let s = IqStream::from_normalized(&v, FS, 0.0, Some(modes_toa::iq::Adc::new(8).unwrap()));
    assert!(detect_and_decode(&s, 1, &ReceiverConfig::default()).is_empty());
}

#[test]
fn detection_is_deterministic() {
    let t = trace(100, 0.3, TxImpairments::worst_case(), 5);
    let a = detect_and_decode(&t.rx[1], 2, &ReceiverConfig::default());
    let b = detect_and_decode(&t.rx[1], 2, &ReceiverConfig::default());
    assert_eq!(a, b);
}

#[test]
fn windows_cover_the_packet_and_both_margins() {
    let t = trace(60, 0.5, TxImpairments::worst_case(), 6);
    let cfg = ReceiverConfig::default();
    for pk in detect_and_decode(&t.rx[0], 1, &cfg) {
        let body = packet_samples(pk.payload.len(), FS);
        assert_eq!(pk.window.len(), body + cfg.pre_margin + cfg.post_margin);
        assert_eq!(pk.window_start_index(), pk.leading_sample_index - cfg.pre_margin);
        assert_eq!(pk.window.leading_offset, cfg.pre_margin);
        let want = if pk.payload.len() == 112 { 304 } else { 170 };
        assert_eq!(pk.window.len(), want);
        assert_eq!(pk.coarse_timestamp_s, pk.leading_sample_index as f64 / FS);
    }
}

#[test]
fn packet_without_room_for_the_leading_margin_is_dropped() {
    let p = Payload::from_hex("8d4840d6202cc371c32ce0576098").unwrap();
    let s = common::single_packet_stream(&p, 1.0e-6, 0.5, &TxImpairments::none(), &FrontEndParams::default(), 1);
    let (pk, stats) = detect_and_decode_with_stats(&s, 1, &ReceiverConfig::default());
    assert!(pk.is_empty());
    assert!(stats.window_dropped >= 1);
    // the same packet a little later is found
    let s = common::single_packet_stream(&p, 10e-6, 0.5, &TxImpairments::none(), &FrontEndParams::default(), 1);
    assert_eq!(common::decode_one(&s).payload, p);
}

/// Constant payloads are periodic in half a symbol, so only the preamble
/// fixes the bit phase.
#[test]
fn constant_payloads_decode_at_every_sub_sample_delay() {
    let fe = common::ideal_front_end();
    // the first bit sets the length, so each fill needs a leading bit of
    // the other value at one of the two lengths
    let lead = |first: bool, fill: bool, len: usize| -> Vec<bool> { (0..len).map(|i| if i == 0 { first } else { fill }).collect() };
    for bits in [lead(false, false, 56), lead(false, true, 56), lead(true, true, 112), lead(true, false, 112)] {
        let p = Payload::new(bits).unwrap();
        for k in 0..16 {
            let delay = 20e-6 + k as f64 / 16.0 / FS;
            let s = common::single_packet_stream(&p, delay, 0.5, &TxImpairments::none(), &fe, k);
            assert_eq!(common::decode_one(&s).payload, p, "delay step {k}");
        }
    }
}
