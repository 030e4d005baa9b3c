#![allow(dead_code)]

use modes_toa::iq::IqStream;
use modes_toa::receiver::{detect_and_decode, DecodedPacket, ReceiverConfig};
use modes_toa::signal_model::Payload;
use modes_toa::synth::{apply_channel_and_frontend, generate_packet_waveform, FrontEndParams, TxImpairments};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FS: f64 = 2.4e6;

/// Random payload with the length marker in the first bit.
pub fn random_payload(rng: &mut ChaCha8Rng, long: bool) -> Payload {
    let len = if long { 112 } else { 56 };
    let mut bits: Vec<bool> = (0..len).map(|_| rng.random()).collect();
    bits[0] = long;
    Payload::new(bits).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Ideal front end: no quantization, no noise.
pub fn ideal_front_end() -> FrontEndParams {
    FrontEndParams { adc_bits: None, ..FrontEndParams::default() }
}

/// One packet at `delay_s` followed by 1 ms of quiet, so that the stream is
/// mostly noise as a real capture would be.
pub fn single_packet_stream(payload: &Payload, delay_s: f64, amplitude: f64, imp: &TxImpairments, fe: &FrontEndParams, seed: u64) -> IqStream {
    let w = generate_packet_waveform(payload, imp, seed).unwrap();
    let fe = FrontEndParams { gain: fe.gain * amplitude, noise_sigma: fe.noise_sigma / amplitude, ..*fe };
    let s = apply_channel_and_frontend(&w, delay_s, &fe, seed).unwrap();
    pad(&s, 2400)
}

/// `s` with `extra` zero samples appended.
pub fn pad(s: &IqStream, extra: usize) -> IqStream {
    let mut v: Vec<_> = (0..s.len()).map(|i| s.sample(i)).collect();
    v.resize(s.len() + extra, num_complex::Complex64::new(0.0, 0.0));
    IqStream::from_normalized(&v, s.sample_rate_hz, s.start_time_s, s.adc)
}

pub fn decode_one(stream: &IqStream) -> DecodedPacket {
    let mut p = detect_and_decode(stream, 1, &ReceiverConfig::default());
    assert_eq!(p.len(), 1, "expected exactly one packet");
    p.remove(0)
}

/// Two-receiver scenario with packets at `times`, random payloads and the
/// given receivers.
pub fn scenario(
    times: Vec<f64>,
    amplitude: modes_toa::synth::AmplitudeModel,
    impairments: TxImpairments,
    receivers: [(FrontEndParams, Vec<f64>); 2],
) -> modes_toa::synth::Scenario {
    use modes_toa::synth::{ClockModel, PayloadSource, ReceiverSetup, Schedule, Scenario};
    let setup = |(fe, poly): (FrontEndParams, Vec<f64>)| ReceiverSetup { front_end: fe, clock: ClockModel { poly_s: poly, random_walk_sigma: 0.0 } };
    let [a, b] = receivers;
    Scenario {
        schedule: Schedule::Explicit(times),
        payloads: PayloadSource::Random { long_fraction: 0.5 },
        amplitude,
        impairments,
        receivers: [setup(a), setup(b)],
    }
}

/// `count` packets every `gap_s`, starting at `start_s`.
pub fn evenly_spaced(count: usize, start_s: f64, gap_s: f64) -> Vec<f64> {
    (0..count).map(|i| start_s + i as f64 * gap_s).collect()
}
