//! Synthetic two-receiver traces: one transmitter, one antenna, a splitter
//! and two identical 8-bit receivers with independent noise and clocks.
//!
//! Per packet the transmitter draws pulse jitter, rise/decay times and
//! per-pulse amplitude once; both receivers see that same waveform. Each
//! receiver then applies its own clock error, carrier phase, front-end
//! filter, noise, gain and ADC.

use crate::frontend::{LowPass, Trapezoid, SIM_OVERSAMPLING};
use crate::iq::{Adc, IqStream};
use crate::rng::{self, Domain};
use crate::signal_model::{extract_pulses, Payload, PulseDescriptor, LONG_PAYLOAD_BITS, SHORT_PAYLOAD_BITS};
use crate::{Error, Result};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Noise is generated in independent chunks of this many samples.
const NOISE_CHUNK: usize = 1 << 16;
/// Quiet samples kept after the last packet of a trace.
const TRAILING_QUIET_S: f64 = 100e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum JitterDistribution {
    #[default]
    Uniform,
    /// Gaussian with sigma = bound / 2, redrawn until inside the bound.
    TruncatedGaussian,
}

/// Transmitter tolerances. Pulse offsets, rise and decay times are drawn
/// per pulse within these bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TxImpairments {
    pub jitter_bound_s: f64,
    pub rise_time_max_s: f64,
    pub decay_time_max_s: f64,
    pub amplitude_variation_db: f64,
    pub jitter_distribution: JitterDistribution,
}

impl TxImpairments {
    pub fn none() -> Self {
        Self {
            jitter_bound_s: 0.0,
            rise_time_max_s: 0.0,
            decay_time_max_s: 0.0,
            amplitude_variation_db: 0.0,
            jitter_distribution: JitterDistribution::Uniform,
        }
    }

    /// The largest deviations a compliant transponder may show.
    pub fn worst_case() -> Self {
        Self {
            jitter_bound_s: 50e-9,
            rise_time_max_s: 50e-9,
            decay_time_max_s: 150e-9,
            amplitude_variation_db: 2.0,
            jitter_distribution: JitterDistribution::Uniform,
        }
    }

    pub fn validate(&self) -> Result<()> {
        // unit conversions from ns may land a rounding step above the bound
        let within = |x: f64, max: f64| (0.0..=max * (1.0 + 1e-9)).contains(&x);
        let ok = within(self.jitter_bound_s, 50e-9)
            && within(self.rise_time_max_s, 50e-9)
            && within(self.decay_time_max_s, 150e-9)
            && within(self.amplitude_variation_db, 2.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("transmitter impairments outside tolerance: {self:?}")))
        }
    }
}

/// One transmitted pulse after impairments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TxPulse {
    pub descriptor: PulseDescriptor,
    pub offset_s: f64,
    pub rise_s: f64,
    pub decay_s: f64,
    pub amplitude: f64,
}

/// Transmitted baseband envelope of one packet, kept in analytic form.
/// Time zero is the packet's nominal start.
#[derive(Debug, Clone, PartialEq)]
pub struct TxWaveform {
    pub payload: Payload,
    pub pulses: Vec<TxPulse>,
}

impl TxWaveform {
    pub fn duration_s(&self) -> f64 {
        self.payload.packet_duration_s()
    }

    pub fn jitters_s(&self) -> Vec<f64> {
        self.pulses.iter().map(|p| p.offset_s).collect()
    }

    /// Pulses as trapezoids, with the packet start placed at `t0`.
    pub fn trapezoids(&self, t0: f64) -> Vec<Trapezoid> {
        self.pulses
            .iter()
            .map(|p| Trapezoid {
                start: t0 + p.descriptor.nominal_start_s() + p.offset_s,
                end: t0 + p.descriptor.nominal_end_s() + p.offset_s,
                rise: p.rise_s,
                decay: p.decay_s,
                amplitude: p.amplitude,
            })
            .collect()
    }

    /// The envelope at `sim_rate_hz`; sample `q` is the mean over
    /// `[q, q + 1) / sim_rate_hz`.
    pub fn samples(&self, sim_rate_hz: f64) -> Vec<f64> {
        let dt = 1.0 / sim_rate_hz;
        let len = (self.duration_s() * sim_rate_hz).ceil() as usize + 1;
        crate::frontend::render_cells(&self.trapezoids(0.0), 0.0, dt, len)
    }
}

fn draw_jitter<R: Rng>(rng: &mut R, imp: &TxImpairments) -> f64 {
    let b = imp.jitter_bound_s;
    if b == 0.0 {
        return 0.0;
    }
    match imp.jitter_distribution {
        JitterDistribution::Uniform => rng.random_range(-b..=b),
        JitterDistribution::TruncatedGaussian => loop {
            let x: f64 = rng.sample::<f64, _>(StandardNormal) * 0.5 * b;
            if x.abs() <= b {
                break x;
            }
        },
    }
}

fn draw_upto<R: Rng>(rng: &mut R, max: f64) -> f64 {
    if max > 0.0 {
        rng.random_range(0.0..=max)
    } else {
        0.0
    }
}

pub fn generate_packet_waveform_with<R: Rng>(payload: &Payload, imp: &TxImpairments, rng: &mut R) -> TxWaveform {
    let pulses = extract_pulses(payload)
        .pulses()
        .iter()
        .map(|&descriptor| {
            let offset_s = draw_jitter(rng, imp);
            let rise_s = draw_upto(rng, imp.rise_time_max_s);
            let decay_s = draw_upto(rng, imp.decay_time_max_s);
            let half = 0.5 * imp.amplitude_variation_db;
            let db = if half > 0.0 { rng.random_range(-half..=half) } else { 0.0 };
            TxPulse { descriptor, offset_s, rise_s, decay_s, amplitude: 10f64.powf(db / 20.0) }
        })
        .collect();
    TxWaveform { payload: payload.clone(), pulses }
}

/// Draws a packet's transmitted waveform from the transmitter stream of
/// `seed`.
pub fn generate_packet_waveform(payload: &Payload, imp: &TxImpairments, seed: u64) -> Result<TxWaveform> {
    imp.validate()?;
    Ok(generate_packet_waveform_with(payload, imp, &mut rng::stream(seed, Domain::Transmitter, 0)))
}

/// Receiver front end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontEndParams {
    pub sample_rate_hz: f64,
    /// `None` models an ideal ADC: no quantization, no clipping.
    pub adc_bits: Option<u32>,
    pub gain: f64,
    pub filter_passband_hz: f64,
    /// Per-component noise standard deviation, added before the gain.
    pub noise_sigma: f64,
}

impl Default for FrontEndParams {
    fn default() -> Self {
        Self { sample_rate_hz: 2.4e6, adc_bits: Some(8), gain: 1.0, filter_passband_hz: 2.4e6, noise_sigma: 0.0 }
    }
}

impl FrontEndParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz > 0.0) || !(self.gain > 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidParameter(format!("front end: {self:?}")));
        }
        if !(self.filter_passband_hz > 0.0) || self.filter_passband_hz > self.sample_rate_hz * SIM_OVERSAMPLING as f64 / 4.0 {
            return Err(Error::InvalidParameter(format!("filter passband {} Hz", self.filter_passband_hz)));
        }
        if let Some(b) = self.adc_bits {
            Adc::new(b)?;
        }
        Ok(())
    }

    pub fn adc(&self) -> Option<Adc> {
        self.adc_bits.map(|b| Adc::new(b).expect("validated"))
    }

    pub fn sim_rate_hz(&self) -> f64 {
        self.sample_rate_hz * SIM_OVERSAMPLING as f64
    }
}

/// Filtered, noiseless packet envelope on a receiver's sample grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Burst {
    pub first_index: i64,
    pub envelope: Vec<f64>,
    /// Complex scale (amplitude and carrier phase) applied to the envelope.
    pub phasor: Complex64,
}

impl Burst {
    pub fn end_index(&self) -> i64 {
        self.first_index + self.envelope.len() as i64
    }
}

/// The front-end model for one receiver.
#[derive(Debug, Clone)]
pub struct FrontEnd {
    params: FrontEndParams,
    filter: LowPass,
}

impl FrontEnd {
    pub fn new(params: FrontEndParams) -> Result<Self> {
        params.validate()?;
        let filter = LowPass::front_end(params.filter_passband_hz, params.sim_rate_hz())?;
        Ok(Self { params, filter })
    }

    pub fn params(&self) -> &FrontEndParams {
        &self.params
    }

    pub fn filter(&self) -> &LowPass {
        &self.filter
    }

    /// Samples on either side of a packet touched by the filter response.
    fn pad_samples(&self) -> i64 {
        (self.filter.delay() / SIM_OVERSAMPLING) as i64 + 2
    }

    /// Filtered envelope of `waveform` arriving at receiver-clock time
    /// `arrival_s` (stream sample `n` sits at `n / fs`).
    pub fn render_burst(&self, waveform: &TxWaveform, arrival_s: f64, phasor: Complex64) -> Burst {
        let fs = self.params.sample_rate_hz;
        let pad = self.pad_samples();
        let first = (arrival_s * fs).floor() as i64 - pad;
        let last = ((arrival_s + waveform.duration_s()) * fs).ceil() as i64 + pad;
        let count = (last - first + 1) as usize;
        // pulses are expressed relative to the first output instant so the
        // grid arithmetic never touches large absolute times
        let rel0 = arrival_s - first as f64 / fs;
        let envelope = self.filter.response_on_grid(&waveform.trapezoids(rel0), 0.0, SIM_OVERSAMPLING, count);
        Burst { first_index: first, envelope, phasor }
    }

    /// Adds noise, applies gain and digitizes `values` in place; `rng`
    /// supplies the noise.
    fn finish<R: Rng>(&self, values: &mut [Complex64], rng: &mut R) {
        let sigma = self.params.noise_sigma;
        for v in values.iter_mut() {
            if sigma > 0.0 {
                let ni: f64 = rng.sample(StandardNormal);
                let nq: f64 = rng.sample(StandardNormal);
                *v += Complex64::new(ni, nq) * sigma;
            }
            *v *= self.params.gain;
        }
    }
}

/// Passes one packet through a receiver: delay by `delay_s` (exact, the
/// pulses are rendered analytically at the delayed position), carrier phase
/// drawn from `seed`, front-end filter, noise, gain and ADC. The returned
/// stream starts at time zero and ends shortly after the packet.
pub fn apply_channel_and_frontend(waveform: &TxWaveform, delay_s: f64, fe: &FrontEndParams, seed: u64) -> Result<IqStream> {
    if !(delay_s >= 0.0) {
        return Err(Error::InvalidParameter(format!("negative delay {delay_s}")));
    }
    let front = FrontEnd::new(*fe)?;
    let phase = rng::stream(seed, Domain::CarrierPhase, 0).random_range(0.0..2.0 * PI);
    let burst = front.render_burst(waveform, delay_s, Complex64::from_polar(1.0, phase));
    let len = burst.end_index().max(0) as usize;
    let mut values = vec![Complex64::new(0.0, 0.0); len];
    for (k, e) in burst.envelope.iter().enumerate() {
        let n = burst.first_index + k as i64;
        if n >= 0 {
            values[n as usize] = burst.phasor * e;
        }
    }
    front.finish(&mut values, &mut rng::stream(seed, Domain::ReceiverNoise1, 0));
    Ok(IqStream::from_normalized(&values, fe.sample_rate_hz, 0.0, fe.adc()))
}

/// Receiver clock error `xi(t) = sum_k poly_s[k] * t^k` (seconds), plus an
/// optional Brownian term with diffusion `random_walk_sigma` (s/sqrt(s)).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClockModel {
    pub poly_s: Vec<f64>,
    pub random_walk_sigma: f64,
}

impl ClockModel {
    pub fn offset(offset_s: f64) -> Self {
        Self { poly_s: vec![offset_s], random_walk_sigma: 0.0 }
    }

    /// Deterministic (polynomial) part at absolute time `t`.
    pub fn eval(&self, t: f64) -> f64 {
        self.poly_s.iter().rev().fold(0.0, |acc, c| acc * t + c)
    }

    /// Largest |dxi/dt| of the polynomial part over `[0, span]`.
    pub fn max_rate(&self, span_s: f64) -> f64 {
        (0..=1000)
            .map(|i| {
                let t = span_s * i as f64 / 1000.0;
                self.poly_s.iter().enumerate().skip(1).map(|(k, c)| k as f64 * c * t.powi(k as i32 - 1)).sum::<f64>().abs()
            })
            .fold(0.0, f64::max)
    }

    /// Clock error at each of the (increasing) `times`, random walk included.
    pub fn sample_at(&self, times: &[f64], seed: u64, receiver: usize) -> Vec<f64> {
        let mut rng = rng::stream(seed, Domain::clock_walk(receiver), 0);
        let mut walk = 0.0;
        let mut last_t = 0.0;
        times
            .iter()
            .map(|&t| {
                if self.random_walk_sigma > 0.0 {
                    let z: f64 = rng.sample(StandardNormal);
                    walk += z * self.random_walk_sigma * (t - last_t).max(0.0).sqrt();
                    last_t = t;
                }
                self.eval(t) + walk
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    /// Random arrivals at average `rate_hz` with a minimum gap of `guard_s`:
    /// each gap is `guard_s` plus an exponential draw. Stops after `packets`
    /// packets, or at `duration_s`, whichever is given.
    Poisson { rate_hz: f64, guard_s: f64, start_s: f64, packets: Option<usize>, duration_s: Option<f64> },
    Explicit(Vec<f64>),
}

impl Schedule {
    pub fn times(&self, seed: u64) -> Result<Vec<f64>> {
        match self {
            Schedule::Explicit(t) => Ok(t.clone()),
            Schedule::Poisson { rate_hz, guard_s, start_s, packets, duration_s } => {
                let mean_gap = 1.0 / rate_hz;
                if !(*rate_hz > 0.0) || mean_gap <= *guard_s {
                    return Err(Error::InvalidScenario(format!(
                        "rate {rate_hz} Hz leaves no room for the {} µs guard",
                        guard_s * 1e6
                    )));
                }
                if packets.is_none() && duration_s.is_none() {
                    return Err(Error::InvalidScenario("poisson schedule needs `packets` or `duration_s`".into()));
                }
                let exp = Exp::new(1.0 / (mean_gap - guard_s)).expect("positive rate");
                let mut rng = rng::stream(seed, Domain::Schedule, 0);
                let mut out = Vec::new();
                let mut t = *start_s;
                loop {
                    if packets.is_some_and(|n| out.len() >= n) || duration_s.is_some_and(|d| t > start_s + d) {
                        break;
                    }
                    out.push(t);
                    t += guard_s + exp.sample(&mut rng);
                }
                Ok(out)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PayloadSource {
    /// Uniformly random bits. The first bit (the top bit of the downlink
    /// format) is set for 112-bit packets and clear for 56-bit packets,
    /// which is how the receiver tells the lengths apart.
    Random { long_fraction: f64 },
    /// Cycled in order.
    Explicit(Vec<Payload>),
}

impl PayloadSource {
    pub fn payload(&self, seed: u64, index: usize) -> Payload {
        match self {
            PayloadSource::Explicit(list) => list[index % list.len()].clone(),
            PayloadSource::Random { long_fraction } => {
                let mut rng = rng::stream(seed, Domain::Payload, index as u64);
                let long = rng.random_bool(long_fraction.clamp(0.0, 1.0));
                let len = if long { LONG_PAYLOAD_BITS } else { SHORT_PAYLOAD_BITS };
                let mut bits: Vec<bool> = (0..len).map(|_| rng.random()).collect();
                bits[0] = long;
                Payload::new(bits).expect("valid length")
            }
        }
    }
}

/// Received amplitude of each packet (full scale = 1 at unit gain).
#[derive(Debug, Clone, PartialEq)]
pub enum AmplitudeModel {
    Fixed(f64),
    Uniform { min: f64, max: f64 },
    LogUniform { min: f64, max: f64 },
    /// Picks a component with probability proportional to its weight.
    Mixture(Vec<(f64, AmplitudeModel)>),
}

impl AmplitudeModel {
    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            AmplitudeModel::Fixed(a) => *a,
            AmplitudeModel::Uniform { min, max } => rng.random_range(*min..=*max),
            AmplitudeModel::LogUniform { min, max } => (rng.random_range(min.ln()..=max.ln())).exp(),
            AmplitudeModel::Mixture(parts) => {
                let total: f64 = parts.iter().map(|(w, _)| w).sum();
                let mut u = rng.random_range(0.0..total);
                for (w, m) in parts {
                    if u < *w {
                        return m.draw(rng);
                    }
                    u -= w;
                }
                parts.last().expect("validated").1.draw(rng)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            AmplitudeModel::Fixed(a) => *a >= 0.0,
            AmplitudeModel::Uniform { min, max } => *min >= 0.0 && max >= min,
            AmplitudeModel::LogUniform { min, max } => *min > 0.0 && max >= min,
            AmplitudeModel::Mixture(parts) => {
                !parts.is_empty()
                    && parts.iter().all(|(w, m)| *w >= 0.0 && m.validate().is_ok())
                    && parts.iter().map(|(w, _)| w).sum::<f64>() > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidScenario(format!("amplitude model {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverSetup {
    pub front_end: FrontEndParams,
    pub clock: ClockModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub schedule: Schedule,
    pub payloads: PayloadSource,
    pub amplitude: AmplitudeModel,
    pub impairments: TxImpairments,
    pub receivers: [ReceiverSetup; 2],
}

/// Ground truth of one packet. Arrival times are receiver-clock readings
/// (`t_m + xi_i(t_m)`); `t_m_seconds` is the common absolute arrival time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub packet_index: usize,
    pub t_m_seconds: f64,
    pub payload_hex: String,
    pub true_arrival_rx1: f64,
    pub true_arrival_rx2: f64,
    pub per_pulse_jitter_ns: Vec<f64>,
    pub tx_amplitude: f64,
}

#[derive(Debug, Clone)]
pub struct TwoReceiverTrace {
    pub rx: [IqStream; 2],
    pub truth: Vec<TruthRecord>,
}

fn check_schedule(times: &[f64], payloads: &PayloadSource, seed: u64) -> Result<()> {
    for (m, w) in times.windows(2).enumerate() {
        let dur = payloads.payload(seed, m).packet_duration_s();
        if w[1] - w[0] < dur {
            return Err(Error::InvalidScenario(format!(
                "packets {m} and {} overlap: gap {:.3} µs < duration {:.1} µs",
                m + 1,
                (w[1] - w[0]) * 1e6,
                dur * 1e6
            )));
        }
    }
    Ok(())
}

/// Synthesizes both receivers' streams and the ground truth.
pub fn generate_two_receiver_trace(scenario: &Scenario, seed: u64) -> Result<TwoReceiverTrace> {
    scenario.impairments.validate()?;
    scenario.amplitude.validate()?;
    let times = scenario.schedule.times(seed)?;
    check_schedule(&times, &scenario.payloads, seed)?;
    let fronts = [FrontEnd::new(scenario.receivers[0].front_end)?, FrontEnd::new(scenario.receivers[1].front_end)?];
    let clocks: Vec<Vec<f64>> = (0..2).map(|i| scenario.receivers[i].clock.sample_at(&times, seed, i)).collect();

    // per-packet transmitter draws and per-receiver bursts
    let packets: Vec<(TruthRecord, [Burst; 2])> = times
        .par_iter()
        .enumerate()
        .map(|(m, &t)| {
            let payload = scenario.payloads.payload(seed, m);
            let mut tx_rng = rng::stream(seed, Domain::Transmitter, m as u64);
            let amplitude = scenario.amplitude.draw(&mut tx_rng);
            let waveform = generate_packet_waveform_with(&payload, &scenario.impairments, &mut tx_rng);
            let mut phase_rng = rng::stream(seed, Domain::CarrierPhase, m as u64);
            let arrivals = [t + clocks[0][m], t + clocks[1][m]];
            let bursts = [0, 1].map(|i| {
                let phase = phase_rng.random_range(0.0..2.0 * PI);
                fronts[i].render_burst(&waveform, arrivals[i], Complex64::from_polar(amplitude, phase))
            });
            let truth = TruthRecord {
                packet_index: m,
                t_m_seconds: t,
                payload_hex: payload.to_hex(),
                true_arrival_rx1: arrivals[0],
                true_arrival_rx2: arrivals[1],
                per_pulse_jitter_ns: waveform.jitters_s().iter().map(|j| j * 1e9).collect(),
                tx_amplitude: amplitude,
            };
            (truth, bursts)
        })
        .collect();

    for (t, b) in &packets {
        if b.iter().any(|b| b.first_index < 0) {
            return Err(Error::InvalidScenario(format!(
                "packet {} arrives before the start of a receiver stream",
                t.packet_index
            )));
        }
    }

    let mut streams = Vec::with_capacity(2);
    for (i, front) in fronts.iter().enumerate() {
        let bursts: Vec<&Burst> = packets.iter().map(|(_, b)| &b[i]).collect();
        let end = bursts.iter().map(|b| b.end_index()).max().unwrap_or(0) as f64 / front.params().sample_rate_hz;
        let len = ((end + TRAILING_QUIET_S) * front.params().sample_rate_hz).ceil() as usize;
        streams.push(assemble_stream(front, &bursts, len, seed, i));
    }
    let rx: [IqStream; 2] = streams.try_into().expect("two receivers");
    Ok(TwoReceiverTrace { rx, truth: packets.into_iter().map(|(t, _)| t).collect() })
}

/// Noise everywhere, bursts where packets are, then gain and ADC. Chunks are
/// independent so the result does not depend on the thread count.
fn assemble_stream(front: &FrontEnd, bursts: &[&Burst], len: usize, seed: u64, receiver: usize) -> IqStream {
    let adc = front.params().adc();
    let chunks: Vec<Vec<Complex64>> = (0..len.div_ceil(NOISE_CHUNK))
        .into_par_iter()
        .map(|c| {
            let lo = c * NOISE_CHUNK;
            let hi = (lo + NOISE_CHUNK).min(len);
            let mut values = vec![Complex64::new(0.0, 0.0); hi - lo];
            // bursts are in arrival order; find the ones touching this chunk
            let start = bursts.partition_point(|b| b.end_index() <= lo as i64);
            for b in bursts[start..].iter().take_while(|b| b.first_index < hi as i64) {
                for (k, e) in b.envelope.iter().enumerate() {
                    let n = b.first_index + k as i64;
                    if n >= lo as i64 && n < hi as i64 {
                        values[n as usize - lo] += b.phasor * e;
                    }
                }
            }
            front.finish(&mut values, &mut rng::stream(seed, Domain::receiver_noise(receiver), c as u64));
            values
        })
        .collect();
    let values: Vec<Complex64> = chunks.concat();
    IqStream::from_normalized(&values, front.params().sample_rate_hz, 0.0, adc)
}
