//! A minimal legacy receiver: preamble detection on the native grid, BPPM
//! bit decisions, and extraction of the sample window handed to the TOA
//! block.

use crate::frontend::bessel_i0;
use crate::iq::{IqStream, SampleWindow};
use crate::signal_model::{
    grid_span, Payload, PulseSequence, CHIP_PERIOD_S, LONG_PAYLOAD_BITS, PREAMBLE_DURATION_S, SHORT_PAYLOAD_BITS,
    SYMBOL_PERIOD_S,
};
use crate::Result;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReceiverConfig {
    /// Minimum normalized correlation between the sample magnitudes and the
    /// preamble pattern.
    pub threshold: f64,
    /// Mean preamble pulse level must exceed this multiple of the mean level
    /// in the preamble's quiet chips.
    pub quiet_ratio: f64,
    /// A symbol whose chip contrast `|a - b| / (a + b)` is below this is
    /// ambiguous; packets with ambiguous symbols are dropped.
    pub min_contrast: f64,
    /// The stronger chip of every symbol must reach this fraction of the
    /// mean preamble pulse level.
    pub min_on_level: f64,
    /// Mean preamble pulse level must exceed this multiple of the stream's
    /// median magnitude, taken as the noise floor.
    pub floor_ratio: f64,
    pub pre_margin: usize,
    pub post_margin: usize,
}

impl Default for ReceiverConfig {
    fn default() -> Self {
        Self { threshold: 0.75, quiet_ratio: 3.0, min_contrast: 0.03, min_on_level: 0.5, floor_ratio: 4.0, pre_margin: 8, post_margin: 8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedPacket {
    pub receiver_id: u32,
    pub payload: Payload,
    pub leading_sample_index: usize,
    pub window: SampleWindow,
    /// Legacy-quality TOA: the leading sample's time.
    pub coarse_timestamp_s: f64,
}

impl DecodedPacket {
    pub fn window_start_index(&self) -> usize {
        self.window.start_index
    }

    pub fn record(&self) -> PacketRecord {
        PacketRecord {
            receiver_id: self.receiver_id,
            leading_sample_index: self.leading_sample_index,
            payload_hex: self.payload.to_hex(),
            coarse_timestamp_s: self.coarse_timestamp_s,
        }
    }
}

/// Serialized form of a decoded packet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketRecord {
    pub receiver_id: u32,
    pub leading_sample_index: usize,
    pub payload_hex: String,
    pub coarse_timestamp_s: f64,
}

/// Sub-sample phases at which the preamble template is rendered.
const PREAMBLE_PHASES: usize = 8;

/// Preamble pattern on the native grid.
#[derive(Debug, Clone)]
struct Preamble {
    len: usize,
    /// Samples inside a preamble pulse when the packet starts on a sample.
    ones: Vec<usize>,
    quiet: Vec<usize>,
    /// Rectangular preamble averaged over each sample period, for packets
    /// starting between half a sample before and half a sample after the
    /// window start. Zero mean, unit norm.
    templates: Vec<Vec<f64>>,
}

impl Preamble {
    fn new(fs: f64) -> Self {
        let len = (PREAMBLE_DURATION_S * fs).ceil() as usize;
        let seq = PulseSequence::preamble();
        let mut ones: Vec<usize> = seq
            .pulses()
            .iter()
            .flat_map(|p| grid_span(p.nominal_start_s(), p.nominal_end_s(), fs))
            .map(|i| i as usize)
            .filter(|&i| i < len)
            .collect();
        ones.dedup();
        // samples at least a chip from any pulse edge and from the payload
        let quiet = (0..len)
            .filter(|&i| {
                let t = i as f64 / fs;
                t <= PREAMBLE_DURATION_S - CHIP_PERIOD_S + 1e-12
                    && seq.pulses().iter().all(|p| {
                        let d = if t < p.nominal_start_s() {
                            p.nominal_start_s() - t
                        } else {
                            t - p.nominal_end_s()
                        };
                        d >= CHIP_PERIOD_S - 1e-12
                    })
            })
            .collect();
        let ts = 1.0 / fs;
        let templates = (0..PREAMBLE_PHASES)
            .map(|k| {
                let phase = k as f64 / PREAMBLE_PHASES as f64 - 0.5;
                let mut t: Vec<f64> = (0..len)
                    .map(|i| {
                        let c = (i as f64 - phase) * ts;
                        let (a, b) = (c - ts / 2.0, c + ts / 2.0);
                        seq.pulses()
                            .iter()
                            .map(|p| (b.min(p.nominal_end_s()) - a.max(p.nominal_start_s())).max(0.0))
                            .sum::<f64>()
                            / ts
                    })
                    .collect();
                let mean = t.iter().sum::<f64>() / len as f64;
                t.iter_mut().for_each(|v| *v -= mean);
                let norm = t.iter().map(|v| v * v).sum::<f64>().sqrt();
                t.iter_mut().for_each(|v| *v /= norm);
                t
            })
            .collect();
        Self { len, ones, quiet, templates }
    }

    /// Pearson correlation between `x[n..n + len]` and the best-matching
    /// phase of the template.
    fn ncc(&self, x: &[f32], n: usize) -> f64 {
        let w = &x[n..n + self.len];
        let l = self.len as f64;
        let (mut s, mut s2) = (0.0f64, 0.0f64);
        for &v in w {
            let v = v as f64;
            s += v;
            s2 += v * v;
        }
        let var = s2 - s * s / l;
        if var <= 0.0 {
            return 0.0;
        }
        // the templates have zero mean, so the window mean drops out
        let best = self
            .templates
            .iter()
            .map(|t| t.iter().zip(w).map(|(a, &b)| a * b as f64).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max);
        best / var.sqrt()
    }

    fn quiet_ok(&self, x: &[f32], n: usize, ratio: f64, floor: f64) -> bool {
        let pulse = self.ones.iter().map(|&i| x[n + i] as f64).sum::<f64>() / self.ones.len() as f64;
        let quiet = self.quiet.iter().map(|&i| x[n + i] as f64).sum::<f64>() / self.quiet.len().max(1) as f64;
        pulse > 0.0 && pulse >= ratio * quiet && pulse > floor
    }
}

const INTERP_HALF_WIDTH: i64 = 8;

/// Band-limited magnitude interpolation: a Kaiser-windowed sinc applied to
/// the complex samples, so chip centres between samples keep their level.
/// Clipped samples are not band-limited, so next to a saturated sample the
/// magnitudes are interpolated linearly instead. Positions are relative to
/// `x[offset]`.
struct ChipSampler {
    x: Vec<num_complex::Complex64>,
    saturated: Vec<bool>,
    offset: i64,
}

impl ChipSampler {
    fn new(stream: &IqStream, first: i64, last: i64) -> Self {
        let lo = (first - INTERP_HALF_WIDTH).max(0);
        let hi = (last + INTERP_HALF_WIDTH + 1).min(stream.len() as i64);
        Self {
            x: (lo..hi).map(|k| stream.sample(k as usize)).collect(),
            saturated: (lo..hi).map(|k| stream.is_saturated(k as usize)).collect(),
            offset: lo,
        }
    }

    fn level(&self, pos: f64) -> f64 {
        let base = pos.floor() as i64;
        let near = [base - self.offset, base + 1 - self.offset];
        if near.iter().any(|&i| i >= 0 && (i as usize) < self.x.len() && self.saturated[i as usize]) {
            let get = |i: i64| if i >= 0 && (i as usize) < self.x.len() { self.x[i as usize].norm() } else { 0.0 };
            let f = pos - base as f64;
            return get(near[0]) * (1.0 - f) + get(near[1]) * f;
        }
        // sin(pi (pos - k)) alternates sign with k
        let s0 = (std::f64::consts::PI * (pos - base as f64)).sin();
        let mut acc = num_complex::Complex64::new(0.0, 0.0);
        for k in base - INTERP_HALF_WIDTH + 1..=base + INTERP_HALF_WIDTH {
            let i = k - self.offset;
            if i < 0 || i as usize >= self.x.len() {
                continue;
            }
            let d = pos - k as f64;
            let sinc = if d == 0.0 {
                1.0
            } else {
                let sign = if (base - k) % 2 == 0 { 1.0 } else { -1.0 };
                sign * s0 / (std::f64::consts::PI * d)
            };
            acc += self.x[i as usize] * (sinc * kaiser(d));
        }
        acc.norm()
    }

    /// Chip levels `(first, second)` of `symbols` symbols for a packet
    /// starting at fractional sample position `start`.
    fn chip_levels(&self, start: f64, fs: f64, symbols: usize) -> Vec<(f64, f64)> {
        let spc = fs * 1e-6;
        (0..symbols)
            .map(|i| {
                let t = PREAMBLE_DURATION_S / 1e-6 + (i as f64) * SYMBOL_PERIOD_S / 1e-6;
                (self.level(start + (t + 0.25) * spc), self.level(start + (t + 0.75) * spc))
            })
            .collect()
    }
}

fn kaiser(t: f64) -> f64 {
    const BETA: f64 = 6.0;
    const TABLE: usize = 4096;
    static WINDOW: OnceLock<Vec<f64>> = OnceLock::new();
    let r = t.abs() / INTERP_HALF_WIDTH as f64;
    if r >= 1.0 {
        return 0.0;
    }
    let w = WINDOW.get_or_init(|| {
        let norm = bessel_i0(BETA);
        (0..=TABLE)
            .map(|k| {
                let r = k as f64 / TABLE as f64;
                bessel_i0(BETA * (1.0 - r * r).max(0.0).sqrt()) / norm
            })
            .collect()
    });
    let pos = r * TABLE as f64;
    let k = pos as usize;
    let f = pos - k as f64;
    w[k] * (1.0 - f) + w[(k + 1).min(TABLE)] * f
}

fn contrast(a: f64, b: f64) -> f64 {
    if a + b <= 0.0 {
        0.0
    } else {
        (a - b).abs() / (a + b)
    }
}

/// Preamble chips paired with an adjacent empty chip.
const PREAMBLE_CHIP_PAIRS: [(u32, u32); 4] = [(0, 1), (2, 3), (7, 6), (9, 8)];

/// Decodes the payload following a preamble at sample `n`. The chip grid
/// phase is searched within a sample either side of `n`.
fn decode_at(stream: &IqStream, n: usize, cfg: &ReceiverConfig) -> Option<Payload> {
    let fs = stream.sample_rate_hz;
    let spc = fs * 1e-6;
    let chips = ChipSampler::new(stream, n as i64 - 2, n as i64 + packet_samples(LONG_PAYLOAD_BITS, fs) as i64 + 2);
    let len = stream.len() as f64;
    let short_end = n as f64 + (PREAMBLE_DURATION_S / 1e-6 + SHORT_PAYLOAD_BITS as f64) * spc;
    if short_end + 2.0 >= len {
        return None;
    }
    // a constant payload looks the same half a chip later with its bits
    // inverted, so the preamble's on/off chip pairs take part in the score
    let chip_at = |start: f64, chip: u32| chips.level(start + (chip as f64 + 0.5) * CHIP_PERIOD_S * fs);
    let preamble_score = |start: f64| -> f64 {
        PREAMBLE_CHIP_PAIRS
            .iter()
            .map(|&(on, off)| {
                let (a, b) = (chip_at(start, on), chip_at(start, off));
                if a + b <= 0.0 {
                    0.0
                } else {
                    (a - b) / (a + b)
                }
            })
            .sum::<f64>()
            * (SHORT_PAYLOAD_BITS / PREAMBLE_CHIP_PAIRS.len()) as f64
    };
    let mut best: Option<(f64, f64)> = None;
    for step in -8..=8 {
        let start = n as f64 + step as f64 / 8.0;
        let score: f64 =
            chips.chip_levels(start, fs, SHORT_PAYLOAD_BITS).iter().map(|&(a, b)| contrast(a, b)).sum::<f64>() + preamble_score(start);
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((start, score));
        }
    }
    let (start, _) = best?;
    let first = chips.chip_levels(start, fs, 1)[0];
    let bits = if first.0 > first.1 { LONG_PAYLOAD_BITS } else { SHORT_PAYLOAD_BITS };
    let long_end = start + (PREAMBLE_DURATION_S / 1e-6 + bits as f64) * spc;
    if long_end + 2.0 >= len {
        return None;
    }
    let levels = chips.chip_levels(start, fs, bits);
    let preamble: Vec<f64> = PulseSequence::preamble()
        .pulses()
        .iter()
        .map(|p| chips.level(start + (p.nominal_start_s() / 1e-6 + 0.25) * spc))
        .collect();
    let on = cfg.min_on_level * preamble.iter().sum::<f64>() / preamble.len() as f64;
    if preamble.iter().any(|&p| p < on) {
        return None;
    }
    if levels.iter().any(|&(a, b)| contrast(a, b) < cfg.min_contrast || a.max(b) < on) {
        return None;
    }
    Payload::new(levels.iter().map(|&(a, b)| a > b).collect()).ok()
}

/// Number of native samples spanned by a packet of `bits` payload bits.
pub fn packet_samples(bits: usize, fs: f64) -> usize {
    ((PREAMBLE_DURATION_S + bits as f64 * SYMBOL_PERIOD_S) * fs - 1e-9).ceil() as usize
}

/// The window handed to the TOA block: the packet plus margins.
pub fn packet_window(stream: &IqStream, leading: usize, bits: usize, cfg: &ReceiverConfig) -> Result<SampleWindow> {
    let len = packet_samples(bits, stream.sample_rate_hz) + cfg.pre_margin + cfg.post_margin;
    if leading < cfg.pre_margin {
        return Err(crate::Error::InsufficientData(format!("packet at sample {leading} lacks a {}-sample pre-margin", cfg.pre_margin)));
    }
    stream.window(leading - cfg.pre_margin, len, cfg.pre_margin)
}

fn median(x: &[f32]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let mut v = x.to_vec();
    let mid = v.len() / 2;
    *v.select_nth_unstable_by(mid, f32::total_cmp).1 as f64
}

/// Why candidate preambles were rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DetectionStats {
    pub candidates: usize,
    pub quiet_rejected: usize,
    pub decode_failed: usize,
    pub window_dropped: usize,
    pub decoded: usize,
}

/// Scans `stream` for packets.
pub fn detect_and_decode(stream: &IqStream, receiver_id: u32, cfg: &ReceiverConfig) -> Vec<DecodedPacket> {
    detect_and_decode_with_stats(stream, receiver_id, cfg).0
}

pub fn detect_and_decode_with_stats(stream: &IqStream, receiver_id: u32, cfg: &ReceiverConfig) -> (Vec<DecodedPacket>, DetectionStats) {
    let fs = stream.sample_rate_hz;
    let x = stream.magnitudes();
    let pre = Preamble::new(fs);
    let mut out = Vec::new();
    let mut stats = DetectionStats::default();
    if x.len() < pre.len + 3 {
        return (out, stats);
    }
    let floor = cfg.floor_ratio * median(&x);
    let last = x.len() - pre.len - 2;
    let mut n = 0;
    while n < last {
        if (x[n] as f64).max(x[n + 1] as f64) <= floor || pre.ncc(&x, n) < cfg.threshold {
            n += 1;
            continue;
        }
        // settle on the local maximum of the correlation
        stats.candidates += 1;
        let lead = (n..=n + 2).max_by(|&a, &b| pre.ncc(&x, a).total_cmp(&pre.ncc(&x, b)).then(b.cmp(&a))).unwrap_or(n);
        if !pre.quiet_ok(&x, lead, cfg.quiet_ratio, floor) {
            stats.quiet_rejected += 1;
            n += 1;
            continue;
        }
        let Some(payload) = decode_at(stream, lead, cfg) else {
            stats.decode_failed += 1;
            n += 1;
            continue;
        };
        let bits = payload.len();
        match packet_window(stream, lead, bits, cfg) {
            Ok(window) => {
                out.push(DecodedPacket {
                    receiver_id,
                    payload,
                    leading_sample_index: lead,
                    window,
                    coarse_timestamp_s: stream.time_of(lead),
                });
                stats.decoded += 1;
                n = lead + packet_samples(bits, fs);
            }
            Err(e) => {
                stats.window_dropped += 1;
                log::debug!("receiver {receiver_id}: dropping packet at sample {lead}: {e}");
                n += 1;
            }
        }
    }
    (out, stats)
}
