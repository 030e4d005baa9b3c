//! Mode S physical layer: BPPM chip mapping, Type-I/Type-II pulse
//! extraction and nominal amplitude templates.
//!
//! Time inside a packet is measured from the leading edge of the first
//! preamble pulse. A packet is a sequence of 0.5 µs chips: 16 preamble chips
//! followed by two chips per payload bit. A bit `1` occupies the first chip
//! of its symbol and a bit `0` the second, so the pair `01` produces one
//! contiguous two-chip (Type-II) pulse and every other occupied chip is a
//! one-chip (Type-I) pulse.

use crate::frontend::{LowPass, Trapezoid, SIM_OVERSAMPLING};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

pub const CHIP_PERIOD_S: f64 = 0.5e-6;
pub const SYMBOL_PERIOD_S: f64 = 1.0e-6;
pub const PREAMBLE_CHIPS: u32 = 16;
pub const PREAMBLE_DURATION_S: f64 = 8.0e-6;
/// Chip indices of the four preamble pulses (0.0, 1.0, 3.5 and 4.5 µs).
pub const PREAMBLE_PULSE_CHIPS: [u32; 4] = [0, 2, 7, 9];
pub const SHORT_PAYLOAD_BITS: usize = 56;
pub const LONG_PAYLOAD_BITS: usize = 112;

/// Rise/decay time of the nominal pulse behind the smoothed shapes.
pub const NOMINAL_EDGE_S: f64 = 50e-9;
/// Smoothed shapes are cut where they fall below this fraction of the peak.
pub const SMOOTHED_TRUNCATION: f64 = 0.01;

// Grid indices are computed as ceil/floor of `time * rate`; the products of
// chip multiples and sample rates are rarely exact in binary, so a small
// tolerance keeps e.g. 30.000000000000004 from becoming 31 samples.
const GRID_EPS: f64 = 1e-9;

pub(crate) fn grid_ceil(x: f64) -> i64 {
    (x - GRID_EPS).ceil() as i64
}

pub(crate) fn grid_floor(x: f64) -> i64 {
    (x - GRID_EPS).floor() as i64
}

/// Indices of the grid points of rate `rate_hz` inside `[a, b)`:
/// `ceil(a*rate) ..= floor(b*rate - eps)`.
pub fn grid_span(a_s: f64, b_s: f64, rate_hz: f64) -> std::ops::RangeInclusive<i64> {
    grid_ceil(a_s * rate_hz)..=grid_floor(b_s * rate_hz)
}

/// Decoded (or transmitted) Mode S payload of 56 or 112 bits.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Payload {
    bits: Vec<bool>,
}

impl Payload {
    pub fn new(bits: Vec<bool>) -> Result<Self> {
        if bits.len() != SHORT_PAYLOAD_BITS && bits.len() != LONG_PAYLOAD_BITS {
            return Err(Error::InvalidPayload(format!("{} bits (expected 56 or 112)", bits.len())));
        }
        Ok(Self { bits })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bits = bytes.iter().flat_map(|b| (0..8).rev().map(move |i| (b >> i) & 1 == 1)).collect();
        Self::new(bits)
    }

    pub fn from_hex(hex: &str) -> Result<Self> {
        let hex = hex.trim();
        if !hex.len().is_multiple_of(2) || !hex.bytes().all(|c| c.is_ascii_hexdigit()) {
            return Err(Error::InvalidPayload(format!("not a hex byte string: {hex:?}")));
        }
        let bytes: Vec<u8> = (0..hex.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(&hex[i..i + 2], 16).expect("validated hex"))
            .collect();
        Self::from_bytes(&bytes)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.bits.chunks(8).map(|c| c.iter().fold(0u8, |acc, &b| (acc << 1) | b as u8)).collect()
    }

    pub fn to_hex(&self) -> String {
        self.to_bytes().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Preamble plus payload.
    pub fn packet_duration_s(&self) -> f64 {
        PREAMBLE_DURATION_S + self.bits.len() as f64 * SYMBOL_PERIOD_S
    }

    pub fn packet_chips(&self) -> u32 {
        PREAMBLE_CHIPS + 2 * self.bits.len() as u32
    }
}

impl fmt::Display for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Chip occupancy of the whole packet (preamble + payload), straight from
/// the BPPM definition.
pub fn chip_encoding(payload: &Payload) -> Vec<bool> {
    let mut chips = vec![false; payload.packet_chips() as usize];
    for c in PREAMBLE_PULSE_CHIPS {
        chips[c as usize] = true;
    }
    for (i, &bit) in payload.bits().iter().enumerate() {
        let first = PREAMBLE_CHIPS as usize + 2 * i;
        chips[if bit { first } else { first + 1 }] = true;
    }
    chips
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PulseKind {
    TypeI,
    TypeII,
}

impl PulseKind {
    pub fn chips(self) -> u32 {
        match self {
            PulseKind::TypeI => 1,
            PulseKind::TypeII => 2,
        }
    }

    pub fn duration_s(self) -> f64 {
        self.chips() as f64 * CHIP_PERIOD_S
    }
}

/// One nominal pulse; its start is held as a chip index so it is always an
/// exact multiple of the chip period.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PulseDescriptor {
    pub kind: PulseKind,
    pub start_chip: u32,
}

impl PulseDescriptor {
    pub fn nominal_start_s(&self) -> f64 {
        self.start_chip as f64 * CHIP_PERIOD_S
    }

    pub fn nominal_duration_s(&self) -> f64 {
        self.kind.duration_s()
    }

    pub fn nominal_end_s(&self) -> f64 {
        (self.start_chip + self.kind.chips()) as f64 * CHIP_PERIOD_S
    }

    pub fn end_chip(&self) -> u32 {
        self.start_chip + self.kind.chips()
    }
}

/// Pulses of one packet in time order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PulseSequence {
    pulses: Vec<PulseDescriptor>,
}

impl PulseSequence {
    pub fn new(pulses: Vec<PulseDescriptor>) -> Result<Self> {
        if pulses.is_empty() {
            return Err(Error::InvalidParameter("empty pulse sequence".into()));
        }
        if let Some(w) = pulses.windows(2).find(|w| w[1].start_chip < w[0].end_chip()) {
            return Err(Error::InvalidParameter(format!(
                "pulses overlap or are out of order at chip {}",
                w[1].start_chip
            )));
        }
        Ok(Self { pulses })
    }

    /// The four preamble pulses alone.
    pub fn preamble() -> Self {
        Self {
            pulses: PREAMBLE_PULSE_CHIPS
                .iter()
                .map(|&c| PulseDescriptor { kind: PulseKind::TypeI, start_chip: c })
                .collect(),
        }
    }

    pub fn pulses(&self) -> &[PulseDescriptor] {
        &self.pulses
    }

    /// K, the number of pulses.
    pub fn len(&self) -> usize {
        self.pulses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pulses.is_empty()
    }

    pub fn count(&self, kind: PulseKind) -> usize {
        self.pulses.iter().filter(|p| p.kind == kind).count()
    }

    /// Chip just past the last pulse.
    pub fn end_chip(&self) -> u32 {
        self.pulses.last().map_or(0, |p| p.end_chip())
    }

    /// Keeps only the pulses that end at or before `chip`.
    pub fn truncated(&self, chip: u32) -> Self {
        Self { pulses: self.pulses.iter().copied().filter(|p| p.end_chip() <= chip).collect() }
    }

    /// Chip occupancy over `chips` chips.
    pub fn chip_occupancy(&self, chips: usize) -> Vec<bool> {
        let mut out = vec![false; chips];
        for p in &self.pulses {
            for c in p.start_chip..p.end_chip() {
                out[c as usize] = true;
            }
        }
        out
    }
}

/// Pulses of a packet: the preamble followed by the BPPM payload pulses.
pub fn extract_pulses(payload: &Payload) -> PulseSequence {
    let mut pulses = PulseSequence::preamble().pulses;
    pulses.reserve(payload.len());
    let mut prev_bit = None;
    for (i, &bit) in payload.bits().iter().enumerate() {
        let symbol_chip = PREAMBLE_CHIPS + 2 * i as u32;
        if bit {
            if prev_bit == Some(false) {
                // "01": the previous bit's second-chip pulse runs straight
                // into this bit's first chip
                let last = pulses.last_mut().expect("a 0 bit always leaves a pulse");
                last.kind = PulseKind::TypeII;
            } else {
                pulses.push(PulseDescriptor { kind: PulseKind::TypeI, start_chip: symbol_chip });
            }
        } else {
            pulses.push(PulseDescriptor { kind: PulseKind::TypeI, start_chip: symbol_chip + 1 });
        }
        prev_bit = Some(bit);
    }
    PulseSequence { pulses }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ShapeVariant {
    Rectangular,
    Smoothed,
}

/// Nominal pulse shape on the upsampled grid. Sample `i` sits at time
/// `(i - origin + phase) / rate_hz` relative to the pulse's nominal start.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseShape {
    pub kind: PulseKind,
    pub variant: ShapeVariant,
    pub samples: Vec<f64>,
    pub origin: usize,
    pub phase: f64,
    pub rate_hz: f64,
}

impl PulseShape {
    /// Offset (seconds) of the shape's apex from the pulse's nominal start.
    pub fn peak_offset_s(&self) -> f64 {
        0.5 * self.kind.duration_s()
    }
}

fn check_grid(n: usize, fs: f64) -> Result<()> {
    if n == 0 || !(fs > 0.0) {
        return Err(Error::InvalidParameter(format!("upsampling factor {n}, sample rate {fs} Hz")));
    }
    Ok(())
}

/// The nominal pulse shape of `kind` sampled at `n * fs`.
pub fn build_pulse_shape(kind: PulseKind, variant: ShapeVariant, n: usize, fs: f64) -> Result<PulseShape> {
    build_pulse_shape_at_phase(kind, variant, n, fs, 0.0)
}

/// Like [`build_pulse_shape`] but with the grid displaced by `phase`
/// (fraction of a grid step, in `[0, 1)`) so that pulses whose nominal start
/// falls between grid points can be placed exactly.
pub fn build_pulse_shape_at_phase(kind: PulseKind, variant: ShapeVariant, n: usize, fs: f64, phase: f64) -> Result<PulseShape> {
    check_grid(n, fs)?;
    let rate = n as f64 * fs;
    match variant {
        ShapeVariant::Rectangular => {
            let span = grid_span(-phase / rate, kind.duration_s() - phase / rate, rate);
            let len = (span.end() - span.start() + 1).max(0) as usize;
            Ok(PulseShape {
                kind,
                variant,
                samples: vec![1.0; len],
                origin: (-span.start()) as usize,
                phase,
                rate_hz: rate,
            })
        }
        ShapeVariant::Smoothed => {
            let filter = smoothing_filter(fs)?;
            let pulse = [Trapezoid {
                start: 0.0,
                end: kind.duration_s(),
                rise: NOMINAL_EDGE_S,
                decay: NOMINAL_EDGE_S,
                amplitude: 1.0,
            }];
            let at = |i: i64| filter.response_at(&pulse, (i as f64 + phase) / rate);
            let centre = grid_floor(0.5 * kind.duration_s() * rate);
            let peak = at(centre).max(at(centre + 1));
            let threshold = SMOOTHED_TRUNCATION * peak;
            // walk outwards from the apex to the first sample below threshold
            let mut lo = centre;
            while at(lo) >= threshold {
                lo -= 1;
            }
            let mut hi = centre + 1;
            while at(hi) >= threshold {
                hi += 1;
            }
            let raw: Vec<f64> = (lo..=hi).map(at).collect();
            let max = raw.iter().cloned().fold(f64::MIN, f64::max);
            Ok(PulseShape {
                kind,
                variant,
                samples: raw.iter().map(|v| v / max).collect(),
                origin: (-lo) as usize,
                phase,
                rate_hz: rate,
            })
        }
    }
}

/// The front-end filter used for smoothed shapes at sample rate `fs`
/// (two-sided passband equal to `fs`).
fn smoothing_filter(fs: f64) -> Result<Arc<LowPass>> {
    static CACHE: Mutex<Vec<(u64, Arc<LowPass>)>> = Mutex::new(Vec::new());
    let key = fs.to_bits();
    let mut cache = CACHE.lock().expect("filter cache poisoned");
    if let Some((_, f)) = cache.iter().find(|(k, _)| *k == key) {
        return Ok(f.clone());
    }
    let f = Arc::new(LowPass::front_end(fs, fs * SIM_OVERSAMPLING as f64)?);
    cache.push((key, f.clone()));
    Ok(f)
}

/// Amplitude template of a whole pulse sequence on the upsampled grid.
/// Sample `i` sits at `(i - origin) / rate_hz` relative to the packet start.
#[derive(Debug, Clone, PartialEq)]
pub struct PacketTemplate {
    pub samples: Vec<f64>,
    pub origin: usize,
    pub rate_hz: f64,
}

impl PacketTemplate {
    /// Maximal runs of non-zero samples, as `(start, len)`.
    pub fn runs(&self) -> Vec<(usize, usize)> {
        let mut runs = Vec::new();
        let mut i = 0;
        while i < self.samples.len() {
            if self.samples[i] != 0.0 {
                let s = i;
                while i < self.samples.len() && self.samples[i] != 0.0 {
                    i += 1;
                }
                runs.push((s, i - s));
            } else {
                i += 1;
            }
        }
        runs
    }
}

/// Caches pulse shapes per (kind, variant, grid phase) for one grid.
#[derive(Debug, Default)]
pub struct ShapeBank {
    n: usize,
    fs: f64,
    shapes: HashMap<(PulseKind, ShapeVariant, u64), Arc<PulseShape>>,
}

impl ShapeBank {
    pub fn new(n: usize, fs: f64) -> Result<Self> {
        check_grid(n, fs)?;
        Ok(Self { n, fs, shapes: HashMap::new() })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn rate_hz(&self) -> f64 {
        self.n as f64 * self.fs
    }

    pub fn shape(&mut self, kind: PulseKind, variant: ShapeVariant) -> Arc<PulseShape> {
        self.shape_at_phase(kind, variant, 0.0)
    }

    pub fn shape_at_phase(&mut self, kind: PulseKind, variant: ShapeVariant, phase: f64) -> Arc<PulseShape> {
        // phases repeat with the chip pattern; 1e-6 of a step is far below
        // anything that matters
        let q = (phase * 1e6).round() as u64;
        let (n, fs) = (self.n, self.fs);
        self.shapes
            .entry((kind, variant, q))
            .or_insert_with(|| Arc::new(build_pulse_shape_at_phase(kind, variant, n, fs, q as f64 * 1e-6).expect("grid validated")))
            .clone()
    }

    /// Packet template with every pulse at its nominal time. Rectangular
    /// pulses follow the grid rounding rule; smoothed pulses are summed and
    /// the sum clamped to the per-pulse peak of 1.
    pub fn packet_template(&mut self, pulses: &PulseSequence, variant: ShapeVariant) -> PacketTemplate {
        let rate = self.rate_hz();
        let end_s = pulses.end_chip() as f64 * CHIP_PERIOD_S;
        match variant {
            ShapeVariant::Rectangular => {
                let len = grid_ceil(end_s * rate).max(0) as usize;
                let mut samples = vec![0.0; len];
                for p in pulses.pulses() {
                    for i in grid_span(p.nominal_start_s(), p.nominal_end_s(), rate) {
                        samples[i as usize] = 1.0;
                    }
                }
                PacketTemplate { samples, origin: 0, rate_hz: rate }
            }
            ShapeVariant::Smoothed => {
                let placed: Vec<(i64, Arc<PulseShape>)> = pulses
                    .pulses()
                    .iter()
                    .map(|p| {
                        let pos = p.nominal_start_s() * rate;
                        let base = grid_floor(pos);
                        // grid point `base + j` sits `j - frac` steps after the start
                        let frac = (pos - base as f64).clamp(0.0, 1.0 - 1e-7);
                        let phase = if frac < 1e-6 { 0.0 } else { 1.0 - frac };
                        let shift = if frac < 1e-6 { base } else { base + 1 };
                        let shape = self.shape_at_phase(p.kind, ShapeVariant::Smoothed, phase);
                        (shift - shape.origin as i64, shape)
                    })
                    .collect();
                let first = placed.iter().map(|(s, _)| *s).min().unwrap_or(0);
                let last = placed.iter().map(|(s, sh)| s + sh.samples.len() as i64).max().unwrap_or(0);
                let mut samples = vec![0.0; (last - first) as usize];
                for (s, sh) in &placed {
                    let off = (s - first) as usize;
                    for (dst, v) in samples[off..off + sh.samples.len()].iter_mut().zip(&sh.samples) {
                        *dst += v;
                    }
                }
                samples.iter_mut().for_each(|v| *v = v.min(1.0));
                PacketTemplate { samples, origin: (-first) as usize, rate_hz: rate }
            }
        }
    }
}

/// Convenience wrapper around [`ShapeBank::packet_template`].
pub fn build_packet_template(pulses: &PulseSequence, variant: ShapeVariant, n: usize, fs: f64) -> Result<PacketTemplate> {
    Ok(ShapeBank::new(n, fs)?.packet_template(pulses, variant))
}
