//! TOA estimators and per-packet signal metrics.
//!
//! Every estimator works on the magnitude of an upsampled window and returns
//! the receiver-clock time of the packet's nominal start (the 50 % point of
//! the first preamble pulse's leading edge).
//!
//! Per-pulse methods combine individual pulse positions as
//! `t = tau_1 + mean_{k >= 2}((tau_k - tau_1) - nominal_k)`, so a common
//! shift of all pulses moves the result by exactly that shift while
//! independent per-pulse errors average out.

use crate::correlate::{self, argmax_plateau, PLATEAU_TOL};
use crate::iq::SampleWindow;
use crate::resample::{upsample, UpsampledWindow};
use crate::signal_model::{
    grid_span, Payload, PacketTemplate, PulseKind, PulseSequence, PulseShape, ShapeBank, ShapeVariant, PREAMBLE_CHIPS,
};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

/// Half-width of the per-pulse search window.
pub const PULSE_SEARCH_S: f64 = 0.25e-6;
/// Half-width of the packet-level search around the coarse timestamp.
pub const PACKET_SEARCH_S: f64 = 1.0e-6;
/// Pulse shifts beyond this mean the pulse was mis-associated.
pub const MAX_PULSE_SHIFT_S: f64 = 0.5e-6;
/// Fraction of excluded pulses above which an estimate is unreliable.
pub const MAX_EXCLUDED_FRACTION: f64 = 0.25;
/// Upsampling factor of the partial-template method.
pub const PARTIAL_N: usize = 25;
/// Upsampling factor used for the signal-strength metrics, so that gamma
/// does not depend on the estimator's factor.
pub const METRICS_N: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    Legacy,
    CorrPacketR,
    CorrPacketS,
    CorrPartial,
    CorrPulseR,
    CorrPulseS,
    PeakPulse,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Legacy,
        Method::CorrPacketR,
        Method::CorrPacketS,
        Method::CorrPartial,
        Method::CorrPulseR,
        Method::CorrPulseS,
        Method::PeakPulse,
    ];

    pub fn cli_name(self) -> &'static str {
        match self {
            Method::Legacy => "legacy",
            Method::CorrPacketR => "corr_packet_r",
            Method::CorrPacketS => "corr_packet_s",
            Method::CorrPartial => "corr_partial",
            Method::CorrPulseR => "corr_pulse_r",
            Method::CorrPulseS => "corr_pulse_s",
            Method::PeakPulse => "peak_pulse",
        }
    }

    /// The factor a method runs at regardless of the requested one.
    pub fn fixed_n(self) -> Option<usize> {
        match self {
            Method::Legacy => Some(1),
            Method::CorrPartial => Some(PARTIAL_N),
            _ => None,
        }
    }

    pub fn effective_n(self, requested: usize) -> usize {
        self.fixed_n().unwrap_or(requested)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Method::Legacy => "Legacy",
            Method::CorrPacketR => "CorrPacketR",
            Method::CorrPacketS => "CorrPacketS",
            Method::CorrPartial => "CorrPartial",
            Method::CorrPulseR => "CorrPulseR",
            Method::CorrPulseS => "CorrPulseS",
            Method::PeakPulse => "PeakPulse",
        };
        f.write_str(s)
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.cli_name() == s || m.to_string() == s).ok_or_else(|| {
            let names: Vec<_> = Method::ALL.iter().map(|m| m.cli_name()).collect();
            Error::InvalidParameter(format!("unknown method `{s}`; valid methods: {}", names.join(", ")))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub gamma: f64,
    pub beta: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToaEstimate {
    pub toa_s: f64,
    pub method: Method,
    pub n: usize,
    pub pulses_used: usize,
    pub gamma: f64,
    pub beta: usize,
    /// Correlation peak on the search boundary, or too many pulses excluded.
    pub unreliable: bool,
    pub excluded: usize,
}

impl ToaEstimate {
    pub fn with_metrics(mut self, m: Metrics) -> Self {
        self.gamma = m.gamma;
        self.beta = m.beta;
        self
    }

    pub fn flags(&self) -> Vec<String> {
        let mut f = Vec::new();
        if self.unreliable {
            f.push("unreliable".to_string());
        }
        if self.excluded > 0 {
            f.push(format!("excluded_pulses={}", self.excluded));
        }
        f
    }
}

/// Estimated positions and shifts of individual pulses, all relative to the
/// window origin.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseShiftSet {
    pub tau_hat_1: f64,
    pub shifts: Vec<f64>,
}

/// Combines estimated pulse starts with their nominal offsets from the packet
/// start. `None` entries (pulse not found) are skipped; the first found pulse
/// serves as the reference. Returns the packet start, the number of pulses
/// used and the number excluded.
pub fn combine_pulses(estimated: &[Option<f64>], nominal: &[f64]) -> Option<(f64, usize, usize)> {
    let found: Vec<(f64, f64)> = estimated.iter().zip(nominal).filter_map(|(e, &n)| e.map(|e| (e, n))).collect();
    let (tau_1, nom_1) = *found.first()?;
    let shifts: Vec<f64> = found[1..]
        .iter()
        .map(|&(t, n)| (t - tau_1) - (n - nom_1))
        .filter(|s| s.abs() <= MAX_PULSE_SHIFT_S)
        .collect();
    let used = 1 + shifts.len();
    let excluded = estimated.len() - used;
    let mean = if shifts.is_empty() { 0.0 } else { shifts.iter().sum::<f64>() / shifts.len() as f64 };
    Some((tau_1 - nom_1 + mean, used, excluded))
}

/// A pulse shape plus the offset between its correlation peak and the
/// pulse's nominal start.
#[derive(Debug, Clone)]
struct Matched {
    shape: Arc<PulseShape>,
    /// Centroid of the sampled shape minus the nominal pulse centre, seconds.
    skew_s: f64,
}

impl Matched {
    fn new(shape: Arc<PulseShape>) -> Self {
        let rate = shape.rate_hz;
        let mass: f64 = shape.samples.iter().sum();
        let c: f64 = shape.samples.iter().enumerate().map(|(i, v)| v * (i as f64 - shape.origin as f64 + shape.phase)).sum::<f64>() / mass;
        let skew_s = c / rate - shape.peak_offset_s();
        Self { shape, skew_s }
    }
}

/// Estimators for one upsampling grid. Cheap to share between threads.
#[derive(Debug)]
pub struct Estimators {
    n: usize,
    fs: f64,
    bank: Mutex<ShapeBank>,
    shapes: HashMap<(PulseKind, ShapeVariant), Matched>,
    parabolic: bool,
}

/// A window prepared for estimation.
struct Prepared<'a> {
    w: &'a UpsampledWindow,
    mag: Vec<f64>,
    prefix: Vec<f64>,
}

impl<'a> Prepared<'a> {
    fn new(w: &'a UpsampledWindow) -> Self {
        let mag = w.magnitude();
        let prefix = correlate::prefix_sums(&mag);
        Self { w, mag, prefix }
    }
}

/// Search result on the upsampled grid.
struct Peak {
    index: usize,
    /// Sub-grid offset of the fitted vertex; zero unless refinement is on.
    offset: f64,
    on_boundary: bool,
}

impl Peak {
    fn position(&self) -> f64 {
        self.index as f64 + self.offset
    }
}

fn pick(values: &[f64], parabolic: bool) -> Option<Peak> {
    let index = argmax_plateau(values, PLATEAU_TOL)?;
    let on_boundary = index == 0 || index + 1 == values.len();
    let offset = if parabolic && !on_boundary { parabola_vertex(values[index - 1], values[index], values[index + 1]) } else { 0.0 };
    Some(Peak { index, offset, on_boundary })
}

/// Vertex of the parabola through three equally spaced samples, relative to
/// the middle one and clamped to half a step.
pub fn parabola_vertex(left: f64, mid: f64, right: f64) -> f64 {
    let curvature = left - 2.0 * mid + right;
    if curvature >= 0.0 {
        return 0.0;
    }
    (0.5 * (left - right) / curvature).clamp(-0.5, 0.5)
}

impl Estimators {
    pub fn new(n: usize, fs: f64) -> Result<Self> {
        let mut bank = ShapeBank::new(n, fs)?;
        let mut shapes = HashMap::new();
        for kind in [PulseKind::TypeI, PulseKind::TypeII] {
            for variant in [ShapeVariant::Rectangular, ShapeVariant::Smoothed] {
                shapes.insert((kind, variant), Matched::new(bank.shape(kind, variant)));
            }
        }
        Ok(Self { n, fs, bank: Mutex::new(bank), shapes, parabolic: false })
    }

    /// Refines every grid argmax with a parabola through its neighbours.
    /// Off by default: the estimators resolve time to the grid only.
    pub fn with_parabolic_refinement(mut self, on: bool) -> Self {
        self.parabolic = on;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rate_hz(&self) -> f64 {
        self.n as f64 * self.fs
    }

    fn check(&self, w: &UpsampledWindow) -> Result<()> {
        if w.n != self.n || (w.fs - self.fs).abs() > 1e-9 * self.fs {
            return Err(Error::InvalidParameter(format!(
                "window at N = {}, {} Hz given to estimators for N = {}, {} Hz",
                w.n, w.fs, self.n, self.fs
            )));
        }
        Ok(())
    }

    fn template(&self, pulses: &PulseSequence, variant: ShapeVariant) -> PacketTemplate {
        self.bank.lock().expect("shape bank poisoned").packet_template(pulses, variant)
    }

    /// Offset in upsamples between the template's correlation peak and the
    /// packet start implied by its origin.
    fn template_skew(&self, template: &PacketTemplate, pulses: &PulseSequence, variant: ShapeVariant) -> f64 {
        let rate = self.rate_hz();
        let (mut m, mut c) = (0.0, 0.0);
        for (i, v) in template.samples.iter().enumerate() {
            m += v;
            c += v * (i as f64 - template.origin as f64);
        }
        let (mut nm, mut nc) = (0.0, 0.0);
        for p in pulses.pulses() {
            let mass = match variant {
                ShapeVariant::Rectangular => {
                    let s = grid_span(p.nominal_start_s(), p.nominal_end_s(), rate);
                    (s.end() - s.start() + 1).max(0) as f64
                }
                ShapeVariant::Smoothed => self.shapes[&(p.kind, variant)].shape.samples.iter().sum(),
            };
            nm += mass;
            nc += mass * (p.nominal_start_s() + 0.5 * p.nominal_duration_s()) * rate;
        }
        if m == 0.0 || nm == 0.0 {
            0.0
        } else {
            c / m - nc / nm
        }
    }

    /// Packet start (upsample index) from correlation with a whole or
    /// partial packet template around the coarse position.
    fn packet_search(&self, p: &Prepared, pulses: &PulseSequence, variant: ShapeVariant, use_fft: bool) -> Option<(f64, bool)> {
        let template = self.template(pulses, variant);
        let reach = (PACKET_SEARCH_S * self.rate_hz()).ceil() as i64;
        let centre = p.w.leading_index as i64 - template.origin as i64;
        let lags = centre - reach..centre + reach + 1;
        let corr = match (variant, use_fft) {
            (ShapeVariant::Rectangular, false) => correlate::runs(&p.prefix, &template.runs(), lags.clone()),
            _ => correlate::fft(&p.mag, &template.samples, lags.clone()),
        };
        let peak = pick(&corr, self.parabolic)?;
        let lag = lags.start as f64 + peak.position();
        let skew = self.template_skew(&template, pulses, variant);
        Some((lag + template.origin as f64 + skew, peak.on_boundary))
    }

    /// Refined packet start from the preamble alone; used to place the
    /// per-pulse search windows.
    fn reference(&self, p: &Prepared) -> Option<f64> {
        self.packet_search(p, &PulseSequence::preamble(), ShapeVariant::Rectangular, false).map(|(r, _)| r)
    }

    fn estimate(&self, w: &UpsampledWindow, method: Method, start_index: f64, used: usize, unreliable: bool, excluded: usize) -> ToaEstimate {
        ToaEstimate {
            toa_s: w.time_of(start_index),
            method,
            n: w.n,
            pulses_used: used,
            gamma: 0.0,
            beta: 0,
            unreliable,
            excluded,
        }
    }

    fn failed(&self, w: &UpsampledWindow, method: Method, k: usize) -> ToaEstimate {
        self.estimate(w, method, w.leading_index as f64, 0, true, k)
    }

    /// Whole-packet template correlation.
    pub fn corr_packet(&self, w: &UpsampledWindow, payload: &Payload, variant: ShapeVariant) -> Result<ToaEstimate> {
        self.check(w)?;
        let method = if variant == ShapeVariant::Rectangular { Method::CorrPacketR } else { Method::CorrPacketS };
        let pulses = crate::signal_model::extract_pulses(payload);
        let p = Prepared::new(w);
        let k = pulses.len();
        Ok(match self.packet_search(&p, &pulses, variant, false) {
            Some((start, boundary)) => self.estimate(w, method, start, k, boundary, 0),
            None => self.failed(w, method, k),
        })
    }

    /// Correlation with the preamble plus the first quarter of the payload,
    /// rectangular pulses, computed in the frequency domain.
    pub fn corr_partial(&self, w: &UpsampledWindow, payload: &Payload) -> Result<ToaEstimate> {
        self.check(w)?;
        if w.n != PARTIAL_N {
            return Err(Error::InvalidParameter(format!("the partial-template method runs at N = {PARTIAL_N}, not {}", w.n)));
        }
        let pulses = partial_pulses(payload);
        let p = Prepared::new(w);
        let k = pulses.len();
        Ok(match self.packet_search(&p, &pulses, ShapeVariant::Rectangular, true) {
            Some((start, boundary)) => self.estimate(w, Method::CorrPartial, start, k, boundary, 0),
            None => self.failed(w, Method::CorrPartial, k),
        })
    }

    /// Per-pulse correlation with the nominal pulse shapes.
    pub fn corr_pulse(&self, w: &UpsampledWindow, payload: &Payload, variant: ShapeVariant) -> Result<ToaEstimate> {
        self.check(w)?;
        let method = if variant == ShapeVariant::Rectangular { Method::CorrPulseR } else { Method::CorrPulseS };
        let pulses = crate::signal_model::extract_pulses(payload);
        let p = Prepared::new(w);
        let Some(reference) = self.reference(&p) else {
            return Ok(self.failed(w, method, pulses.len()));
        };
        let rate = self.rate_hz();
        let reach = PULSE_SEARCH_S * rate;
        let mut est = Vec::with_capacity(pulses.len());
        let mut nominal = Vec::with_capacity(pulses.len());
        for d in pulses.pulses() {
            let m = &self.shapes[&(d.kind, variant)];
            let start = reference + d.nominal_start_s() * rate;
            let origin = m.shape.origin as f64;
            let lags = (start - reach - origin).ceil() as i64..(start + reach - origin).floor() as i64 + 1;
            let corr = match variant {
                ShapeVariant::Rectangular => correlate::runs(&p.prefix, &[(0, m.shape.samples.len())], lags.clone()),
                ShapeVariant::Smoothed => correlate::direct(&p.mag, &m.shape.samples, lags.clone()),
            };
            nominal.push(d.nominal_start_s());
            est.push(pick(&corr, self.parabolic).filter(|pk| !pk.on_boundary).map(|pk| {
                let j = lags.start as f64 + pk.position() + origin - m.shape.phase;
                j / rate + m.skew_s
            }));
        }
        Ok(self.finish(w, method, &est, &nominal))
    }

    /// Per-pulse apex picking over Type-I pulses.
    pub fn peak_pulse(&self, w: &UpsampledWindow, payload: &Payload) -> Result<ToaEstimate> {
        self.check(w)?;
        let pulses = crate::signal_model::extract_pulses(payload);
        let p = Prepared::new(w);
        let type1: Vec<_> = pulses.pulses().iter().filter(|d| d.kind == PulseKind::TypeI).collect();
        let Some(reference) = self.reference(&p) else {
            return Ok(self.failed(w, Method::PeakPulse, type1.len()));
        };
        let rate = self.rate_hz();
        let reach = PULSE_SEARCH_S * rate;
        let mut est = Vec::with_capacity(type1.len());
        let mut nominal = Vec::with_capacity(type1.len());
        for d in type1 {
            let half = 0.5 * d.nominal_duration_s();
            let centre = reference + (d.nominal_start_s() + half) * rate;
            let lo = (centre - reach).ceil().max(0.0) as usize;
            let hi = ((centre + reach).floor() as usize + 1).min(p.mag.len());
            nominal.push(d.nominal_start_s());
            est.push(if lo >= hi { None } else { pick(&p.mag[lo..hi], self.parabolic) }
                .filter(|pk| !pk.on_boundary)
                .map(|pk| (lo as f64 + pk.position()) / rate - half));
        }
        Ok(self.finish(w, Method::PeakPulse, &est, &nominal))
    }

    fn finish(&self, w: &UpsampledWindow, method: Method, est: &[Option<f64>], nominal: &[f64]) -> ToaEstimate {
        match combine_pulses(est, nominal) {
            Some((t, used, excluded)) => {
                let unreliable = excluded as f64 > MAX_EXCLUDED_FRACTION * est.len() as f64;
                ToaEstimate {
                    toa_s: w.origin_time_s + t,
                    method,
                    n: w.n,
                    pulses_used: used,
                    gamma: 0.0,
                    beta: 0,
                    unreliable,
                    excluded,
                }
            }
            None => self.failed(w, method, est.len()),
        }
    }

    /// Dispatches on `method`. The window must be at this grid's factor; use
    /// [`legacy`] for the legacy timestamp.
    pub fn run(&self, method: Method, w: &UpsampledWindow, payload: &Payload) -> Result<ToaEstimate> {
        match method {
            Method::Legacy => Ok(legacy(w)),
            Method::CorrPacketR => self.corr_packet(w, payload, ShapeVariant::Rectangular),
            Method::CorrPacketS => self.corr_packet(w, payload, ShapeVariant::Smoothed),
            Method::CorrPartial => self.corr_partial(w, payload),
            Method::CorrPulseR => self.corr_pulse(w, payload, ShapeVariant::Rectangular),
            Method::CorrPulseS => self.corr_pulse(w, payload, ShapeVariant::Smoothed),
            Method::PeakPulse => self.peak_pulse(w, payload),
        }
    }
}

/// The preamble plus the first quarter (rounded up) of the payload symbols.
pub fn partial_pulses(payload: &Payload) -> PulseSequence {
    let symbols = payload.len().div_ceil(4) as u32;
    crate::signal_model::extract_pulses(payload).truncated(PREAMBLE_CHIPS + 2 * symbols)
}

/// The leading sample's time, as reported by the legacy receiver.
pub fn legacy(w: &UpsampledWindow) -> ToaEstimate {
    ToaEstimate {
        toa_s: w.time_of(w.leading_index as f64),
        method: Method::Legacy,
        n: 1,
        pulses_used: 0,
        gamma: 0.0,
        beta: 0,
        unreliable: false,
        excluded: 0,
    }
}

/// Signal strength `gamma` (mean squared pulse peak, full scale = 1) and
/// clipping count `beta` (pulses with a saturated native sample). Computed
/// on a fixed `METRICS_N` grid.
pub fn packet_metrics(window: &SampleWindow, payload: &Payload) -> Result<Metrics> {
    let up = upsample(window, METRICS_N)?;
    let est = metrics_estimators(window.sample_rate_hz)?;
    let p = Prepared::new(&up);
    let pulses = crate::signal_model::extract_pulses(payload);
    let reference = est.reference(&p).unwrap_or(up.leading_index as f64);
    let rate = up.rate_hz;
    let fs = window.sample_rate_hz;
    let mut sum_sq = 0.0;
    let mut beta = 0;
    for d in pulses.pulses() {
        let a = reference + d.nominal_start_s() * rate;
        let b = reference + d.nominal_end_s() * rate;
        let lo = (a.ceil().max(0.0) as usize).min(p.mag.len());
        let hi = ((b.ceil().max(0.0)) as usize).min(p.mag.len());
        let peak = p.mag[lo..hi].iter().cloned().fold(0.0, f64::max);
        sum_sq += peak * peak;
        let t0 = reference / rate;
        let native = grid_span(t0 + d.nominal_start_s(), t0 + d.nominal_end_s(), fs);
        let clipped = native.filter(|&i| i >= 0 && (i as usize) < window.len()).any(|i| window.saturated[i as usize]);
        beta += clipped as usize;
    }
    Ok(Metrics { gamma: sum_sq / pulses.len() as f64, beta })
}

fn metrics_estimators(fs: f64) -> Result<Arc<Estimators>> {
    static CACHE: Mutex<Vec<(u64, Arc<Estimators>)>> = Mutex::new(Vec::new());
    let mut cache = CACHE.lock().expect("estimator cache poisoned");
    if let Some((_, e)) = cache.iter().find(|(k, _)| *k == fs.to_bits()) {
        return Ok(e.clone());
    }
    let e = Arc::new(Estimators::new(METRICS_N, fs)?);
    cache.push((fs.to_bits(), e.clone()));
    Ok(e)
}

/// Serialized TOA estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToaRecord {
    pub receiver_id: u32,
    pub packet_index: usize,
    pub method: Method,
    #[serde(rename = "N")]
    pub n: usize,
    /// Seconds, rounded to 0.01 ns.
    pub toa_s: f64,
    pub gamma: f64,
    pub beta: usize,
    pub pulses_used: usize,
    pub flags: Vec<String>,
    pub payload_hex: String,
    pub coarse_timestamp_s: f64,
}

/// Rounds seconds to a 0.01 ns grid.
pub fn round_toa(t: f64) -> f64 {
    (t * 1e11).round() / 1e11
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.cli_name().parse::<Method>().unwrap(), m);
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        let err = "corr_packet".parse::<Method>().unwrap_err().to_string();
        assert!(err.contains("peak_pulse"));
    }

    #[test]
    fn combine_equal_shifts() {
        let nominal = [0.0, 1e-6, 3.5e-6, 4.5e-6];
        let est: Vec<Option<f64>> = nominal.iter().map(|n| Some(2e-6 + n + 7e-9)).collect();
        let (t, used, excluded) = combine_pulses(&est, &nominal).unwrap();
        // tau_1 plus the common shift of the others relative to it (zero)
        assert!((t - (2e-6 + 7e-9)).abs() < 1e-18);
        assert_eq!((used, excluded), (4, 0));
    }

    #[test]
    fn combine_averages_relative_shifts() {
        let nominal = [0.0, 1e-6, 2e-6];
        let est = [Some(5e-6), Some(6e-6 + 4e-9), Some(7e-6 - 2e-9)];
        let (t, _, _) = combine_pulses(&est, &nominal).unwrap();
        assert!((t - (5e-6 + 1e-9)).abs() < 1e-18);
    }

    #[test]
    fn combine_excludes_outliers_and_missing() {
        let nominal = [0.0, 1e-6, 2e-6, 3e-6];
        let est = [Some(1e-6), None, Some(3e-6 + 0.6e-6), Some(4e-6)];
        let (t, used, excluded) = combine_pulses(&est, &nominal).unwrap();
        assert!((t - 1e-6).abs() < 1e-18);
        assert_eq!((used, excluded), (2, 2));
        assert!(combine_pulses(&[None, None], &[0.0, 1e-6]).is_none());
    }

    #[test]
    fn partial_template_spans_preamble_and_quarter() {
        let p = Payload::new(vec![true; 112]).unwrap();
        let s = partial_pulses(&p);
        assert_eq!(s.end_chip(), 16 + 2 * 27 + 1);
        let p = Payload::new(vec![false; 112]).unwrap();
        assert_eq!(partial_pulses(&p).end_chip(), 16 + 2 * 28);
    }

    #[test]
    fn rounding_grid() {
        assert_eq!(round_toa(1.234_567_890_123_4), 1.234_567_890_12);
    }
}
