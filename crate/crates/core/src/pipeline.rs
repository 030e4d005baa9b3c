//! Scenario files and the decode → estimate → evaluate chain.
//!
//! Scenario files are TOML. Every physical quantity carries its unit in the
//! key name:
//!
//! ```toml
//! [schedule]
//! kind = "poisson"          # or "explicit" with times_s = [...]
//! rate_hz = 1000.0
//! guard_us = 130.0
//! start_s = 0.001
//! packets = 10000           # and/or duration_s
//!
//! [payload]
//! kind = "random"           # or "explicit" with hex = [...]
//! long_fraction = 1.0
//!
//! [amplitude]
//! kind = "mixture"          # fixed | uniform | log_uniform | mixture
//! components = [
//!   { weight = 0.2, kind = "uniform", min = 0.10, max = 0.19 },
//!   { weight = 0.6, kind = "uniform", min = 0.45, max = 0.65 },
//! ]
//!
//! [impairments]
//! jitter_ns = 50.0
//! rise_time_max_ns = 50.0
//! decay_time_max_ns = 150.0
//! amplitude_variation_db = 2.0
//! jitter_distribution = "uniform"   # or "truncated_gaussian"
//!
//! [[receiver]]              # exactly two
//! sample_rate_hz = 2.4e6
//! adc_bits = 8              # 0 for an ideal, unquantized ADC
//! gain = 1.0
//! filter_passband_hz = 2.4e6
//! noise_sigma = 0.01
//! clock_poly_s = [0.0, 1e-6]        # offset, skew, drift, ...
//! clock_random_walk_s_per_sqrt_s = 0.0
//! ```

use crate::iq::{write_atomic, IqStream};
use crate::receiver::{detect_and_decode, DecodedPacket, ReceiverConfig};
use crate::resample::upsample;
use crate::signal_model::Payload;
use crate::synth::{
    AmplitudeModel, ClockModel, FrontEndParams, JitterDistribution, PayloadSource, ReceiverSetup, Scenario, Schedule,
    TxImpairments,
};
use crate::toa::{legacy, packet_metrics, round_toa, Estimators, Method, ToaEstimate, ToaRecord};
use crate::{Error, Result};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleConfig {
    Poisson {
        rate_hz: f64,
        #[serde(default = "default_guard_us")]
        guard_us: f64,
        #[serde(default)]
        start_s: f64,
        packets: Option<usize>,
        duration_s: Option<f64>,
    },
    Explicit {
        times_s: Vec<f64>,
    },
}

fn default_guard_us() -> f64 {
    130.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PayloadConfig {
    Random {
        #[serde(default = "one")]
        long_fraction: f64,
    },
    Explicit {
        hex: Vec<String>,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AmplitudeConfig {
    Fixed { value: f64 },
    Uniform { min: f64, max: f64 },
    LogUniform { min: f64, max: f64 },
    Mixture { components: Vec<WeightedAmplitude> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedAmplitude {
    pub weight: f64,
    #[serde(flatten)]
    pub amplitude: AmplitudeConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpairmentsConfig {
    #[serde(default = "default_jitter")]
    pub jitter_ns: f64,
    #[serde(default)]
    pub rise_time_max_ns: f64,
    #[serde(default)]
    pub decay_time_max_ns: f64,
    #[serde(default)]
    pub amplitude_variation_db: f64,
    #[serde(default)]
    pub jitter_distribution: JitterDistribution,
}

fn default_jitter() -> f64 {
    50.0
}

impl Default for ImpairmentsConfig {
    fn default() -> Self {
        Self {
            jitter_ns: default_jitter(),
            rise_time_max_ns: 0.0,
            decay_time_max_ns: 0.0,
            amplitude_variation_db: 0.0,
            jitter_distribution: JitterDistribution::Uniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReceiverConfigFile {
    #[serde(default = "default_fs")]
    pub sample_rate_hz: f64,
    #[serde(default = "default_bits")]
    pub adc_bits: u32,
    #[serde(default = "one")]
    pub gain: f64,
    #[serde(default = "default_fs")]
    pub filter_passband_hz: f64,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub clock_poly_s: Vec<f64>,
    #[serde(default)]
    pub clock_random_walk_s_per_sqrt_s: f64,
}

fn default_fs() -> f64 {
    2.4e6
}

fn default_bits() -> u32 {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schedule: ScheduleConfig,
    pub payload: PayloadConfig,
    pub amplitude: AmplitudeConfig,
    #[serde(default)]
    pub impairments: ImpairmentsConfig,
    pub receiver: Vec<ReceiverConfigFile>,
}

impl AmplitudeConfig {
    fn model(&self) -> Result<AmplitudeModel> {
        Ok(match self {
            AmplitudeConfig::Fixed { value } => AmplitudeModel::Fixed(*value),
            AmplitudeConfig::Uniform { min, max } => AmplitudeModel::Uniform { min: *min, max: *max },
            AmplitudeConfig::LogUniform { min, max } => AmplitudeModel::LogUniform { min: *min, max: *max },
            AmplitudeConfig::Mixture { components } => {
                let mut parts = Vec::new();
                for c in components {
                    if matches!(c.amplitude, AmplitudeConfig::Mixture { .. }) {
                        return Err(Error::InvalidScenario("amplitude mixtures cannot nest".into()));
                    }
                    parts.push((c.weight, c.amplitude.model()?));
                }
                AmplitudeModel::Mixture(parts)
            }
        })
    }
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidScenario(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let at = |e: &dyn std::fmt::Display| Error::InvalidScenario(format!("{}: {e}", path.display()));
        let text = std::fs::read_to_string(path).map_err(|e| at(&e))?;
        toml::from_str(&text).map_err(|e| at(&e))
    }

    pub fn scenario(&self) -> Result<Scenario> {
        let schedule = match &self.schedule {
            ScheduleConfig::Poisson { rate_hz, guard_us, start_s, packets, duration_s } => Schedule::Poisson {
                rate_hz: *rate_hz,
                guard_s: guard_us * 1e-6,
                start_s: *start_s,
                packets: *packets,
                duration_s: *duration_s,
            },
            ScheduleConfig::Explicit { times_s } => {
                if times_s.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::InvalidScenario("explicit packet times must be strictly increasing".into()));
                }
                Schedule::Explicit(times_s.clone())
            }
        };
        let payloads = match &self.payload {
            PayloadConfig::Random { long_fraction } => PayloadSource::Random { long_fraction: *long_fraction },
            PayloadConfig::Explicit { hex } => {
                if hex.is_empty() {
                    return Err(Error::InvalidScenario("explicit payload list is empty".into()));
                }
                PayloadSource::Explicit(hex.iter().map(|h| Payload::from_hex(h)).collect::<Result<_>>()?)
            }
        };
        let imp = &self.impairments;
        let impairments = TxImpairments {
            jitter_bound_s: imp.jitter_ns * 1e-9,
            rise_time_max_s: imp.rise_time_max_ns * 1e-9,
            decay_time_max_s: imp.decay_time_max_ns * 1e-9,
            amplitude_variation_db: imp.amplitude_variation_db,
            jitter_distribution: imp.jitter_distribution,
        };
        impairments.validate().map_err(|e| Error::InvalidScenario(e.to_string()))?;
        if self.receiver.len() != 2 {
            return Err(Error::InvalidScenario(format!("expected two [[receiver]] tables, found {}", self.receiver.len())));
        }
        let rx: Vec<ReceiverSetup> = self
            .receiver
            .iter()
            .map(|r| {
                let front_end = FrontEndParams {
                    sample_rate_hz: r.sample_rate_hz,
                    adc_bits: (r.adc_bits != 0).then_some(r.adc_bits),
                    gain: r.gain,
                    filter_passband_hz: r.filter_passband_hz,
                    noise_sigma: r.noise_sigma,
                };
                front_end.validate().map_err(|e| Error::InvalidScenario(e.to_string()))?;
                let clock = ClockModel {
                    poly_s: if r.clock_poly_s.is_empty() { vec![0.0] } else { r.clock_poly_s.clone() },
                    random_walk_sigma: r.clock_random_walk_s_per_sqrt_s,
                };
                Ok(ReceiverSetup { front_end, clock })
            })
            .collect::<Result<_>>()?;
        Ok(Scenario {
            schedule,
            payloads,
            amplitude: self.amplitude.model()?,
            impairments,
            receivers: [rx[0].clone(), rx[1].clone()],
        })
    }
}

/// Decoded packets of one stream, in stream order.
pub fn decode(stream: &IqStream, receiver_id: u32, cfg: &ReceiverConfig) -> Vec<DecodedPacket> {
    detect_and_decode(stream, receiver_id, cfg)
}

/// What to estimate: `methods` at every factor in `factors`. Methods with a
/// fixed factor run once at that factor.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatePlan {
    pub methods: Vec<Method>,
    pub factors: Vec<usize>,
}

impl EstimatePlan {
    pub fn new(methods: Vec<Method>, factors: Vec<usize>) -> Result<Self> {
        if methods.is_empty() {
            return Err(Error::InvalidParameter("no methods selected".into()));
        }
        if factors.is_empty() || factors.iter().any(|&n| !(1..=crate::resample::MAX_FACTOR).contains(&n)) {
            return Err(Error::InvalidParameter(format!("upsampling factors {factors:?} must lie in 1..=128")));
        }
        Ok(Self { methods, factors })
    }

    /// `(method, N)` jobs in a fixed order.
    pub fn jobs(&self) -> Vec<(Method, usize)> {
        let mut jobs: Vec<(Method, usize)> = Vec::new();
        for &m in &self.methods {
            for &n in &self.factors {
                let job = (m, m.effective_n(n));
                if !jobs.contains(&job) {
                    jobs.push(job);
                }
            }
        }
        jobs
    }
}

fn record(packet_index: usize, p: &DecodedPacket, e: ToaEstimate) -> ToaRecord {
    ToaRecord {
        receiver_id: p.receiver_id,
        packet_index,
        method: e.method,
        n: e.n,
        toa_s: round_toa(e.toa_s),
        gamma: e.gamma,
        beta: e.beta,
        pulses_used: e.pulses_used,
        flags: e.flags(),
        payload_hex: p.payload.to_hex(),
        coarse_timestamp_s: p.coarse_timestamp_s,
    }
}

/// TOA records for every packet and job, ordered by packet then job.
pub fn estimate(packets: &[DecodedPacket], plan: &EstimatePlan) -> Result<Vec<ToaRecord>> {
    let jobs = plan.jobs();
    let Some(first) = packets.first() else { return Ok(Vec::new()) };
    let fs = first.window.sample_rate_hz;
    let mut engines: BTreeMap<usize, Estimators> = BTreeMap::new();
    for &(m, n) in &jobs {
        if m != Method::Legacy && !engines.contains_key(&n) {
            engines.insert(n, Estimators::new(n, fs)?);
        }
    }
    let per_packet: Vec<Vec<ToaRecord>> = packets
        .par_iter()
        .enumerate()
        .map(|(i, p)| -> Result<Vec<ToaRecord>> {
            let metrics = packet_metrics(&p.window, &p.payload)?;
            let mut out = Vec::with_capacity(jobs.len());
            let mut windows = BTreeMap::new();
            for &(m, n) in &jobs {
                let est = if m == Method::Legacy {
                    let w = upsample(&p.window, 1)?;
                    legacy(&w)
                } else {
                    let w = match windows.entry(n) {
                        Entry::Occupied(o) => o.into_mut(),
                        Entry::Vacant(v) => v.insert(upsample(&p.window, n)?),
                    };
                    engines[&n].run(m, w, &p.payload)?
                };
                out.push(record(i, p, est.with_metrics(metrics)));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(per_packet.into_iter().flatten().collect())
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> Result<String> {
    let mut s = String::new();
    for it in items {
        s.push_str(&serde_json::to_string(it)?);
        s.push('\n');
    }
    Ok(s)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    write_atomic(path, to_jsonl(items)?.as_bytes())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Malformed(format!("{} line {}: {e}", path.display(), i + 1))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
[schedule]
kind = "poisson"
rate_hz = 200.0
packets = 10

[payload]
kind = "random"

[amplitude]
kind = "mixture"
components = [
  { weight = 1.0, kind = "uniform", min = 0.1, max = 0.2 },
  { weight = 2.0, kind = "fixed", value = 0.5 },
]

[impairments]
jitter_ns = 50.0
amplitude_variation_db = 2.0

[[receiver]]
noise_sigma = 0.01
clock_poly_s = [1e-5, 1e-6]

[[receiver]]
adc_bits = 0
"#;

    #[test]
    fn parses_documented_schema() {
        let cfg = ScenarioConfig::parse(EXAMPLE).unwrap();
        let sc = cfg.scenario().unwrap();
        assert_eq!(sc.receivers[0].front_end.adc_bits, Some(8));
        assert_eq!(sc.receivers[1].front_end.adc_bits, None);
        assert_eq!(sc.receivers[0].clock.poly_s, vec![1e-5, 1e-6]);
        assert!((sc.impairments.jitter_bound_s - 50e-9).abs() < 1e-20);
        assert!(matches!(sc.amplitude, AmplitudeModel::Mixture(ref v) if v.len() == 2));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let bad = EXAMPLE.replace("rate_hz = 200.0", "rate_hz = \"fast\"");
        let msg = ScenarioConfig::parse(&bad).unwrap_err().to_string();
        assert!(msg.contains("line"), "{msg}");
        let unknown = EXAMPLE.replace("jitter_ns", "jitter_us");
        assert!(ScenarioConfig::parse(&unknown).is_err());
    }

    #[test]
    fn rejects_out_of_tolerance_and_receiver_count() {
        let bad = EXAMPLE.replace("jitter_ns = 50.0", "jitter_ns = 80.0");
        assert!(ScenarioConfig::parse(&bad).unwrap().scenario().is_err());
        let one_rx = EXAMPLE.split("[[receiver]]\nadc_bits = 0").next().unwrap().to_string();
        assert!(ScenarioConfig::parse(&one_rx).unwrap().scenario().is_err());
    }

    #[test]
    fn plan_jobs_fold_fixed_factors() {
        let plan = EstimatePlan::new(Method::ALL.to_vec(), vec![25, 83]).unwrap();
        let jobs = plan.jobs();
        assert_eq!(jobs.iter().filter(|j| j.0 == Method::Legacy).count(), 1);
        assert_eq!(jobs.iter().filter(|j| j.0 == Method::CorrPartial).count(), 1);
        assert_eq!(jobs.len(), 2 + 5 * 2);
        assert!(EstimatePlan::new(vec![Method::PeakPulse], vec![0]).is_err());
    }
}
