//! IQ sample streams, ADC quantization and the raw file format.
//!
//! Raw files are headerless interleaved offset-binary samples `I Q I Q ...`,
//! one byte per component for ADCs of up to 8 bits (the RTL-SDR dump
//! format), little-endian `u16` per component above that. The sample rate
//! and ADC width travel in a JSON sidecar.

use crate::{Error, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Offset-binary ADC with `bits` of resolution. Normalised full scale is
/// `[-1, 1]`; codes are centred on `(2^bits - 1) / 2` (127.5 for 8 bits).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Adc {
    bits: u32,
}

impl Adc {
    pub fn new(bits: u32) -> Result<Self> {
        if !(4..=16).contains(&bits) {
            return Err(Error::InvalidParameter(format!("adc_bits {bits} outside [4, 16]")));
        }
        Ok(Self { bits })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn max_code(&self) -> u16 {
        ((1u32 << self.bits) - 1) as u16
    }

    fn half_range(&self) -> f64 {
        self.max_code() as f64 / 2.0
    }

    /// Quantizes a normalised value, saturating outside full scale.
    pub fn encode(&self, x: f64) -> u16 {
        let h = self.half_range();
        (x * h + h).round().clamp(0.0, self.max_code() as f64) as u16
    }

    pub fn decode(&self, code: u16) -> f64 {
        let h = self.half_range();
        (code as f64 - h) / h
    }

    pub fn is_extreme(&self, code: u16) -> bool {
        code == 0 || code == self.max_code()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum IqData {
    /// Interleaved 8-bit codes.
    U8(Vec<u8>),
    /// Interleaved codes of 9..16 bits.
    U16(Vec<u16>),
    /// Unquantized normalised samples (ideal ADC).
    Float(Vec<Complex64>),
}

/// A receiver's sample stream. Sample `n` was taken at receiver-clock time
/// `start_time_s + n / sample_rate_hz`.
#[derive(Debug, Clone, PartialEq)]
pub struct IqStream {
    pub sample_rate_hz: f64,
    pub start_time_s: f64,
    pub adc: Option<Adc>,
    pub data: IqData,
}

impl IqStream {
    /// Quantizes normalised samples with `adc`, or keeps them as floats when
    /// `adc` is `None`.
    pub fn from_normalized(values: &[Complex64], sample_rate_hz: f64, start_time_s: f64, adc: Option<Adc>) -> Self {
        let data = match adc {
            None => IqData::Float(values.to_vec()),
            Some(a) => {
                let codes = values.iter().flat_map(|v| [a.encode(v.re), a.encode(v.im)]);
                if a.bits() <= 8 {
                    IqData::U8(codes.map(|c| c as u8).collect())
                } else {
                    IqData::U16(codes.collect())
                }
            }
        };
        Self { sample_rate_hz, start_time_s, adc, data }
    }

    pub fn len(&self) -> usize {
        match &self.data {
            IqData::U8(v) => v.len() / 2,
            IqData::U16(v) => v.len() / 2,
            IqData::Float(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample(&self, i: usize) -> Complex64 {
        match (&self.data, self.adc) {
            (IqData::U8(v), Some(a)) => Complex64::new(a.decode(v[2 * i] as u16), a.decode(v[2 * i + 1] as u16)),
            (IqData::U16(v), Some(a)) => Complex64::new(a.decode(v[2 * i]), a.decode(v[2 * i + 1])),
            (IqData::Float(v), _) => v[i],
            _ => unreachable!("quantized data without an ADC"),
        }
    }

    /// True if either component of sample `i` sits at an extreme ADC code.
    pub fn is_saturated(&self, i: usize) -> bool {
        match (&self.data, self.adc) {
            (IqData::U8(v), Some(a)) => a.is_extreme(v[2 * i] as u16) || a.is_extreme(v[2 * i + 1] as u16),
            (IqData::U16(v), Some(a)) => a.is_extreme(v[2 * i]) || a.is_extreme(v[2 * i + 1]),
            _ => false,
        }
    }

    /// Sample magnitudes of the whole stream.
    pub fn magnitudes(&self) -> Vec<f32> {
        match (&self.data, self.adc) {
            (IqData::U8(v), Some(a)) => {
                let lut: Vec<f32> = (0..256u16).map(|c| a.decode(c) as f32).collect();
                v.chunks_exact(2).map(|p| lut[p[0] as usize].hypot(lut[p[1] as usize])).collect()
            }
            _ => (0..self.len()).map(|i| self.sample(i).norm() as f32).collect(),
        }
    }

    pub fn time_of(&self, i: usize) -> f64 {
        self.start_time_s + i as f64 / self.sample_rate_hz
    }

    /// Samples `start .. start + len` as a window; `leading_offset` is the
    /// index of the packet's leading sample inside the window.
    pub fn window(&self, start: usize, len: usize, leading_offset: usize) -> Result<SampleWindow> {
        if start + len > self.len() {
            return Err(Error::InsufficientData(format!(
                "window {start}..{} exceeds stream of {} samples",
                start + len,
                self.len()
            )));
        }
        Ok(SampleWindow {
            samples: (start..start + len).map(|i| self.sample(i)).collect(),
            saturated: (start..start + len).map(|i| self.is_saturated(i)).collect(),
            start_index: start,
            sample_rate_hz: self.sample_rate_hz,
            start_time_s: self.time_of(start),
            leading_offset,
        })
    }

    pub fn meta(&self) -> StreamMeta {
        StreamMeta {
            sample_rate_hz: self.sample_rate_hz,
            adc_bits: self.adc.map_or(0, |a| a.bits()),
            start_time: self.start_time_s,
            receiver_id: None,
        }
    }

    /// The raw file image of the stream.
    pub fn to_raw_bytes(&self) -> Result<Vec<u8>> {
        match &self.data {
            IqData::U8(v) => Ok(v.clone()),
            IqData::U16(v) => Ok(v.iter().flat_map(|c| c.to_le_bytes()).collect()),
            IqData::Float(_) => Err(Error::InvalidParameter("an unquantized stream has no raw file format".into())),
        }
    }

    pub fn from_raw_bytes(bytes: Vec<u8>, meta: &StreamMeta) -> Result<Self> {
        let adc = Adc::new(meta.adc_bits)?;
        if !(meta.sample_rate_hz > 0.0) {
            return Err(Error::Malformed(format!("sample rate {}", meta.sample_rate_hz)));
        }
        let data = if adc.bits() <= 8 {
            if !bytes.len().is_multiple_of(2) {
                return Err(Error::Malformed("odd number of bytes in 8-bit IQ file".into()));
            }
            IqData::U8(bytes)
        } else {
            if !bytes.len().is_multiple_of(4) {
                return Err(Error::Malformed("IQ file length is not a whole number of 16-bit pairs".into()));
            }
            IqData::U16(bytes.chunks_exact(2).map(|b| u16::from_le_bytes([b[0], b[1]])).collect())
        };
        Ok(Self { sample_rate_hz: meta.sample_rate_hz, start_time_s: meta.start_time, adc: Some(adc), data })
    }
}

/// Sidecar metadata for a raw IQ file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamMeta {
    pub sample_rate_hz: f64,
    pub adc_bits: u32,
    /// Receiver-clock time of the first sample, seconds.
    pub start_time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub receiver_id: Option<u32>,
}

/// Conventional sidecar path: `<iq path>.json`.
pub fn meta_path_for(iq_path: &Path) -> PathBuf {
    let mut s = iq_path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn read_stream(iq_path: &Path, meta_path: &Path) -> Result<IqStream> {
    let meta: StreamMeta = serde_json::from_slice(&fs::read(meta_path)?)?;
    IqStream::from_raw_bytes(fs::read(iq_path)?, &meta)
}

/// Writes `bytes` to `path` through a temporary file in the same directory
/// followed by a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| Error::InvalidParameter(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = dir.join(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_stream(stream: &IqStream, iq_path: &Path, meta_path: &Path, receiver_id: Option<u32>) -> Result<()> {
    let mut meta = stream.meta();
    meta.receiver_id = receiver_id;
    write_atomic(iq_path, &stream.to_raw_bytes()?)?;
    write_atomic(meta_path, &serde_json::to_vec_pretty(&meta)?)?;
    Ok(())
}

/// A packet's slice of a stream, handed from the receiver to the TOA block.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWindow {
    pub samples: Vec<Complex64>,
    /// Per-sample ADC saturation flags.
    pub saturated: Vec<bool>,
    pub start_index: usize,
    pub sample_rate_hz: f64,
    /// Receiver-clock time of `samples[0]`.
    pub start_time_s: f64,
    /// Index of the packet's leading sample within the window.
    pub leading_offset: usize,
}

impl SampleWindow {
    /// A window over in-memory samples with no saturation information.
    pub fn from_samples(samples: Vec<Complex64>, sample_rate_hz: f64, start_time_s: f64, leading_offset: usize) -> Self {
        let saturated = vec![false; samples.len()];
        Self { samples, saturated, start_index: 0, sample_rate_hz, start_time_s, leading_offset }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Receiver-clock time of the leading sample (the legacy timestamp).
    pub fn leading_time_s(&self) -> f64 {
        self.start_time_s + self.leading_offset as f64 / self.sample_rate_hz
    }
}
