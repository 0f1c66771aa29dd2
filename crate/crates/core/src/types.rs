//! Domain types shared by every stage of the chain.
//!
//! Sample values on the host are microvolts. Raw ADC counts only exist on the
//! wire (see [`crate::stream`]) and are converted with
//! [`AcquisitionConfig::uv_per_count`].

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Full-scale reference voltage of the front end, volts.
pub const REFERENCE_VOLTAGE_V: f64 = 4.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("invalid acquisition config: {0}")]
    InvalidConfig(String),
    #[error("epoch has no channels")]
    NoChannels,
    #[error("epoch has no samples")]
    NoSamples,
    #[error("ragged epoch: channel {channel} has {len} samples, expected {expected}")]
    Ragged {
        channel: usize,
        len: usize,
        expected: usize,
    },
    #[error("non-finite sample at channel {channel}, index {index}")]
    NonFinite { channel: usize, index: usize },
    #[error("channel count {got} does not match config ({expected})")]
    ChannelCount { got: usize, expected: usize },
    #[error("timing log: {0}")]
    TimingLog(String),
}

/// Acquisition parameters of a recording.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcquisitionConfig {
    pub sample_rate_hz: f64,
    pub channel_count: usize,
    /// Metadata only.
    pub pga_gain: f64,
    /// Metadata only.
    pub adc_bits: u32,
    /// Count to microvolt scale. Not stated by the hardware documentation;
    /// defaults to `(Vref / gain) / (2^23 - 1)`.
    pub uv_per_count: f64,
}

impl AcquisitionConfig {
    pub fn new(sample_rate_hz: f64, channel_count: usize) -> Result<Self, DataError> {
        let cfg = AcquisitionConfig {
            sample_rate_hz,
            channel_count,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(DataError::InvalidConfig(format!(
                "sample_rate_hz must be > 0, got {}",
                self.sample_rate_hz
            )));
        }
        if self.channel_count == 0 {
            return Err(DataError::InvalidConfig("channel_count must be >= 1".into()));
        }
        if !(self.uv_per_count.is_finite() && self.uv_per_count > 0.0) {
            return Err(DataError::InvalidConfig("uv_per_count must be > 0".into()));
        }
        Ok(())
    }

    pub fn nyquist_hz(&self) -> f64 {
        self.sample_rate_hz / 2.0
    }

    /// Default count scale for a given PGA gain, in µV per count.
    pub fn default_uv_per_count(pga_gain: f64) -> f64 {
        (REFERENCE_VOLTAGE_V / pga_gain) / ((1u64 << 23) as f64 - 1.0) * 1e6
    }

    pub fn counts_to_uv(&self, counts: i32) -> f64 {
        counts as f64 * self.uv_per_count
    }

    /// Microvolts to the nearest count, clamped to the signed 24-bit range.
    pub fn uv_to_counts(&self, uv: f64) -> i32 {
        let c = (uv / self.uv_per_count).round();
        c.clamp(-(1i64 << 23) as f64, ((1i64 << 23) - 1) as f64) as i32
    }
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        let pga_gain = 12.0;
        AcquisitionConfig {
            sample_rate_hz: 500.0,
            channel_count: 8,
            pga_gain,
            adc_bits: 24,
            uv_per_count: Self::default_uv_per_count(pga_gain),
        }
    }
}

/// A C x N block of samples in microvolts. Validated at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Epoch {
    config: AcquisitionConfig,
    sample_count: usize,
    // Row-major: channel c occupies [c * N, (c + 1) * N).
    data: Vec<f64>,
}

impl Epoch {
    /// Build from per-channel rows. `config.channel_count` is overwritten by
    /// the number of rows.
    pub fn from_channels(
        mut config: AcquisitionConfig,
        channels: Vec<Vec<f64>>,
    ) -> Result<Self, DataError> {
        if channels.is_empty() {
            return Err(DataError::NoChannels);
        }
        let n = channels[0].len();
        if n == 0 {
            return Err(DataError::NoSamples);
        }
        let mut data = Vec::with_capacity(n * channels.len());
        for (c, row) in channels.iter().enumerate() {
            if row.len() != n {
                return Err(DataError::Ragged {
                    channel: c,
                    len: row.len(),
                    expected: n,
                });
            }
            data.extend_from_slice(row);
        }
        config.channel_count = channels.len();
        Self::from_flat(config, n, data)
    }

    /// Build from a row-major buffer of `config.channel_count * sample_count` values.
    pub fn from_flat(
        config: AcquisitionConfig,
        sample_count: usize,
        data: Vec<f64>,
    ) -> Result<Self, DataError> {
        config.validate()?;
        if sample_count == 0 {
            return Err(DataError::NoSamples);
        }
        if data.len() != sample_count * config.channel_count {
            return Err(DataError::Ragged {
                channel: data.len() / sample_count,
                len: data.len() % sample_count,
                expected: sample_count,
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFinite {
                channel: i / sample_count,
                index: i % sample_count,
            });
        }
        Ok(Epoch {
            config,
            sample_count,
            data,
        })
    }

    pub fn zeros(config: AcquisitionConfig, sample_count: usize) -> Result<Self, DataError> {
        let len = config.channel_count * sample_count;
        Self::from_flat(config, sample_count, vec![0.0; len])
    }

    pub fn config(&self) -> &AcquisitionConfig {
        &self.config
    }

    pub fn channel_count(&self) -> usize {
        self.config.channel_count
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.config.sample_rate_hz
    }

    pub fn duration_s(&self) -> f64 {
        self.sample_count as f64 / self.config.sample_rate_hz
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.sample_count..(c + 1) * self.sample_count]
    }

    pub fn channels(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.sample_count)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Sample-index slice `[start, end)` across all channels.
    pub fn slice(&self, start: usize, end: usize) -> Result<Epoch, DataError> {
        if start >= end || end > self.sample_count {
            return Err(DataError::NoSamples);
        }
        let n = end - start;
        let mut data = Vec::with_capacity(n * self.channel_count());
        for ch in self.channels() {
            data.extend_from_slice(&ch[start..end]);
        }
        Epoch::from_flat(self.config, n, data)
    }

    /// Apply `f` to every channel, producing a new epoch of the same shape.
    pub fn map_channels<E, F>(&self, mut f: F) -> Result<Epoch, E>
    where
        F: FnMut(&[f64]) -> Result<Vec<f64>, E>,
        E: From<DataError>,
    {
        let mut rows = Vec::with_capacity(self.channel_count());
        for ch in self.channels() {
            rows.push(f(ch)?);
        }
        Ok(Epoch::from_channels(self.config, rows)?)
    }

    /// Same samples, every value multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Result<Epoch, DataError> {
        Epoch::from_flat(
            self.config,
            self.sample_count,
            self.data.iter().map(|v| v * k).collect(),
        )
    }
}

/// One stimulation trial, typically 5 s.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecording {
    pub epoch_full: Epoch,
    pub true_label_hz: Option<f64>,
    pub subject_id: Option<String>,
}

impl TrialRecording {
    pub fn new(epoch_full: Epoch, true_label_hz: Option<f64>) -> Self {
        TrialRecording {
            epoch_full,
            true_label_hz,
            subject_id: None,
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.epoch_full.duration_s()
    }
}

/// Operating mode label of a timing log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Mode {
    #[default]
    Off,
    On,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Off => "OFF",
            Mode::On => "ON",
        })
    }
}

impl FromStr for Mode {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "OFF" => Ok(Mode::Off),
            "ON" => Ok(Mode::On),
            other => Err(DataError::TimingLog(format!("unknown mode label '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingEntry {
    pub index: u64,
    pub timestamp_us: u64,
    pub mode: Mode,
}

impl TimingEntry {
    /// Seconds, derived from the authoritative microsecond timestamp.
    pub fn time_s(&self) -> f64 {
        self.timestamp_us as f64 * 1e-6
    }
}

/// Data-ready timestamp sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingLog {
    entries: Vec<TimingEntry>,
}

impl TimingLog {
    pub fn new(entries: Vec<TimingEntry>) -> Result<Self, DataError> {
        for (i, w) in entries.windows(2).enumerate() {
            if w[1].index != w[0].index + 1 {
                return Err(DataError::TimingLog(format!(
                    "gap in index sequence at row {}: {} -> {}",
                    i + 1,
                    w[0].index,
                    w[1].index
                )));
            }
            if w[1].timestamp_us <= w[0].timestamp_us {
                return Err(DataError::TimingLog(format!(
                    "non-monotonic timestamp at index {}: {} after {}",
                    w[1].index, w[1].timestamp_us, w[0].timestamp_us
                )));
            }
        }
        Ok(TimingLog { entries })
    }

    /// Log with consecutive indices starting at 0.
    pub fn from_timestamps(timestamps_us: &[u64], mode: Mode) -> Result<Self, DataError> {
        Self::new(
            timestamps_us
                .iter()
                .enumerate()
                .map(|(i, &t)| TimingEntry {
                    index: i as u64,
                    timestamp_us: t,
                    mode,
                })
                .collect(),
        )
    }

    pub fn entries(&self) -> &[TimingEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Mode of the first entry, `OFF` for an empty log.
    pub fn mode(&self) -> Mode {
        self.entries.first().map(|e| e.mode).unwrap_or_default()
    }

    pub fn timestamps_us(&self) -> impl Iterator<Item = u64> + '_ {
        self.entries.iter().map(|e| e.timestamp_us)
    }
}
