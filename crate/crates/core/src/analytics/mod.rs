//! Characterization mathematics: noise floor, sampling jitter and drift,
//! processing latency, common-mode attenuation, ITR and analysis-window
//! comparison.

use thiserror::Error;

use crate::filter::FilterError;
use crate::pipeline::PipelineError;
use crate::types::DataError;

pub mod cm;
pub mod itr;
pub mod jitter;
pub mod latency;
pub mod noise;
pub mod stats;
pub mod window;

pub use cm::{
    common_mode_attenuation, compare_conditions, measure_50hz_rms, Attenuation, ChannelCm,
    CmComparison, CmReport, Condition,
};
pub use itr::itr_bits_per_min;
pub use jitter::{jitter_and_drift, jitter_and_drift_with, DriftConvention, JitterOptions, JitterStats};
pub use latency::{bench_pipeline, latency_stats, ComponentStats, LatencyRecord, LatencyStats};
pub use noise::{noise_metrics, noise_metrics_with, NoiseOptions, NoiseReport, RunNoise};
pub use window::{window_comparison, window_comparison_with, WindowRow};

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("record too short: {got} samples, need {required}")]
    TooShort { got: usize, required: usize },
    #[error("latency record {index}: timestamps must satisfy t0 <= t1 <= t2 (got {t0}, {t1}, {t2})")]
    LatencyOrder { index: usize, t0: u64, t1: u64, t2: u64 },
    #[error("channel mismatch: {0}")]
    Mismatch(String),
    #[error("{freq_hz} Hz is at or above Nyquist ({nyquist_hz} Hz)")]
    AboveNyquist { freq_hz: f64, nyquist_hz: f64 },
    #[error("trial {0} has no label")]
    Unlabelled(usize),
    #[error("non-monotonic timing log at index {0}")]
    NonMonotonic(usize),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}
