//! SSVEP measurement and decoding chain: zero-phase Butterworth filtering,
//! CCA frequency recognition at selectable precision, instrument
//! characterization (noise, timing, common-mode, latency), a mixed-precision
//! replay harness, and a framed TCP telemetry stream.

pub mod analytics;
pub mod cca;
pub mod csv_io;
pub mod fidelity;
pub mod filter;
pub mod linalg;
pub mod pipeline;
pub mod precision;
pub mod stream;
pub mod synth;
pub mod types;

use thiserror::Error;

/// Any library error, displayed with a stable module prefix.
#[derive(Debug, Error)]
pub enum Error {
    #[error("data: {0}")]
    Data(#[from] types::DataError),
    #[error("csv: {0}")]
    Csv(#[from] csv_io::CsvError),
    #[error("linalg: {0}")]
    Linalg(#[from] linalg::LinalgError),
    #[error("filter: {0}")]
    Filter(#[from] filter::FilterError),
    #[error("cca: {0}")]
    Cca(#[from] cca::CcaError),
    #[error("pipeline: {0}")]
    Pipeline(#[from] pipeline::PipelineError),
    #[error("synth: {0}")]
    Synth(#[from] synth::SynthError),
    #[error("analytics: {0}")]
    Analytics(#[from] analytics::AnalyticsError),
    #[error("fidelity: {0}")]
    Fidelity(#[from] fidelity::FidelityError),
    #[error("stream: {0}")]
    Stream(#[from] stream::StreamError),
    #[error("codec: {0}")]
    Codec(#[from] stream::CodecError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// The module prefix used in the display form.
    pub fn module(&self) -> &'static str {
        match self {
            Error::Data(_) => "data",
            Error::Csv(_) => "csv",
            Error::Linalg(_) => "linalg",
            Error::Filter(_) => "filter",
            Error::Cca(_) => "cca",
            Error::Pipeline(_) => "pipeline",
            Error::Synth(_) => "synth",
            Error::Analytics(_) => "analytics",
            Error::Fidelity(_) => "fidelity",
            Error::Stream(_) => "stream",
            Error::Codec(_) => "codec",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
