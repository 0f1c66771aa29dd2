use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use ssvep_core::analytics::{Condition, DriftConvention};
use ssvep_core::cca::{WindowPolicy, DEFAULT_HARMONICS, DEFAULT_TARGETS_HZ};
use ssvep_core::pipeline::{PipelineSpec, PrecisionConfig};
use ssvep_core::types::Mode;

#[derive(Debug, Parser)]
#[command(name = "ssvep", version, about = "SSVEP decoding and instrument characterization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic recordings.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Filter and classify one trial.
    Decode(DecodeArgs),
    /// Time filter and CCA stages over repeated cycles.
    BenchLatency(BenchArgs),
    /// Characterization reports.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Replay trials through several precision configurations.
    Fidelity(FidelityArgs),
    /// Run the simulated acquisition device.
    Serve(ServeArgs),
    /// Connect to a device and stream or run a trial.
    Client(ClientArgs),
}

#[derive(Debug, Args)]
pub struct Acquisition {
    /// Sample rate, Hz.
    #[arg(long, default_value_t = 500.0)]
    pub rate: f64,
    #[arg(long, default_value_t = 8)]
    pub channels: usize,
}

#[derive(Debug, Subcommand)]
pub enum SynthCommand {
    /// One SSVEP trial.
    Trial {
        #[arg(long)]
        freq: f64,
        /// Per-channel white-noise RMS, µV.
        #[arg(long, default_value_t = 0.0)]
        snr_rms: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5.0)]
        duration: f64,
        /// Harmonic amplitudes, µV, fundamental first.
        #[arg(long, value_delimiter = ',', default_value = "1.0,0.5")]
        amplitudes: Vec<f64>,
        #[command(flatten)]
        acq: Acquisition,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// A labelled trial directory cycling through the targets.
    Trials {
        #[arg(long, default_value_t = 240)]
        count: usize,
        #[arg(long, default_value_t = 4.0)]
        noise_rms: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_TARGETS_HZ)]
        targets: Vec<f64>,
        /// Add an onset transient of this amplitude, µV.
        #[arg(long)]
        onset_amp: Option<f64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// A DRDY timing log.
    Timing {
        #[arg(long, default_value_t = 300_000)]
        events: usize,
        #[arg(long, default_value_t = 2000.0)]
        period_us: f64,
        #[arg(long, default_value_t = 0.0)]
        jitter_us: f64,
        #[arg(long, default_value_t = 0.0)]
        drift_ppm: f64,
        #[arg(long, default_value_t = Mode::Off)]
        mode: Mode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Shorted-input white noise.
    Noise {
        #[arg(long)]
        rms: f64,
        #[arg(long, default_value_t = 30.0)]
        duration: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        acq: Acquisition,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Common-mode recording: noise plus a mains residual per channel.
    Cm {
        /// Mains residual RMS, µV; one value for all channels or one per channel.
        #[arg(long, value_delimiter = ',')]
        residual_uv: Vec<f64>,
        #[arg(long, default_value_t = 0.05)]
        base_noise_uv: f64,
        #[arg(long, default_value_t = 30.0)]
        duration: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        acq: Acquisition,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    /// Bandpass lower edge, Hz.
    #[arg(long, default_value_t = 2.0)]
    pub low_hz: f64,
    /// Bandpass upper edge, Hz.
    #[arg(long, default_value_t = 45.0)]
    pub high_hz: f64,
    #[arg(long, default_value_t = 3)]
    pub order: usize,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_TARGETS_HZ)]
    pub targets: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_HARMONICS)]
    pub harmonics: usize,
    #[arg(long, default_value_t = WindowPolicy::Final4s)]
    pub window: WindowPolicy,
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    /// Power-iteration tolerance; defaults per CCA precision.
    #[arg(long)]
    pub power_tol: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub diagonal_loading: f64,
}

impl PipelineArgs {
    pub fn spec(&self, sample_rate_hz: f64) -> PipelineSpec {
        let mut spec = PipelineSpec::new(sample_rate_hz);
        spec.filter.low_hz = self.low_hz;
        spec.filter.high_hz = self.high_hz;
        spec.filter.order = self.order;
        spec.targets_hz = self.targets.clone();
        spec.harmonics = self.harmonics;
        spec.window = self.window;
        spec.max_iters = self.max_iters;
        spec.power_tol = self.power_tol;
        spec.diagonal_loading = self.diagonal_loading;
        spec
    }
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// Epoch CSV.
    pub input: PathBuf,
    #[arg(long, default_value_t = PrecisionConfig::DD)]
    pub config: PrecisionConfig,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 170)]
    pub cycles: usize,
    #[arg(long, default_value_t = PrecisionConfig::DD)]
    pub config: PrecisionConfig,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// Per-cycle `t0_us,t1_us,t2_us` records.
    #[arg(long)]
    pub records: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    /// Shorted-input noise, EEG band and wideband.
    Noise {
        /// One epoch CSV per run.
        #[arg(num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value_t = 5.0)]
        window_s: f64,
        #[arg(long, default_value_t = 6)]
        windows: usize,
        #[arg(long, default_value_t = 2.0)]
        low_hz: f64,
        #[arg(long, default_value_t = 45.0)]
        high_hz: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sampling jitter and drift of a timing log.
    Jitter {
        /// Timing log CSV.
        input: PathBuf,
        #[arg(long, default_value_t = 2000.0)]
        nominal_us: f64,
        #[arg(long, default_value_t = 10.0)]
        window_s: f64,
        #[arg(long, default_value_t = DriftConvention::TotalOverRecording)]
        convention: DriftConvention,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Common-mode attenuation from injection-on/off recordings, or a
    /// balanced/mismatch comparison.
    Cmrr {
        #[arg(long)]
        on: Option<PathBuf>,
        #[arg(long)]
        off: Option<PathBuf>,
        #[arg(long, default_value_t = Condition::Balanced)]
        condition: Condition,
        /// Mismatch-condition recordings; with these a comparison is written.
        #[arg(long, requires = "mismatch_off")]
        mismatch_on: Option<PathBuf>,
        #[arg(long, requires = "mismatch_on")]
        mismatch_off: Option<PathBuf>,
        /// Per-channel balanced attenuations, dB, instead of recordings.
        #[arg(long, value_delimiter = ',', requires = "mismatch_db", conflicts_with_all = ["on", "off"])]
        balanced_db: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', requires = "balanced_db")]
        mismatch_db: Option<Vec<f64>>,
        /// Injected peak-to-peak amplitude, V.
        #[arg(long, default_value_t = 1.0)]
        vpp: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accuracy per analysis window on a labelled trial directory.
    Windows {
        #[arg(long)]
        trials: PathBuf,
        #[arg(long, default_value_t = PrecisionConfig::DD)]
        config: PrecisionConfig,
        #[command(flatten)]
        pipeline: PipelineArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct FidelityArgs {
    #[arg(long)]
    pub trials: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = PrecisionConfig::ALL)]
    pub configs: Vec<PrecisionConfig>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// Per-trial records CSV.
    #[arg(long)]
    pub records: Option<PathBuf>,
    /// Summary CSV; stdout if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 5150)]
    pub port: u16,
    #[arg(long, default_value_t = 500.0)]
    pub rate: f64,
    #[arg(long, default_value_t = 256)]
    pub queue: usize,
    /// Seconds of acquisition; runs until the client leaves if omitted.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Frequency of the synthetic SSVEP stream, Hz.
    #[arg(long, default_value_t = 8.0)]
    pub freq: f64,
    #[arg(long, default_value_t = 2.0)]
    pub noise_rms: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub accel: bool,
    #[arg(long)]
    pub send_buffer: Option<usize>,
    /// Fault injection: never send this sequence number.
    #[arg(long)]
    pub skip_seq: Option<u32>,
    #[arg(long, default_value_t = PrecisionConfig::DF)]
    pub config: PrecisionConfig,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
pub struct ClientArgs {
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 5150)]
    pub port: u16,
    /// Run one trial of this length (e.g. `5s`) and print the reply.
    #[arg(long, value_parser = parse_seconds)]
    pub trial: Option<f64>,
    /// Device sample rate, Hz, used to size the trial.
    #[arg(long, default_value_t = 500.0)]
    pub rate: f64,
    #[arg(long)]
    pub recv_buffer: Option<usize>,
}

pub fn parse_seconds(s: &str) -> Result<f64, String> {
    let v = s.strip_suffix('s').unwrap_or(s);
    match v.parse::<f64>() {
        Ok(x) if x > 0.0 && x.is_finite() => Ok(x),
        _ => Err(format!("expected a positive duration like '5s', got '{s}'")),
    }
}
