//! Noise-floor metrics over repeated shorted-input style runs.

use std::io::Write;

use super::stats::{mean, rms, sample_std};
use super::AnalyticsError;
use crate::filter::{self, FilterSpec};
use crate::types::Epoch;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseOptions {
    pub window_length_s: f64,
    pub windows_per_run: usize,
}

impl Default for NoiseOptions {
    fn default() -> Self {
        NoiseOptions {
            window_length_s: 5.0,
            windows_per_run: 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunNoise {
    pub eeg_band_rms_uv: f64,
    pub wideband_rms_uv: f64,
}

/// Mean and sample standard deviation across runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
}

impl MetricSummary {
    fn of(values: &[f64]) -> Self {
        MetricSummary {
            mean: mean(values),
            std: sample_std(values),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseReport {
    pub runs: Vec<RunNoise>,
    pub eeg_band: MetricSummary,
    pub wideband: MetricSummary,
    pub window_length_s: f64,
    pub windows_per_run: usize,
}

impl NoiseReport {
    /// `run,eeg_band_rms_uv,wideband_rms_uv`, then `mean` and `std` rows.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "run,eeg_band_rms_uv,wideband_rms_uv")?;
        for (i, r) in self.runs.iter().enumerate() {
            writeln!(w, "{},{:.6},{:.6}", i + 1, r.eeg_band_rms_uv, r.wideband_rms_uv)?;
        }
        writeln!(w, "mean,{:.6},{:.6}", self.eeg_band.mean, self.wideband.mean)?;
        writeln!(w, "std,{:.6},{:.6}", self.eeg_band.std, self.wideband.std)
    }
}

pub fn noise_metrics(runs: &[Epoch], filter_spec: &FilterSpec) -> Result<NoiseReport, AnalyticsError> {
    noise_metrics_with(runs, filter_spec, NoiseOptions::default())
}

/// Per window and channel: EEG-band RMS of the bandpassed run and wideband
/// RMS after removing the window mean. Channel means are averaged over the
/// windows of each run. The bandpass is applied to the whole run before
/// windowing so that window edges carry no filter transient.
pub fn noise_metrics_with(
    runs: &[Epoch],
    filter_spec: &FilterSpec,
    opts: NoiseOptions,
) -> Result<NoiseReport, AnalyticsError> {
    if runs.is_empty() {
        return Err(AnalyticsError::Empty("no noise runs"));
    }
    if opts.windows_per_run == 0 || !(opts.window_length_s > 0.0) {
        return Err(AnalyticsError::InvalidArgument("window layout must be non-empty".into()));
    }
    let coeffs = filter::design_butterworth_bandpass::<f64>(filter_spec)?;
    let mut out = Vec::with_capacity(runs.len());
    for run in runs {
        let win = (opts.window_length_s * run.sample_rate_hz()).round() as usize;
        let required = win * opts.windows_per_run;
        if win == 0 || run.sample_count() < required {
            return Err(AnalyticsError::TooShort {
                got: run.sample_count(),
                required,
            });
        }
        let band = filter::filtfilt(&coeffs, run)?;
        let (mut eeg, mut wide) = (Vec::new(), Vec::new());
        for k in 0..opts.windows_per_run {
            let range = k * win..(k + 1) * win;
            let band_rms: Vec<f64> = band.channels().map(|ch| rms(&ch[range.clone()])).collect();
            let wide_rms: Vec<f64> = run
                .channels()
                .map(|ch| {
                    let seg = &ch[range.clone()];
                    let m = mean(seg);
                    let centred: Vec<f64> = seg.iter().map(|v| v - m).collect();
                    rms(&centred)
                })
                .collect();
            eeg.push(mean(&band_rms));
            wide.push(mean(&wide_rms));
        }
        out.push(RunNoise {
            eeg_band_rms_uv: mean(&eeg),
            wideband_rms_uv: mean(&wide),
        });
    }
    let eeg: Vec<f64> = out.iter().map(|r| r.eeg_band_rms_uv).collect();
    let wide: Vec<f64> = out.iter().map(|r| r.wideband_rms_uv).collect();
    Ok(NoiseReport {
        eeg_band: MetricSummary::of(&eeg),
        wideband: MetricSummary::of(&wide),
        runs: out,
        window_length_s: opts.window_length_s,
        windows_per_run: opts.windows_per_run,
    })
}
