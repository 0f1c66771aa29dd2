//! Inter-sample interval statistics and long-term drift of a timestamp log.

use std::io::Write;

use super::stats::{ols_slope, Summary};
use super::AnalyticsError;
use crate::types::{Mode, TimingLog};

/// How the fitted window-mean slope is turned into ppm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DriftConvention {
    /// Accumulated change over the recording: `|b| * T_span / nominal * 1e6`.
    #[default]
    TotalOverRecording,
    /// Change per second of elapsed time: `|b| / nominal * 1e6`.
    PerSecond,
}

impl std::fmt::Display for DriftConvention {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DriftConvention::TotalOverRecording => "total",
            DriftConvention::PerSecond => "per-second",
        })
    }
}

impl std::str::FromStr for DriftConvention {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "total" => Ok(DriftConvention::TotalOverRecording),
            "per-second" | "per_second" => Ok(DriftConvention::PerSecond),
            _ => Err(format!("unknown drift convention '{s}' (total|per-second)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterOptions {
    pub window_s: f64,
    pub convention: DriftConvention,
}

impl Default for JitterOptions {
    fn default() -> Self {
        JitterOptions {
            window_s: 10.0,
            convention: DriftConvention::TotalOverRecording,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JitterStats {
    pub mean_us: f64,
    pub std_us: f64,
    pub p50_us: f64,
    pub p95_us: f64,
    pub p99_us: f64,
    pub min_us: f64,
    pub max_us: f64,
    /// Absent when fewer than two complete windows exist.
    pub drift_ppm: Option<f64>,
    /// Signed OLS slope of the window means, µs per second.
    pub drift_slope_us_per_s: Option<f64>,
    pub event_count: usize,
    pub mode: Mode,
}

impl JitterStats {
    pub fn is_ordered(&self) -> bool {
        self.min_us <= self.p50_us
            && self.p50_us <= self.p95_us
            && self.p95_us <= self.p99_us
            && self.p99_us <= self.max_us
    }

    pub const CSV_HEADER: &'static str =
        "mode,event_count,mean_us,std_us,p50_us,p95_us,p99_us,min_us,max_us,drift_ppm";

    pub fn csv_row(&self) -> String {
        let drift = self.drift_ppm.map_or_else(String::new, |d| format!("{d:.2}"));
        format!(
            "{},{},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2},{}",
            self.mode,
            self.event_count,
            self.mean_us,
            self.std_us,
            self.p50_us,
            self.p95_us,
            self.p99_us,
            self.min_us,
            self.max_us,
            drift
        )
    }

    pub fn write_csv(rows: &[JitterStats], mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in rows {
            writeln!(w, "{}", r.csv_row())?;
        }
        Ok(())
    }
}

pub fn jitter_and_drift(log: &TimingLog, nominal_period_us: f64) -> Result<JitterStats, AnalyticsError> {
    jitter_and_drift_with(log, nominal_period_us, JitterOptions::default())
}

/// Interval statistics (nearest-rank percentiles, sample std) and drift from
/// a first-order fit of non-overlapping window means against window centre
/// time. An interval belongs to the window containing its start time; only
/// complete windows enter the fit.
pub fn jitter_and_drift_with(
    log: &TimingLog,
    nominal_period_us: f64,
    opts: JitterOptions,
) -> Result<JitterStats, AnalyticsError> {
    if log.len() < 2 {
        return Err(AnalyticsError::Empty("timing log needs at least 2 entries"));
    }
    if !(nominal_period_us > 0.0) || !(opts.window_s > 0.0) {
        return Err(AnalyticsError::InvalidArgument(
            "nominal period and window length must be > 0".into(),
        ));
    }
    let ts: Vec<u64> = log.timestamps_us().collect();
    if let Some(i) = ts.windows(2).position(|w| w[1] <= w[0]) {
        return Err(AnalyticsError::NonMonotonic(i + 1));
    }
    let intervals: Vec<f64> = ts.windows(2).map(|w| (w[1] - w[0]) as f64).collect();
    let s = Summary::of(&intervals);

    let origin = ts[0];
    let span_s = (ts[ts.len() - 1] - origin) as f64 * 1e-6;
    let complete = (span_s / opts.window_s).floor() as usize;
    let (mut sums, mut counts) = (vec![0.0; complete], vec![0usize; complete]);
    for (w, &dt) in ts.windows(2).zip(&intervals) {
        let k = ((w[0] - origin) as f64 * 1e-6 / opts.window_s) as usize;
        if k < complete {
            sums[k] += dt;
            counts[k] += 1;
        }
    }
    let (centres, means): (Vec<f64>, Vec<f64>) = (0..complete)
        .filter(|&k| counts[k] > 0)
        .map(|k| ((k as f64 + 0.5) * opts.window_s, sums[k] / counts[k] as f64))
        .unzip();
    let slope = (centres.len() >= 2).then(|| ols_slope(&centres, &means));
    let drift_ppm = slope.map(|b| match opts.convention {
        DriftConvention::TotalOverRecording => b.abs() * span_s / nominal_period_us * 1e6,
        DriftConvention::PerSecond => b.abs() / nominal_period_us * 1e6,
    });

    Ok(JitterStats {
        mean_us: s.mean,
        std_us: s.std,
        p50_us: s.p50,
        p95_us: s.p95,
        p99_us: s.p99,
        min_us: s.min,
        max_us: s.max,
        drift_ppm,
        drift_slope_us_per_s: slope,
        event_count: log.len(),
        mode: log.mode(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(n: u64, period: u64) -> TimingLog {
        let ts: Vec<u64> = (0..n).map(|i| i * period).collect();
        TimingLog::from_timestamps(&ts, Mode::Off).unwrap()
    }

    #[test]
    fn uniform_log() {
        let s = jitter_and_drift(&uniform(30_000, 2000), 2000.0).unwrap();
        assert_eq!(s.std_us, 0.0);
        assert_eq!(s.drift_ppm, Some(0.0));
        for p in [s.p50_us, s.p95_us, s.p99_us, s.min_us, s.max_us, s.mean_us] {
            assert_eq!(p, 2000.0);
        }
        assert_eq!(s.event_count, 30_000);
    }

    #[test]
    fn short_log_has_no_drift() {
        let s = jitter_and_drift(&uniform(5_000, 2000), 2000.0).unwrap();
        assert_eq!(s.drift_ppm, None);
        assert!(jitter_and_drift(&uniform(1, 2000), 2000.0).is_err());
    }

    #[test]
    fn linear_period_ramp() {
        // Period grows 1 ns per interval; intervals last 2.05 ms on average.
        let mut ts = vec![0u64];
        let mut t = 0.0f64;
        for i in 0..100_000 {
            t += 2000.0 + 0.001 * i as f64;
            ts.push(t.round() as u64);
        }
        let log = TimingLog::from_timestamps(&ts, Mode::On).unwrap();
        let s = jitter_and_drift(&log, 2000.0).unwrap();
        let b = s.drift_slope_us_per_s.unwrap();
        let expected = 0.001 / 2050e-6;
        assert!((b - expected).abs() < 0.005 * expected, "{b}");
        let per_s = jitter_and_drift_with(
            &log,
            2000.0,
            JitterOptions { convention: DriftConvention::PerSecond, ..Default::default() },
        )
        .unwrap();
        let span = (ts[ts.len() - 1] as f64) * 1e-6;
        let ratio = s.drift_ppm.unwrap() / per_s.drift_ppm.unwrap();
        assert!((ratio - span).abs() < 1e-9 * span);
        assert_eq!(s.mode, Mode::On);
    }

    #[test]
    fn csv_formatting() {
        let s = jitter_and_drift(&uniform(3, 2000), 2000.0).unwrap();
        assert_eq!(s.csv_row(), "OFF,3,2000.00,0.00,2000.00,2000.00,2000.00,2000.00,2000.00,");
    }
}
