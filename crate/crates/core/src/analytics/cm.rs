//! Effective common-mode attenuation from injection-on and injection-off
//! recordings.

use std::fmt;
use std::io::Write;

use num_complex::Complex;

use super::stats::median;
use super::AnalyticsError;
use crate::synth::MAINS_HZ;
use crate::types::Epoch;

/// Source-impedance condition of a measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    Balanced,
    Mismatch,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::Balanced => "balanced",
            Condition::Mismatch => "mismatch",
        })
    }
}

impl std::str::FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "balanced" => Ok(Condition::Balanced),
            "mismatch" => Ok(Condition::Mismatch),
            _ => Err(format!("unknown condition '{s}' (balanced|mismatch)")),
        }
    }
}

/// Attenuation of one channel. A zero residual has no finite attenuation;
/// it carries the bound implied by the injection-off level instead.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Attenuation {
    Db(f64),
    Saturated { lower_bound_db: Option<f64> },
}

impl Attenuation {
    pub fn db(&self) -> Option<f64> {
        match *self {
            Attenuation::Db(v) => Some(v),
            Attenuation::Saturated { .. } => None,
        }
    }

    pub fn is_saturated(&self) -> bool {
        matches!(self, Attenuation::Saturated { .. })
    }

    /// Known value or lower bound.
    fn floor_db(&self) -> Option<f64> {
        match *self {
            Attenuation::Db(v) => Some(v),
            Attenuation::Saturated { lower_bound_db } => lower_bound_db,
        }
    }

    /// Median over channels. If a saturated channel reaches the middle the
    /// result is saturated, bounded below by the median of the per-channel
    /// bounds.
    pub fn median_of(values: &[Attenuation]) -> Attenuation {
        let mut keys: Vec<f64> = values
            .iter()
            .map(|a| a.db().unwrap_or(f64::INFINITY))
            .collect();
        keys.sort_by(f64::total_cmp);
        let n = keys.len();
        let central = if n % 2 == 1 {
            &keys[n / 2..=n / 2]
        } else {
            &keys[n / 2 - 1..=n / 2]
        };
        if central.iter().all(|v| v.is_finite()) {
            return Attenuation::Db(central.iter().sum::<f64>() / central.len() as f64);
        }
        let floors: Option<Vec<f64>> = values.iter().map(Attenuation::floor_db).collect();
        Attenuation::Saturated {
            lower_bound_db: floors.map(|f| median(&f)),
        }
    }
}

impl fmt::Display for Attenuation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Attenuation::Db(v) => write!(f, "{v:.1}"),
            Attenuation::Saturated { .. } => f.write_str("saturated"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelCm {
    pub v_on_rms: f64,
    pub v_off_rms: f64,
    pub v_res_rms: f64,
    pub attenuation: Attenuation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmReport {
    pub condition: Condition,
    /// Volts RMS.
    pub v_inj_rms: f64,
    /// Levels in volts RMS.
    pub channels: Vec<ChannelCm>,
    pub median: Attenuation,
}

/// `V_inj = V_pp / (2 sqrt 2)`.
pub fn injected_rms(v_pp_volts: f64) -> f64 {
    v_pp_volts / (2.0 * std::f64::consts::SQRT_2)
}

impl CmReport {
    /// Assemble from per-channel 50 Hz levels (volts RMS).
    pub fn from_levels(
        v_on: &[f64],
        v_off: &[f64],
        v_inj_rms: f64,
        condition: Condition,
    ) -> Result<CmReport, AnalyticsError> {
        if v_on.len() != v_off.len() {
            return Err(AnalyticsError::Mismatch(format!(
                "{} ON levels vs {} OFF levels",
                v_on.len(),
                v_off.len()
            )));
        }
        if v_on.is_empty() {
            return Err(AnalyticsError::Empty("no channels"));
        }
        if !(v_inj_rms > 0.0) {
            return Err(AnalyticsError::InvalidArgument("injected level must be > 0".into()));
        }
        if v_on.iter().chain(v_off).any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(AnalyticsError::InvalidArgument("levels must be finite and >= 0".into()));
        }
        let channels: Vec<ChannelCm> = v_on
            .iter()
            .zip(v_off)
            .map(|(&on, &off)| {
                let v_res_rms = (on * on - off * off).max(0.0).sqrt();
                let attenuation = if v_res_rms > 0.0 {
                    Attenuation::Db(20.0 * (v_inj_rms / v_res_rms).log10())
                } else {
                    Attenuation::Saturated {
                        lower_bound_db: (off > 0.0).then(|| 20.0 * (v_inj_rms / off).log10()),
                    }
                };
                ChannelCm {
                    v_on_rms: on,
                    v_off_rms: off,
                    v_res_rms,
                    attenuation,
                }
            })
            .collect();
        let atts: Vec<Attenuation> = channels.iter().map(|c| c.attenuation).collect();
        Ok(CmReport {
            condition,
            v_inj_rms,
            median: Attenuation::median_of(&atts),
            channels,
        })
    }

    /// Assemble from known per-channel attenuations, as a zero-baseline
    /// measurement with `V_res = V_inj 10^(-dB/20)`.
    pub fn from_attenuations_db(
        db: &[f64],
        v_inj_rms: f64,
        condition: Condition,
    ) -> Result<CmReport, AnalyticsError> {
        let v_on: Vec<f64> = db.iter().map(|d| v_inj_rms * 10f64.powf(-d / 20.0)).collect();
        Self::from_levels(&v_on, &vec![0.0; db.len()], v_inj_rms, condition)
    }

    pub fn median_db(&self) -> Option<f64> {
        self.median.db()
    }

    /// `channel,v_on_rms_v,v_off_rms_v,v_res_rms_v,attenuation_db,state,lower_bound_db`
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "channel,v_on_rms_v,v_off_rms_v,v_res_rms_v,attenuation_db,state,lower_bound_db")?;
        for (i, c) in self.channels.iter().enumerate() {
            writeln!(
                w,
                "CH{},{:.6e},{:.6e},{:.6e},{}",
                i + 1,
                c.v_on_rms,
                c.v_off_rms,
                c.v_res_rms,
                attenuation_fields(&c.attenuation)
            )?;
        }
        writeln!(w, "median,,,,{}", attenuation_fields(&self.median))
    }
}

fn attenuation_fields(a: &Attenuation) -> String {
    match *a {
        Attenuation::Db(v) => format!("{v:.1},measured,"),
        Attenuation::Saturated { lower_bound_db } => format!(
            ",saturated,{}",
            lower_bound_db.map_or_else(String::new, |b| format!("{b:.1}"))
        ),
    }
}

/// Channel-wise change between a balanced and a mismatch measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct CmComparison {
    /// `(balanced, mismatch, mismatch - balanced)` per channel.
    pub rows: Vec<(Attenuation, Attenuation, Option<f64>)>,
    pub median_balanced: Attenuation,
    pub median_mismatch: Attenuation,
    /// Difference of the two medians.
    pub median_delta: Option<f64>,
}

impl CmComparison {
    /// `channel,balanced_db,mismatch_db,delta_db`
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        let delta = |d: Option<f64>| d.map_or_else(String::new, |v| format!("{v:+.1}"));
        writeln!(w, "channel,balanced_db,mismatch_db,delta_db")?;
        for (i, (b, m, d)) in self.rows.iter().enumerate() {
            writeln!(w, "CH{},{b},{m},{}", i + 1, delta(*d))?;
        }
        writeln!(
            w,
            "median,{},{},{}",
            self.median_balanced,
            self.median_mismatch,
            delta(self.median_delta)
        )
    }
}

pub fn compare_conditions(
    balanced: &CmReport,
    mismatch: &CmReport,
) -> Result<CmComparison, AnalyticsError> {
    if balanced.channels.len() != mismatch.channels.len() {
        return Err(AnalyticsError::Mismatch(format!(
            "{} balanced channels vs {} mismatch channels",
            balanced.channels.len(),
            mismatch.channels.len()
        )));
    }
    let sub = |a: &Attenuation, b: &Attenuation| Some(b.db()? - a.db()?);
    Ok(CmComparison {
        rows: balanced
            .channels
            .iter()
            .zip(&mismatch.channels)
            .map(|(b, m)| (b.attenuation, m.attenuation, sub(&b.attenuation, &m.attenuation)))
            .collect(),
        median_balanced: balanced.median,
        median_mismatch: mismatch.median,
        median_delta: sub(&balanced.median, &mismatch.median),
    })
}

/// Per-channel RMS amplitude at `target_hz` from a single-bin DFT over the
/// largest whole number of target cycles: `A = sqrt(2) / N |sum x e^{-j w n}|`.
pub fn measure_50hz_rms(epoch: &Epoch, target_hz: f64) -> Result<Vec<f64>, AnalyticsError> {
    let fs = epoch.sample_rate_hz();
    let nyquist_hz = fs / 2.0;
    if !(target_hz > 0.0 && target_hz < nyquist_hz) {
        return Err(AnalyticsError::AboveNyquist {
            freq_hz: target_hz,
            nyquist_hz,
        });
    }
    let total = epoch.sample_count();
    if epoch.duration_s() < 1.0 {
        return Err(AnalyticsError::TooShort {
            got: total,
            required: fs.ceil() as usize,
        });
    }
    let cycles = (total as f64 * target_hz / fs + 1e-9).floor();
    let n = ((cycles * fs / target_hz) + 1e-9).floor() as usize;
    let w = 2.0 * std::f64::consts::PI * target_hz / fs;
    Ok(epoch
        .channels()
        .map(|ch| {
            let acc = ch[..n]
                .iter()
                .enumerate()
                .fold(Complex::new(0.0, 0.0), |acc, (i, &x)| {
                    acc + Complex::from_polar(x, -w * i as f64)
                });
            std::f64::consts::SQRT_2 / n as f64 * acc.norm()
        })
        .collect())
}

/// Attenuation from injection-on and injection-off recordings in µV, measured
/// at the mains frequency.
pub fn common_mode_attenuation(
    on: &Epoch,
    off: &Epoch,
    v_pp_volts: f64,
    condition: Condition,
) -> Result<CmReport, AnalyticsError> {
    if on.channel_count() != off.channel_count() {
        return Err(AnalyticsError::Mismatch(format!(
            "ON has {} channels, OFF has {}",
            on.channel_count(),
            off.channel_count()
        )));
    }
    if on.sample_rate_hz() != off.sample_rate_hz() {
        return Err(AnalyticsError::Mismatch("ON and OFF sample rates differ".into()));
    }
    let to_volts = |v: Vec<f64>| -> Vec<f64> { v.into_iter().map(|x| x * 1e-6).collect() };
    let v_on = to_volts(measure_50hz_rms(on, MAINS_HZ)?);
    let v_off = to_volts(measure_50hz_rms(off, MAINS_HZ)?);
    CmReport::from_levels(&v_on, &v_off, injected_rms(v_pp_volts), condition)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::AcquisitionConfig;

    fn tone(amp: f64, n: usize) -> Epoch {
        let cfg = AcquisitionConfig { channel_count: 1, ..AcquisitionConfig::default() };
        let x = (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * 50.0 * i as f64 / 500.0).sin())
            .collect();
        Epoch::from_channels(cfg, vec![x]).unwrap()
    }

    #[test]
    fn full_cycle_sinusoid() {
        let a = measure_50hz_rms(&tone(1.0, 1000), 50.0).unwrap()[0];
        assert!((a - 0.5f64.sqrt()).abs() < 1e-6);
        // 1003 samples truncate to 1000.
        let b = measure_50hz_rms(&tone(1.0, 1003), 50.0).unwrap()[0];
        assert!((b - 0.5f64.sqrt()).abs() < 1e-6);
        assert_eq!(measure_50hz_rms(&tone(0.0, 1000), 50.0).unwrap()[0], 0.0);
        assert!(measure_50hz_rms(&tone(1.0, 499), 50.0).is_err());
        assert!(measure_50hz_rms(&tone(1.0, 1000), 250.0).is_err());
    }

    #[test]
    fn direct_evaluation() {
        let r = CmReport::from_levels(&[0.8862e-6], &[0.0], 0.353553, Condition::Balanced).unwrap();
        let db = r.channels[0].attenuation.db().unwrap();
        assert!((db - 112.0).abs() < 0.1, "{db}");
    }

    #[test]
    fn equal_levels_saturate() {
        let r = CmReport::from_levels(&[1e-6, 2e-6], &[1e-6, 2e-6], 0.35, Condition::Mismatch).unwrap();
        assert!(r.channels.iter().all(|c| c.attenuation.is_saturated()));
        match r.median {
            Attenuation::Saturated { lower_bound_db: Some(b) } => assert!(b > 100.0),
            other => panic!("{other:?}"),
        }
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(!text.contains("inf"));
        assert!(text.contains(",saturated,"));
    }

    #[test]
    fn monotone_in_residual() {
        let mut prev = f64::INFINITY;
        for k in 1..50 {
            let r = CmReport::from_levels(&[k as f64 * 1e-7], &[0.0], 0.35, Condition::Balanced).unwrap();
            let db = r.channels[0].attenuation.db().unwrap();
            assert!(db < prev);
            prev = db;
        }
    }
}
