//! Deterministic synthetic recordings.
//!
//! Every generator is a pure function of its parameter struct: the same seed
//! yields bit-identical output. Gaussian noise comes from [`SYNTH_RNG`]
//! seeded with the struct's `seed`.

use std::f64::consts::{PI, SQRT_2};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::types::{AcquisitionConfig, DataError, Epoch, Mode, TimingLog, TrialRecording};

/// Identifier of the PRNG behind every generator.
pub const SYNTH_RNG: &str = "chacha20";

/// Mains frequency used by the common-mode generator.
pub const MAINS_HZ: f64 = 50.0;

pub type SynthRng = ChaCha20Rng;

pub fn rng_from_seed(seed: u64) -> SynthRng {
    ChaCha20Rng::seed_from_u64(seed)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("harmonic {harmonic} at {freq_hz} Hz is at or above Nyquist ({nyquist_hz} Hz)")]
    Aliasing {
        harmonic: usize,
        freq_hz: f64,
        nyquist_hz: f64,
    },
    #[error("parameters produce non-positive sampling intervals")]
    NonPositiveInterval,
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsvepSynthSpec {
    pub target_hz: f64,
    /// Sine amplitude per harmonic, fundamental first, µV.
    pub harmonic_amplitudes_uv: Vec<f64>,
    pub phase_rad: f64,
    pub noise_rms_uv: f64,
    pub duration_s: f64,
    pub seed: u64,
    pub config: AcquisitionConfig,
}

impl SsvepSynthSpec {
    pub fn new(target_hz: f64, seed: u64) -> Self {
        SsvepSynthSpec {
            target_hz,
            harmonic_amplitudes_uv: vec![1.0, 0.5],
            phase_rad: 0.0,
            noise_rms_uv: 0.0,
            duration_s: 5.0,
            seed,
            config: AcquisitionConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        self.config.validate()?;
        let nyquist_hz = self.config.nyquist_hz();
        if !(self.target_hz > 0.0 && self.target_hz < nyquist_hz) {
            return Err(SynthError::InvalidSpec(format!(
                "target {} Hz outside (0, {nyquist_hz}) Hz",
                self.target_hz
            )));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(SynthError::InvalidSpec("duration must be > 0".into()));
        }
        if !(self.noise_rms_uv >= 0.0 && self.noise_rms_uv.is_finite()) {
            return Err(SynthError::InvalidSpec("noise RMS must be >= 0".into()));
        }
        for k in 1..=self.harmonic_amplitudes_uv.len() {
            let f = k as f64 * self.target_hz;
            if f >= nyquist_hz {
                return Err(SynthError::Aliasing {
                    harmonic: k,
                    freq_hz: f,
                    nyquist_hz,
                });
            }
        }
        Ok(())
    }

    pub fn sample_count(&self) -> usize {
        (self.duration_s * self.config.sample_rate_hz).round() as usize
    }

    /// Noise-free SSVEP value at time `t_s`.
    pub fn signal_uv(&self, t_s: f64) -> f64 {
        self.harmonic_amplitudes_uv
            .iter()
            .enumerate()
            .map(|(k, &a)| a * (2.0 * PI * (k + 1) as f64 * self.target_hz * t_s + self.phase_rad).sin())
            .sum()
    }
}

/// Same SSVEP signal on every channel plus independent white noise per channel.
pub fn gen_ssvep_trial(spec: &SsvepSynthSpec) -> Result<TrialRecording, SynthError> {
    spec.validate()?;
    let n = spec.sample_count();
    if n == 0 {
        return Err(SynthError::InvalidSpec("duration shorter than one sample".into()));
    }
    let fs = spec.config.sample_rate_hz;
    let signal: Vec<f64> = (0..n).map(|i| spec.signal_uv(i as f64 / fs)).collect();
    let mut rng = rng_from_seed(spec.seed);
    let mut data = Vec::with_capacity(n * spec.config.channel_count);
    for _ in 0..spec.config.channel_count {
        for &s in &signal {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push(s + spec.noise_rms_uv * z);
        }
    }
    let epoch = Epoch::from_flat(spec.config, n, data)?;
    Ok(TrialRecording::new(epoch, Some(spec.target_hz)))
}

/// Artifact confined to the start of a trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnsetTransient {
    pub duration_s: f64,
    /// Peak amplitude of the interfering oscillation, µV.
    pub amplitude_uv: f64,
    pub freq_hz: f64,
    /// Exponential decay constant, seconds.
    pub decay_s: f64,
}

/// Add an exponentially decaying oscillation over `[0, duration_s)` to every
/// channel, with a per-channel gain that grows linearly from 1 to 2.
pub fn add_onset_transient(
    trial: &TrialRecording,
    transient: &OnsetTransient,
) -> Result<TrialRecording, SynthError> {
    let e = &trial.epoch_full;
    let fs = e.sample_rate_hz();
    if transient.freq_hz >= e.config().nyquist_hz() {
        return Err(SynthError::Aliasing {
            harmonic: 1,
            freq_hz: transient.freq_hz,
            nyquist_hz: e.config().nyquist_hz(),
        });
    }
    if !(transient.decay_s > 0.0 && transient.duration_s >= 0.0) {
        return Err(SynthError::InvalidSpec("transient decay and duration must be positive".into()));
    }
    let span = ((transient.duration_s * fs).round() as usize).min(e.sample_count());
    let c = e.channel_count();
    let mut k = 0;
    let epoch = e.map_channels(|ch| {
        let gain = 1.0 + k as f64 / (c.max(2) - 1) as f64;
        k += 1;
        let mut out = ch.to_vec();
        for (i, v) in out.iter_mut().enumerate().take(span) {
            let t = i as f64 / fs;
            *v += gain
                * transient.amplitude_uv
                * (-t / transient.decay_s).exp()
                * (2.0 * PI * transient.freq_hz * t).sin();
        }
        Ok::<_, DataError>(out)
    })?;
    Ok(TrialRecording {
        epoch_full: epoch,
        ..trial.clone()
    })
}

/// Labelled trial set cycling through `targets_hz`; trial `i` uses seed
/// `seed + i`. With `onset_amplitude_uv`, each trial also gets a 1 s onset
/// transient (0.5 s decay) at the next target in the list.
pub fn gen_trial_set(
    targets_hz: &[f64],
    count: usize,
    noise_rms_uv: f64,
    seed: u64,
    onset_amplitude_uv: Option<f64>,
) -> Result<Vec<TrialRecording>, SynthError> {
    if targets_hz.is_empty() {
        return Err(SynthError::InvalidSpec("no target frequencies".into()));
    }
    (0..count)
        .map(|i| {
            let k = i % targets_hz.len();
            let mut spec = SsvepSynthSpec::new(targets_hz[k], seed + i as u64);
            spec.noise_rms_uv = noise_rms_uv;
            let trial = gen_ssvep_trial(&spec)?;
            match onset_amplitude_uv {
                Some(amplitude_uv) => add_onset_transient(
                    &trial,
                    &OnsetTransient {
                        duration_s: 1.0,
                        amplitude_uv,
                        freq_hz: targets_hz[(k + 1) % targets_hz.len()],
                        decay_s: 0.5,
                    },
                ),
                None => Ok(trial),
            }
        })
        .collect()
}

/// White Gaussian noise record (shorted-input style).
pub fn gen_white_noise(
    noise_rms_uv: f64,
    duration_s: f64,
    seed: u64,
    config: AcquisitionConfig,
) -> Result<Epoch, SynthError> {
    let spec = SsvepSynthSpec {
        target_hz: 1.0,
        harmonic_amplitudes_uv: Vec::new(),
        phase_rad: 0.0,
        noise_rms_uv,
        duration_s,
        seed,
        config,
    };
    Ok(gen_ssvep_trial(&spec)?.epoch_full)
}

/// Noise plus a mains-frequency sinusoid whose RMS equals the per-channel residual.
pub fn gen_common_mode_record(
    base_noise_rms_uv: f64,
    residual_50hz_rms_uv_per_channel: &[f64],
    duration_s: f64,
    seed: u64,
    config: AcquisitionConfig,
) -> Result<Epoch, SynthError> {
    config.validate()?;
    if residual_50hz_rms_uv_per_channel.len() != config.channel_count {
        return Err(SynthError::InvalidSpec(format!(
            "{} residuals for {} channels",
            residual_50hz_rms_uv_per_channel.len(),
            config.channel_count
        )));
    }
    if let Some(r) = residual_50hz_rms_uv_per_channel.iter().find(|r| !(**r >= 0.0)) {
        return Err(SynthError::InvalidSpec(format!("negative residual {r}")));
    }
    if !(base_noise_rms_uv >= 0.0) {
        return Err(SynthError::InvalidSpec("noise RMS must be >= 0".into()));
    }
    if MAINS_HZ >= config.nyquist_hz() {
        return Err(SynthError::Aliasing {
            harmonic: 1,
            freq_hz: MAINS_HZ,
            nyquist_hz: config.nyquist_hz(),
        });
    }
    let fs = config.sample_rate_hz;
    let n = (duration_s * fs).round() as usize;
    if n == 0 {
        return Err(SynthError::InvalidSpec("duration must be > 0".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut data = Vec::with_capacity(n * config.channel_count);
    for &residual in residual_50hz_rms_uv_per_channel {
        let amp = residual * SQRT_2;
        for i in 0..n {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push(amp * (2.0 * PI * MAINS_HZ * i as f64 / fs).sin() + base_noise_rms_uv * z);
        }
    }
    Ok(Epoch::from_flat(config, n, data)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingSynthSpec {
    pub nominal_period_us: f64,
    pub event_count: usize,
    /// Target standard deviation of the integer-microsecond intervals.
    pub jitter_std_us: f64,
    /// Total fractional change of the period over the recording, ppm.
    pub drift_ppm: f64,
    pub seed: u64,
    pub mode: Mode,
}

impl Default for TimingSynthSpec {
    fn default() -> Self {
        TimingSynthSpec {
            nominal_period_us: 2000.0,
            event_count: 300_000,
            jitter_std_us: 0.0,
            drift_ppm: 0.0,
            seed: 0,
            mode: Mode::Off,
        }
    }
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Mean offset and variance of `round(phi + e) - phi`, `e ~ N(0, sigma^2)`.
fn rounding_moments(phi: f64, sigma: f64) -> (f64, f64) {
    if sigma == 0.0 {
        let r = phi.round();
        return (r - phi, 0.0);
    }
    let reach = (8.0 * sigma).ceil() as i64 + 1;
    let center = phi.round() as i64;
    let (mut m1, mut m2) = (0.0, 0.0);
    for k in center - reach..=center + reach {
        let kf = k as f64;
        let p = normal_cdf((kf + 0.5 - phi) / sigma) - normal_cdf((kf - 0.5 - phi) / sigma);
        m1 += p * kf;
        m2 += p * kf * kf;
    }
    (m1 - phi, (m2 - m1 * m1).max(0.0))
}

/// Expected variance of the quantized intervals when ideal event times `tau`
/// are perturbed by `N(0, sigma^2)` and rounded to whole microseconds.
fn expected_interval_variance(tau: &[f64], probe: &[usize], sigma: f64) -> f64 {
    let mut means = Vec::with_capacity(probe.len());
    let mut var_sum = 0.0;
    for &i in probe {
        let frac = |t: f64| t - t.round();
        let (mu_a, v_a) = rounding_moments(frac(tau[i - 1]), if i == 1 { 0.0 } else { sigma });
        let (mu_b, v_b) = rounding_moments(frac(tau[i]), sigma);
        means.push(tau[i] - tau[i - 1] + mu_b - mu_a);
        var_sum += v_a + v_b;
    }
    let n = probe.len() as f64;
    let mean = means.iter().sum::<f64>() / n;
    var_sum / n + means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / n
}

/// Data-ready timestamp log.
///
/// Ideal event times follow a period that ramps linearly by `drift_ppm` over
/// the recording. Each timestamp (except the origin) carries independent
/// Gaussian capture jitter and is rounded to whole microseconds; the jitter
/// scale is calibrated so that the rounded intervals have standard deviation
/// `jitter_std_us`.
pub fn gen_timing_log(spec: &TimingSynthSpec) -> Result<TimingLog, SynthError> {
    if spec.event_count < 2 {
        return Err(SynthError::InvalidSpec("event_count must be >= 2".into()));
    }
    if !(spec.jitter_std_us >= 0.0 && spec.jitter_std_us.is_finite()) {
        return Err(SynthError::InvalidSpec("jitter std must be >= 0".into()));
    }
    let period = spec.nominal_period_us;
    let ramp_end = 1.0 + spec.drift_ppm * 1e-6;
    if !(period > 0.0 && period.is_finite()) || !(ramp_end > 0.0) {
        return Err(SynthError::NonPositiveInterval);
    }

    let intervals = spec.event_count - 1;
    let mut tau = Vec::with_capacity(spec.event_count);
    tau.push(0.0);
    let mut t = 0.0;
    for i in 1..=intervals {
        let u = (i as f64 - 0.5) / intervals as f64;
        t += period * (1.0 + spec.drift_ppm * 1e-6 * u);
        tau.push(t);
    }

    let sigma = if spec.jitter_std_us == 0.0 {
        0.0
    } else {
        let stride = (intervals / 1000).max(1);
        let probe: Vec<usize> = (1..=intervals).step_by(stride).collect();
        let target = spec.jitter_std_us * spec.jitter_std_us;
        if expected_interval_variance(&tau, &probe, 0.0) >= target {
            0.0
        } else {
            let (mut lo, mut hi) = (0.0, spec.jitter_std_us.max(1.0));
            while expected_interval_variance(&tau, &probe, hi) < target {
                hi *= 2.0;
            }
            for _ in 0..48 {
                let mid = 0.5 * (lo + hi);
                if expected_interval_variance(&tau, &probe, mid) < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        }
    };

    let mut rng = rng_from_seed(spec.seed);
    let mut stamps = Vec::with_capacity(spec.event_count);
    stamps.push(0u64);
    for &ideal in &tau[1..] {
        let z: f64 = StandardNormal.sample(&mut rng);
        let v = (ideal + sigma * z).round();
        let prev = *stamps.last().expect("origin pushed");
        if !(v > prev as f64) {
            return Err(SynthError::NonPositiveInterval);
        }
        stamps.push(v as u64);
    }
    Ok(TimingLog::from_timestamps(&stamps, spec.mode)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn noiseless_trial_is_exact_sinusoid() {
        let spec = SsvepSynthSpec {
            harmonic_amplitudes_uv: vec![1.0],
            ..SsvepSynthSpec::new(8.0, 3)
        };
        let trial = gen_ssvep_trial(&spec).unwrap();
        assert_eq!(trial.epoch_full.sample_count(), 2500);
        assert_eq!(trial.true_label_hz, Some(8.0));
        for (i, v) in trial.epoch_full.channel(0).iter().enumerate() {
            let t = i as f64 / 500.0;
            assert!((v - (2.0 * PI * 8.0 * t).sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn same_seed_same_output() {
        let spec = SsvepSynthSpec {
            noise_rms_uv: 0.5,
            ..SsvepSynthSpec::new(8.0, 42)
        };
        assert_eq!(gen_ssvep_trial(&spec).unwrap(), gen_ssvep_trial(&spec).unwrap());
        let other = SsvepSynthSpec { seed: 43, ..spec.clone() };
        assert_ne!(gen_ssvep_trial(&spec).unwrap(), gen_ssvep_trial(&other).unwrap());
    }

    #[test]
    fn noise_rms_matches_request() {
        let spec = SsvepSynthSpec {
            harmonic_amplitudes_uv: vec![0.0],
            noise_rms_uv: 0.08,
            duration_s: 30.0,
            ..SsvepSynthSpec::new(8.0, 5)
        };
        let e = gen_ssvep_trial(&spec).unwrap().epoch_full;
        for ch in e.channels() {
            let r = rms(ch);
            assert!((r - 0.08).abs() < 0.08 * 0.05, "{r}");
        }
    }

    #[test]
    fn aliasing_rejected() {
        let spec = SsvepSynthSpec {
            harmonic_amplitudes_uv: vec![1.0, 1.0, 1.0],
            ..SsvepSynthSpec::new(90.0, 0)
        };
        assert!(matches!(gen_ssvep_trial(&spec), Err(SynthError::Aliasing { harmonic: 3, .. })));
        assert!(gen_ssvep_trial(&SsvepSynthSpec::new(260.0, 0)).is_err());
    }

    #[test]
    fn common_mode_record_shape_and_errors() {
        let cfg = AcquisitionConfig::default();
        let e = gen_common_mode_record(0.0, &[1.0; 8], 1.0, 1, cfg).unwrap();
        assert_eq!(e.sample_count(), 500);
        assert!((rms(e.channel(0)) - 1.0).abs() < 1e-9);
        assert!(gen_common_mode_record(0.0, &[1.0; 7], 1.0, 1, cfg).is_err());
        let mut bad = [1.0; 8];
        bad[2] = -0.1;
        assert!(gen_common_mode_record(0.0, &bad, 1.0, 1, cfg).is_err());
    }

    #[test]
    fn ideal_timing_log() {
        let spec = TimingSynthSpec {
            event_count: 10,
            ..TimingSynthSpec::default()
        };
        let log = gen_timing_log(&spec).unwrap();
        let ts: Vec<u64> = log.timestamps_us().collect();
        assert_eq!(ts, (0..10).map(|i| i * 2000).collect::<Vec<_>>());
    }

    #[test]
    fn timing_errors() {
        let spec = TimingSynthSpec { event_count: 1, ..TimingSynthSpec::default() };
        assert!(gen_timing_log(&spec).is_err());
        let spec = TimingSynthSpec { nominal_period_us: 0.0, ..TimingSynthSpec::default() };
        assert_eq!(gen_timing_log(&spec).unwrap_err(), SynthError::NonPositiveInterval);
        let spec = TimingSynthSpec {
            nominal_period_us: 2.0,
            jitter_std_us: 50.0,
            event_count: 1000,
            ..TimingSynthSpec::default()
        };
        assert_eq!(gen_timing_log(&spec).unwrap_err(), SynthError::NonPositiveInterval);
    }

    #[test]
    fn rounding_moments_limits() {
        // Wide jitter: rounding adds ~1/12 of variance and no bias.
        let (mu, v) = rounding_moments(0.3, 3.0);
        assert!(mu.abs() < 1e-6);
        assert!((v - (9.0 + 1.0 / 12.0)).abs() < 1e-3);
        assert_eq!(rounding_moments(0.3, 0.0), (-0.3, 0.0));
    }
}
