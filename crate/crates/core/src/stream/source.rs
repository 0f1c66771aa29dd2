//! Sample generators feeding the device ticker.

use std::f64::consts::PI;

use rand_distr::{Distribution, StandardNormal};

use super::codec::EEG_CHANNELS;
use crate::synth::{rng_from_seed, SynthRng};
use crate::types::AcquisitionConfig;

/// Produces one multichannel sample per tick. Called only from the ticker.
pub trait FrameSource: Send {
    /// ADC counts for sample `index`.
    fn sample(&mut self, index: u64) -> [i32; EEG_CHANNELS];

    fn accel(&mut self, _index: u64) -> Option<[i16; 3]> {
        None
    }

    fn battery_pct(&self) -> u8 {
        100
    }
}

/// Continuous SSVEP-like signal plus white noise, quantized to counts.
pub struct SyntheticSsvepSource {
    pub config: AcquisitionConfig,
    pub target_hz: f64,
    pub harmonic_amplitudes_uv: Vec<f64>,
    pub noise_rms_uv: f64,
    pub with_accel: bool,
    rng: SynthRng,
}

impl SyntheticSsvepSource {
    pub fn new(config: AcquisitionConfig, target_hz: f64, noise_rms_uv: f64, seed: u64) -> Self {
        SyntheticSsvepSource {
            config,
            target_hz,
            harmonic_amplitudes_uv: vec![1.0, 0.5],
            noise_rms_uv,
            with_accel: false,
            rng: rng_from_seed(seed),
        }
    }
}

impl FrameSource for SyntheticSsvepSource {
    fn sample(&mut self, index: u64) -> [i32; EEG_CHANNELS] {
        let t = index as f64 / self.config.sample_rate_hz;
        let s: f64 = self
            .harmonic_amplitudes_uv
            .iter()
            .enumerate()
            .map(|(k, &a)| a * (2.0 * PI * (k + 1) as f64 * self.target_hz * t).sin())
            .sum();
        let mut out = [0i32; EEG_CHANNELS];
        for v in out.iter_mut().take(self.config.channel_count) {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            *v = self.config.uv_to_counts(s + self.noise_rms_uv * z);
        }
        out
    }

    fn accel(&mut self, index: u64) -> Option<[i16; 3]> {
        // 1 g on z, 16384 counts per g.
        self.with_accel.then_some([0, 0, 16384 + (index % 3) as i16 - 1])
    }
}
