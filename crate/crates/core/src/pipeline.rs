//! Filter-then-classify decode pipelines, selectable by precision label.
//!
//! A pipeline is prepared once for a sample count (filter coefficients,
//! reference bank and CCA workspace) and then reused for every epoch of that
//! length. Variants are registered by name in a [`PipelineRegistry`]; the
//! default registry carries the four precision arms `DD`, `DF`, `FD`, `FF`
//! (first letter filter, second CCA).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::cca::{
    self, CcaError, CcaOptions, CcaWorkspace, Decision, ReferenceBank, WindowPolicy,
    DEFAULT_HARMONICS, DEFAULT_TARGETS_HZ,
};
use crate::filter::{self, FilterError, FilterSpec, IirCoefficients};
use crate::linalg::PowerOptions;
use crate::precision::{Precision, Real};
use crate::types::{Epoch, TrialRecording};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("filter: {0}")]
    Filter(#[from] FilterError),
    #[error("cca: {0}")]
    Cca(#[from] CcaError),
    #[error("unknown pipeline '{0}'")]
    Unknown(String),
    #[error("pipeline '{0}' already registered")]
    Duplicate(String),
    #[error("invalid precision label '{0}' (expected two of D/F, e.g. DF)")]
    Label(String),
    #[error("pipeline prepared for {expected} samples, got {got}")]
    SampleCount { expected: usize, got: usize },
}

/// Filter and CCA arithmetic of one pipeline arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PrecisionConfig {
    pub filter_precision: Precision,
    pub cca_precision: Precision,
}

impl PrecisionConfig {
    pub const DD: PrecisionConfig = PrecisionConfig::new(Precision::Binary64, Precision::Binary64);
    pub const DF: PrecisionConfig = PrecisionConfig::new(Precision::Binary64, Precision::Binary32);
    pub const FD: PrecisionConfig = PrecisionConfig::new(Precision::Binary32, Precision::Binary64);
    pub const FF: PrecisionConfig = PrecisionConfig::new(Precision::Binary32, Precision::Binary32);
    pub const ALL: [PrecisionConfig; 4] = [Self::DD, Self::DF, Self::FD, Self::FF];

    pub const fn new(filter_precision: Precision, cca_precision: Precision) -> Self {
        PrecisionConfig {
            filter_precision,
            cca_precision,
        }
    }

    /// Two-letter label, derived from the precision fields so it cannot
    /// disagree with them.
    pub fn label(&self) -> String {
        [self.filter_precision.letter(), self.cca_precision.letter()]
            .iter()
            .collect()
    }

    pub fn is_reference(&self) -> bool {
        *self == Self::DD
    }
}

impl fmt::Display for PrecisionConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for PrecisionConfig {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let letters: Vec<char> = s.trim().chars().collect();
        match letters.as_slice() {
            [f, c] => match (Precision::from_letter(*f), Precision::from_letter(*c)) {
                (Some(f), Some(c)) => Ok(PrecisionConfig::new(f, c)),
                _ => Err(PipelineError::Label(s.to_string())),
            },
            _ => Err(PipelineError::Label(s.to_string())),
        }
    }
}

/// Everything a pipeline needs besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSpec {
    pub filter: FilterSpec,
    pub targets_hz: Vec<f64>,
    pub harmonics: usize,
    pub window: WindowPolicy,
    /// Power-iteration tolerance; `None` uses the CCA precision's default.
    pub power_tol: Option<f64>,
    pub max_iters: usize,
    pub diagonal_loading: f64,
}

impl PipelineSpec {
    pub fn new(sample_rate_hz: f64) -> Self {
        PipelineSpec {
            filter: FilterSpec::eeg_band(sample_rate_hz),
            targets_hz: DEFAULT_TARGETS_HZ.to_vec(),
            harmonics: DEFAULT_HARMONICS,
            window: WindowPolicy::default(),
            power_tol: None,
            max_iters: PowerOptions::<f64>::default().max_iters,
            diagonal_loading: 0.0,
        }
    }

    fn cca_options<T: Real>(&self) -> CcaOptions<T> {
        CcaOptions {
            power: PowerOptions {
                tol: self.power_tol.map_or(T::POWER_TOLERANCE, T::from_f64),
                max_iters: self.max_iters,
            },
            diagonal_loading: self.diagonal_loading,
        }
    }
}

/// A prepared decode chain.
pub trait DecodePipeline: Send {
    fn config(&self) -> PrecisionConfig;

    /// Samples per epoch this pipeline was prepared for.
    fn sample_count(&self) -> usize;

    fn window(&self) -> WindowPolicy;

    /// Zero-phase bandpass at the filter precision. Values are returned in
    /// `f64`, which represents `binary32` results exactly.
    fn filter(&self, epoch: &Epoch) -> Result<Epoch, PipelineError>;

    /// CCA at the classifier precision on an already filtered epoch.
    fn classify(&mut self, filtered: &Epoch) -> Result<Decision, PipelineError>;

    fn decode(&mut self, epoch: &Epoch) -> Result<Decision, PipelineError> {
        let filtered = self.filter(epoch)?;
        self.classify(&filtered)
    }

    /// Select the analysis window from a full trial, then decode it.
    fn decode_trial(&mut self, trial: &TrialRecording) -> Result<Decision, PipelineError> {
        let epoch = cca::select_analysis_window(trial, self.window())?;
        self.decode(&epoch)
    }
}

/// Generic arm: filter in `F`, classify in `C`.
pub struct MixedPrecisionPipeline<F, C> {
    coeffs: IirCoefficients<F>,
    bank: ReferenceBank<C>,
    workspace: CcaWorkspace<C>,
    window: WindowPolicy,
}

impl<F: Real, C: Real> MixedPrecisionPipeline<F, C> {
    pub fn prepare(
        spec: &PipelineSpec,
        channel_count: usize,
        sample_count: usize,
    ) -> Result<Self, PipelineError> {
        let coeffs = filter::design_butterworth_bandpass::<F>(&spec.filter)?;
        let bank = cca::build_reference_bank::<C>(
            &spec.targets_hz,
            spec.harmonics,
            sample_count,
            spec.filter.sample_rate_hz,
        )?;
        let workspace =
            CcaWorkspace::for_bank(channel_count, &bank).with_options(spec.cca_options());
        Ok(MixedPrecisionPipeline {
            coeffs,
            bank,
            workspace,
            window: spec.window,
        })
    }

    pub fn coefficients(&self) -> &IirCoefficients<F> {
        &self.coeffs
    }

    pub fn bank(&self) -> &ReferenceBank<C> {
        &self.bank
    }
}

impl<F: Real, C: Real> DecodePipeline for MixedPrecisionPipeline<F, C> {
    fn config(&self) -> PrecisionConfig {
        PrecisionConfig::new(F::PRECISION, C::PRECISION)
    }

    fn sample_count(&self) -> usize {
        self.bank.sample_count
    }

    fn window(&self) -> WindowPolicy {
        self.window
    }

    fn filter(&self, epoch: &Epoch) -> Result<Epoch, PipelineError> {
        if epoch.sample_count() != self.bank.sample_count {
            return Err(PipelineError::SampleCount {
                expected: self.bank.sample_count,
                got: epoch.sample_count(),
            });
        }
        Ok(filter::filtfilt(&self.coeffs, epoch)?)
    }

    fn classify(&mut self, filtered: &Epoch) -> Result<Decision, PipelineError> {
        Ok(cca::classify(filtered, &self.bank, &mut self.workspace)?)
    }
}

/// Builds a prepared pipeline for `(spec, channel_count, sample_count)`.
pub type PipelineFactory = Arc<
    dyn Fn(&PipelineSpec, usize, usize) -> Result<Box<dyn DecodePipeline>, PipelineError>
        + Send
        + Sync,
>;

fn mixed_factory<F: Real, C: Real>() -> PipelineFactory {
    Arc::new(|spec, channels, samples| {
        Ok(Box::new(MixedPrecisionPipeline::<F, C>::prepare(spec, channels, samples)?)
            as Box<dyn DecodePipeline>)
    })
}

/// Named pipeline factories.
#[derive(Clone)]
pub struct PipelineRegistry {
    factories: BTreeMap<String, PipelineFactory>,
}

impl PipelineRegistry {
    pub fn empty() -> Self {
        PipelineRegistry {
            factories: BTreeMap::new(),
        }
    }

    /// `DD`, `DF`, `FD` and `FF`.
    pub fn with_defaults() -> Self {
        let mut r = Self::empty();
        for (cfg, factory) in [
            (PrecisionConfig::DD, mixed_factory::<f64, f64>()),
            (PrecisionConfig::DF, mixed_factory::<f64, f32>()),
            (PrecisionConfig::FD, mixed_factory::<f32, f64>()),
            (PrecisionConfig::FF, mixed_factory::<f32, f32>()),
        ] {
            r.register(cfg.label(), factory).expect("default labels are unique");
        }
        r
    }

    pub fn register(
        &mut self,
        name: impl Into<String>,
        factory: PipelineFactory,
    ) -> Result<(), PipelineError> {
        let name = name.into();
        if self.factories.contains_key(&name) {
            return Err(PipelineError::Duplicate(name));
        }
        self.factories.insert(name, factory);
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn build(
        &self,
        name: &str,
        spec: &PipelineSpec,
        channel_count: usize,
        sample_count: usize,
    ) -> Result<Box<dyn DecodePipeline>, PipelineError> {
        let factory = self
            .factories
            .get(name)
            .ok_or_else(|| PipelineError::Unknown(name.to_string()))?;
        factory(spec, channel_count, sample_count)
    }

    /// Build a pipeline sized for the analysis window of `trial`.
    pub fn build_for_trial(
        &self,
        name: &str,
        spec: &PipelineSpec,
        trial: &TrialRecording,
    ) -> Result<Box<dyn DecodePipeline>, PipelineError> {
        let e = &trial.epoch_full;
        let samples = spec.window.window_samples(e.sample_rate_hz(), e.sample_count())?;
        self.build(name, spec, e.channel_count(), samples)
    }
}

impl Default for PipelineRegistry {
    fn default() -> Self {
        Self::with_defaults()
    }
}

impl fmt::Debug for PipelineRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_ssvep_trial, SsvepSynthSpec};

    #[test]
    fn labels_follow_fields() {
        for cfg in PrecisionConfig::ALL {
            assert_eq!(cfg.label().parse::<PrecisionConfig>().unwrap(), cfg);
        }
        assert_eq!(PrecisionConfig::FD.label(), "FD");
        assert_eq!(PrecisionConfig::FD.filter_precision, Precision::Binary32);
        assert!("DX".parse::<PrecisionConfig>().is_err());
        assert!("DDD".parse::<PrecisionConfig>().is_err());
    }

    #[test]
    fn defaults_registered() {
        let r = PipelineRegistry::with_defaults();
        assert_eq!(r.names().collect::<Vec<_>>(), ["DD", "DF", "FD", "FF"]);
        let spec = PipelineSpec::new(500.0);
        for name in ["DD", "DF", "FD", "FF"] {
            let p = r.build(name, &spec, 8, 2000).unwrap();
            assert_eq!(p.config().label(), name);
            assert_eq!(p.sample_count(), 2000);
        }
        assert!(matches!(r.build("XX", &spec, 8, 2000), Err(PipelineError::Unknown(_))));
    }

    #[test]
    fn duplicate_registration_rejected() {
        let mut r = PipelineRegistry::with_defaults();
        let err = r.register("DD", mixed_factory::<f64, f64>()).unwrap_err();
        assert_eq!(err, PipelineError::Duplicate("DD".into()));
    }

    #[test]
    fn decode_trial_uses_window() {
        let mut s = SsvepSynthSpec::new(9.0, 3);
        s.noise_rms_uv = 0.5;
        let trial = gen_ssvep_trial(&s).unwrap();
        let spec = PipelineSpec::new(500.0);
        let r = PipelineRegistry::with_defaults();
        let mut p = r.build_for_trial("DD", &spec, &trial).unwrap();
        let d = p.decode_trial(&trial).unwrap();
        assert_eq!(d.predicted_hz, 9.0);
        let wrong = trial.epoch_full.slice(0, 1500).unwrap();
        assert!(matches!(p.decode(&wrong), Err(PipelineError::SampleCount { .. })));
    }

    #[test]
    fn binary32_filter_output_is_representable() {
        let trial = gen_ssvep_trial(&SsvepSynthSpec::new(8.0, 1)).unwrap();
        let spec = PipelineSpec::new(500.0);
        let r = PipelineRegistry::with_defaults();
        let p = r.build("FD", &spec, 8, 2500).unwrap();
        let y = p.filter(&trial.epoch_full).unwrap();
        assert!(y.as_flat().iter().all(|&v| (v as f32) as f64 == v));
    }
}
