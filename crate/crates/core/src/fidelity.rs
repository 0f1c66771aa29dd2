//! Mixed-precision replay: the same trials through several pipeline arms,
//! compared against the `DD` reference.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::pipeline::{DecodePipeline, PipelineError, PipelineRegistry, PipelineSpec, PrecisionConfig};
use crate::types::TrialRecording;

#[derive(Debug, Error)]
pub enum FidelityError {
    #[error("no trials supplied")]
    NoTrials,
    #[error("configuration list must include DD")]
    MissingReference,
    #[error("configuration {0} listed twice")]
    DuplicateConfig(PrecisionConfig),
    #[error("trial {index} ({config}): {source}")]
    Trial {
        index: usize,
        config: PrecisionConfig,
        source: PipelineError,
    },
    #[error("pipeline: {0}")]
    Pipeline(#[from] PipelineError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Outcome of one trial under one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct FidelityRecord {
    pub trial: usize,
    pub config: PrecisionConfig,
    pub predicted_hz: f64,
    pub rho_peak: f64,
    pub margin: f64,
    /// `margin - margin_DD` for the same trial.
    pub delta_margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigSummary {
    pub config: PrecisionConfig,
    pub agreement_fraction: f64,
    pub disagreements: usize,
    pub max_abs_margin_deviation: f64,
    /// Fraction of labelled trials decoded correctly, if every trial is labelled.
    pub accuracy: Option<f64>,
}

/// Separation of CCA-stage and filter-stage effects, from the `FD` and `FF`
/// arms (which share the same binary32 filtered signal).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Attribution {
    /// `max |m_FF - m_FD|`: CCA precision alone.
    pub cca_stage_max_abs: f64,
    /// `max |m_FD - m_DD|`: filter precision alone.
    pub filter_stage_max_abs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FidelityReport {
    pub trial_count: usize,
    /// In the order the configurations were requested.
    pub summaries: Vec<ConfigSummary>,
    /// Sorted by trial, then configuration order.
    pub records: Vec<FidelityRecord>,
    pub attribution: Option<Attribution>,
}

impl FidelityReport {
    pub fn summary(&self, config: PrecisionConfig) -> Option<&ConfigSummary> {
        self.summaries.iter().find(|s| s.config == config)
    }

    pub fn records_for(&self, config: PrecisionConfig) -> impl Iterator<Item = &FidelityRecord> {
        self.records.iter().filter(move |r| r.config == config)
    }

    pub fn predictions(&self, config: PrecisionConfig) -> Vec<f64> {
        self.records_for(config).map(|r| r.predicted_hz).collect()
    }

    /// Trial indices where `config` disagrees with `DD`.
    pub fn disagreement_set(&self, config: PrecisionConfig) -> Vec<usize> {
        let reference: HashMap<usize, f64> = self
            .records_for(PrecisionConfig::DD)
            .map(|r| (r.trial, r.predicted_hz))
            .collect();
        self.records_for(config)
            .filter(|r| reference.get(&r.trial) != Some(&r.predicted_hz))
            .map(|r| r.trial)
            .collect()
    }

    pub fn write_records_csv(&self, path: impl AsRef<Path>) -> Result<(), FidelityError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_records_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    /// `trial,config,predicted_hz,rho_peak,margin`
    pub fn write_records_to(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "trial,config,predicted_hz,rho_peak,margin")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{:?},{:?}",
                r.trial, r.config, r.predicted_hz, r.rho_peak, r.margin
            )?;
        }
        Ok(())
    }

    pub fn write_summary_csv(&self, path: impl AsRef<Path>) -> Result<(), FidelityError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_summary_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    /// `config,trials,agreement_pct,disagreements,max_abs_delta_margin,accuracy_pct`
    pub fn write_summary_to(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(
            w,
            "config,trials,agreement_pct,disagreements,max_abs_delta_margin,accuracy_pct"
        )?;
        for s in &self.summaries {
            let accuracy = s
                .accuracy
                .map_or_else(String::new, |a| format!("{:.2}", 100.0 * a));
            writeln!(
                w,
                "{},{},{:.2},{},{:.3e},{}",
                s.config,
                self.trial_count,
                100.0 * s.agreement_fraction,
                s.disagreements,
                s.max_abs_margin_deviation,
                accuracy
            )?;
        }
        Ok(())
    }
}

/// Replay `trials` through every configuration in `configs`.
///
/// Each trial is windowed per `spec.window`, filtered at the arm's filter
/// precision and classified at its CCA precision. Pipelines are prepared once
/// per (configuration, window length) and reused.
pub fn run_fidelity_suite(
    trials: &[TrialRecording],
    spec: &PipelineSpec,
    configs: &[PrecisionConfig],
    registry: &PipelineRegistry,
) -> Result<FidelityReport, FidelityError> {
    if trials.is_empty() {
        return Err(FidelityError::NoTrials);
    }
    if !configs.contains(&PrecisionConfig::DD) {
        return Err(FidelityError::MissingReference);
    }
    for (i, c) in configs.iter().enumerate() {
        if configs[..i].contains(c) {
            return Err(FidelityError::DuplicateConfig(*c));
        }
    }

    let mut cache: HashMap<(PrecisionConfig, usize, usize), Box<dyn DecodePipeline>> =
        HashMap::new();
    let mut decisions = Vec::with_capacity(trials.len());
    for (index, trial) in trials.iter().enumerate() {
        let e = &trial.epoch_full;
        let mut row = Vec::with_capacity(configs.len());
        for &config in configs {
            let wrap = |source| FidelityError::Trial {
                index,
                config,
                source,
            };
            let samples = spec
                .window
                .window_samples(e.sample_rate_hz(), e.sample_count())
                .map_err(|err| wrap(err.into()))?;
            let key = (config, e.channel_count(), samples);
            if !cache.contains_key(&key) {
                let p = registry
                    .build(&config.label(), spec, e.channel_count(), samples)
                    .map_err(wrap)?;
                cache.insert(key, p);
            }
            let pipeline = cache.get_mut(&key).expect("inserted above");
            row.push(pipeline.decode_trial(trial).map_err(wrap)?);
        }
        decisions.push(row);
    }

    let dd = configs
        .iter()
        .position(|c| c.is_reference())
        .expect("checked above");
    let mut records = Vec::with_capacity(trials.len() * configs.len());
    for (trial, row) in decisions.iter().enumerate() {
        let m_ref = row[dd].margin;
        for (&config, d) in configs.iter().zip(row) {
            records.push(FidelityRecord {
                trial,
                config,
                predicted_hz: d.predicted_hz,
                rho_peak: d.rho_peak,
                margin: d.margin,
                delta_margin: d.margin - m_ref,
            });
        }
    }

    let labels: Option<Vec<f64>> = trials.iter().map(|t| t.true_label_hz).collect();
    let n = trials.len();
    let summaries = configs
        .iter()
        .enumerate()
        .map(|(k, &config)| {
            let disagreements = decisions
                .iter()
                .filter(|row| row[k].predicted_hz != row[dd].predicted_hz)
                .count();
            let max_abs_margin_deviation = decisions
                .iter()
                .map(|row| (row[k].margin - row[dd].margin).abs())
                .fold(0.0, f64::max);
            let accuracy = labels.as_ref().map(|labels| {
                let correct = decisions
                    .iter()
                    .zip(labels)
                    .filter(|(row, &l)| row[k].predicted_hz == l)
                    .count();
                correct as f64 / n as f64
            });
            ConfigSummary {
                config,
                agreement_fraction: 1.0 - disagreements as f64 / n as f64,
                disagreements,
                max_abs_margin_deviation,
                accuracy,
            }
        })
        .collect();

    let pos = |c: PrecisionConfig| configs.iter().position(|&x| x == c);
    let attribution = match (pos(PrecisionConfig::FD), pos(PrecisionConfig::FF)) {
        (Some(fd), Some(ff)) => {
            let max_abs = |a: usize, b: usize| {
                decisions
                    .iter()
                    .map(|row| (row[a].margin - row[b].margin).abs())
                    .fold(0.0, f64::max)
            };
            Some(Attribution {
                cca_stage_max_abs: max_abs(ff, fd),
                filter_stage_max_abs: max_abs(fd, dd),
            })
        }
        _ => None,
    };

    Ok(FidelityReport {
        trial_count: n,
        summaries,
        records,
        attribution,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_ssvep_trial, SsvepSynthSpec};

    fn trials(n: usize) -> Vec<TrialRecording> {
        (0..n)
            .map(|i| {
                let f = crate::cca::DEFAULT_TARGETS_HZ[i % 6];
                let mut s = SsvepSynthSpec::new(f, 100 + i as u64);
                s.noise_rms_uv = 2.0;
                gen_ssvep_trial(&s).unwrap()
            })
            .collect()
    }

    #[test]
    fn reference_is_a_fixed_point() {
        let spec = PipelineSpec::new(500.0);
        let r = run_fidelity_suite(&trials(6), &spec, &[PrecisionConfig::DD], &PipelineRegistry::default())
            .unwrap();
        let s = r.summary(PrecisionConfig::DD).unwrap();
        assert_eq!(s.agreement_fraction, 1.0);
        assert_eq!(s.disagreements, 0);
        assert_eq!(s.max_abs_margin_deviation, 0.0);
        assert!(r.records.iter().all(|x| x.delta_margin == 0.0));
        assert!(r.attribution.is_none());
    }

    #[test]
    fn all_arms_and_csv() {
        let spec = PipelineSpec::new(500.0);
        let t = trials(6);
        let reg = PipelineRegistry::default();
        let r = run_fidelity_suite(&t, &spec, &PrecisionConfig::ALL, &reg).unwrap();
        assert_eq!(r.records.len(), 24);
        assert_eq!(r.records[1].trial, 0);
        assert_eq!(r.records[1].config, PrecisionConfig::DF);
        for s in &r.summaries {
            assert_eq!(s.agreement_fraction, 1.0 - s.disagreements as f64 / 6.0);
            assert!(s.accuracy.is_some());
        }
        let again = run_fidelity_suite(&t, &spec, &PrecisionConfig::ALL, &reg).unwrap();
        assert_eq!(r, again);

        let mut buf = Vec::new();
        r.write_records_to(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("trial,config,predicted_hz,rho_peak,margin\n0,DD,"));
        assert_eq!(text.lines().count(), 25);
    }

    #[test]
    fn suite_errors() {
        let spec = PipelineSpec::new(500.0);
        let reg = PipelineRegistry::default();
        assert!(matches!(
            run_fidelity_suite(&[], &spec, &[PrecisionConfig::DD], &reg),
            Err(FidelityError::NoTrials)
        ));
        assert!(matches!(
            run_fidelity_suite(&trials(1), &spec, &[PrecisionConfig::DF], &reg),
            Err(FidelityError::MissingReference)
        ));
        let mut t = trials(3);
        t[2].epoch_full = t[2].epoch_full.slice(0, 1000).unwrap();
        match run_fidelity_suite(&t, &spec, &[PrecisionConfig::DD], &reg) {
            Err(FidelityError::Trial { index, .. }) => assert_eq!(index, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
