//! Decoding accuracy as a function of the analysis window.

use std::collections::HashMap;
use std::io::Write;

use super::AnalyticsError;
use crate::cca::WindowPolicy;
use crate::pipeline::{DecodePipeline, PipelineRegistry, PipelineSpec, PrecisionConfig};
use crate::types::TrialRecording;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowRow {
    pub policy: WindowPolicy,
    pub correct: usize,
    pub total: usize,
}

impl WindowRow {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }

    /// Percentage rounded to two decimals, e.g. `99.17`.
    pub fn accuracy_pct(&self) -> String {
        format!("{:.2}", 100.0 * self.accuracy())
    }

    pub fn write_csv(rows: &[WindowRow], mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "policy,correct,total,accuracy_pct")?;
        for r in rows {
            writeln!(w, "{},{},{},{}", r.policy, r.correct, r.total, r.accuracy_pct())?;
        }
        Ok(())
    }
}

/// Score every window policy on labelled trials with the `DD` pipeline.
pub fn window_comparison(
    trials: &[TrialRecording],
    spec: &PipelineSpec,
) -> Result<Vec<WindowRow>, AnalyticsError> {
    window_comparison_with(trials, spec, &PipelineRegistry::default(), &PrecisionConfig::DD.label())
}

/// For each policy: slice the window, prepare the bank for that length,
/// filter, classify and score against the trial label.
pub fn window_comparison_with(
    trials: &[TrialRecording],
    spec: &PipelineSpec,
    registry: &PipelineRegistry,
    pipeline: &str,
) -> Result<Vec<WindowRow>, AnalyticsError> {
    if trials.is_empty() {
        return Err(AnalyticsError::Empty("no trials"));
    }
    if let Some(i) = trials.iter().position(|t| t.true_label_hz.is_none()) {
        return Err(AnalyticsError::Unlabelled(i));
    }
    let mut rows = Vec::with_capacity(WindowPolicy::ALL.len());
    for policy in WindowPolicy::ALL {
        let spec = PipelineSpec {
            window: policy,
            ..spec.clone()
        };
        let mut cache: HashMap<(usize, usize), Box<dyn DecodePipeline>> = HashMap::new();
        let mut correct = 0;
        for trial in trials {
            let e = &trial.epoch_full;
            let samples = policy
                .window_samples(e.sample_rate_hz(), e.sample_count())
                .map_err(|err| AnalyticsError::Pipeline(err.into()))?;
            let key = (e.channel_count(), samples);
            if !cache.contains_key(&key) {
                cache.insert(key, registry.build(pipeline, &spec, key.0, key.1)?);
            }
            let d = cache.get_mut(&key).expect("inserted above").decode_trial(trial)?;
            if Some(d.predicted_hz) == trial.true_label_hz {
                correct += 1;
            }
        }
        rows.push(WindowRow {
            policy,
            correct,
            total: trials.len(),
        });
    }
    Ok(rows)
}
