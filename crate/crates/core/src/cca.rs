//! Training-free CCA frequency recognition.
//!
//! For each candidate frequency the EEG epoch `X` (C channels) is compared
//! with a sinusoidal reference set `Y` (sin/cos at each harmonic). The squared
//! canonical correlation is the dominant eigenvalue of
//! `Cxx^-1 Cxy Cyy^-1 Cxy'`, obtained from Gauss-Jordan inverses and power
//! iteration. All buffers live in a [`CcaWorkspace`] sized at construction.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::linalg::{self, LinalgError, Matrix, PowerOptions, PowerScratch};
use crate::precision::{Precision, Real};
use crate::types::{DataError, Epoch, TrialRecording};

/// Stimulation targets used by the reference decoder.
pub const DEFAULT_TARGETS_HZ: [f64; 6] = [7.0, 8.0, 9.0, 11.0, 7.5, 8.5];
pub const DEFAULT_HARMONICS: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CcaError {
    #[error("reference harmonic {harmonic} x {freq_hz} Hz reaches Nyquist ({nyquist_hz} Hz)")]
    Aliasing {
        freq_hz: f64,
        harmonic: usize,
        nyquist_hz: f64,
    },
    #[error("invalid reference bank: {0}")]
    InvalidBank(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("degenerate covariance ({which}): {source}")]
    DegenerateCovariance {
        which: &'static str,
        source: LinalgError,
    },
    #[error("eigenvalue for {target_hz} Hz did not converge: {source}")]
    NotConverged {
        target_hz: f64,
        source: LinalgError,
    },
    #[error("window: trial has {available} samples, {policy} needs {required}")]
    WindowTooLong {
        policy: WindowPolicy,
        available: usize,
        required: usize,
    },
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Per-target sin/cos reference matrices.
#[derive(Debug, Clone)]
pub struct ReferenceBank<T> {
    pub target_frequencies_hz: Vec<f64>,
    pub harmonics: usize,
    pub sample_count: usize,
    pub sample_rate_hz: f64,
    /// One `sample_count x 2*harmonics` matrix per target, columns
    /// `[sin(2 pi k f t), cos(2 pi k f t)]` for `k = 1..=harmonics`.
    pub bases: Vec<Matrix<T>>,
}

impl<T: Real> ReferenceBank<T> {
    pub fn precision(&self) -> Precision {
        T::PRECISION
    }

    pub fn basis_count(&self) -> usize {
        2 * self.harmonics
    }
}

/// Build the reference bank. Tables are computed in `f64` and stored in `T`.
pub fn build_reference_bank<T: Real>(
    frequencies_hz: &[f64],
    harmonics: usize,
    sample_count: usize,
    sample_rate_hz: f64,
) -> Result<ReferenceBank<T>, CcaError> {
    if frequencies_hz.is_empty() {
        return Err(CcaError::InvalidBank("no target frequencies".into()));
    }
    if harmonics == 0 || sample_count == 0 {
        return Err(CcaError::InvalidBank(
            "harmonics and sample_count must be >= 1".into(),
        ));
    }
    if !(sample_rate_hz > 0.0) {
        return Err(CcaError::InvalidBank("sample rate must be > 0".into()));
    }
    let nyquist_hz = sample_rate_hz / 2.0;
    for &f in frequencies_hz {
        if !(f > 0.0) {
            return Err(CcaError::InvalidBank(format!("target {f} Hz must be > 0")));
        }
        if harmonics as f64 * f >= nyquist_hz {
            return Err(CcaError::Aliasing {
                freq_hz: f,
                harmonic: harmonics,
                nyquist_hz,
            });
        }
    }

    let tau = 2.0 * std::f64::consts::PI;
    let bases = frequencies_hz
        .iter()
        .map(|&f| {
            Matrix::from_fn(sample_count, 2 * harmonics, |n, col| {
                let k = (col / 2 + 1) as f64;
                let phase = tau * k * f * n as f64 / sample_rate_hz;
                T::from_f64(if col % 2 == 0 { phase.sin() } else { phase.cos() })
            })
        })
        .collect();
    Ok(ReferenceBank {
        target_frequencies_hz: frequencies_hz.to_vec(),
        harmonics,
        sample_count,
        sample_rate_hz,
        bases,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CcaOptions<T> {
    pub power: PowerOptions<T>,
    /// Ridge added to the diagonal of `Cxx`, as a fraction of its mean
    /// diagonal entry. Zero disables loading.
    pub diagonal_loading: f64,
}

impl<T: Real> Default for CcaOptions<T> {
    fn default() -> Self {
        CcaOptions {
            power: PowerOptions::default(),
            diagonal_loading: 0.0,
        }
    }
}

/// Fixed-capacity scratch space for [`classify`].
#[derive(Debug, Clone)]
pub struct CcaWorkspace<T> {
    channels: usize,
    samples: usize,
    bases: usize,
    xc: Matrix<T>,
    yc: Matrix<T>,
    cxx: Matrix<T>,
    cxx_inv: Matrix<T>,
    work_c: Matrix<T>,
    cyy: Matrix<T>,
    cyy_inv: Matrix<T>,
    work_h: Matrix<T>,
    cxy: Matrix<T>,
    cyy_inv_cyx: Matrix<T>,
    cxy_cyy_inv_cyx: Matrix<T>,
    product: Matrix<T>,
    power: PowerScratch<T>,
    pub options: CcaOptions<T>,
}

impl<T: Real> CcaWorkspace<T> {
    pub fn new(channels: usize, samples: usize, harmonics: usize) -> Self {
        let h = 2 * harmonics;
        CcaWorkspace {
            channels,
            samples,
            bases: h,
            xc: Matrix::zeros(channels, samples),
            yc: Matrix::zeros(h, samples),
            cxx: Matrix::zeros(channels, channels),
            cxx_inv: Matrix::zeros(channels, channels),
            work_c: Matrix::zeros(channels, channels),
            cyy: Matrix::zeros(h, h),
            cyy_inv: Matrix::zeros(h, h),
            work_h: Matrix::zeros(h, h),
            cxy: Matrix::zeros(channels, h),
            cyy_inv_cyx: Matrix::zeros(h, channels),
            cxy_cyy_inv_cyx: Matrix::zeros(channels, channels),
            product: Matrix::zeros(channels, channels),
            power: PowerScratch::new(channels),
            options: CcaOptions::default(),
        }
    }

    pub fn for_bank(channels: usize, bank: &ReferenceBank<T>) -> Self {
        Self::new(channels, bank.sample_count, bank.harmonics)
    }

    pub fn with_options(mut self, options: CcaOptions<T>) -> Self {
        self.options = options;
        self
    }

    /// Total scalar capacity held by the workspace.
    pub fn capacity(&self) -> usize {
        [
            &self.xc,
            &self.yc,
            &self.cxx,
            &self.cxx_inv,
            &self.work_c,
            &self.cyy,
            &self.cyy_inv,
            &self.work_h,
            &self.cxy,
            &self.cyy_inv_cyx,
            &self.cxy_cyy_inv_cyx,
            &self.product,
        ]
        .iter()
        .map(|m| m.as_slice().len())
        .sum()
    }
}

/// Result of one classification.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    /// `(target_hz, rho)` in bank order.
    pub correlations: Vec<(f64, f64)>,
    pub predicted_hz: f64,
    pub rho_peak: f64,
    /// `rho_peak - rho_second`; equals `rho_peak` for a single target.
    pub margin: f64,
}

impl Decision {
    /// Assemble from per-target correlations. Equal rho resolves to the lower
    /// frequency.
    pub fn from_correlations(correlations: Vec<(f64, f64)>) -> Decision {
        assert!(!correlations.is_empty());
        let mut best = 0;
        for (i, &(f, r)) in correlations.iter().enumerate().skip(1) {
            let (bf, br) = correlations[best];
            if r > br || (r == br && f < bf) {
                best = i;
            }
        }
        let (predicted_hz, rho_peak) = correlations[best];
        let second = correlations
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != best)
            .map(|(_, &(_, r))| r)
            .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.max(r))))
            .unwrap_or(0.0);
        Decision {
            correlations,
            predicted_hz,
            rho_peak,
            margin: rho_peak - second,
        }
    }
}

fn center_rows_into<T: Real>(rows: impl Iterator<Item = impl Iterator<Item = T>>, out: &mut Matrix<T>) {
    let n = out.cols();
    let inv_n = T::one() / T::from_usize(n);
    for (r, row) in rows.enumerate() {
        let mut sum = T::zero();
        for (j, v) in row.enumerate() {
            out[(r, j)] = v;
            sum += v;
        }
        let mean = sum * inv_n;
        for j in 0..n {
            out[(r, j)] -= mean;
        }
    }
}

/// Scaled Gram matrix `a b' / n` of two row sets.
fn cross_into<T: Real>(a: &Matrix<T>, b: &Matrix<T>, out: &mut Matrix<T>) {
    let inv_n = T::one() / T::from_usize(a.cols());
    a.mul_transpose_into(b, out);
    for i in 0..out.rows() {
        for j in 0..out.cols() {
            out[(i, j)] *= inv_n;
        }
    }
}

/// Classify an (already filtered) epoch against every target in `bank`.
pub fn classify<T: Real>(
    epoch: &Epoch,
    bank: &ReferenceBank<T>,
    ws: &mut CcaWorkspace<T>,
) -> Result<Decision, CcaError> {
    let c = epoch.channel_count();
    let n = epoch.sample_count();
    if n != bank.sample_count {
        return Err(CcaError::Shape(format!(
            "epoch has {n} samples, bank expects {}",
            bank.sample_count
        )));
    }
    if (epoch.sample_rate_hz() - bank.sample_rate_hz).abs() > 1e-9 * bank.sample_rate_hz {
        return Err(CcaError::Shape(format!(
            "epoch at {} Hz, bank built for {} Hz",
            epoch.sample_rate_hz(),
            bank.sample_rate_hz
        )));
    }
    if (ws.channels, ws.samples, ws.bases) != (c, n, bank.basis_count()) {
        return Err(CcaError::Shape(format!(
            "workspace sized for {}x{} with {} bases, got {c}x{n} with {}",
            ws.channels,
            ws.samples,
            ws.bases,
            bank.basis_count()
        )));
    }

    center_rows_into(
        epoch.channels().map(|ch| ch.iter().map(|&v| T::from_f64(v))),
        &mut ws.xc,
    );
    cross_into(&ws.xc, &ws.xc, &mut ws.cxx);
    if ws.options.diagonal_loading > 0.0 {
        let mean_diag = (0..c).fold(T::zero(), |s, i| s + ws.cxx[(i, i)]) / T::from_usize(c);
        let ridge = T::from_f64(ws.options.diagonal_loading) * mean_diag;
        for i in 0..c {
            ws.cxx[(i, i)] += ridge;
        }
    }
    linalg::invert_gauss_jordan_into(&ws.cxx, &mut ws.work_c, &mut ws.cxx_inv).map_err(
        |source| CcaError::DegenerateCovariance {
            which: "Cxx",
            source,
        },
    )?;

    let h = bank.basis_count();
    let mut correlations = Vec::with_capacity(bank.target_frequencies_hz.len());
    for (&target_hz, basis) in bank.target_frequencies_hz.iter().zip(&bank.bases) {
        center_rows_into((0..h).map(|col| (0..n).map(move |i| basis[(i, col)])), &mut ws.yc);
        cross_into(&ws.yc, &ws.yc, &mut ws.cyy);
        cross_into(&ws.xc, &ws.yc, &mut ws.cxy);
        linalg::invert_gauss_jordan_into(&ws.cyy, &mut ws.work_h, &mut ws.cyy_inv).map_err(
            |source| CcaError::DegenerateCovariance {
                which: "Cyy",
                source,
            },
        )?;

        // M = Cxx^-1 (Cxy Cyy^-1 Cyx)
        ws.cyy_inv.mul_transpose_into(&ws.cxy, &mut ws.cyy_inv_cyx);
        ws.cxy.mul_into(&ws.cyy_inv_cyx, &mut ws.cxy_cyy_inv_cyx);
        ws.cxx_inv.mul_into(&ws.cxy_cyy_inv_cyx, &mut ws.product);

        let (lambda, _) = linalg::power_iteration_into(
            &ws.product,
            Some(&ws.cxx),
            ws.options.power,
            &mut ws.power,
        )
        .map_err(|source| CcaError::NotConverged { target_hz, source })?;
        let rho = lambda.max(T::zero()).min(T::one()).sqrt();
        correlations.push((target_hz, rho.as_f64()));
    }
    Ok(Decision::from_correlations(correlations))
}

/// Which part of a trial is analysed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum WindowPolicy {
    First4s,
    #[default]
    Final4s,
    Full5s,
}

impl WindowPolicy {
    pub const ALL: [WindowPolicy; 3] = [WindowPolicy::First4s, WindowPolicy::Final4s, WindowPolicy::Full5s];

    pub fn name(self) -> &'static str {
        match self {
            WindowPolicy::First4s => "first_4s",
            WindowPolicy::Final4s => "final_4s",
            WindowPolicy::Full5s => "full_5s",
        }
    }

    /// Number of samples the policy selects from a trial of `total` samples.
    pub fn window_samples(self, sample_rate_hz: f64, total: usize) -> Result<usize, CcaError> {
        let (seconds, take_all) = match self {
            WindowPolicy::First4s | WindowPolicy::Final4s => (4.0, false),
            WindowPolicy::Full5s => (5.0, true),
        };
        let required = (seconds * sample_rate_hz).round() as usize;
        if total < required {
            return Err(CcaError::WindowTooLong {
                policy: self,
                available: total,
                required,
            });
        }
        Ok(if take_all { total } else { required })
    }
}

impl fmt::Display for WindowPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WindowPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        WindowPolicy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown window policy '{s}' (first_4s|final_4s|full_5s)"))
    }
}

/// Exact sample-index slice of a trial for the given policy.
pub fn select_analysis_window(
    trial: &TrialRecording,
    policy: WindowPolicy,
) -> Result<Epoch, CcaError> {
    let e = &trial.epoch_full;
    let total = e.sample_count();
    let len = policy.window_samples(e.sample_rate_hz(), total)?;
    let (start, end) = match policy {
        WindowPolicy::First4s => (0, len),
        WindowPolicy::Final4s => (total - len, total),
        WindowPolicy::Full5s => (0, total),
    };
    Ok(e.slice(start, end)?)
}
