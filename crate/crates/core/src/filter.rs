//! Butterworth bandpass design and zero-phase forward-backward filtering.
//!
//! The design maps the analog Butterworth prototype to a bandpass with
//! prewarped band edges and discretizes it with the bilinear transform. The
//! result is kept as a single transfer function (`2 * order + 1` taps) and
//! realized in Direct Form II transposed. Every step runs in the precision of
//! the coefficient type, so a `binary32` filter never touches `f64`.

use num_complex::Complex;
use thiserror::Error;

use crate::linalg::LinalgError;
use crate::precision::{Precision, Real};
use crate::types::{DataError, Epoch};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("invalid filter spec: {0}")]
    InvalidSpec(String),
    #[error("designed filter is unstable (reflection coefficient {index} has magnitude {magnitude})")]
    Unstable { index: usize, magnitude: f64 },
    #[error("designed filter has non-finite coefficients")]
    NonFinite,
    #[error("epoch too short for padding: {samples} samples, need more than {required}")]
    TooShort { samples: usize, required: usize },
    #[error("frequency {freq_hz} Hz outside [0, {nyquist_hz}] Hz")]
    FrequencyOutOfRange { freq_hz: f64, nyquist_hz: f64 },
    #[error("sample rate mismatch: filter designed for {designed} Hz, epoch at {actual} Hz")]
    RateMismatch { designed: f64, actual: f64 },
    #[error("initial state: {0}")]
    InitialState(#[from] LinalgError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSpec {
    pub order: usize,
    pub low_hz: f64,
    pub high_hz: f64,
    pub sample_rate_hz: f64,
    /// Samples of odd reflection per end. `None` uses `3 * (taps - 1)`.
    pub pad_len: Option<usize>,
}

impl FilterSpec {
    /// The 3rd-order 2-45 Hz bandpass.
    pub fn eeg_band(sample_rate_hz: f64) -> Self {
        FilterSpec {
            order: 3,
            low_hz: 2.0,
            high_hz: 45.0,
            sample_rate_hz,
            pad_len: None,
        }
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        if self.order == 0 {
            return Err(FilterError::InvalidSpec("order must be >= 1".into()));
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(FilterError::InvalidSpec("sample rate must be > 0".into()));
        }
        let nyq = self.sample_rate_hz / 2.0;
        if !(self.low_hz > 0.0 && self.low_hz < self.high_hz && self.high_hz < nyq) {
            return Err(FilterError::InvalidSpec(format!(
                "band edges must satisfy 0 < low < high < {nyq} Hz (got {}..{})",
                self.low_hz, self.high_hz
            )));
        }
        Ok(())
    }

    pub fn tap_count(&self) -> usize {
        2 * self.order + 1
    }

    pub fn pad_length(&self) -> usize {
        self.pad_len.unwrap_or(3 * (self.tap_count() - 1))
    }
}

/// Transfer function `B(z) / A(z)`, coefficients in ascending powers of `z^-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct IirCoefficients<T> {
    pub b: Vec<T>,
    pub a: Vec<T>,
    pub sample_rate_hz: f64,
    pad_len: usize,
}

impl<T: Real> IirCoefficients<T> {
    /// Wrap externally supplied coefficients. Normalizes by `a[0]` and checks
    /// stability.
    pub fn new(
        b: Vec<T>,
        a: Vec<T>,
        sample_rate_hz: f64,
        pad_len: usize,
    ) -> Result<Self, FilterError> {
        if a.is_empty() || b.len() != a.len() {
            return Err(FilterError::InvalidSpec(
                "numerator and denominator must have equal non-zero length".into(),
            ));
        }
        if b.iter().chain(&a).any(|v| !v.is_finite()) || a[0] == T::zero() {
            return Err(FilterError::NonFinite);
        }
        let a0 = a[0];
        let (b, mut a): (Vec<T>, Vec<T>) = if a0 == T::one() {
            (b, a)
        } else {
            (b.iter().map(|&v| v / a0).collect(), a.iter().map(|&v| v / a0).collect())
        };
        a[0] = T::one();
        check_stability(&a)?;
        Ok(IirCoefficients {
            b,
            a,
            sample_rate_hz,
            pad_len,
        })
    }

    pub fn precision(&self) -> Precision {
        T::PRECISION
    }

    pub fn pad_len(&self) -> usize {
        self.pad_len
    }
}

/// Schur-Cohn step-down test: stable iff every reflection coefficient has
/// magnitude below one. Evaluated in `f64` on the exact coefficient values.
fn check_stability<T: Real>(a: &[T]) -> Result<(), FilterError> {
    let mut poly: Vec<f64> = a.iter().map(|v| v.as_f64()).collect();
    while poly.len() > 1 {
        let m = poly.len() - 1;
        let k = poly[m] / poly[0];
        if !(k.abs() < 1.0) {
            return Err(FilterError::Unstable {
                index: m,
                magnitude: k.abs(),
            });
        }
        let denom = 1.0 - k * k;
        let next: Vec<f64> = (0..m)
            .map(|i| (poly[i] - k * poly[m - i]) / poly[0] / denom)
            .collect();
        poly = next;
    }
    Ok(())
}

fn poly_from_roots<T: Real>(roots: &[Complex<T>]) -> Vec<Complex<T>> {
    let mut c = vec![Complex::new(T::one(), T::zero())];
    for &r in roots {
        let mut next = vec![Complex::new(T::zero(), T::zero()); c.len() + 1];
        for (i, &ci) in c.iter().enumerate() {
            next[i] += ci;
            next[i + 1] -= r * ci;
        }
        c = next;
    }
    c
}

/// Design the digital Butterworth bandpass in precision `T`.
pub fn design_butterworth_bandpass<T: Real>(
    spec: &FilterSpec,
) -> Result<IirCoefficients<T>, FilterError> {
    spec.validate()?;
    let n = spec.order;
    let two = T::from_f64(2.0);
    let pi = T::PI();
    let fs = T::from_f64(spec.sample_rate_hz);
    let fs2 = two * fs;

    // Prewarped analog band edges, rad/s.
    let w_lo = fs2 * (pi * T::from_f64(spec.low_hz) / fs).tan();
    let w_hi = fs2 * (pi * T::from_f64(spec.high_hz) / fs).tan();
    let bw = w_hi - w_lo;
    let w0_sq = w_lo * w_hi;

    // Lowpass prototype poles on the left half of the unit circle, scaled
    // and split into bandpass pole pairs.
    let mut analog_poles = Vec::with_capacity(2 * n);
    for k in 0..n {
        let m = T::from_f64(-(n as f64) + 1.0 + 2.0 * k as f64);
        let theta = pi * m / (two * T::from_usize(n));
        let p = -Complex::new(theta.cos(), theta.sin());
        let p_lp = p * (bw / two);
        let disc = (p_lp * p_lp - Complex::new(w0_sq, T::zero())).sqrt();
        analog_poles.push(p_lp + disc);
        analog_poles.push(p_lp - disc);
    }

    // Bilinear transform. N analog zeros at s = 0 map to z = 1; the N zeros at
    // infinity map to z = -1.
    let fs2c = Complex::new(fs2, T::zero());
    let digital_poles: Vec<Complex<T>> = analog_poles
        .iter()
        .map(|&s| (fs2c + s) / (fs2c - s))
        .collect();
    let mut digital_zeros = vec![Complex::new(T::one(), T::zero()); n];
    digital_zeros.extend(std::iter::repeat_n(Complex::new(-T::one(), T::zero()), n));

    // Analog zeros at the origin contribute fs2^n; poles (fs2 - p).
    let mut gain_ratio = Complex::new(fs2.powi(n as i32), T::zero());
    for &s in &analog_poles {
        gain_ratio = gain_ratio / (fs2c - s);
    }
    let gain = bw.powi(n as i32) * gain_ratio.re;

    let b: Vec<T> = poly_from_roots(&digital_zeros)
        .into_iter()
        .map(|c| c.re * gain)
        .collect();
    let a: Vec<T> = poly_from_roots(&digital_poles)
        .into_iter()
        .map(|c| c.re)
        .collect();
    IirCoefficients::new(b, a, spec.sample_rate_hz, spec.pad_length())
}

/// `H(e^{j 2 pi f / fs})`, evaluated in `f64` from the stored coefficients.
pub fn frequency_response<T: Real>(
    coeffs: &IirCoefficients<T>,
    freq_hz: f64,
) -> Result<Complex<f64>, FilterError> {
    let nyquist_hz = coeffs.sample_rate_hz / 2.0;
    if !(0.0..=nyquist_hz).contains(&freq_hz) {
        return Err(FilterError::FrequencyOutOfRange { freq_hz, nyquist_hz });
    }
    let w = 2.0 * std::f64::consts::PI * freq_hz / coeffs.sample_rate_hz;
    let eval = |c: &[T]| {
        c.iter().enumerate().fold(Complex::new(0.0, 0.0), |acc, (k, v)| {
            acc + Complex::from_polar(v.as_f64(), -w * k as f64)
        })
    };
    Ok(eval(&coeffs.b) / eval(&coeffs.a))
}

/// Direct Form II transposed over `x`, starting from state `z` (updated in place).
pub fn lfilter_in_place<T: Real>(b: &[T], a: &[T], x: &mut [T], z: &mut [T]) {
    let order = a.len() - 1;
    debug_assert_eq!(z.len(), order);
    for sample in x.iter_mut() {
        let input = *sample;
        let y = b[0] * input + if order > 0 { z[0] } else { T::zero() };
        for i in 0..order {
            let carry = if i + 1 < order { z[i + 1] } else { T::zero() };
            z[i] = b[i + 1] * input - a[i + 1] * y + carry;
        }
        *sample = y;
    }
}

/// Steady-state initial state for a unit step input.
///
/// In steady state the DF2T recursion gives `y = sum(b) / sum(a)` and
/// `z[i] = sum_{k > i} (b[k] - a[k] y)`, the unique solution of
/// `(I - C') zi = b[1..] - a[1..] b[0]` with `C` the companion matrix of `a`.
pub fn lfilter_zi<T: Real>(b: &[T], a: &[T]) -> Result<Vec<T>, FilterError> {
    let n = a.len() - 1;
    if b.len() != a.len() {
        return Err(FilterError::InvalidSpec("b and a lengths differ".into()));
    }
    let a_sum = a.iter().fold(T::zero(), |s, &v| s + v);
    if a_sum == T::zero() {
        return Err(FilterError::InitialState(LinalgError::Singular {
            column: 0,
            pivot: 0.0,
            threshold: 0.0,
        }));
    }
    let y = b.iter().fold(T::zero(), |s, &v| s + v) / a_sum;
    let mut zi = vec![T::zero(); n];
    let mut acc = T::zero();
    for i in (0..n).rev() {
        acc += b[i + 1] - a[i + 1] * y;
        zi[i] = acc;
    }
    Ok(zi)
}

/// Zero-phase filtering of one channel: odd-reflection padding, forward and
/// backward passes with steady-state initial conditions, padding stripped.
pub fn filtfilt_slice<T: Real>(
    coeffs: &IirCoefficients<T>,
    zi: &[T],
    x: &[T],
) -> Result<Vec<T>, FilterError> {
    let pad = coeffs.pad_len;
    let n = x.len();
    if n <= 3 * pad || n < 2 {
        return Err(FilterError::TooShort {
            samples: n,
            required: 3 * pad,
        });
    }
    let two = T::from_f64(2.0);
    let first = x[0];
    let last = x[n - 1];
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((0..pad).map(|i| two * first - x[pad - i]));
    ext.extend_from_slice(x);
    ext.extend((0..pad).map(|i| two * last - x[n - 2 - i]));

    let mut state: Vec<T> = zi.iter().map(|&z| z * ext[0]).collect();
    lfilter_in_place(&coeffs.b, &coeffs.a, &mut ext, &mut state);
    ext.reverse();
    let y0 = ext[0];
    state.iter_mut().zip(zi).for_each(|(s, &z)| *s = z * y0);
    lfilter_in_place(&coeffs.b, &coeffs.a, &mut ext, &mut state);
    ext.reverse();
    Ok(ext[pad..pad + n].to_vec())
}

/// Zero-phase filter every channel of `epoch` in the precision of `coeffs`.
pub fn filtfilt<T: Real>(coeffs: &IirCoefficients<T>, epoch: &Epoch) -> Result<Epoch, FilterError> {
    if (coeffs.sample_rate_hz - epoch.sample_rate_hz()).abs() > 1e-9 * coeffs.sample_rate_hz {
        return Err(FilterError::RateMismatch {
            designed: coeffs.sample_rate_hz,
            actual: epoch.sample_rate_hz(),
        });
    }
    let zi = lfilter_zi(&coeffs.b, &coeffs.a)?;
    let mut buf = Vec::with_capacity(epoch.sample_count());
    epoch.map_channels(|ch| {
        buf.clear();
        buf.extend(ch.iter().map(|&v| T::from_f64(v)));
        let y = filtfilt_slice(coeffs, &zi, &buf)?;
        Ok::<_, FilterError>(y.into_iter().map(Real::as_f64).collect())
    })
}
