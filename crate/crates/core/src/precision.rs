//! Arithmetic precision selection.
//!
//! Every numerical stage (filter design, filtering, CCA) is written once,
//! generic over [`Real`], and instantiated for `f32` and `f64`. The
//! [`Precision`] tag is the runtime handle used by configuration and reports.

use std::fmt;
use std::str::FromStr;

use num_traits::{Float, FloatConst, NumAssign};

/// IEEE-754 format used by a pipeline stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Precision {
    Binary32,
    Binary64,
}

impl Precision {
    /// Single-letter code used in configuration labels (`F` / `D`).
    pub fn letter(self) -> char {
        match self {
            Precision::Binary32 => 'F',
            Precision::Binary64 => 'D',
        }
    }

    pub fn from_letter(c: char) -> Option<Self> {
        match c {
            'F' | 'f' => Some(Precision::Binary32),
            'D' | 'd' => Some(Precision::Binary64),
            _ => None,
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Precision::Binary32 => f.write_str("binary32"),
            Precision::Binary64 => f.write_str("binary64"),
        }
    }
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "binary32" | "f32" | "float" | "single" => Ok(Precision::Binary32),
            "binary64" | "f64" | "double" => Ok(Precision::Binary64),
            _ => Err(format!("unknown precision '{s}'")),
        }
    }
}

/// Floating-point scalar usable by the DSP and linear-algebra kernels.
pub trait Real:
    Float + FloatConst + NumAssign + Default + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    const PRECISION: Precision;
    /// Singular-pivot threshold relative to the matrix scale.
    const PIVOT_TOLERANCE: Self;
    /// Default relative tolerance for power iteration.
    const POWER_TOLERANCE: Self;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    fn from_usize(v: usize) -> Self {
        Self::from_f64(v as f64)
    }
}

impl Real for f32 {
    const PRECISION: Precision = Precision::Binary32;
    const PIVOT_TOLERANCE: f32 = 1e-6;
    const POWER_TOLERANCE: f32 = 1e-6;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    const PRECISION: Precision = Precision::Binary64;
    const PIVOT_TOLERANCE: f64 = 1e-12;
    const POWER_TOLERANCE: f64 = 1e-10;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn letters_round_trip() {
        for p in [Precision::Binary32, Precision::Binary64] {
            assert_eq!(Precision::from_letter(p.letter()), Some(p));
        }
        assert_eq!(Precision::from_letter('x'), None);
    }

    #[test]
    fn parse_names() {
        assert_eq!("binary32".parse::<Precision>().unwrap(), Precision::Binary32);
        assert_eq!("F64".parse::<Precision>().unwrap(), Precision::Binary64);
        assert!("half".parse::<Precision>().is_err());
    }
}
