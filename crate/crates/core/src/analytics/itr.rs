//! Information transfer rate.

use super::AnalyticsError;

/// `[log2 M + P log2 P + (1 - P) log2((1 - P) / (M - 1))] * 60 / T`, with
/// `0 log2 0 = 0` at both ends of the accuracy range.
pub fn itr_bits_per_min(m: usize, p: f64, t_s: f64) -> Result<f64, AnalyticsError> {
    if m < 2 {
        return Err(AnalyticsError::InvalidArgument(format!("M = {m}, need at least 2")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(AnalyticsError::InvalidArgument(format!("P = {p} outside [0, 1]")));
    }
    if !(t_s > 0.0 && t_s.is_finite()) {
        return Err(AnalyticsError::InvalidArgument(format!("T = {t_s} s must be > 0")));
    }
    let m = m as f64;
    let hit = if p > 0.0 { p * p.log2() } else { 0.0 };
    let miss = if p < 1.0 {
        (1.0 - p) * ((1.0 - p) / (m - 1.0)).log2()
    } else {
        0.0
    };
    Ok((m.log2() + hit + miss) * 60.0 / t_s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn limits() {
        assert!((itr_bits_per_min(6, 1.0, 60.0).unwrap() - 6f64.log2()).abs() < 1e-12);
        assert!(itr_bits_per_min(6, 1.0 / 6.0, 3.0).unwrap().abs() < 1e-12);
        let zero = itr_bits_per_min(6, 0.0, 60.0).unwrap();
        assert!((zero - (6f64.log2() - 5f64.log2())).abs() < 1e-12);
    }

    #[test]
    fn domain() {
        assert!(itr_bits_per_min(1, 0.5, 1.0).is_err());
        assert!(itr_bits_per_min(6, 1.5, 1.0).is_err());
        assert!(itr_bits_per_min(6, 0.5, 0.0).is_err());
    }

    #[test]
    fn increasing_in_accuracy() {
        let mut prev = itr_bits_per_min(6, 1.0 / 6.0, 5.0).unwrap();
        for k in 1..=100 {
            let p = (1.0 / 6.0 + (5.0 / 6.0) * k as f64 / 100.0).min(1.0);
            let v = itr_bits_per_min(6, p, 5.0).unwrap();
            assert!(v > prev);
            prev = v;
        }
    }
}
