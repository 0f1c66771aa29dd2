//! Three-timestamp processing latency: filter onset `t0`, CCA start `t1`,
//! decision complete `t2`.

use std::io::Write;
use std::time::Instant;

use super::stats::Summary;
use super::AnalyticsError;
use crate::pipeline::DecodePipeline;
use crate::types::Epoch;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatencyRecord {
    pub t0_us: u64,
    pub t1_us: u64,
    pub t2_us: u64,
}

impl LatencyRecord {
    pub fn new(t0_us: u64, t1_us: u64, t2_us: u64) -> Self {
        LatencyRecord { t0_us, t1_us, t2_us }
    }

    pub fn is_ordered(&self) -> bool {
        self.t0_us <= self.t1_us && self.t1_us <= self.t2_us
    }

    pub fn filter_us(&self) -> u64 {
        self.t1_us - self.t0_us
    }

    pub fn cca_us(&self) -> u64 {
        self.t2_us - self.t1_us
    }

    pub fn total_us(&self) -> u64 {
        self.t2_us - self.t0_us
    }
}

/// Per-component statistics in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComponentStats {
    pub mean_ms: f64,
    pub std_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
}

impl ComponentStats {
    fn of_us(values_us: &[u64]) -> Self {
        let ms: Vec<f64> = values_us.iter().map(|&v| v as f64 / 1000.0).collect();
        let s = Summary::of(&ms);
        ComponentStats {
            mean_ms: s.mean,
            std_ms: s.std,
            p50_ms: s.p50,
            p95_ms: s.p95,
            p99_ms: s.p99,
            max_ms: s.max,
        }
    }

    pub fn is_ordered(&self) -> bool {
        self.p50_ms <= self.p95_ms && self.p95_ms <= self.p99_ms && self.p99_ms <= self.max_ms
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyStats {
    pub count: usize,
    pub filter: ComponentStats,
    pub cca: ComponentStats,
    pub total: ComponentStats,
}

impl LatencyStats {
    pub fn components(&self) -> [(&'static str, &ComponentStats); 3] {
        [("filter", &self.filter), ("cca", &self.cca), ("total", &self.total)]
    }

    /// `component,count,mean_ms,std_ms,p50_ms,p95_ms,p99_ms,max_ms`, values to 0.01 µs.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "component,count,mean_ms,std_ms,p50_ms,p95_ms,p99_ms,max_ms")?;
        for (name, c) in self.components() {
            writeln!(
                w,
                "{name},{},{:.5},{:.5},{:.5},{:.5},{:.5},{:.5}",
                self.count, c.mean_ms, c.std_ms, c.p50_ms, c.p95_ms, c.p99_ms, c.max_ms
            )?;
        }
        Ok(())
    }
}

/// Statistics (sample std, nearest-rank percentiles) of each latency stage.
pub fn latency_stats(records: &[LatencyRecord]) -> Result<LatencyStats, AnalyticsError> {
    if records.is_empty() {
        return Err(AnalyticsError::Empty("no latency records"));
    }
    if let Some((index, r)) = records.iter().enumerate().find(|(_, r)| !r.is_ordered()) {
        return Err(AnalyticsError::LatencyOrder {
            index,
            t0: r.t0_us,
            t1: r.t1_us,
            t2: r.t2_us,
        });
    }
    let stage = |f: fn(&LatencyRecord) -> u64| -> Vec<u64> { records.iter().map(f).collect() };
    Ok(LatencyStats {
        count: records.len(),
        filter: ComponentStats::of_us(&stage(LatencyRecord::filter_us)),
        cca: ComponentStats::of_us(&stage(LatencyRecord::cca_us)),
        total: ComponentStats::of_us(&stage(LatencyRecord::total_us)),
    })
}

/// Run filter then classify `cycles` times on `epoch`, stamping each stage
/// boundary with one monotonic clock (µs since the benchmark started).
pub fn bench_pipeline(
    pipeline: &mut dyn DecodePipeline,
    epoch: &Epoch,
    cycles: usize,
) -> Result<Vec<LatencyRecord>, AnalyticsError> {
    if cycles == 0 {
        return Err(AnalyticsError::InvalidArgument("cycle count must be >= 1".into()));
    }
    let clock = Instant::now();
    let now = || clock.elapsed().as_micros() as u64;
    let mut records = Vec::with_capacity(cycles);
    for _ in 0..cycles {
        let t0 = now();
        let filtered = pipeline.filter(epoch)?;
        let t1 = now();
        std::hint::black_box(pipeline.classify(&filtered)?);
        let t2 = now();
        records.push(LatencyRecord::new(t0, t1, t2));
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_record() {
        let s = latency_stats(&[LatencyRecord::new(0, 273_120, 411_200)]).unwrap();
        assert_eq!(s.filter.mean_ms, 273.12);
        assert_eq!(s.cca.mean_ms, 138.08);
        assert_eq!(s.total.mean_ms, 411.20);
        assert_eq!(s.total.std_ms, 0.0);
    }

    #[test]
    fn ordering_violation() {
        let err = latency_stats(&[LatencyRecord::new(0, 5, 6), LatencyRecord::new(10, 9, 12)])
            .unwrap_err();
        assert!(matches!(err, AnalyticsError::LatencyOrder { index: 1, .. }));
        assert!(latency_stats(&[]).is_err());
    }

    #[test]
    fn csv_layout() {
        let s = latency_stats(&[LatencyRecord::new(0, 273_120, 411_200)]).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("\ntotal,1,411.20000,0.00000,"));
    }
}
