//! Plain-text CSV persistence for epochs and timing logs.
//!
//! Epoch files: header `t_s,ch1,...,chC`, one row per sample. The sample rate
//! is recovered from the `t_s` spacing. Sample values are written in shortest
//! round-trip form, so a write/read cycle reproduces every `f64` exactly.
//!
//! Timing logs: header `index,timestamp_us,t_s,mode`. `timestamp_us` is the
//! authoritative column; `t_s` is checked against it on read.
//!
//! Trial sets: a directory of epoch files plus `labels.csv` with header
//! `file,label_hz` (empty label for unlabelled trials).

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::types::{AcquisitionConfig, DataError, Epoch, Mode, TimingEntry, TimingLog, TrialRecording};

/// Allowed deviation of one `t_s` step from the nominal period.
pub const SPACING_TOLERANCE: f64 = 0.01;

pub const TIMING_HEADER: &str = "index,timestamp_us,t_s,mode";
pub const LABELS_FILE: &str = "labels.csv";
pub const LABELS_HEADER: &str = "file,label_hz";

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(#[from] csv::Error),
    #[error("malformed header: expected '{expected}', found '{found}'")]
    Header { expected: String, found: String },
    #[error("row {row}: expected {expected} fields, found {found}")]
    Ragged {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}: invalid value '{value}'")]
    Value { row: usize, value: String },
    #[error("row {row}: non-finite value")]
    NonFinite { row: usize },
    #[error("row {row}: non-monotonic t_s")]
    NonMonotonic { row: usize },
    #[error("row {row}: non-uniform sampling (step {step:.6} s vs nominal {nominal:.6} s)")]
    NonUniform { row: usize, step: f64, nominal: f64 },
    #[error("need at least 2 rows to recover the sample rate")]
    TooFewRows,
    #[error("row {row}: t_s {t_s} disagrees with timestamp_us {timestamp_us}")]
    TimeMismatch {
        row: usize,
        t_s: f64,
        timestamp_us: u64,
    },
    #[error("{0}: no such trial file")]
    MissingTrial(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

fn epoch_header(channels: usize) -> String {
    let mut h = String::from("t_s");
    for c in 1..=channels {
        h.push_str(&format!(",ch{c}"));
    }
    h
}

/// Read an epoch CSV. Non-voltage config fields take their defaults.
pub fn read_epoch_csv(path: impl AsRef<Path>) -> Result<Epoch, CsvError> {
    let reader = BufReader::new(File::open(path)?);
    read_epoch_from(reader)
}

pub fn read_epoch_from<R: std::io::Read>(reader: R) -> Result<Epoch, CsvError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let channels = header.len().saturating_sub(1);
    let expected = epoch_header(channels.max(1));
    if channels == 0 || header.join(",") != expected {
        return Err(CsvError::Header {
            expected,
            found: header.join(","),
        });
    }

    let mut times = Vec::new();
    let mut rows: Vec<Vec<f64>> = vec![Vec::new(); channels];
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        if rec.len() != channels + 1 {
            return Err(CsvError::Ragged {
                row,
                expected: channels + 1,
                found: rec.len(),
            });
        }
        let mut vals = rec.iter().map(|s| {
            let s = s.trim();
            s.parse::<f64>().map_err(|_| CsvError::Value {
                row,
                value: s.to_string(),
            })
        });
        let t = vals.next().expect("length checked")?;
        if !t.is_finite() {
            return Err(CsvError::NonFinite { row });
        }
        times.push(t);
        for (c, v) in vals.enumerate() {
            let v = v?;
            if !v.is_finite() {
                return Err(CsvError::NonFinite { row });
            }
            rows[c].push(v);
        }
    }

    let sample_rate_hz = sample_rate_from_times(&times)?;
    let cfg = AcquisitionConfig {
        sample_rate_hz,
        channel_count: channels,
        ..AcquisitionConfig::default()
    };
    Ok(Epoch::from_channels(cfg, rows)?)
}

fn sample_rate_from_times(times: &[f64]) -> Result<f64, CsvError> {
    if times.len() < 2 {
        return Err(CsvError::TooFewRows);
    }
    for (i, w) in times.windows(2).enumerate() {
        if w[1] <= w[0] {
            return Err(CsvError::NonMonotonic { row: i + 3 });
        }
    }
    let nominal = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    for (i, w) in times.windows(2).enumerate() {
        let step = w[1] - w[0];
        if (step - nominal).abs() > SPACING_TOLERANCE * nominal {
            return Err(CsvError::NonUniform {
                row: i + 3,
                step,
                nominal,
            });
        }
    }
    // t_s carries 1 ns resolution. Take the coarsest rate grid that still
    // reproduces every timestamp to within the print resolution.
    let raw = 1.0 / nominal;
    for grid in [1.0, 1e-3, 1e-6] {
        let fs = (raw / grid).round() * grid;
        let fits = times
            .iter()
            .enumerate()
            .all(|(i, &t)| (t - (times[0] + i as f64 / fs)).abs() <= 1.5e-9);
        if fs > 0.0 && fits {
            return Ok(fs);
        }
    }
    Ok(raw)
}

pub fn write_epoch_csv(epoch: &Epoch, path: impl AsRef<Path>) -> Result<(), CsvError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_epoch_to(epoch, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_epoch_to<W: Write>(epoch: &Epoch, w: &mut W) -> Result<(), CsvError> {
    if epoch.channel_count() == 0 {
        return Err(DataError::NoChannels.into());
    }
    writeln!(w, "{}", epoch_header(epoch.channel_count()))?;
    let fs = epoch.sample_rate_hz();
    let mut line = String::new();
    for n in 0..epoch.sample_count() {
        line.clear();
        line.push_str(&format!("{:.9}", n as f64 / fs));
        for ch in epoch.channels() {
            line.push(',');
            line.push_str(&format!("{:?}", ch[n]));
        }
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    Ok(())
}

pub fn read_timing_log_csv(path: impl AsRef<Path>) -> Result<TimingLog, CsvError> {
    read_timing_log_from(BufReader::new(File::open(path)?))
}

pub fn read_timing_log_from<R: std::io::Read>(reader: R) -> Result<TimingLog, CsvError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<&str> = rdr.headers()?.iter().map(str::trim).collect();
    if header.join(",") != TIMING_HEADER {
        return Err(CsvError::Header {
            expected: TIMING_HEADER.into(),
            found: header.join(","),
        });
    }
    let mut entries = Vec::new();
    let mut rec = csv::StringRecord::new();
    let mut row = 1;
    while rdr.read_record(&mut rec)? {
        row += 1;
        let field = |i: usize| rec.get(i).unwrap_or("").trim();
        let bad = |v: &str| CsvError::Value {
            row,
            value: v.to_string(),
        };
        let index: u64 = field(0).parse().map_err(|_| bad(field(0)))?;
        let timestamp_us: u64 = field(1).parse().map_err(|_| bad(field(1)))?;
        let t_s: f64 = field(2).parse().map_err(|_| bad(field(2)))?;
        let mode: Mode = field(3).parse()?;
        if (t_s - timestamp_us as f64 * 1e-6).abs() > 1e-6 {
            return Err(CsvError::TimeMismatch {
                row,
                t_s,
                timestamp_us,
            });
        }
        entries.push(TimingEntry {
            index,
            timestamp_us,
            mode,
        });
    }
    Ok(TimingLog::new(entries)?)
}

pub fn write_timing_log_csv(log: &TimingLog, path: impl AsRef<Path>) -> Result<(), CsvError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_timing_log_to(log, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_timing_log_to<W: Write>(log: &TimingLog, w: &mut W) -> Result<(), CsvError> {
    writeln!(w, "{TIMING_HEADER}")?;
    for e in log.entries() {
        writeln!(
            w,
            "{},{},{:.6},{}",
            e.index,
            e.timestamp_us,
            e.time_s(),
            e.mode
        )?;
    }
    Ok(())
}

/// Write `trials` as `trial_0000.csv`, ... plus `labels.csv` into `dir`
/// (created if needed).
pub fn write_trial_set(trials: &[TrialRecording], dir: impl AsRef<Path>) -> Result<(), CsvError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut labels = BufWriter::new(File::create(dir.join(LABELS_FILE))?);
    writeln!(labels, "{LABELS_HEADER}")?;
    for (i, t) in trials.iter().enumerate() {
        let name = format!("trial_{i:04}.csv");
        write_epoch_csv(&t.epoch_full, dir.join(&name))?;
        let label = t.true_label_hz.map_or_else(String::new, |f| f.to_string());
        writeln!(labels, "{name},{label}")?;
    }
    labels.flush()?;
    Ok(())
}

/// Read a trial set in `labels.csv` order. Without a labels file every
/// `*.csv` in `dir` is read, sorted by name, unlabelled.
pub fn read_trial_set(dir: impl AsRef<Path>) -> Result<Vec<TrialRecording>, CsvError> {
    let dir = dir.as_ref();
    let labels_path = dir.join(LABELS_FILE);
    let entries: Vec<(String, Option<f64>)> = if labels_path.exists() {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(&labels_path)?;
        let found = rdr.headers()?.iter().collect::<Vec<_>>().join(",");
        if found != LABELS_HEADER {
            return Err(CsvError::Header {
                expected: LABELS_HEADER.into(),
                found,
            });
        }
        rdr.records()
            .enumerate()
            .map(|(row, rec)| {
                let rec = rec?;
                if rec.len() != 2 {
                    return Err(CsvError::Ragged {
                        row: row + 1,
                        expected: 2,
                        found: rec.len(),
                    });
                }
                let label = match rec[1].trim() {
                    "" => None,
                    v => Some(v.parse::<f64>().map_err(|_| CsvError::Value {
                        row: row + 1,
                        value: v.into(),
                    })?),
                };
                Ok((rec[0].to_string(), label))
            })
            .collect::<Result<_, _>>()?
    } else {
        let mut names: Vec<String> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n.ends_with(".csv"))
            .collect();
        names.sort();
        names.into_iter().map(|n| (n, None)).collect()
    };
    entries
        .into_iter()
        .map(|(name, label)| {
            let path = dir.join(&name);
            if !path.is_file() {
                return Err(CsvError::MissingTrial(name));
            }
            Ok(TrialRecording::new(read_epoch_csv(path)?, label))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str) -> Result<Epoch, CsvError> {
        read_epoch_from(text.as_bytes())
    }

    #[test]
    fn trial_set_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = AcquisitionConfig::new(500.0, 2).unwrap();
        let trials: Vec<TrialRecording> = [Some(8.0), None, Some(7.5)]
            .into_iter()
            .enumerate()
            .map(|(k, label)| {
                let rows = vec![vec![k as f64, 0.25], vec![-1.5, 1e-7]];
                TrialRecording::new(Epoch::from_channels(cfg, rows).unwrap(), label)
            })
            .collect();
        write_trial_set(&trials, dir.path()).unwrap();
        assert_eq!(read_trial_set(dir.path()).unwrap(), trials);

        std::fs::remove_file(dir.path().join(LABELS_FILE)).unwrap();
        let unlabelled = read_trial_set(dir.path()).unwrap();
        assert_eq!(unlabelled.len(), 3);
        assert!(unlabelled.iter().all(|t| t.true_label_hz.is_none()));
        assert_eq!(unlabelled[2].epoch_full, trials[2].epoch_full);

        std::fs::write(dir.path().join(LABELS_FILE), "file,label_hz\nmissing.csv,8\n").unwrap();
        assert!(matches!(read_trial_set(dir.path()), Err(CsvError::MissingTrial(_))));
    }

    #[test]
    fn minimal_epoch() {
        let text = "t_s,ch1,ch2,ch3,ch4,ch5,ch6,ch7,ch8\n\
                    0.000,1,2,3,4,5,6,7,8\n\
                    0.002,1,2,3,4,5,6,7,8\n";
        let e = parse(text).unwrap();
        assert_eq!(e.sample_count(), 2);
        assert_eq!(e.channel_count(), 8);
        assert_eq!(e.sample_rate_hz(), 500.0);
    }

    #[test]
    fn non_uniform_sampling_rejected() {
        let text = "t_s,ch1\n0.000,1\n0.002,1\n0.004,1\n0.009,1\n";
        let err = parse(text).unwrap_err();
        assert!(err.to_string().contains("non-uniform sampling"), "{err}");
    }

    #[test]
    fn header_and_shape_errors() {
        assert!(matches!(parse("time,ch1\n0,1\n0.1,1\n"), Err(CsvError::Header { .. })));
        assert!(matches!(parse("t_s,ch2\n0,1\n0.1,1\n"), Err(CsvError::Header { .. })));
        assert!(matches!(
            parse("t_s,ch1,ch2\n0,1,2\n0.1,1\n"),
            Err(CsvError::Ragged { row: 3, .. })
        ));
        assert!(matches!(
            parse("t_s,ch1\n0,1\n0.1,NaN\n"),
            Err(CsvError::NonFinite { row: 3 })
        ));
        assert!(matches!(
            parse("t_s,ch1\n0,1\n0.1,1\n0.05,1\n"),
            Err(CsvError::NonMonotonic { .. })
        ));
        assert!(matches!(parse("t_s,ch1\n0,1\n"), Err(CsvError::TooFewRows)));
    }

    #[test]
    fn header_for_eight_channels() {
        let cfg = AcquisitionConfig::default();
        let e = Epoch::zeros(cfg, 3).unwrap();
        let mut out = Vec::new();
        write_epoch_to(&e, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "t_s,ch1,ch2,ch3,ch4,ch5,ch6,ch7,ch8"
        );
        assert!(!text.contains('\r'));
    }

    #[test]
    fn timing_log_parse() {
        let ok = "index,timestamp_us,t_s,mode\n0,0,0.000000,OFF\n1,2000,0.002000,OFF\n2,4000,0.004000,OFF\n";
        assert_eq!(read_timing_log_from(ok.as_bytes()).unwrap().len(), 3);
        let bad = "index,timestamp_us,t_s,mode\n0,0,0.0,ON\n1,2000,0.002,ON\n2,1999,0.001999,ON\n";
        let err = read_timing_log_from(bad.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("non-monotonic timestamp"), "{err}");
        let gap = "index,timestamp_us,t_s,mode\n0,0,0.0,ON\n2,2000,0.002,ON\n";
        assert!(read_timing_log_from(gap.as_bytes()).is_err());
        let mode = "index,timestamp_us,t_s,mode\n0,0,0.0,IDLE\n";
        assert!(read_timing_log_from(mode.as_bytes())
            .unwrap_err()
            .to_string()
            .contains("unknown mode"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn epoch_round_trip(
            channels in 1usize..9,
            n in 2usize..64,
            fs in prop::sample::select(vec![250.0, 300.0, 500.0, 512.0, 1000.0]),
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f64>> = (0..channels)
                .map(|_| (0..n).map(|_| rng.random_range(-500.0..500.0)).collect())
                .collect();
            let cfg = AcquisitionConfig { sample_rate_hz: fs, ..AcquisitionConfig::default() };
            let e = Epoch::from_channels(cfg, rows).unwrap();
            let mut buf = Vec::new();
            write_epoch_to(&e, &mut buf).unwrap();
            let back = read_epoch_from(buf.as_slice()).unwrap();
            prop_assert_eq!(back.sample_rate_hz(), fs);
            prop_assert_eq!(back.channel_count(), channels);
            for (a, b) in e.as_flat().iter().zip(back.as_flat()) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }

        #[test]
        fn timing_round_trip(steps in prop::collection::vec(1u64..5000, 1..50)) {
            let mut ts = vec![0u64];
            for s in steps { ts.push(ts.last().unwrap() + s); }
            let log = TimingLog::from_timestamps(&ts, Mode::On).unwrap();
            let mut buf = Vec::new();
            write_timing_log_to(&log, &mut buf).unwrap();
            prop_assert_eq!(read_timing_log_from(buf.as_slice()).unwrap(), log);
        }
    }
}
