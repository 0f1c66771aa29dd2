mod args;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::net::{SocketAddr, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::Parser;
use ssvep_core::analytics::{
    bench_pipeline, common_mode_attenuation, compare_conditions, jitter_and_drift_with,
    latency_stats, noise_metrics_with, window_comparison_with, CmReport, JitterOptions,
    JitterStats, NoiseOptions, WindowRow,
};
use ssvep_core::csv_io;
use ssvep_core::fidelity::run_fidelity_suite;
use ssvep_core::filter::FilterSpec;
use ssvep_core::pipeline::PipelineRegistry;
use ssvep_core::stream::{
    ClientOptions, DeviceServer, ServerConfig, StreamClient, SyntheticSsvepSource,
};
use ssvep_core::synth::{self, SsvepSynthSpec, TimingSynthSpec, SYNTH_RNG};
use ssvep_core::types::{AcquisitionConfig, TrialRecording};

use args::*;

#[derive(Debug)]
enum CliError {
    Core(ssvep_core::Error),
    Usage(String),
}

impl<E: Into<ssvep_core::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Core(e.into())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Usage(msg) => write!(f, "cli: {msg}"),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// File at `path`, or stdout.
fn output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn acquisition(acq: &Acquisition) -> CliResult<AcquisitionConfig> {
    Ok(AcquisitionConfig::new(acq.rate, acq.channels)?)
}

fn write_epoch(epoch: &ssvep_core::types::Epoch, out: Option<&PathBuf>) -> CliResult {
    match out {
        Some(p) => csv_io::write_epoch_csv(epoch, p)?,
        None => {
            let mut w = output(None)?;
            csv_io::write_epoch_to(epoch, &mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn cmd_synth(cmd: SynthCommand) -> CliResult {
    match cmd {
        SynthCommand::Trial {
            freq,
            snr_rms,
            seed,
            duration,
            amplitudes,
            acq,
            out,
        } => {
            let spec = SsvepSynthSpec {
                target_hz: freq,
                harmonic_amplitudes_uv: amplitudes,
                phase_rad: 0.0,
                noise_rms_uv: snr_rms,
                duration_s: duration,
                seed,
                config: acquisition(&acq)?,
            };
            let trial = synth::gen_ssvep_trial(&spec)?;
            eprintln!(
                "synth trial freq_hz={freq} amplitudes_uv={:?} noise_rms_uv={snr_rms} duration_s={duration} \
                 rate_hz={} channels={} seed={seed} rng={SYNTH_RNG}",
                spec.harmonic_amplitudes_uv, acq.rate, acq.channels
            );
            write_epoch(&trial.epoch_full, out.as_ref())
        }
        SynthCommand::Trials {
            count,
            noise_rms,
            seed,
            targets,
            onset_amp,
            out_dir,
        } => {
            let trials = synth::gen_trial_set(&targets, count, noise_rms, seed, onset_amp)?;
            csv_io::write_trial_set(&trials, &out_dir)?;
            eprintln!(
                "synth trials count={count} targets_hz={targets:?} noise_rms_uv={noise_rms} \
                 onset_amp_uv={onset_amp:?} seed={seed} rng={SYNTH_RNG} dir={}",
                out_dir.display()
            );
            Ok(())
        }
        SynthCommand::Timing {
            events,
            period_us,
            jitter_us,
            drift_ppm,
            mode,
            seed,
            out,
        } => {
            let spec = TimingSynthSpec {
                nominal_period_us: period_us,
                event_count: events,
                jitter_std_us: jitter_us,
                drift_ppm,
                seed,
                mode,
            };
            let log = synth::gen_timing_log(&spec)?;
            eprintln!(
                "synth timing events={events} period_us={period_us} jitter_us={jitter_us} \
                 drift_ppm={drift_ppm} mode={mode} seed={seed} rng={SYNTH_RNG}"
            );
            match out {
                Some(p) => csv_io::write_timing_log_csv(&log, p)?,
                None => {
                    let mut w = output(None)?;
                    csv_io::write_timing_log_to(&log, &mut w)?;
                    w.flush()?;
                }
            }
            Ok(())
        }
        SynthCommand::Noise {
            rms,
            duration,
            seed,
            acq,
            out,
        } => {
            let e = synth::gen_white_noise(rms, duration, seed, acquisition(&acq)?)?;
            eprintln!(
                "synth noise rms_uv={rms} duration_s={duration} rate_hz={} channels={} seed={seed} rng={SYNTH_RNG}",
                acq.rate, acq.channels
            );
            write_epoch(&e, out.as_ref())
        }
        SynthCommand::Cm {
            residual_uv,
            base_noise_uv,
            duration,
            seed,
            acq,
            out,
        } => {
            let residuals = match residual_uv.as_slice() {
                [] => return Err(usage("--residual-uv needs at least one value")),
                [v] => vec![*v; acq.channels],
                v => v.to_vec(),
            };
            let e = synth::gen_common_mode_record(
                base_noise_uv,
                &residuals,
                duration,
                seed,
                acquisition(&acq)?,
            )?;
            eprintln!(
                "synth cm residual_uv={residuals:?} base_noise_uv={base_noise_uv} duration_s={duration} \
                 rate_hz={} seed={seed} rng={SYNTH_RNG}",
                acq.rate
            );
            write_epoch(&e, out.as_ref())
        }
    }
}

fn cmd_decode(a: DecodeArgs) -> CliResult {
    let epoch = csv_io::read_epoch_csv(&a.input)?;
    let spec = a.pipeline.spec(epoch.sample_rate_hz());
    let trial = TrialRecording::new(epoch, None);
    let registry = PipelineRegistry::default();
    let mut p = registry.build_for_trial(&a.config.label(), &spec, &trial)?;
    let d = p.decode_trial(&trial)?;
    let mut w = output(None)?;
    writeln!(w, "config {}", a.config)?;
    writeln!(w, "window {} ({} samples)", p.window(), p.sample_count())?;
    for (f, rho) in &d.correlations {
        writeln!(w, "rho {f:?} {rho}")?;
    }
    writeln!(w, "predicted {:?}", d.predicted_hz)?;
    writeln!(w, "rho_peak {}", d.rho_peak)?;
    writeln!(w, "margin {}", d.margin)?;
    w.flush()?;
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> CliResult {
    let mut s = SsvepSynthSpec::new(8.0, a.seed);
    s.noise_rms_uv = 2.0;
    s.duration_s = 4.0;
    let epoch = synth::gen_ssvep_trial(&s)?.epoch_full;
    let spec = a.pipeline.spec(epoch.sample_rate_hz());
    let mut p = PipelineRegistry::default().build(
        &a.config.label(),
        &spec,
        epoch.channel_count(),
        epoch.sample_count(),
    )?;
    let records = bench_pipeline(p.as_mut(), &epoch, a.cycles)?;
    if let Some(path) = &a.records {
        let mut w = output(Some(path))?;
        writeln!(w, "cycle,t0_us,t1_us,t2_us")?;
        for (i, r) in records.iter().enumerate() {
            writeln!(w, "{i},{},{},{}", r.t0_us, r.t1_us, r.t2_us)?;
        }
        w.flush()?;
    }
    let stats = latency_stats(&records)?;
    let mut w = output(a.out.as_deref())?;
    stats.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn cmd_analyze(cmd: AnalyzeCommand) -> CliResult {
    match cmd {
        AnalyzeCommand::Noise {
            inputs,
            window_s,
            windows,
            low_hz,
            high_hz,
            out,
        } => {
            let runs = inputs
                .iter()
                .map(csv_io::read_epoch_csv)
                .collect::<Result<Vec<_>, _>>()?;
            let mut spec = FilterSpec::eeg_band(runs[0].sample_rate_hz());
            spec.low_hz = low_hz;
            spec.high_hz = high_hz;
            let opts = NoiseOptions {
                window_length_s: window_s,
                windows_per_run: windows,
            };
            let r = noise_metrics_with(&runs, &spec, opts)?;
            let mut w = output(out.as_deref())?;
            r.write_csv(&mut w)?;
            w.flush()?;
        }
        AnalyzeCommand::Jitter {
            input,
            nominal_us,
            window_s,
            convention,
            out,
        } => {
            let log = csv_io::read_timing_log_csv(&input)?;
            let s = jitter_and_drift_with(&log, nominal_us, JitterOptions { window_s, convention })?;
            let mut w = output(out.as_deref())?;
            JitterStats::write_csv(&[s], &mut w)?;
            w.flush()?;
        }
        AnalyzeCommand::Cmrr {
            on,
            off,
            condition,
            mismatch_on,
            mismatch_off,
            balanced_db,
            mismatch_db,
            vpp,
            out,
        } => {
            let mut w = output(out.as_deref())?;
            let v_inj = vpp / (2.0 * std::f64::consts::SQRT_2);
            if let (Some(b), Some(m)) = (balanced_db, mismatch_db) {
                use ssvep_core::analytics::Condition;
                let b = CmReport::from_attenuations_db(&b, v_inj, Condition::Balanced)?;
                let m = CmReport::from_attenuations_db(&m, v_inj, Condition::Mismatch)?;
                compare_conditions(&b, &m)?.write_csv(&mut w)?;
            } else {
                let (Some(on), Some(off)) = (on, off) else {
                    return Err(usage("cmrr needs --on and --off, or --balanced-db and --mismatch-db"));
                };
                let read = |p: &PathBuf| csv_io::read_epoch_csv(p);
                let report = common_mode_attenuation(&read(&on)?, &read(&off)?, vpp, condition)?;
                match (mismatch_on, mismatch_off) {
                    (Some(mon), Some(moff)) => {
                        use ssvep_core::analytics::Condition;
                        let mis = common_mode_attenuation(&read(&mon)?, &read(&moff)?, vpp, Condition::Mismatch)?;
                        compare_conditions(&report, &mis)?.write_csv(&mut w)?;
                    }
                    _ => report.write_csv(&mut w)?,
                }
            }
            w.flush()?;
        }
        AnalyzeCommand::Windows {
            trials,
            config,
            pipeline,
            out,
        } => {
            let trials = csv_io::read_trial_set(&trials)?;
            let first = trials.first().ok_or_else(|| usage("trial directory is empty"))?;
            let spec = pipeline.spec(first.epoch_full.sample_rate_hz());
            let rows = window_comparison_with(&trials, &spec, &PipelineRegistry::default(), &config.label())?;
            let mut w = output(out.as_deref())?;
            WindowRow::write_csv(&rows, &mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn cmd_fidelity(a: FidelityArgs) -> CliResult {
    let trials = csv_io::read_trial_set(&a.trials)?;
    let first = trials.first().ok_or_else(|| usage("trial directory is empty"))?;
    let spec = a.pipeline.spec(first.epoch_full.sample_rate_hz());
    let report = run_fidelity_suite(&trials, &spec, &a.configs, &PipelineRegistry::default())?;
    if let Some(p) = &a.records {
        report.write_records_csv(p)?;
    }
    let mut w = output(a.out.as_deref())?;
    report.write_summary_to(&mut w)?;
    w.flush()?;
    if let Some(at) = report.attribution {
        eprintln!(
            "attribution cca_stage_max_abs={:.3e} filter_stage_max_abs={:.3e}",
            at.cca_stage_max_abs, at.filter_stage_max_abs
        );
    }
    Ok(())
}

fn resolve(host: &str, port: u16) -> CliResult<SocketAddr> {
    (host, port)
        .to_socket_addrs()?
        .next()
        .ok_or_else(|| usage(format!("cannot resolve {host}")))
}

fn cmd_serve(a: ServeArgs) -> CliResult {
    let mut cfg = ServerConfig::default().with_rate(a.rate);
    cfg.bind_addr = resolve(&a.host, a.port)?;
    cfg.queue_depth = a.queue;
    cfg.duration = match a.duration {
        Some(d) if d > 0.0 && d.is_finite() => Some(Duration::from_secs_f64(d)),
        Some(d) => return Err(usage(format!("--duration must be > 0, got {d}"))),
        None => None,
    };
    cfg.send_buffer_bytes = a.send_buffer;
    cfg.skip_seq = a.skip_seq;
    cfg.pipeline = a.config.label();
    cfg.pipeline_spec = a.pipeline.spec(a.rate);
    let server = DeviceServer::bind(cfg)?;
    eprintln!("listening on {}", server.local_addr()?);
    let mut source = SyntheticSsvepSource::new(server.config().acquisition, a.freq, a.noise_rms, a.seed);
    source.with_accel = a.accel;
    let s = server.run(Box::new(source))?;
    let mut w = output(None)?;
    writeln!(w, "frames_generated {}", s.frames_generated)?;
    writeln!(w, "frames_sent {}", s.frames_sent)?;
    writeln!(w, "frames_dropped {}", s.frames_dropped)?;
    writeln!(w, "queue_high_watermark {}", s.queue_high_watermark)?;
    writeln!(w, "decisions {}", s.decisions)?;
    writeln!(w, "client_disconnected {}", s.client_disconnected)?;
    if let Some(t) = &s.tick_period_stats {
        writeln!(w, "{}", JitterStats::CSV_HEADER)?;
        writeln!(w, "{}", t.csv_row())?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_client(a: ClientArgs) -> CliResult {
    let opts = ClientOptions {
        recv_buffer_bytes: a.recv_buffer,
        read_timeout: None,
    };
    let mut client = StreamClient::connect_with(resolve(&a.host, a.port)?, opts)?;
    let mut w = output(None)?;
    match a.trial {
        Some(seconds) => {
            let samples = (seconds * a.rate).round() as usize;
            if samples == 0 {
                return Err(usage("trial is shorter than one sample"));
            }
            let outcome = client.run_trial(samples)?;
            writeln!(w, "{}", outcome.reply)?;
        }
        None => {
            let stats = client.drain(|_| {})?;
            writeln!(w, "frames {}", stats.frames_received)?;
            writeln!(w, "gaps {}", stats.gaps)?;
            writeln!(w, "missing {}", stats.missing_frames)?;
            writeln!(w, "crc_errors {}", stats.crc_errors)?;
            writeln!(w, "resyncs {}", stats.resyncs)?;
            writeln!(w, "bytes_skipped {}", stats.bytes_skipped)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Synth(c) => cmd_synth(c),
        Command::Decode(a) => cmd_decode(a),
        Command::BenchLatency(a) => cmd_bench(a),
        Command::Analyze(c) => cmd_analyze(c),
        Command::Fidelity(a) => cmd_fidelity(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Client(a) => cmd_client(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
