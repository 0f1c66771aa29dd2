//! Simulated acquisition device: a fixed-rate ticker and a network
//! transmitter that share nothing but a bounded drop-oldest queue.

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicU8, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_queue::ArrayQueue;
use socket2::SockRef;

use super::codec::{encode_frame_into, marker, ControlMessage, StreamFrame, EEG_CHANNELS};
use super::source::FrameSource;
use super::StreamError;
use crate::analytics::{jitter_and_drift, JitterStats};
use crate::pipeline::{PipelineRegistry, PipelineSpec};
use crate::types::{AcquisitionConfig, Epoch, Mode, TimingLog, TrialRecording};

pub const DEFAULT_PORT: u16 = 5150;
pub const DEFAULT_QUEUE_DEPTH: usize = 256;

/// Control reads block at most this long; it is also the idle poll interval.
const CONTROL_POLL: Duration = Duration::from_millis(1);
const WRITE_TIMEOUT: Duration = Duration::from_millis(20);
/// After acquisition ends, give a non-reading client this long to drain.
const DRAIN_GRACE: Duration = Duration::from_secs(10);

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub bind_addr: SocketAddr,
    pub queue_depth: usize,
    pub rate_hz: f64,
    /// Acquisition length; `None` runs until the client disconnects.
    pub duration: Option<Duration>,
    /// `SO_SNDBUF` for the accepted connection.
    pub send_buffer_bytes: Option<usize>,
    /// Fault injection: never emit this sequence number.
    pub skip_seq: Option<u32>,
    pub battery_pct: Option<u8>,
    /// Registry name of the decode pipeline run at each trial stop.
    pub pipeline: String,
    pub pipeline_spec: PipelineSpec,
    pub acquisition: AcquisitionConfig,
    pub registry: PipelineRegistry,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            bind_addr: SocketAddr::from(([127, 0, 0, 1], DEFAULT_PORT)),
            queue_depth: DEFAULT_QUEUE_DEPTH,
            rate_hz: 500.0,
            duration: None,
            send_buffer_bytes: None,
            skip_seq: None,
            battery_pct: None,
            pipeline: "DF".into(),
            pipeline_spec: PipelineSpec::new(500.0),
            acquisition: AcquisitionConfig::default(),
            registry: PipelineRegistry::default(),
        }
    }
}

impl ServerConfig {
    pub fn validate(&self) -> Result<(), StreamError> {
        if !(self.rate_hz > 0.0 && self.rate_hz.is_finite()) {
            return Err(StreamError::Config("rate must be > 0".into()));
        }
        if self.queue_depth == 0 {
            return Err(StreamError::Config("queue depth must be >= 1".into()));
        }
        if self.acquisition.sample_rate_hz != self.rate_hz
            || self.pipeline_spec.filter.sample_rate_hz != self.rate_hz
        {
            return Err(StreamError::Config(
                "acquisition, pipeline and tick rates must agree".into(),
            ));
        }
        if self.acquisition.channel_count > EEG_CHANNELS {
            return Err(StreamError::Config(format!(
                "at most {EEG_CHANNELS} channels fit in a frame"
            )));
        }
        if !self.registry.contains(&self.pipeline) {
            return Err(StreamError::Config(format!("unknown pipeline '{}'", self.pipeline)));
        }
        Ok(())
    }

    /// Same settings at a different tick rate.
    pub fn with_rate(mut self, rate_hz: f64) -> Self {
        self.rate_hz = rate_hz;
        self.acquisition.sample_rate_hz = rate_hz;
        self.pipeline_spec.filter.sample_rate_hz = rate_hz;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionStats {
    pub frames_generated: u64,
    pub frames_sent: u64,
    /// Overwritten in the queue, or still queued when the session ended.
    pub frames_dropped: u64,
    pub queue_high_watermark: usize,
    pub decisions: usize,
    /// Inter-tick intervals of the ticker's own clock readings.
    pub tick_period_stats: Option<JitterStats>,
    pub client_disconnected: bool,
    /// The ticker ran under SCHED_FIFO.
    pub realtime_ticker: bool,
}

pub struct DeviceServer {
    listener: TcpListener,
    config: ServerConfig,
}

impl DeviceServer {
    pub fn bind(config: ServerConfig) -> Result<Self, StreamError> {
        config.validate()?;
        let listener = TcpListener::bind(config.bind_addr).map_err(StreamError::Bind)?;
        Ok(DeviceServer { listener, config })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn config(&self) -> &ServerConfig {
        &self.config
    }

    /// Accept one client and run a session until the client leaves or the
    /// configured duration has elapsed and the queue is drained.
    pub fn run(&self, source: Box<dyn FrameSource>) -> Result<SessionStats, StreamError> {
        let (stream, _) = self.listener.accept()?;
        run_session(stream, source, &self.config)
    }
}

struct Shared {
    queue: ArrayQueue<StreamFrame>,
    dropped: AtomicU64,
    high_watermark: AtomicUsize,
    pending_marker: AtomicU8,
    stop: AtomicBool,
    ticker_done: AtomicBool,
}

struct TickerOutput {
    generated: u64,
    ticks_us: Vec<u64>,
    realtime: bool,
}

/// Best effort: 1 ns timer slack and real-time (or at least raised)
/// priority for the calling thread. Returns whether SCHED_FIFO was granted.
#[cfg(target_os = "linux")]
fn prepare_ticker_thread() -> bool {
    // Default slack (50 µs) would dominate the measured tick jitter.
    unsafe {
        libc::prctl(libc::PR_SET_TIMERSLACK, 1 as libc::c_ulong, 0, 0, 0);
        let param = libc::sched_param { sched_priority: 10 };
        if libc::sched_setscheduler(0, libc::SCHED_FIFO, &param) == 0 {
            return true;
        }
        let tid = libc::syscall(libc::SYS_gettid) as libc::id_t;
        libc::setpriority(libc::PRIO_PROCESS, tid, -10);
    }
    false
}

#[cfg(not(target_os = "linux"))]
fn prepare_ticker_thread() -> bool {
    false
}

fn ticker(
    shared: &Shared,
    mut source: Box<dyn FrameSource>,
    cfg: &ServerConfig,
    trials: mpsc::Sender<Vec<[i32; EEG_CHANNELS]>>,
) -> TickerOutput {
    let realtime = prepare_ticker_thread();
    let total = cfg.duration.map(|d| (d.as_secs_f64() * cfg.rate_hz).round() as u64);
    let period_ns = 1e9 / cfg.rate_hz;
    let battery = cfg.battery_pct.unwrap_or_else(|| source.battery_pct());
    let mut ticks_us = Vec::with_capacity(total.unwrap_or(1 << 16) as usize);
    let mut recording: Option<Vec<[i32; EEG_CHANNELS]>> = None;
    let mut seq: u32 = 0;
    let mut last_us: Option<u64> = None;
    let start = Instant::now();
    let mut k: u64 = 0;
    loop {
        if Some(k) == total || shared.stop.load(Ordering::Acquire) {
            break;
        }
        let deadline = start + Duration::from_nanos((k as f64 * period_ns) as u64);
        let now = Instant::now();
        if deadline > now {
            thread::sleep(deadline - now);
        }
        let mut now_us = start.elapsed().as_micros() as u64;
        if let Some(prev) = last_us {
            now_us = now_us.max(prev + 1);
        }
        last_us = Some(now_us);
        ticks_us.push(now_us);

        if cfg.skip_seq == Some(seq) {
            seq = seq.wrapping_add(1);
        }
        let event_marker = shared.pending_marker.swap(marker::NONE, Ordering::AcqRel);
        let eeg_counts = source.sample(k);
        match event_marker {
            marker::TRIAL_START => recording = Some(Vec::new()),
            marker::TRIAL_STOP => {
                // An empty buffer tells the transmitter no trial was running.
                let _ = trials.send(recording.take().unwrap_or_default());
            }
            _ => {}
        }
        if let Some(r) = recording.as_mut() {
            r.push(eeg_counts);
        }
        let frame = StreamFrame {
            seq,
            timestamp_us: now_us,
            eeg_counts,
            battery_pct: battery,
            event_marker,
            accel: source.accel(k),
        };
        if shared.queue.force_push(frame).is_some() {
            shared.dropped.fetch_add(1, Ordering::Relaxed);
        }
        shared
            .high_watermark
            .fetch_max(shared.queue.len(), Ordering::Relaxed);
        seq = seq.wrapping_add(1);
        k += 1;
    }
    shared.ticker_done.store(true, Ordering::Release);
    TickerOutput {
        generated: k,
        ticks_us,
        realtime,
    }
}

fn is_timeout(e: &io::Error) -> bool {
    matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut)
}

/// `write_all` that survives write timeouts while the session is live.
fn write_all_patiently(stream: &mut TcpStream, mut buf: &[u8], shared: &Shared) -> io::Result<()> {
    let mut idle_since: Option<Instant> = None;
    while !buf.is_empty() {
        match stream.write(buf) {
            Ok(0) => return Err(io::ErrorKind::WriteZero.into()),
            Ok(n) => {
                buf = &buf[n..];
                idle_since = None;
            }
            Err(e) if is_timeout(&e) || e.kind() == io::ErrorKind::Interrupted => {
                if shared.ticker_done.load(Ordering::Acquire) {
                    let since = *idle_since.get_or_insert_with(Instant::now);
                    if since.elapsed() > DRAIN_GRACE {
                        return Err(io::ErrorKind::TimedOut.into());
                    }
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

struct Transmitter<'a> {
    stream: TcpStream,
    shared: &'a Shared,
    cfg: &'a ServerConfig,
    out: Vec<u8>,
    sent: u64,
    lost: u64,
    decisions: usize,
}

impl Transmitter<'_> {
    /// Send everything queued. Frames of a failed batch count as lost.
    fn flush_queue(&mut self) -> io::Result<()> {
        self.out.clear();
        let mut n = 0u64;
        while let Some(f) = self.shared.queue.pop() {
            encode_frame_into(&f, &mut self.out).expect("ticker emits valid frames");
            n += 1;
        }
        if n == 0 {
            return Ok(());
        }
        match write_all_patiently(&mut self.stream, &self.out, self.shared) {
            Ok(()) => {
                self.sent += n;
                Ok(())
            }
            Err(e) => {
                self.lost += n;
                Err(e)
            }
        }
    }

    fn send_line(&mut self, msg: &ControlMessage) -> io::Result<()> {
        let line = format!("{}\n", msg.to_line());
        write_all_patiently(&mut self.stream, line.as_bytes(), self.shared)
    }

    fn decide(&mut self, counts: Vec<[i32; EEG_CHANNELS]>) -> ControlMessage {
        if counts.is_empty() {
            return ControlMessage::Error("TRIAL_STOP without a running trial".into());
        }
        let acq = self.cfg.acquisition;
        let rows: Vec<Vec<f64>> = (0..acq.channel_count)
            .map(|c| counts.iter().map(|s| acq.counts_to_uv(s[c])).collect())
            .collect();
        let result = Epoch::from_channels(acq, rows)
            .map_err(|e| e.to_string())
            .and_then(|epoch| {
                let trial = TrialRecording::new(epoch, None);
                let mut p = self
                    .cfg
                    .registry
                    .build_for_trial(&self.cfg.pipeline, &self.cfg.pipeline_spec, &trial)
                    .map_err(|e| e.to_string())?;
                p.decode_trial(&trial).map_err(|e| e.to_string())
            });
        match result {
            Ok(d) => {
                self.decisions += 1;
                ControlMessage::Decision {
                    target_hz: d.predicted_hz,
                    rho_peak: d.rho_peak,
                }
            }
            Err(msg) => ControlMessage::Error(msg),
        }
    }

    fn handle_line(&mut self, line: &str) -> io::Result<()> {
        match ControlMessage::parse_line(line) {
            Ok(ControlMessage::TrialStart) => {
                self.shared
                    .pending_marker
                    .store(marker::TRIAL_START, Ordering::Release);
                Ok(())
            }
            Ok(ControlMessage::TrialStop) => {
                self.shared
                    .pending_marker
                    .store(marker::TRIAL_STOP, Ordering::Release);
                Ok(())
            }
            Ok(_) | Err(_) => {
                self.flush_queue()?;
                self.send_line(&ControlMessage::Error(format!(
                    "unexpected control line {line:?}"
                )))
            }
        }
    }

    /// Returns `true` when the client has gone away.
    fn run(&mut self, trials: &mpsc::Receiver<Vec<[i32; EEG_CHANNELS]>>) -> bool {
        let mut inbox: Vec<u8> = Vec::new();
        let mut rbuf = [0u8; 512];
        loop {
            if self.flush_queue().is_err() {
                return true;
            }
            if let Ok(counts) = trials.try_recv() {
                // The stop-marker frame is queued before the trial is handed
                // over, so it goes out ahead of the decision.
                if self.flush_queue().is_err() {
                    return true;
                }
                let msg = self.decide(counts);
                if self.flush_queue().is_err() || self.send_line(&msg).is_err() {
                    return true;
                }
            }
            if self.shared.ticker_done.load(Ordering::Acquire) && self.shared.queue.is_empty() {
                match trials.try_recv() {
                    Ok(counts) => {
                        let msg = self.decide(counts);
                        if self.send_line(&msg).is_err() {
                            return true;
                        }
                    }
                    Err(_) => return false,
                }
            }
            match self.stream.read(&mut rbuf) {
                Ok(0) => return true,
                Ok(n) => {
                    inbox.extend_from_slice(&rbuf[..n]);
                    while let Some(end) = inbox.iter().position(|&b| b == b'\n') {
                        let line: Vec<u8> = inbox.drain(..=end).collect();
                        let text = String::from_utf8_lossy(&line[..end]).trim_end_matches('\r').to_string();
                        if self.handle_line(&text).is_err() {
                            return true;
                        }
                    }
                    if inbox.len() > 4096 {
                        inbox.clear();
                    }
                }
                Err(e) if is_timeout(&e) || e.kind() == io::ErrorKind::Interrupted => {}
                Err(_) => return true,
            }
        }
    }
}

/// Run one session on an accepted connection.
pub fn run_session(
    stream: TcpStream,
    source: Box<dyn FrameSource>,
    cfg: &ServerConfig,
) -> Result<SessionStats, StreamError> {
    cfg.validate()?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(CONTROL_POLL))?;
    stream.set_write_timeout(Some(WRITE_TIMEOUT))?;
    if let Some(bytes) = cfg.send_buffer_bytes {
        SockRef::from(&stream).set_send_buffer_size(bytes)?;
    }

    let shared = Shared {
        queue: ArrayQueue::new(cfg.queue_depth),
        dropped: AtomicU64::new(0),
        high_watermark: AtomicUsize::new(0),
        pending_marker: AtomicU8::new(marker::NONE),
        stop: AtomicBool::new(false),
        ticker_done: AtomicBool::new(false),
    };
    let (trial_tx, trial_rx) = mpsc::channel();

    let (ticks, tx) = thread::scope(|s| {
        let ticker = thread::Builder::new()
            .name("ticker".into())
            .spawn_scoped(s, || ticker(&shared, source, cfg, trial_tx))
            .expect("spawn ticker");
        let mut tx = Transmitter {
            stream,
            shared: &shared,
            cfg,
            out: Vec::with_capacity(cfg.queue_depth * 64),
            sent: 0,
            lost: 0,
            decisions: 0,
        };
        let disconnected = tx.run(&trial_rx);
        shared.stop.store(true, Ordering::Release);
        let ticks = ticker.join().expect("ticker panicked");
        let _ = tx.stream.shutdown(std::net::Shutdown::Both);
        (ticks, (tx.sent, tx.lost, tx.decisions, disconnected))
    });
    let (sent, lost, decisions, disconnected) = tx;

    let mut leftover = 0u64;
    while shared.queue.pop().is_some() {
        leftover += 1;
    }
    let tick_period_stats = if ticks.ticks_us.len() >= 2 {
        let log = TimingLog::from_timestamps(&ticks.ticks_us, Mode::On)?;
        Some(jitter_and_drift(&log, 1e6 / cfg.rate_hz).expect("ticks are increasing"))
    } else {
        None
    };
    Ok(SessionStats {
        frames_generated: ticks.generated,
        frames_sent: sent,
        frames_dropped: shared.dropped.load(Ordering::Relaxed) + lost + leftover,
        queue_high_watermark: shared.high_watermark.load(Ordering::Relaxed),
        decisions,
        tick_period_stats,
        client_disconnected: disconnected,
        realtime_ticker: ticks.realtime,
    })
}
