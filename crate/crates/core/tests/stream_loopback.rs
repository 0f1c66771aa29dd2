use std::net::SocketAddr;
use std::thread;
use std::time::Duration;

use ssvep_core::stream::codec::{marker, ControlMessage, Decoded};
use ssvep_core::stream::{
    ClientOptions, DeviceServer, ServerConfig, SessionStats, StreamClient, SyntheticSsvepSource,
};
use ssvep_core::types::AcquisitionConfig;

const SMALL_BUFFER: usize = 4096;

fn config(duration_s: f64) -> ServerConfig {
    let mut cfg = ServerConfig::default();
    cfg.bind_addr = SocketAddr::from(([127, 0, 0, 1], 0));
    cfg.duration = Some(Duration::from_secs_f64(duration_s));
    cfg.send_buffer_bytes = Some(SMALL_BUFFER);
    cfg
}

fn source(target_hz: f64, seed: u64) -> Box<SyntheticSsvepSource> {
    Box::new(SyntheticSsvepSource::new(
        AcquisitionConfig::default(),
        target_hz,
        2.0,
        seed,
    ))
}

fn opts() -> ClientOptions {
    ClientOptions {
        recv_buffer_bytes: Some(SMALL_BUFFER),
        read_timeout: None,
    }
}

/// Serve one session; the client closure runs on this thread.
fn session<R>(
    cfg: ServerConfig,
    client: impl FnOnce(SocketAddr) -> R,
) -> (SessionStats, R) {
    let server = DeviceServer::bind(cfg).unwrap();
    let addr = server.local_addr().unwrap();
    let handle = thread::spawn(move || server.run(source(8.0, 7)).unwrap());
    let r = client(addr);
    (handle.join().unwrap(), r)
}

fn assert_conserved(s: &SessionStats) {
    assert_eq!(s.frames_generated, s.frames_sent + s.frames_dropped, "{s:?}");
}

#[test]
fn short_session_is_gap_free_and_conserved() {
    let (stats, client) = session(config(2.0), |addr| {
        let mut c = StreamClient::connect_with(addr, opts()).unwrap();
        let mut last_ts = None;
        let s = c
            .drain(|f| {
                if let Some(prev) = last_ts {
                    assert!(f.timestamp_us > prev);
                }
                last_ts = Some(f.timestamp_us);
            })
            .unwrap();
        s
    });
    assert_conserved(&stats);
    assert_eq!(stats.frames_generated, 1000);
    assert_eq!(stats.frames_dropped, 0);
    assert_eq!(client.frames_received, 1000);
    assert_eq!(client.gaps, 0);
    assert_eq!(client.crc_errors, 0);
    assert_eq!(client.last_seq, Some(999));
    assert!(stats.queue_high_watermark >= 1);
    let ticks = stats.tick_period_stats.unwrap();
    assert_eq!(ticks.event_count, 1000);
    assert!((ticks.mean_us - 2000.0).abs() < 5.0, "{ticks:?}");
}

#[test]
fn skipped_sequence_number_is_one_gap_of_one() {
    let mut cfg = config(0.5);
    cfg.skip_seq = Some(100);
    let (stats, client) = session(cfg, |addr| {
        StreamClient::connect_with(addr, opts()).unwrap().drain(|_| {}).unwrap()
    });
    assert_conserved(&stats);
    assert_eq!(client.gaps, 1);
    assert_eq!(client.missing_frames, 1);
    assert_eq!(client.frames_received, 250);
}

#[test]
fn trial_handshake_decodes_8_hz() {
    let (stats, outcome) = session(config(8.0), |addr| {
        let mut c = StreamClient::connect_with(addr, opts()).unwrap();
        let out = c.run_trial(2500).unwrap();
        drop(c);
        out
    });
    assert_conserved(&stats);
    match outcome.reply {
        ControlMessage::Decision { target_hz, rho_peak } => {
            assert_eq!(target_hz, 8.0);
            assert!(rho_peak > 0.3 && rho_peak <= 1.0);
        }
        other => panic!("unexpected reply {other:?}"),
    }
    assert_eq!(outcome.frames.len(), 2500);
    assert_eq!(outcome.frames[0].event_marker, marker::TRIAL_START);
    let seqs: Vec<u32> = outcome.frames.iter().map(|f| f.seq).collect();
    assert!(seqs.windows(2).all(|w| w[1] == w[0] + 1));
    assert_eq!(stats.decisions, 1);
    assert!(stats.client_disconnected);
}

#[test]
fn stray_stop_and_unknown_lines_get_error_replies() {
    let (_, replies) = session(config(1.0), |addr| {
        let mut c = StreamClient::connect_with(addr, opts()).unwrap();
        c.send_control(&ControlMessage::TrialStop).unwrap();
        let mut replies = Vec::new();
        while let Some(ev) = c.next_event().unwrap() {
            if let Decoded::Control(m) = ev {
                replies.push(m);
            }
        }
        replies
    });
    assert_eq!(replies.len(), 1);
    assert!(matches!(&replies[0], ControlMessage::Error(m) if m.contains("without")));
}

#[test]
fn client_sees_clean_end_when_server_disconnects() {
    let mut cfg = config(30.0);
    cfg.duration = None;
    let server = DeviceServer::bind(cfg).unwrap();
    let addr = server.local_addr().unwrap();
    let handle = thread::spawn(move || server.run(source(10.0, 3)).unwrap());
    let mut c = StreamClient::connect_with(addr, opts()).unwrap();
    for _ in 0..200 {
        assert!(c.next_event().unwrap().is_some());
    }
    let before = c.stats();
    drop(c);
    let stats = handle.join().unwrap();
    assert!(stats.client_disconnected);
    assert_conserved(&stats);
    assert!(before.frames_received >= 200);
}

#[test]
fn bind_failure_and_bad_config_are_reported() {
    let first = DeviceServer::bind(config(1.0)).unwrap();
    let mut cfg = config(1.0);
    cfg.bind_addr = first.local_addr().unwrap();
    assert!(DeviceServer::bind(cfg).is_err());
    let mut cfg = config(1.0);
    cfg.queue_depth = 0;
    assert!(DeviceServer::bind(cfg).is_err());
    let mut cfg = config(1.0);
    cfg.pipeline = "XX".into();
    assert!(DeviceServer::bind(cfg).is_err());
    assert!(StreamClient::connect(SocketAddr::from(([127, 0, 0, 1], 1))).is_err());
}

/// The fast and stalled sessions run concurrently so that both tickers see
/// the same host scheduling noise.
#[test]
#[ignore = "30 s desk-scale run; covered by the acceptance target"]
fn stalled_client_drops_frames_without_disturbing_the_ticker() {
    let fast = thread::spawn(|| {
        session(config(30.0), |addr| {
            StreamClient::connect_with(addr, opts()).unwrap().drain(|_| {}).unwrap()
        })
    });
    let (stalled, _) = session(config(30.0), |addr| {
        let mut c = StreamClient::connect_with(addr, opts()).unwrap();
        for _ in 0..5000 {
            c.next_event().unwrap();
        }
        thread::sleep(Duration::from_secs(5));
        c.drain(|_| {}).unwrap()
    });
    let (fast, fast_client) = fast.join().unwrap();
    assert_conserved(&fast);
    assert_conserved(&stalled);
    assert_eq!(fast.frames_dropped, 0);
    assert_eq!(fast_client.gaps, 0);
    assert!(fast.frames_sent.abs_diff(15000) <= 2);
    assert!(stalled.frames_dropped > 0);
    let a = fast.tick_period_stats.as_ref().unwrap().std_us;
    let b = stalled.tick_period_stats.as_ref().unwrap().std_us;
    eprintln!("fast {fast:?}\nstalled {stalled:?}");
    assert!((b - a).abs() < 0.1 * a, "fast std {a}, stalled std {b}");
}
