//! Loopback client: frame validation, gap accounting and trial control.

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::time::Duration;

use socket2::{Domain, Protocol, SockAddr, Socket, Type};

use super::codec::{marker, CodecError, ControlMessage, Decoded, FrameDecoder, StreamFrame};
use super::StreamError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClientStats {
    pub frames_received: u64,
    /// Discontinuities in the sequence number.
    pub gaps: u64,
    /// Sequence numbers skipped over by those gaps.
    pub missing_frames: u64,
    pub crc_errors: usize,
    pub resyncs: usize,
    pub bytes_skipped: usize,
    pub lines_received: u64,
    pub last_seq: Option<u32>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ClientOptions {
    /// `SO_RCVBUF`, set before connecting.
    pub recv_buffer_bytes: Option<usize>,
    pub read_timeout: Option<Duration>,
}

/// Result of one trial driven by [`StreamClient::run_trial`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    /// `DECISION` or `ERROR` as sent by the device.
    pub reply: ControlMessage,
    pub frames: Vec<StreamFrame>,
}

pub struct StreamClient {
    stream: TcpStream,
    decoder: FrameDecoder,
    stats: ClientStats,
    rbuf: Vec<u8>,
    eof: bool,
}

fn is_disconnect(e: &io::Error) -> bool {
    matches!(
        e.kind(),
        io::ErrorKind::ConnectionReset
            | io::ErrorKind::ConnectionAborted
            | io::ErrorKind::BrokenPipe
            | io::ErrorKind::UnexpectedEof
    )
}

impl StreamClient {
    pub fn connect(addr: SocketAddr) -> Result<Self, StreamError> {
        Self::connect_with(addr, ClientOptions::default())
    }

    pub fn connect_with(addr: SocketAddr, opts: ClientOptions) -> Result<Self, StreamError> {
        let socket = Socket::new(Domain::for_address(addr), Type::STREAM, Some(Protocol::TCP))
            .map_err(StreamError::Connect)?;
        if let Some(bytes) = opts.recv_buffer_bytes {
            socket.set_recv_buffer_size(bytes)?;
        }
        socket
            .connect(&SockAddr::from(addr))
            .map_err(StreamError::Connect)?;
        let stream: TcpStream = socket.into();
        stream.set_nodelay(true)?;
        stream.set_read_timeout(opts.read_timeout)?;
        Ok(StreamClient {
            stream,
            decoder: FrameDecoder::new(),
            stats: ClientStats::default(),
            rbuf: vec![0u8; 64 * 1024],
            eof: false,
        })
    }

    pub fn stats(&self) -> ClientStats {
        let mut s = self.stats;
        s.crc_errors = self.decoder.crc_errors;
        s.resyncs = self.decoder.resyncs;
        s.bytes_skipped = self.decoder.bytes_skipped;
        s
    }

    pub fn send_control(&mut self, msg: &ControlMessage) -> Result<(), StreamError> {
        let line = format!("{}\n", msg.to_line());
        self.stream.write_all(line.as_bytes())?;
        Ok(())
    }

    fn account(&mut self, f: &StreamFrame) {
        self.stats.frames_received += 1;
        if let Some(prev) = self.stats.last_seq {
            let expected = prev.wrapping_add(1);
            if f.seq != expected {
                self.stats.gaps += 1;
                self.stats.missing_frames += u64::from(f.seq.wrapping_sub(expected));
            }
        }
        self.stats.last_seq = Some(f.seq);
    }

    /// Next frame or control line. `Ok(None)` once the device has closed
    /// the connection (orderly or by reset). Damaged units are skipped and
    /// counted.
    pub fn next_event(&mut self) -> Result<Option<Decoded>, StreamError> {
        loop {
            while let Some(item) = self.decoder.next() {
                match item {
                    Ok(Decoded::Frame(f)) => {
                        self.account(&f);
                        return Ok(Some(Decoded::Frame(f)));
                    }
                    Ok(Decoded::Control(c)) => {
                        self.stats.lines_received += 1;
                        return Ok(Some(Decoded::Control(c)));
                    }
                    Err(CodecError::Desync(n)) => return Err(CodecError::Desync(n).into()),
                    Err(_) => {}
                }
            }
            if self.eof {
                return Ok(None);
            }
            match self.stream.read(&mut self.rbuf) {
                Ok(0) => self.eof = true,
                Ok(n) => self.decoder.push(&self.rbuf[..n]),
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) if is_disconnect(&e) => self.eof = true,
                Err(e) => return Err(e.into()),
            }
        }
    }

    /// Run one trial of `samples` frames: send `TRIAL_START`, collect from
    /// the start-marked frame on, send `TRIAL_STOP` and wait for the reply.
    pub fn run_trial(&mut self, samples: usize) -> Result<TrialOutcome, StreamError> {
        self.send_control(&ControlMessage::TrialStart)?;
        let mut frames = Vec::with_capacity(samples);
        let mut started = false;
        let mut stop_sent = false;
        loop {
            let event = self.next_event()?.ok_or(StreamError::Closed)?;
            match event {
                Decoded::Frame(f) => {
                    if !started && f.event_marker == marker::TRIAL_START {
                        started = true;
                    }
                    if started && !stop_sent {
                        frames.push(f);
                        if frames.len() == samples {
                            self.send_control(&ControlMessage::TrialStop)?;
                            stop_sent = true;
                        }
                    }
                }
                Decoded::Control(c @ ControlMessage::Decision { .. }) if stop_sent => {
                    return Ok(TrialOutcome { reply: c, frames });
                }
                Decoded::Control(c @ ControlMessage::Error(_)) if stop_sent => {
                    return Ok(TrialOutcome { reply: c, frames });
                }
                Decoded::Control(_) => {}
            }
        }
    }

    /// Read until the device closes, passing each frame to `sink`.
    pub fn drain(&mut self, mut sink: impl FnMut(&StreamFrame)) -> Result<ClientStats, StreamError> {
        while let Some(event) = self.next_event()? {
            if let Decoded::Frame(f) = event {
                sink(&f);
            }
        }
        Ok(self.stats())
    }
}

/// Connect, consume the whole session, and return the client-side tally.
pub fn run_client(
    addr: SocketAddr,
    opts: ClientOptions,
    sink: impl FnMut(&StreamFrame),
) -> Result<ClientStats, StreamError> {
    StreamClient::connect_with(addr, opts)?.drain(sink)
}
