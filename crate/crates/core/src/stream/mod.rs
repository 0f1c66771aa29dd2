//! Streaming acquisition over TCP: wire codec, simulated device and client.

pub mod client;
pub mod codec;
pub mod server;
pub mod source;

use thiserror::Error;

pub use client::{run_client, ClientOptions, ClientStats, StreamClient, TrialOutcome};
pub use codec::{
    decode_frame, encode_frame, encode_frame_into, ControlMessage, CodecError, Decoded,
    FrameDecoder, StreamFrame,
};
pub use server::{run_session, DeviceServer, ServerConfig, SessionStats};
pub use source::{FrameSource, SyntheticSsvepSource};

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("bind: {0}")]
    Bind(std::io::Error),
    #[error("connect: {0}")]
    Connect(std::io::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("codec: {0}")]
    Codec(#[from] CodecError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("connection closed")]
    Closed,
    #[error("data: {0}")]
    Data(#[from] crate::types::DataError),
}
