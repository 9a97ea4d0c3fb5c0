//! Asynchronous message channels, the framed wire protocol and the
//! per-machine connection manager for named channels.

mod control;
mod endpoint;
mod frame;
mod named;

use std::io;

use thiserror::Error;

pub use control::{ControlClient, ControlRequest, ControlResponse};
pub use endpoint::{bridge, channel_pair, channel_read, channel_write, Endpoint};
pub use frame::{read_frame, write_frame, DEFAULT_MAX_FRAME};
pub use named::{
    cm_connect_named, cm_create_named, cm_disconnect_named, ChannelState, NamedChannel, NamedChannelTable,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChannelError {
    #[error("peer closed")]
    PeerClosed,
    #[error("channel closed")]
    Closed,
    #[error("frame of {len} bytes exceeds limit of {max}")]
    FrameTooLarge { len: usize, max: usize },
    #[error("name already bound: {0}")]
    NameAlreadyBound(String),
    #[error("name not bound: {0}")]
    NameNotBound(String),
    #[error("connect failed: {0}")]
    ConnectFailed(String),
    #[error("machine terminated")]
    Terminated,
    #[error("timed out")]
    Timeout,
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl ChannelError {
    /// Stable code used on the wire and in task reports.
    pub fn code(&self) -> &'static str {
        match self {
            ChannelError::PeerClosed => "PeerClosed",
            ChannelError::Closed => "Closed",
            ChannelError::FrameTooLarge { .. } => "FrameTooLarge",
            ChannelError::NameAlreadyBound(_) => "NameAlreadyBound",
            ChannelError::NameNotBound(_) => "NameNotBound",
            ChannelError::ConnectFailed(_) => "ConnectFailed",
            ChannelError::Terminated => "Terminated",
            ChannelError::Timeout => "Timeout",
            ChannelError::Protocol(_) => "Protocol",
            ChannelError::Io(_) => "Io",
        }
    }

    pub fn detail(&self) -> String {
        match self {
            ChannelError::NameAlreadyBound(s)
            | ChannelError::NameNotBound(s)
            | ChannelError::ConnectFailed(s)
            | ChannelError::Protocol(s)
            | ChannelError::Io(s) => s.clone(),
            other => other.to_string(),
        }
    }

    pub fn from_code(code: &str, detail: &str) -> ChannelError {
        let d = detail.to_string();
        match code {
            "PeerClosed" => ChannelError::PeerClosed,
            "Closed" => ChannelError::Closed,
            "NameAlreadyBound" => ChannelError::NameAlreadyBound(d),
            "NameNotBound" => ChannelError::NameNotBound(d),
            "ConnectFailed" => ChannelError::ConnectFailed(d),
            "Terminated" => ChannelError::Terminated,
            "Timeout" => ChannelError::Timeout,
            "Io" => ChannelError::Io(d),
            _ => ChannelError::Protocol(format!("{code}: {detail}")),
        }
    }
}

impl From<io::Error> for ChannelError {
    fn from(e: io::Error) -> Self {
        match e.kind() {
            io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => ChannelError::Timeout,
            io::ErrorKind::UnexpectedEof
            | io::ErrorKind::ConnectionReset
            | io::ErrorKind::ConnectionAborted
            | io::ErrorKind::BrokenPipe => ChannelError::PeerClosed,
            _ => ChannelError::Io(e.to_string()),
        }
    }
}
