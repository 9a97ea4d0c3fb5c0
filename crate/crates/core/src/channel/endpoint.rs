//! In-process channel endpoints, optionally bridged onto a framed TCP stream.

use std::net::{Shutdown, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use crossbeam_channel::{select, unbounded, Receiver, RecvTimeoutError, Sender};

use super::frame::{read_frame, write_frame};
use super::ChannelError;

/// One end of an asynchronous, FIFO, bidirectional message channel.
pub struct Endpoint {
    tx: Mutex<Option<Sender<Vec<u8>>>>,
    rx: Receiver<Vec<u8>>,
    // dropping the sender wakes local readers on close()
    shutdown_tx: Mutex<Option<Sender<()>>>,
    shutdown_rx: Receiver<()>,
    max_frame: usize,
}

pub fn channel_pair(max_frame: usize) -> (Endpoint, Endpoint) {
    let (a_tx, b_rx) = unbounded();
    let (b_tx, a_rx) = unbounded();
    (Endpoint::new(a_tx, a_rx, max_frame), Endpoint::new(b_tx, b_rx, max_frame))
}

impl Endpoint {
    fn new(tx: Sender<Vec<u8>>, rx: Receiver<Vec<u8>>, max_frame: usize) -> Self {
        let (shutdown_tx, shutdown_rx) = unbounded();
        Endpoint {
            tx: Mutex::new(Some(tx)),
            rx,
            shutdown_tx: Mutex::new(Some(shutdown_tx)),
            shutdown_rx,
            max_frame,
        }
    }

    pub fn max_frame(&self) -> usize {
        self.max_frame
    }

    pub fn write(&self, msg: impl Into<Vec<u8>>) -> Result<(), ChannelError> {
        let msg = msg.into();
        if msg.len() > self.max_frame {
            return Err(ChannelError::FrameTooLarge {
                len: msg.len(),
                max: self.max_frame,
            });
        }
        let guard = self.tx.lock().unwrap();
        let tx = guard.as_ref().ok_or(ChannelError::Closed)?;
        tx.send(msg).map_err(|_| ChannelError::PeerClosed)
    }

    /// Next message; blocks while the queue is empty and the peer lives.
    pub fn read(&self) -> Result<Vec<u8>, ChannelError> {
        select! {
            recv(self.rx) -> msg => msg.map_err(|_| ChannelError::PeerClosed),
            recv(self.shutdown_rx) -> _ => Err(ChannelError::Closed),
        }
    }

    pub fn read_timeout(&self, timeout: Duration) -> Result<Vec<u8>, ChannelError> {
        select! {
            recv(self.rx) -> msg => msg.map_err(|_| ChannelError::PeerClosed),
            recv(self.shutdown_rx) -> _ => Err(ChannelError::Closed),
            default(timeout) => Err(ChannelError::Timeout),
        }
    }

    pub fn try_read(&self) -> Option<Vec<u8>> {
        match self.rx.recv_timeout(Duration::ZERO) {
            Ok(m) => Some(m),
            Err(RecvTimeoutError::Timeout) | Err(RecvTimeoutError::Disconnected) => None,
        }
    }

    /// Stops sending; the peer drains what was queued, then sees `PeerClosed`.
    pub fn close_outbound(&self) {
        self.tx.lock().unwrap().take();
    }

    /// Closes both directions and wakes any blocked local reader.
    pub fn close(&self) {
        self.close_outbound();
        self.shutdown_tx.lock().unwrap().take();
    }
}

pub fn channel_write(c: &Endpoint, m: impl Into<Vec<u8>>) -> Result<(), ChannelError> {
    c.write(m)
}

pub fn channel_read(c: &Endpoint) -> Result<Vec<u8>, ChannelError> {
    c.read()
}

/// Pumps frames between `stream` and `endpoint` until either side closes.
///
/// Frames arriving on the stream are written to `endpoint` (and so reach its
/// peer); messages the peer sends are framed onto the stream.
pub fn bridge(stream: TcpStream, endpoint: Endpoint) -> std::io::Result<()> {
    let endpoint = Arc::new(endpoint);
    let max = endpoint.max_frame();
    let mut reader = stream.try_clone()?;
    let mut writer = stream;

    let inbound = Arc::clone(&endpoint);
    thread::Builder::new()
        .name("bridge-in".into())
        .spawn(move || {
            while let Ok(Some(msg)) = read_frame(&mut reader, max) {
                if inbound.write(msg).is_err() {
                    break;
                }
            }
            inbound.close_outbound();
            let _ = reader.shutdown(Shutdown::Read);
        })?;

    thread::Builder::new()
        .name("bridge-out".into())
        .spawn(move || {
            while let Ok(msg) = endpoint.read() {
                if write_frame(&mut writer, &msg, max).is_err() {
                    break;
                }
            }
            let _ = writer.shutdown(Shutdown::Write);
        })?;
    Ok(())
}
