use std::collections::HashMap;
use std::net::TcpStream;
use std::time::{Duration, Instant};

use cingal_core::channel::{read_frame, write_frame, ControlClient, ControlRequest, DEFAULT_MAX_FRAME};
use cingal_core::Connector;

use crate::HarnessError;

/// Adopted default channels, keyed by machine-channel address. A parked
/// channel can be adopted only once, so streams are kept for reuse.
#[derive(Default)]
pub struct Probes {
    streams: HashMap<String, TcpStream>,
}

impl Probes {
    pub fn new() -> Self {
        Self::default()
    }

    fn stream(&mut self, c: &Connector) -> Result<&mut TcpStream, HarnessError> {
        let key = c.machine_addr();
        if !self.streams.contains_key(&key) {
            let mut ctl = ControlClient::connect(&key, Duration::from_secs(5), DEFAULT_MAX_FRAME)
                .map_err(|e| HarnessError::Probe(format!("{key}: {e}")))?;
            ctl.request(&ControlRequest::Adopt)
                .map_err(|e| HarnessError::Probe(format!("adopt {key}: {e}")))?;
            self.streams.insert(key.clone(), ctl.into_stream());
        }
        Ok(self.streams.get_mut(&key).expect("inserted"))
    }

    pub fn send(&mut self, to: &Connector, msg: &[u8]) -> Result<(), HarnessError> {
        let s = self.stream(to)?;
        write_frame(s, msg, DEFAULT_MAX_FRAME).map_err(|e| HarnessError::Probe(e.to_string()))
    }

    pub fn recv(&mut self, from: &Connector, timeout: Duration) -> Result<Vec<u8>, HarnessError> {
        let s = self.stream(from)?;
        s.set_read_timeout(Some(timeout))?;
        match read_frame(s, DEFAULT_MAX_FRAME) {
            Ok(Some(m)) => Ok(m),
            Ok(None) => Err(HarnessError::Probe("default channel closed".into())),
            Err(e) => Err(HarnessError::Probe(format!("nothing arrived: {e}"))),
        }
    }

    /// Writes `msg` into `source`'s default channel and expects exactly it
    /// from `sink`'s within `within`. Returns the latency.
    pub fn check(
        &mut self,
        source: &Connector,
        sink: &Connector,
        msg: &[u8],
        within: Duration,
    ) -> Result<Duration, HarnessError> {
        let start = Instant::now();
        self.send(source, msg)?;
        let got = self.recv(sink, within)?;
        if got != msg {
            return Err(HarnessError::Probe(format!(
                "expected {:?}, read {:?}",
                String::from_utf8_lossy(msg),
                String::from_utf8_lossy(&got)
            )));
        }
        Ok(start.elapsed())
    }
}
