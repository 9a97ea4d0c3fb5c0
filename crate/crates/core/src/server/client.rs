//! Client side of the fire port.

use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::time::Duration;

use super::node::NodeStatus;
use crate::bundle::Bundle;
use crate::channel::{read_frame, write_frame, ChannelError};
use crate::connector::Connector;
use crate::guid::Guid;
use crate::runtime::{FireError, TaskReport};
use crate::xml::Element;

/// A machine fired on a remote node, reachable through the still-open fire
/// connection, which now carries its default channel.
pub struct RemoteMachine {
    pub machine_id: Guid,
    pub connector: Connector,
    stream: TcpStream,
    max_frame: usize,
}

impl RemoteMachine {
    pub fn write(&mut self, msg: &[u8]) -> Result<(), ChannelError> {
        write_frame(&mut self.stream, msg, self.max_frame)
    }

    pub fn read(&mut self, timeout: Duration) -> Result<Vec<u8>, ChannelError> {
        self.stream.set_read_timeout(Some(timeout))?;
        read_frame(&mut self.stream, self.max_frame)?.ok_or(ChannelError::PeerClosed)
    }

    pub fn read_report(&mut self, timeout: Duration) -> Result<TaskReport, FireError> {
        let bytes = self.read(timeout).map_err(|e| match e {
            ChannelError::Timeout => FireError::Timeout(format!("no task report from {}", self.machine_id)),
            other => FireError::Protocol(format!("reading task report: {other}")),
        })?;
        TaskReport::parse(&bytes).map_err(|e| FireError::Protocol(e.to_string()))
    }
}

fn dial(addr: &str, timeout: Duration) -> Result<TcpStream, FireError> {
    let addrs: Vec<SocketAddr> = addr
        .to_socket_addrs()
        .map_err(|e| FireError::Unreachable(format!("{addr}: {e}")))?
        .collect();
    let mut last = format!("{addr}: no address");
    for a in addrs {
        match TcpStream::connect_timeout(&a, timeout) {
            Ok(s) => return Ok(s),
            Err(e) => last = format!("{a}: {e}"),
        }
    }
    Err(FireError::Unreachable(last))
}

fn exchange(addr: &str, doc: &[u8], timeout: Duration, max_frame: usize) -> Result<(TcpStream, Element), FireError> {
    let mut stream = dial(addr, timeout)?;
    let io = |e: ChannelError| FireError::Unreachable(format!("{addr}: {e}"));
    stream
        .set_read_timeout(Some(timeout.max(Duration::from_secs(1)) * 4))
        .map_err(|e| io(e.into()))?;
    write_frame(&mut stream, doc, max_frame).map_err(io)?;
    let reply = read_frame(&mut stream, max_frame)
        .map_err(io)?
        .ok_or_else(|| FireError::Protocol(format!("{addr} closed without answering")))?;
    let el = Element::parse(&reply).map_err(|e| FireError::Protocol(e.to_string()))?;
    Ok((stream, el))
}

/// Fires `bundle` at the fire daemon on `addr` (`host:port`).
pub fn fire_remote(addr: &str, bundle: &Bundle, timeout: Duration, max_frame: usize) -> Result<RemoteMachine, FireError> {
    fire_document(addr, &bundle.serialize(), timeout, max_frame)
}

/// Fires raw document bytes, which need not be a well-formed bundle.
pub fn fire_document(addr: &str, doc: &[u8], timeout: Duration, max_frame: usize) -> Result<RemoteMachine, FireError> {
    let (stream, el) = exchange(addr, doc, timeout, max_frame)?;
    let protocol = |m: String| FireError::Protocol(m);
    if el.name != "FIRERESULT" {
        return Err(protocol(format!("expected FIRERESULT, found {}", el.name)));
    }
    if el.get_attr("status") != Some("ok") {
        return Err(FireError::from_code(
            el.get_attr("code").unwrap_or("Protocol"),
            el.get_attr("message").unwrap_or_default(),
        ));
    }
    let machine_id = Guid::parse(el.required_attr("machine").map_err(protocol)?)
        .map_err(|e| protocol(e.to_string()))?;
    let connector = el
        .first("CONNECTOR")
        .ok_or_else(|| protocol("FIRERESULT lacks CONNECTOR".into()))
        .and_then(|c| Connector::from_element(c).map_err(|e| protocol(e.to_string())))?;
    Ok(RemoteMachine {
        machine_id,
        connector,
        stream,
        max_frame,
    })
}

/// Asks the node on `addr` for a status snapshot.
pub fn query_status(addr: &str, timeout: Duration, max_frame: usize) -> Result<NodeStatus, FireError> {
    let (_, el) = exchange(addr, &Element::new("STATUS").to_bytes(), timeout, max_frame)?;
    NodeStatus::from_element(&el).map_err(FireError::Protocol)
}

pub(crate) fn fire_result_ok(machine: &Guid, connector: &Connector) -> Element {
    Element::new("FIRERESULT")
        .attr("status", "ok")
        .attr("machine", machine.as_str())
        .child(connector.to_element())
}

pub(crate) fn fire_result_error(e: &FireError) -> Element {
    Element::new("FIRERESULT")
        .attr("status", "error")
        .attr("code", e.code())
        .attr("message", e.detail())
}
