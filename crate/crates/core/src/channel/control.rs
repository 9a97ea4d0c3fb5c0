//! Machine-channel control protocol.
//!
//! Framed documents: `REQUEST@op@name(+host,+port)` answered by
//! `RESPONSE@status(+port | +error,+message)`. A `status` response lists the
//! connection manager's channels as `CHANNEL@name@state(+port|+peer)`.

use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::time::Duration;

use super::frame::{read_frame, write_frame};
use super::named::ChannelState;
use super::ChannelError;
use crate::xml::Element;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ControlRequest {
    Create { name: String },
    Connect { name: String, host: String, port: u16 },
    Disconnect { name: String },
    Status,
    /// Asks which thin server hosts the machine.
    Node,
    Terminate,
    /// Takes over the machine's parked default channel on this connection.
    Adopt,
}

impl ControlRequest {
    pub fn op(&self) -> &'static str {
        match self {
            ControlRequest::Create { .. } => "create",
            ControlRequest::Connect { .. } => "connect",
            ControlRequest::Disconnect { .. } => "disconnect",
            ControlRequest::Status => "status",
            ControlRequest::Node => "node",
            ControlRequest::Terminate => "terminate",
            ControlRequest::Adopt => "adopt",
        }
    }

    pub fn to_element(&self) -> Element {
        let el = Element::new("REQUEST").attr("op", self.op());
        match self {
            ControlRequest::Create { name } | ControlRequest::Disconnect { name } => el.attr("name", name),
            ControlRequest::Connect { name, host, port } => el
                .attr("name", name)
                .attr("host", host)
                .attr("port", port.to_string()),
            _ => el,
        }
    }

    pub fn from_element(el: &Element) -> Result<Self, String> {
        if el.name != "REQUEST" {
            return Err(format!("expected REQUEST, found {}", el.name));
        }
        let name = || el.required_attr("name").map(str::to_string);
        Ok(match el.required_attr("op")? {
            "create" => ControlRequest::Create { name: name()? },
            "connect" => ControlRequest::Connect {
                name: name()?,
                host: el.required_attr("host")?.to_string(),
                port: el
                    .required_attr("port")?
                    .parse()
                    .map_err(|e| format!("port: {e}"))?,
            },
            "disconnect" => ControlRequest::Disconnect { name: name()? },
            "status" => ControlRequest::Status,
            "node" => ControlRequest::Node,
            "terminate" => ControlRequest::Terminate,
            "adopt" => ControlRequest::Adopt,
            other => return Err(format!("unknown op {other}")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ControlResponse {
    pub error: Option<(String, String)>,
    pub port: Option<u16>,
    pub channels: Vec<(String, ChannelState)>,
    pub machine: Option<String>,
    pub fire_host: Option<String>,
    pub fire_port: Option<u16>,
}

impl ControlResponse {
    pub fn ok() -> Self {
        ControlResponse::default()
    }

    pub fn error(code: impl Into<String>, message: impl Into<String>) -> Self {
        ControlResponse {
            error: Some((code.into(), message.into())),
            ..Default::default()
        }
    }

    pub fn from_channel_error(e: &ChannelError) -> Self {
        ControlResponse::error(e.code(), e.detail())
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }

    pub fn to_element(&self) -> Element {
        let mut el = Element::new("RESPONSE");
        match &self.error {
            None => el.set_attr("status", "ok"),
            Some((code, msg)) => {
                el.set_attr("status", "error");
                el.set_attr("error", code);
                el.set_attr("message", msg);
            }
        }
        if let Some(p) = self.port {
            el.set_attr("port", p.to_string());
        }
        if let Some(m) = &self.machine {
            el.set_attr("machine", m);
        }
        if let Some(h) = &self.fire_host {
            el.set_attr("fireHost", h);
        }
        if let Some(p) = self.fire_port {
            el.set_attr("firePort", p.to_string());
        }
        for (name, state) in &self.channels {
            el = el.child(state.to_element(name));
        }
        el
    }

    pub fn from_element(el: &Element) -> Result<Self, String> {
        if el.name != "RESPONSE" {
            return Err(format!("expected RESPONSE, found {}", el.name));
        }
        let parse_port = |k: &str| -> Result<Option<u16>, String> {
            el.get_attr(k)
                .map(|p| p.parse().map_err(|e| format!("{k}: {e}")))
                .transpose()
        };
        let error = match el.required_attr("status")? {
            "ok" => None,
            "error" => Some((
                el.get_attr("error").unwrap_or("Unknown").to_string(),
                el.get_attr("message").unwrap_or_default().to_string(),
            )),
            other => return Err(format!("unknown status {other}")),
        };
        let channels = el
            .elements_named("CHANNEL")
            .map(ChannelState::from_element)
            .collect::<Result<_, _>>()?;
        Ok(ControlResponse {
            error,
            port: parse_port("port")?,
            channels,
            machine: el.get_attr("machine").map(str::to_string),
            fire_host: el.get_attr("fireHost").map(str::to_string),
            fire_port: parse_port("firePort")?,
        })
    }

    /// Turns an error response into a [`ChannelError`] where the code is known.
    pub fn into_result(self) -> Result<ControlResponse, ChannelError> {
        match &self.error {
            None => Ok(self),
            Some((code, msg)) => Err(ChannelError::from_code(code, msg)),
        }
    }
}

/// Client side of a machine channel.
pub struct ControlClient {
    stream: TcpStream,
    max_frame: usize,
}

impl ControlClient {
    pub fn connect(addr: &str, timeout: Duration, max_frame: usize) -> Result<Self, ChannelError> {
        let addrs: Vec<SocketAddr> = addr
            .to_socket_addrs()
            .map_err(|e| ChannelError::ConnectFailed(format!("{addr}: {e}")))?
            .collect();
        let mut last = format!("{addr}: no address");
        for a in addrs {
            match TcpStream::connect_timeout(&a, timeout) {
                Ok(stream) => {
                    stream.set_read_timeout(Some(timeout.max(Duration::from_secs(1)) * 4))?;
                    return Ok(ControlClient { stream, max_frame });
                }
                Err(e) => last = format!("{a}: {e}"),
            }
        }
        Err(ChannelError::ConnectFailed(last))
    }

    /// Sends one request and waits for its response (error responses included).
    pub fn call(&mut self, req: &ControlRequest) -> Result<ControlResponse, ChannelError> {
        write_frame(&mut self.stream, &req.to_element().to_bytes(), self.max_frame)?;
        let bytes = read_frame(&mut self.stream, self.max_frame)?.ok_or(ChannelError::PeerClosed)?;
        let el = Element::parse(&bytes).map_err(|e| ChannelError::Protocol(e.to_string()))?;
        ControlResponse::from_element(&el).map_err(ChannelError::Protocol)
    }

    /// Like [`call`](Self::call), mapping error responses to `Err`.
    pub fn request(&mut self, req: &ControlRequest) -> Result<ControlResponse, ChannelError> {
        self.call(req)?.into_result()
    }

    /// Releases the underlying stream with its read timeout cleared.
    pub fn into_stream(self) -> TcpStream {
        let _ = self.stream.set_read_timeout(None);
        self.stream
    }
}
