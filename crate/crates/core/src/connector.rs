use std::fmt;

use thiserror::Error;

use crate::xml::Element;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid connector: {0}")]
pub struct ConnectorError(pub String);

/// Locates a running machine: its host plus the control (machine) port and
/// the resource port where named-channel data connections may attach.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Connector {
    pub host: String,
    pub machine_port: u16,
    pub resource_port: u16,
}

impl Connector {
    pub fn new(host: impl Into<String>, machine_port: u16, resource_port: u16) -> Result<Self, ConnectorError> {
        let host = host.into();
        if host.is_empty() {
            return Err(ConnectorError("empty host".into()));
        }
        if machine_port == 0 || resource_port == 0 {
            return Err(ConnectorError(format!(
                "ports must be non-zero (machinePort={machine_port}, resourcePort={resource_port})"
            )));
        }
        Ok(Connector {
            host,
            machine_port,
            resource_port,
        })
    }

    pub fn to_element(&self) -> Element {
        Element::new("CONNECTOR")
            .attr("host", &self.host)
            .attr("machinePort", self.machine_port.to_string())
            .attr("resourcePort", self.resource_port.to_string())
    }

    pub fn from_element(el: &Element) -> Result<Self, ConnectorError> {
        if el.name != "CONNECTOR" {
            return Err(ConnectorError(format!("expected CONNECTOR, found {}", el.name)));
        }
        let host = el.required_attr("host").map_err(ConnectorError)?;
        let port = |key: &str| -> Result<u16, ConnectorError> {
            el.required_attr(key)
                .map_err(ConnectorError)?
                .trim()
                .parse::<u16>()
                .map_err(|e| ConnectorError(format!("{key}: {e}")))
        };
        Connector::new(host, port("machinePort")?, port("resourcePort")?)
    }

    pub fn machine_addr(&self) -> String {
        format!("{}:{}", self.host, self.machine_port)
    }

    pub fn resource_addr(&self) -> String {
        format!("{}:{}", self.host, self.resource_port)
    }
}

impl fmt::Display for Connector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}/{}", self.host, self.machine_port, self.resource_port)
    }
}
