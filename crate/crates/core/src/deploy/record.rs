use std::fmt;
use std::str::FromStr;

use super::ddd::{Connection, Ddd};
use super::DeployError;
use crate::connector::Connector;
use crate::guid::Guid;
use crate::xml::Element;

/// Lifecycle state of one deployed component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ComponentState {
    Pending,
    Installed,
    Running,
    Wired,
}

impl ComponentState {
    pub fn name(self) -> &'static str {
        match self {
            ComponentState::Pending => "pending",
            ComponentState::Installed => "installed",
            ComponentState::Running => "running",
            ComponentState::Wired => "wired",
        }
    }
}

impl fmt::Display for ComponentState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ComponentState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pending" => Ok(ComponentState::Pending),
            "installed" => Ok(ComponentState::Installed),
            "running" => Ok(ComponentState::Running),
            "wired" => Ok(ComponentState::Wired),
            other => Err(format!("unknown component state {other}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeploymentEntry {
    pub name: String,
    pub host: String,
    pub state: ComponentState,
    pub store_key: Option<Guid>,
    pub machine: Option<Guid>,
    pub connector: Option<Connector>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WireStatus {
    Pending,
    Connected,
    Failed,
}

impl WireStatus {
    pub fn name(self) -> &'static str {
        match self {
            WireStatus::Pending => "pending",
            WireStatus::Connected => "connected",
            WireStatus::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectionEntry {
    pub connection: Connection,
    pub status: WireStatus,
}

/// What the engine knows about an enacted DDD.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeploymentRecord {
    /// The description as currently enacted: targets and connections track
    /// moves and rewires.
    pub ddd: Ddd,
    pub deployments: Vec<DeploymentEntry>,
    pub connections: Vec<ConnectionEntry>,
}

impl DeploymentRecord {
    pub fn new(ddd: &Ddd) -> Self {
        DeploymentRecord {
            deployments: ddd
                .deployments
                .iter()
                .map(|d| DeploymentEntry {
                    name: d.name.clone(),
                    host: d.target.clone(),
                    state: ComponentState::Pending,
                    store_key: None,
                    machine: None,
                    connector: None,
                })
                .collect(),
            connections: ddd
                .connections
                .iter()
                .map(|c| ConnectionEntry {
                    connection: c.clone(),
                    status: WireStatus::Pending,
                })
                .collect(),
            ddd: ddd.clone(),
        }
    }

    pub fn deployment(&self, name: &str) -> Option<&DeploymentEntry> {
        self.deployments.iter().find(|d| d.name == name)
    }

    pub fn deployment_mut(&mut self, name: &str) -> Option<&mut DeploymentEntry> {
        self.deployments.iter_mut().find(|d| d.name == name)
    }

    pub fn connection(&self, c: &Connection) -> Option<&ConnectionEntry> {
        self.connections.iter().find(|e| &e.connection == c)
    }

    pub fn state_of(&self, name: &str) -> Option<ComponentState> {
        self.deployment(name).map(|d| d.state)
    }

    /// Everything except ports and machine ids, which differ run to run.
    pub fn summary(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .deployments
            .iter()
            .map(|d| {
                format!(
                    "deployment {} host={} state={} key={}",
                    d.name,
                    d.host,
                    d.state,
                    d.store_key.as_ref().map(Guid::as_str).unwrap_or("-")
                )
            })
            .collect();
        let mut conns: Vec<String> = self
            .connections
            .iter()
            .map(|c| format!("connection {} {}", c.connection, c.status.name()))
            .collect();
        conns.sort();
        out.extend(conns);
        out
    }

    pub fn to_element(&self) -> Element {
        let mut el = Element::new("DEPLOYMENTRECORD").child(self.ddd.to_element());
        for d in &self.deployments {
            let mut de = Element::new("DEPLOYMENT")
                .attr("name", &d.name)
                .attr("host", &d.host)
                .attr("state", d.state.name());
            if let Some(k) = &d.store_key {
                de.set_attr("storeKey", k.as_str());
            }
            if let Some(m) = &d.machine {
                de.set_attr("machine", m.as_str());
            }
            if let Some(c) = &d.connector {
                de = de.child(c.to_element());
            }
            el = el.child(de);
        }
        for c in &self.connections {
            el = el.child(Element::new("WIRING").attr("status", c.status.name()).child(c.connection.to_element()));
        }
        el
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_element().to_bytes()
    }

    pub fn parse(doc: &[u8]) -> Result<Self, DeployError> {
        let bad = |m: String| DeployError::MalformedDocument(m);
        let el = Element::parse(doc).map_err(|e| bad(e.0))?;
        if el.name != "DEPLOYMENTRECORD" {
            return Err(bad(format!("expected DEPLOYMENTRECORD, found {}", el.name)));
        }
        let ddd = Ddd::from_element(el.first("DDD").ok_or_else(|| bad("record lacks DDD".into()))?)?;
        let guid = |s: &str| Guid::parse(s).map_err(|e| bad(e.to_string()));
        let mut deployments = Vec::new();
        for d in el.elements_named("DEPLOYMENT") {
            deployments.push(DeploymentEntry {
                name: d.required_attr("name").map_err(bad)?.to_string(),
                host: d.required_attr("host").map_err(bad)?.to_string(),
                state: d.required_attr("state").map_err(bad)?.parse().map_err(bad)?,
                store_key: d.get_attr("storeKey").map(guid).transpose()?,
                machine: d.get_attr("machine").map(guid).transpose()?,
                connector: d
                    .first("CONNECTOR")
                    .map(|c| Connector::from_element(c).map_err(|e| bad(e.to_string())))
                    .transpose()?,
            });
        }
        let mut connections = Vec::new();
        for w in el.elements_named("WIRING") {
            let status = match w.required_attr("status").map_err(bad)? {
                "pending" => WireStatus::Pending,
                "connected" => WireStatus::Connected,
                "failed" => WireStatus::Failed,
                other => return Err(bad(format!("unknown wiring status {other}"))),
            };
            let c = w
                .first("CONNECTION")
                .ok_or_else(|| bad("WIRING lacks CONNECTION".into()))?;
            connections.push(ConnectionEntry {
                connection: Connection::from_element(c)?,
                status,
            });
        }
        Ok(DeploymentRecord {
            ddd,
            deployments,
            connections,
        })
    }
}
