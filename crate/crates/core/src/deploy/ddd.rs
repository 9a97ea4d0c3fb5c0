//! Deployment description documents.

use std::collections::HashSet;

use super::DeployError;
use crate::xml::Element;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BundleSource {
    pub name: String,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Host {
    pub id: String,
    /// IP or name, optionally with `:firePort`.
    pub address: String,
}

impl Host {
    /// Fire daemon address; `default_port` applies when the address has none.
    pub fn fire_addr(&self, default_port: Option<u16>) -> Result<String, DeployError> {
        if let Some((host, port)) = self.address.rsplit_once(':') {
            if port.parse::<u16>().is_ok() && !host.is_empty() && !host.contains(':') {
                return Ok(self.address.clone());
            }
        }
        match default_port {
            Some(p) => Ok(format!("{}:{p}", self.address)),
            None => Err(DeployError::Config(format!(
                "host {} address {} names no fire port and no default is configured",
                self.id, self.address
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Deployment {
    pub name: String,
    pub bundle: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Endpoint {
    pub deployment: String,
    pub channel: String,
}

impl Endpoint {
    pub fn new(deployment: impl Into<String>, channel: impl Into<String>) -> Self {
        Endpoint {
            deployment: deployment.into(),
            channel: channel.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Connection {
    pub source: Endpoint,
    pub destination: Endpoint,
}

impl Connection {
    pub fn new(source: Endpoint, destination: Endpoint) -> Self {
        Connection { source, destination }
    }

    pub fn touches(&self, deployment: &str) -> bool {
        self.source.deployment == deployment || self.destination.deployment == deployment
    }

    pub fn to_element(&self) -> Element {
        Element::new("CONNECTION")
            .child(
                Element::new("SOURCE")
                    .attr("deployment", &self.source.deployment)
                    .attr("channel", &self.source.channel),
            )
            .child(
                Element::new("DESTINATION")
                    .attr("deployment", &self.destination.deployment)
                    .attr("channel", &self.destination.channel),
            )
    }

    pub fn from_element(el: &Element) -> Result<Self, DeployError> {
        let end = |name: &str| -> Result<Endpoint, DeployError> {
            let e = el
                .first(name)
                .ok_or_else(|| malformed(format!("CONNECTION lacks {name}")))?;
            Ok(Endpoint::new(
                e.required_attr("deployment").map_err(malformed)?,
                e.required_attr("channel").map_err(malformed)?,
            ))
        };
        Ok(Connection::new(end("SOURCE")?, end("DESTINATION")?))
    }
}

impl std::fmt::Display for Connection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}.{} -> {}.{}",
            self.source.deployment, self.source.channel, self.destination.deployment, self.destination.channel
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ddd {
    pub name: String,
    pub bundles: Vec<BundleSource>,
    pub hosts: Vec<Host>,
    pub deployments: Vec<Deployment>,
    pub connections: Vec<Connection>,
}

fn malformed(m: impl Into<String>) -> DeployError {
    DeployError::MalformedDocument(m.into())
}

pub fn parse_ddd(doc: &[u8]) -> Result<Ddd, DeployError> {
    let root = Element::parse(doc).map_err(|e| malformed(e.0))?;
    Ddd::from_element(&root)
}

impl Ddd {
    pub fn from_element(root: &Element) -> Result<Ddd, DeployError> {
        if root.name != "DDD" {
            return Err(malformed(format!("root element is {}, expected DDD", root.name)));
        }
        let section = |name: &str| root.first(name).into_iter().flat_map(|s| s.elements());
        let attr = |el: &Element, k: &str| el.required_attr(k).map(str::to_string).map_err(malformed);

        let mut bundles = Vec::new();
        for b in section("BUNDLES") {
            bundles.push(BundleSource {
                name: attr(b, "name")?,
                source: attr(b, "source")?,
            });
        }
        let mut hosts = Vec::new();
        for h in section("HOSTS") {
            hosts.push(Host {
                id: attr(h, "id")?,
                address: attr(h, "address")?,
            });
        }
        let mut deployments = Vec::new();
        for d in section("DEPLOYMENTS") {
            deployments.push(Deployment {
                name: attr(d, "name")?,
                bundle: attr(d, "bundle")?,
                target: attr(d, "target")?,
            });
        }
        let connections = section("CONNECTIONS")
            .map(Connection::from_element)
            .collect::<Result<_, _>>()?;
        let ddd = Ddd {
            name: attr(root, "name")?,
            bundles,
            hosts,
            deployments,
            connections,
        };
        ddd.validate()?;
        Ok(ddd)
    }

    /// Uniqueness and referential checks.
    pub fn validate(&self) -> Result<(), DeployError> {
        unique(self.bundles.iter().map(|b| b.name.as_str()), "bundle")?;
        unique(self.hosts.iter().map(|h| h.id.as_str()), "host")?;
        unique(self.deployments.iter().map(|d| d.name.as_str()), "deployment")?;
        for d in &self.deployments {
            if self.bundle(&d.bundle).is_none() {
                return Err(DeployError::DanglingReference(format!(
                    "deployment {} names undeclared bundle {}",
                    d.name, d.bundle
                )));
            }
            if self.host(&d.target).is_none() {
                return Err(DeployError::DanglingReference(format!(
                    "deployment {} targets undeclared host {}",
                    d.name, d.target
                )));
            }
        }
        self.validate_connections(&self.connections)
    }

    pub fn validate_connections(&self, connections: &[Connection]) -> Result<(), DeployError> {
        let mut ends = HashSet::new();
        for c in connections {
            for end in [&c.source, &c.destination] {
                if self.deployment(&end.deployment).is_none() {
                    return Err(DeployError::DanglingReference(format!(
                        "connection {c} references undeclared deployment {}",
                        end.deployment
                    )));
                }
                if !ends.insert(end) {
                    return Err(malformed(format!(
                        "channel {}.{} used by more than one connection",
                        end.deployment, end.channel
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn bundle(&self, name: &str) -> Option<&BundleSource> {
        self.bundles.iter().find(|b| b.name == name)
    }

    pub fn host(&self, id: &str) -> Option<&Host> {
        self.hosts.iter().find(|h| h.id == id)
    }

    pub fn deployment(&self, name: &str) -> Option<&Deployment> {
        self.deployments.iter().find(|d| d.name == name)
    }

    pub fn to_element(&self) -> Element {
        let mut bundles = Element::new("BUNDLES");
        for b in &self.bundles {
            bundles = bundles.child(Element::new("BUNDLE").attr("name", &b.name).attr("source", &b.source));
        }
        let mut hosts = Element::new("HOSTS");
        for h in &self.hosts {
            hosts = hosts.child(Element::new("HOST").attr("id", &h.id).attr("address", &h.address));
        }
        let mut deployments = Element::new("DEPLOYMENTS");
        for d in &self.deployments {
            deployments = deployments.child(
                Element::new("DEPLOYMENT")
                    .attr("name", &d.name)
                    .attr("bundle", &d.bundle)
                    .attr("target", &d.target),
            );
        }
        let connections = self
            .connections
            .iter()
            .fold(Element::new("CONNECTIONS"), |el, c| el.child(c.to_element()));
        Element::new("DDD")
            .attr("name", &self.name)
            .child(bundles)
            .child(hosts)
            .child(deployments)
            .child(connections)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_element().to_bytes()
    }
}

fn unique<'a>(names: impl Iterator<Item = &'a str>, what: &str) -> Result<(), DeployError> {
    let mut seen = HashSet::new();
    for n in names {
        if !seen.insert(n) {
            return Err(malformed(format!("duplicate {what} {n}")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"<DDD name="x"><BUNDLES><BUNDLE name="S" source="s.xml"/></BUNDLES><HOSTS><HOST id="A" address="127.0.0.1:9"/></HOSTS><DEPLOYMENTS><DEPLOYMENT name="P" bundle="S" target="A"/><DEPLOYMENT name="Q" bundle="S" target="A"/></DEPLOYMENTS><CONNECTIONS><CONNECTION><SOURCE deployment="P" channel="o"/><DESTINATION deployment="Q" channel="i"/></CONNECTION></CONNECTIONS></DDD>"#;

    #[test]
    fn round_trip() {
        let d = parse_ddd(SMALL.as_bytes()).unwrap();
        assert_eq!(d.to_element().to_string(), SMALL);
    }

    #[test]
    fn dangling_references() {
        let bad_target = SMALL.replace(r#"target="A"/><DEPLOYMENT name="Q""#, r#"target="Z"/><DEPLOYMENT name="Q""#);
        assert!(matches!(parse_ddd(bad_target.as_bytes()), Err(DeployError::DanglingReference(m)) if m.contains('Z')));
        let bad_conn = SMALL.replace(r#"<DESTINATION deployment="Q""#, r#"<DESTINATION deployment="Nope""#);
        assert!(matches!(parse_ddd(bad_conn.as_bytes()), Err(DeployError::DanglingReference(m)) if m.contains("Nope")));
        let bad_bundle = SMALL.replace(r#"bundle="S" target="A"/><DEPLOYMENT name="Q""#, r#"bundle="T" target="A"/><DEPLOYMENT name="Q""#);
        assert!(matches!(parse_ddd(bad_bundle.as_bytes()), Err(DeployError::DanglingReference(_))));
    }

    #[test]
    fn duplicates_and_garbage_are_malformed() {
        let dup = SMALL.replace(r#"name="Q""#, r#"name="P""#);
        assert!(matches!(parse_ddd(dup.as_bytes()), Err(DeployError::MalformedDocument(_))));
        assert!(matches!(parse_ddd(b"<DDD"), Err(DeployError::MalformedDocument(_))));
        assert!(matches!(parse_ddd(b"<X/>"), Err(DeployError::MalformedDocument(_))));
    }

    #[test]
    fn fire_addresses() {
        let h = |a: &str| Host {
            id: "A".into(),
            address: a.into(),
        };
        assert_eq!(h("10.0.0.1:77").fire_addr(None).unwrap(), "10.0.0.1:77");
        assert_eq!(h("10.0.0.1").fire_addr(Some(5)).unwrap(), "10.0.0.1:5");
        assert!(h("10.0.0.1").fire_addr(None).is_err());
    }
}
