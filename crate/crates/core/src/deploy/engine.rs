use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::PathBuf;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use super::ddd::{BundleSource, Connection, Ddd, Deployment};
use super::plan::{installer_bundle, runner_bundle, wirer_bundle, WireSpec};
use super::record::{ComponentState, ConnectionEntry, DeploymentRecord, WireStatus};
use super::{DeployError, Phase};
use crate::bundle::Bundle;
use crate::channel::{ChannelError, ControlClient, ControlRequest, DEFAULT_MAX_FRAME};
use crate::connector::Connector;
use crate::guid::Guid;
use crate::runtime::TaskReport;
use crate::security::Signer;
use crate::server::{fire_remote, query_status};

#[derive(Debug, Clone)]
pub struct EngineConfig {
    /// Fire port for hosts whose address carries none.
    pub default_fire_port: Option<u16>,
    /// Directory searched (by file name) for bundle sources.
    pub catalogue: Option<PathBuf>,
    pub connect_timeout: Duration,
    pub report_timeout: Duration,
    pub max_frame: usize,
    /// Fire all wirers of a phase at once rather than one after another.
    pub parallel_wiring: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            default_fire_port: None,
            catalogue: None,
            connect_timeout: Duration::from_secs(5),
            report_timeout: Duration::from_secs(30),
            max_frame: DEFAULT_MAX_FRAME,
            parallel_wiring: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EngineEvent {
    Progress {
        phase: Phase,
        node: String,
        ok: bool,
    },
    StateChange {
        deployment: String,
        from: ComponentState,
        to: ComponentState,
    },
    Report {
        phase: Phase,
        node: String,
        report: TaskReport,
    },
}

impl fmt::Display for EngineEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EngineEvent::Progress { phase, node, ok } => write!(
                f,
                "phase:{phase} node:{node} status:{}",
                if *ok { "ok" } else { "failed" }
            ),
            EngineEvent::StateChange { deployment, from, to } => {
                write!(f, "state:{deployment} {from}->{to}")
            }
            EngineEvent::Report { phase, node, report } => write!(f, "report:{phase} node:{node} {report}"),
        }
    }
}

pub type Observer = Arc<dyn Fn(&EngineEvent) + Send + Sync>;

/// Enacts DDDs against thin servers, signing every tool bundle it fires
/// with its own entity.
pub struct Engine {
    signer: Signer,
    config: EngineConfig,
    observer: Option<Observer>,
}

/// Outcome of one node's share of a phase.
type NodeResult<T> = (String, Result<T, String>);

impl Engine {
    pub fn new(signer: Signer, config: EngineConfig) -> Self {
        Engine {
            signer,
            config,
            observer: None,
        }
    }

    pub fn with_observer(mut self, observer: Observer) -> Self {
        self.observer = Some(observer);
        self
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn signer(&self) -> &Signer {
        &self.signer
    }

    fn emit(&self, e: EngineEvent) {
        if let Some(o) = &self.observer {
            o(&e);
        }
    }

    fn set_state(&self, record: &mut DeploymentRecord, name: &str, to: ComponentState) {
        if let Some(d) = record.deployment_mut(name) {
            let from = d.state;
            if from != to {
                d.state = to;
                self.emit(EngineEvent::StateChange {
                    deployment: name.to_string(),
                    from,
                    to,
                });
            }
        }
    }

    /// Reads a bundle source: a `file://` path or plain path, falling back
    /// to the file name inside the catalogue directory.
    pub fn load_bundle(&self, src: &BundleSource) -> Result<Bundle, DeployError> {
        let raw = src.source.strip_prefix("file://").unwrap_or(&src.source);
        let mut candidates = vec![PathBuf::from(raw)];
        if let Some(dir) = &self.config.catalogue {
            let base = raw.rsplit(['/', '\\']).next().unwrap_or(raw);
            candidates.push(dir.join(base));
        }
        let path = candidates.iter().find(|p| p.is_file()).ok_or_else(|| DeployError::Source {
            bundle: src.name.clone(),
            detail: format!("{} not found", src.source),
        })?;
        let bytes = fs::read(path).map_err(|e| DeployError::Source {
            bundle: src.name.clone(),
            detail: format!("{}: {e}", path.display()),
        })?;
        Bundle::parse(&bytes).map_err(|e| DeployError::Source {
            bundle: src.name.clone(),
            detail: e.to_string(),
        })
    }

    fn fire_addr(&self, ddd: &Ddd, host: &str) -> Result<String, DeployError> {
        ddd.host(host)
            .ok_or_else(|| DeployError::DanglingReference(format!("undeclared host {host}")))?
            .fire_addr(self.config.default_fire_port)
    }

    /// Fires a tool bundle and waits for its report, which must answer
    /// every task.
    fn run_tool(&self, phase: Phase, node: &str, addr: &str, tool: &Bundle, tasks: usize) -> Result<TaskReport, String> {
        let mut remote = fire_remote(addr, tool, self.config.connect_timeout, self.config.max_frame)
            .map_err(|e| format!("{}: {}", e.code(), e.detail()))?;
        let report = remote
            .read_report(self.config.report_timeout)
            .map_err(|e| format!("{}: {}", e.code(), e.detail()))?;
        self.emit(EngineEvent::Report {
            phase,
            node: node.to_string(),
            report: report.clone(),
        });
        if report.results.len() != tasks {
            return Err(format!("report answers {} of {tasks} tasks", report.results.len()));
        }
        if let Some(f) = report.first_failure() {
            return Err(format!("task {}: {}", f.guid, f.error().unwrap_or("failed")));
        }
        Ok(report)
    }

    /// Records per-node outcomes in order and fails on the first failure.
    fn settle<T>(
        &self,
        phase: Phase,
        results: Vec<NodeResult<T>>,
        mut apply: impl FnMut(&str, T),
    ) -> Result<(), DeployError> {
        let mut failure = None;
        for (node, r) in results {
            self.emit(EngineEvent::Progress {
                phase,
                node: node.clone(),
                ok: r.is_ok(),
            });
            match r {
                Ok(v) => apply(&node, v),
                Err(detail) => {
                    failure.get_or_insert(DeployError::PhaseFailed { phase, node, detail });
                }
            }
        }
        failure.map_or(Ok(()), Err)
    }

    pub fn deploy(&self, ddd: &Ddd) -> Result<DeploymentRecord, DeployError> {
        let mut record = DeploymentRecord::new(ddd);
        self.deploy_into(&mut record)?;
        Ok(record)
    }

    /// Like [`deploy`](Self::deploy) but leaves partial progress in `record`
    /// when a phase fails.
    pub fn deploy_into(&self, record: &mut DeploymentRecord) -> Result<(), DeployError> {
        let ddd = record.ddd.clone();
        ddd.validate()?;
        let names: Vec<String> = ddd.deployments.iter().map(|d| d.name.clone()).collect();
        self.install(record, &names)?;
        self.run(record, &names)?;
        let conns = ddd.connections.clone();
        self.wire(record, &conns)
    }

    /// Deployments grouped by target host, hosts in first-use order.
    fn by_host<'a>(ddd: &'a Ddd, names: &[String]) -> Vec<(String, Vec<&'a Deployment>)> {
        let mut groups: Vec<(String, Vec<&Deployment>)> = Vec::new();
        for d in ddd.deployments.iter().filter(|d| names.contains(&d.name)) {
            match groups.iter_mut().find(|(h, _)| *h == d.target) {
                Some((_, v)) => v.push(d),
                None => groups.push((d.target.clone(), vec![d])),
            }
        }
        groups
    }

    fn install(&self, record: &mut DeploymentRecord, names: &[String]) -> Result<(), DeployError> {
        let ddd = record.ddd.clone();
        let mut sources: HashMap<&str, Bundle> = HashMap::new();
        for d in ddd.deployments.iter().filter(|d| names.contains(&d.name)) {
            if !sources.contains_key(d.bundle.as_str()) {
                let src = ddd.bundle(&d.bundle).expect("validated");
                sources.insert(&d.bundle, self.load_bundle(src)?);
            }
        }
        let groups = Self::by_host(&ddd, names);
        let mut jobs = Vec::new();
        for (host, deps) in &groups {
            let addr = self.fire_addr(&ddd, host)?;
            let payloads: Vec<(String, Bundle)> = deps
                .iter()
                .map(|d| (Guid::random().to_string(), sources[d.bundle.as_str()].clone()))
                .collect();
            jobs.push((host.clone(), addr, deps.clone(), payloads));
        }
        let results: Vec<NodeResult<Vec<(String, Guid)>>> = thread::scope(|s| {
            let handles: Vec<_> = jobs
                .iter()
                .map(|(host, addr, deps, payloads)| {
                    s.spawn(move || {
                        let tool = installer_bundle(&self.signer, payloads);
                        let report = self.run_tool(Phase::Install, host, addr, &tool, payloads.len())?;
                        deps.iter()
                            .zip(payloads)
                            .zip(&report.results)
                            .map(|((d, (id, _)), r)| {
                                let key = r
                                    .get(id)
                                    .and_then(|k| Guid::parse(k).ok())
                                    .ok_or_else(|| format!("installer report lacks a key for {}", d.name))?;
                                Ok((d.name.clone(), key))
                            })
                            .collect()
                    })
                })
                .collect();
            jobs.iter()
                .zip(handles)
                .map(|((host, ..), h)| (host.clone(), h.join().unwrap_or_else(|_| Err("installer thread panicked".into()))))
                .collect()
        });
        let mut installed = Vec::new();
        let outcome = self.settle(Phase::Install, results, |_, keys| installed.extend(keys));
        for (name, key) in installed {
            if let Some(d) = record.deployment_mut(&name) {
                d.store_key = Some(key);
            }
            self.set_state(record, &name, ComponentState::Installed);
        }
        outcome
    }

    fn run(&self, record: &mut DeploymentRecord, names: &[String]) -> Result<(), DeployError> {
        let ddd = record.ddd.clone();
        let mut jobs = Vec::new();
        for (host, deps) in Self::by_host(&ddd, names) {
            let addr = self.fire_addr(&ddd, &host)?;
            let mut keyed = Vec::new();
            for d in deps {
                let key = record
                    .deployment(&d.name)
                    .and_then(|e| e.store_key.clone())
                    .ok_or_else(|| DeployError::PhaseFailed {
                        phase: Phase::Run,
                        node: host.clone(),
                        detail: format!("{} has no store key", d.name),
                    })?;
                keyed.push((d.name.clone(), key));
            }
            jobs.push((host, addr, keyed));
        }
        let results: Vec<NodeResult<Vec<(String, Guid, Connector)>>> = thread::scope(|s| {
            let handles: Vec<_> = jobs
                .iter()
                .map(|(host, addr, keyed)| {
                    s.spawn(move || {
                        let keys: Vec<Guid> = keyed.iter().map(|(_, k)| k.clone()).collect();
                        let tool = runner_bundle(&self.signer, &keys);
                        let report = self.run_tool(Phase::Run, host, addr, &tool, keys.len())?;
                        keyed
                            .iter()
                            .zip(&report.results)
                            .map(|((name, _), r)| {
                                let machine = r.get("Machine").and_then(|m| Guid::parse(m).ok());
                                match (machine, r.connector()) {
                                    (Some(m), Some(c)) => Ok((name.clone(), m, c)),
                                    _ => Err(format!("runner report lacks a connector for {name}")),
                                }
                            })
                            .collect()
                    })
                })
                .collect();
            jobs.iter()
                .zip(handles)
                .map(|((host, ..), h)| (host.clone(), h.join().unwrap_or_else(|_| Err("runner thread panicked".into()))))
                .collect()
        });
        let mut running = Vec::new();
        let outcome = self.settle(Phase::Run, results, |_, v| running.extend(v));
        for (name, machine, connector) in running {
            if let Some(d) = record.deployment_mut(&name) {
                d.machine = Some(machine);
                d.connector = Some(connector);
            }
            self.set_state(record, &name, ComponentState::Running);
        }
        outcome
    }

    fn spec_for(&self, record: &DeploymentRecord, c: &Connection) -> Result<(String, String, WireSpec), DeployError> {
        let end = |name: &str| {
            record
                .deployment(name)
                .ok_or_else(|| DeployError::UnknownDeployment(name.to_string()))
        };
        let (src, dst) = (end(&c.source.deployment)?, end(&c.destination.deployment)?);
        let connector = |d: &super::record::DeploymentEntry| {
            d.connector.clone().ok_or_else(|| DeployError::PhaseFailed {
                phase: Phase::Wire,
                node: d.host.clone(),
                detail: format!("{} is not running", d.name),
            })
        };
        let spec = WireSpec {
            primary: connector(src)?,
            secondary: connector(dst)?,
            primary_channel: c.source.channel.clone(),
            secondary_channel: c.destination.channel.clone(),
        };
        Ok((src.host.clone(), self.fire_addr(&record.ddd, &src.host)?, spec))
    }

    /// Wire phase for `conns`: one wirer per connection, fired at the
    /// source deployment's host.
    fn wire(&self, record: &mut DeploymentRecord, conns: &[Connection]) -> Result<(), DeployError> {
        let jobs = conns
            .iter()
            .map(|c| self.spec_for(record, c))
            .collect::<Result<Vec<_>, _>>()?;
        let fire = |(host, addr, spec): &(String, String, WireSpec)| -> NodeResult<()> {
            let tool = wirer_bundle(&self.signer, std::slice::from_ref(spec));
            (host.clone(), self.run_tool(Phase::Wire, host, addr, &tool, 1).map(|_| ()))
        };
        let results: Vec<NodeResult<()>> = if self.config.parallel_wiring {
            thread::scope(|s| {
                let handles: Vec<_> = jobs.iter().map(|j| s.spawn(move || fire(j))).collect();
                handles
                    .into_iter()
                    .zip(&jobs)
                    .map(|(h, (host, ..))| h.join().unwrap_or_else(|_| (host.clone(), Err("wirer thread panicked".into()))))
                    .collect()
            })
        } else {
            jobs.iter().map(fire).collect()
        };

        let mut failure = None;
        for (c, (node, r)) in conns.iter().zip(results) {
            self.emit(EngineEvent::Progress {
                phase: Phase::Wire,
                node: node.clone(),
                ok: r.is_ok(),
            });
            let status = if r.is_ok() { WireStatus::Connected } else { WireStatus::Failed };
            if let Some(e) = record.connections.iter_mut().find(|e| &e.connection == c) {
                e.status = status;
            }
            if let Err(detail) = r {
                failure.get_or_insert(DeployError::PhaseFailed {
                    phase: Phase::Wire,
                    node,
                    detail,
                });
            }
        }
        self.refresh_wired(record);
        failure.map_or(Ok(()), Err)
    }

    /// Running components whose connections are all up become wired, and
    /// wired ones that lost a connection fall back to running.
    fn refresh_wired(&self, record: &mut DeploymentRecord) {
        let names: Vec<String> = record.deployments.iter().map(|d| d.name.clone()).collect();
        for name in names {
            let state = record.state_of(&name).unwrap_or(ComponentState::Pending);
            if state < ComponentState::Running {
                continue;
            }
            let mine: Vec<&ConnectionEntry> = record
                .connections
                .iter()
                .filter(|c| c.connection.touches(&name))
                .collect();
            let wired = !mine.is_empty() && mine.iter().all(|c| c.status == WireStatus::Connected);
            let to = if wired { ComponentState::Wired } else { ComponentState::Running };
            self.set_state(record, &name, to);
        }
    }

    fn control(&self, c: &Connector) -> Result<ControlClient, ChannelError> {
        ControlClient::connect(&c.machine_addr(), self.config.connect_timeout, self.config.max_frame)
    }

    /// Disconnects `c` through both machines' machine channels, source
    /// side first. The destination may already have dropped to UNBOUND
    /// when its peer went away.
    fn unwire(&self, record: &mut DeploymentRecord, c: &Connection) -> Result<(), DeployError> {
        let (host, _, spec) = self.spec_for(record, c)?;
        let failed = |node: &str, e: ChannelError| DeployError::PhaseFailed {
            phase: Phase::Unwire,
            node: node.to_string(),
            detail: format!("{}: {}", e.code(), e.detail()),
        };
        let r = self.control(&spec.primary).and_then(|mut ctl| {
            ctl.request(&ControlRequest::Disconnect {
                name: spec.primary_channel.clone(),
            })
        });
        self.emit(EngineEvent::Progress {
            phase: Phase::Unwire,
            node: host.clone(),
            ok: r.is_ok(),
        });
        r.map_err(|e| failed(&host, e))?;

        let dst_host = record
            .deployment(&c.destination.deployment)
            .map(|d| d.host.clone())
            .unwrap_or_default();
        let r = self.control(&spec.secondary).and_then(|mut ctl| {
            ctl.request(&ControlRequest::Disconnect {
                name: spec.secondary_channel.clone(),
            })
        });
        match r {
            Ok(_) | Err(ChannelError::NameNotBound(_)) => {}
            Err(e) => return Err(failed(&dst_host, e)),
        }
        if let Some(e) = record.connections.iter_mut().find(|e| &e.connection == c) {
            e.status = WireStatus::Pending;
        }
        Ok(())
    }

    /// Replaces the record's connection set: removed connections are
    /// disconnected, added ones wired. Machines are never restarted.
    pub fn rewire(&self, record: &mut DeploymentRecord, new_connections: &[Connection]) -> Result<(), DeployError> {
        record.ddd.validate_connections(new_connections)?;
        let old: Vec<Connection> = record.connections.iter().map(|e| e.connection.clone()).collect();
        let removed: Vec<Connection> = old.iter().filter(|c| !new_connections.contains(c)).cloned().collect();
        let added: Vec<Connection> = new_connections.iter().filter(|c| !old.contains(c)).cloned().collect();
        if removed.is_empty() && added.is_empty() {
            return Ok(());
        }
        for c in &removed {
            self.unwire(record, c)?;
            record.connections.retain(|e| &e.connection != c);
            record.ddd.connections.retain(|x| x != c);
            self.refresh_wired(record);
        }
        for c in &added {
            record.connections.push(ConnectionEntry {
                connection: c.clone(),
                status: WireStatus::Pending,
            });
            record.ddd.connections.push(c.clone());
        }
        self.refresh_wired(record);
        self.wire(record, &added)
    }

    /// Moves a deployment to `new_host`: unwire, terminate, install and run
    /// there, then wire its connections again.
    pub fn move_component(&self, record: &mut DeploymentRecord, name: &str, new_host: &str) -> Result<(), DeployError> {
        let entry = record
            .deployment(name)
            .cloned()
            .ok_or_else(|| DeployError::UnknownDeployment(name.to_string()))?;
        if record.ddd.host(new_host).is_none() {
            return Err(DeployError::DanglingReference(format!("undeclared host {new_host}")));
        }
        let touching: Vec<Connection> = record
            .connections
            .iter()
            .filter(|e| e.connection.touches(name))
            .map(|e| e.connection.clone())
            .collect();
        for c in &touching {
            if record.connection(c).map(|e| e.status) == Some(WireStatus::Connected) {
                self.unwire(record, c)?;
            }
        }
        self.refresh_wired(record);

        if let (Some(connector), Some(machine)) = (&entry.connector, &entry.machine) {
            self.terminate(&record.ddd, &entry.host, connector, machine)?;
            if let Some(d) = record.deployment_mut(name) {
                d.machine = None;
                d.connector = None;
            }
            self.set_state(record, name, ComponentState::Installed);
        }

        if let Some(d) = record.ddd.deployments.iter_mut().find(|d| d.name == name) {
            d.target = new_host.to_string();
        }
        if let Some(d) = record.deployment_mut(name) {
            d.host = new_host.to_string();
        }
        let names = vec![name.to_string()];
        self.install(record, &names)?;
        self.run(record, &names)?;
        self.wire(record, &touching)
    }

    fn terminate(&self, ddd: &Ddd, host: &str, connector: &Connector, machine: &Guid) -> Result<(), DeployError> {
        let failed = |detail: String| DeployError::PhaseFailed {
            phase: Phase::Terminate,
            node: host.to_string(),
            detail,
        };
        let r = self
            .control(connector)
            .and_then(|mut ctl| ctl.request(&ControlRequest::Terminate));
        self.emit(EngineEvent::Progress {
            phase: Phase::Terminate,
            node: host.to_string(),
            ok: r.is_ok(),
        });
        r.map_err(|e| failed(format!("{}: {}", e.code(), e.detail())))?;
        // wait until the node no longer lists the machine
        let addr = self.fire_addr(ddd, host)?;
        let deadline = Instant::now() + self.config.report_timeout;
        loop {
            match query_status(&addr, self.config.connect_timeout, self.config.max_frame) {
                Ok(s) if s.machine(machine).is_none() => return Ok(()),
                Ok(_) => {}
                Err(e) => return Err(failed(e.to_string())),
            }
            if Instant::now() >= deadline {
                return Err(failed(format!("machine {machine} still listed")));
            }
            thread::sleep(Duration::from_millis(10));
        }
    }
}
