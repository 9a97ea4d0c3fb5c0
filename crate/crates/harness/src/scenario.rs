use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use cingal_core::channel::ChannelState;
use cingal_core::deploy::{parse_ddd, ComponentState, Connection, DeploymentRecord, Endpoint, EngineEvent};
use cingal_core::runtime::TaskReport;
use cingal_core::server::NodeStatus;
use serde::Deserialize;

use crate::observe::derive_state;
use crate::probe::Probes;
use crate::topology::TestTopology;
use crate::HarnessError;

#[derive(Debug, Clone, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Nodes the script expects, `A`, `B`, ... in spawn order.
    #[serde(default = "one")]
    pub nodes: usize,
    #[serde(default, rename = "step")]
    pub steps: Vec<Step>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize, PartialEq, Eq)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum Step {
    /// `ddd` is `"caching_server"` or a path relative to the script.
    Deploy { ddd: String },
    AddHost { node: String },
    /// Connections as `"Dep.channel -> Dep.channel"`.
    Rewire { connections: Vec<String> },
    Move { deployment: String, host: String },
    AwaitQuiesce {
        #[serde(default = "default_wait")]
        timeout_ms: u64,
    },
    AssertState { deployment: String, state: String },
    AssertChannel { deployment: String, channel: String, state: String },
    AssertMachines { node: String, count: usize },
    Probe {
        from: String,
        to: String,
        message: String,
        #[serde(default = "default_wait")]
        within_ms: u64,
    },
}

fn default_wait() -> u64 {
    5_000
}

impl Step {
    pub fn action(&self) -> &'static str {
        match self {
            Step::Deploy { .. } => "deploy",
            Step::AddHost { .. } => "add_host",
            Step::Rewire { .. } => "rewire",
            Step::Move { .. } => "move",
            Step::AwaitQuiesce { .. } => "await_quiesce",
            Step::AssertState { .. } => "assert_state",
            Step::AssertChannel { .. } => "assert_channel",
            Step::AssertMachines { .. } => "assert_machines",
            Step::Probe { .. } => "probe",
        }
    }
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Script(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Scenario, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Script(format!("{}: {e}", path.display())))?;
        let mut s = Self::parse(&text)?;
        // resolve DDD paths against the script's directory
        let base = path.parent().unwrap_or(Path::new("."));
        for step in &mut s.steps {
            if let Step::Deploy { ddd } = step {
                if ddd != "caching_server" && Path::new(ddd.as_str()).is_relative() {
                    *ddd = base.join(&*ddd).to_string_lossy().into_owned();
                }
            }
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepOutcome {
    pub index: usize,
    pub action: &'static str,
    pub detail: String,
}

#[derive(Debug, Default)]
pub struct ScenarioReport {
    pub name: String,
    pub steps: Vec<StepOutcome>,
    /// Every tool report the engine collected, in arrival order.
    pub task_reports: Vec<TaskReport>,
    /// `(step index, node id, status)` taken after each step.
    pub snapshots: Vec<(usize, String, NodeStatus)>,
    pub record: Option<DeploymentRecord>,
}

fn parse_connection(s: &str) -> Result<Connection, String> {
    let end = |e: &str| -> Result<Endpoint, String> {
        let (d, c) = e.trim().split_once('.').ok_or_else(|| format!("{e:?} is not Deployment.channel"))?;
        Ok(Endpoint::new(d, c))
    };
    let (src, dst) = s.split_once("->").ok_or_else(|| format!("{s:?} lacks ->"))?;
    Ok(Connection::new(end(src)?, end(dst)?))
}

/// Runs `script` against `t`, stopping at the first failing step.
pub fn run_scenario(t: &mut TestTopology, script: &Scenario) -> Result<ScenarioReport, HarnessError> {
    if script.nodes > t.nodes.len() {
        return Err(HarnessError::Script(format!(
            "script needs {} nodes, topology has {}",
            script.nodes,
            t.nodes.len()
        )));
    }
    let reports: Arc<Mutex<Vec<TaskReport>>> = Arc::default();
    let sink = reports.clone();
    let engine = t.engine().with_observer(Arc::new(move |e: &EngineEvent| {
        if let EngineEvent::Report { report, .. } = e {
            sink.lock().unwrap().push(report.clone());
        }
    }));
    let mut out = ScenarioReport {
        name: script.name.clone(),
        ..Default::default()
    };
    let mut probes = Probes::new();

    for (index, step) in script.steps.iter().enumerate() {
        let failed = |detail: String| HarnessError::AssertionFailed { step: index, detail };
        let record = &mut out.record;
        fn need_record(r: &mut Option<DeploymentRecord>, step: usize) -> Result<&mut DeploymentRecord, HarnessError> {
            r.as_mut().ok_or_else(|| HarnessError::AssertionFailed {
                step,
                detail: "no deployment yet".into(),
            })
        }
        let detail = match step {
            Step::Deploy { ddd } => {
                let d = if ddd == "caching_server" {
                    t.caching_server()
                } else {
                    let bytes = std::fs::read(ddd).map_err(|e| failed(format!("{ddd}: {e}")))?;
                    parse_ddd(&bytes).map_err(|e| failed(e.to_string()))?
                };
                let r = engine.deploy(&d).map_err(|e| failed(e.to_string()))?;
                let detail = format!("{} deployments", r.deployments.len());
                *record = Some(r);
                detail
            }
            Step::AddHost { node } => {
                let r = need_record(record, index)?;
                t.add_host(&mut r.ddd, node).map_err(|e| failed(e.to_string()))?;
                format!("host {node}")
            }
            Step::Rewire { connections } => {
                let conns = connections
                    .iter()
                    .map(|c| parse_connection(c))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(failed)?;
                let r = need_record(record, index)?;
                engine.rewire(r, &conns).map_err(|e| failed(e.to_string()))?;
                format!("{} connections", conns.len())
            }
            Step::Move { deployment, host } => {
                let r = need_record(record, index)?;
                engine
                    .move_component(r, deployment, host)
                    .map_err(|e| failed(e.to_string()))?;
                format!("{deployment} -> {host}")
            }
            Step::AwaitQuiesce { timeout_ms } => {
                let running = record
                    .as_ref()
                    .map(|r| r.deployments.iter().filter(|d| d.machine.is_some()).count())
                    .unwrap_or(0);
                t.await_quiesce(running, Duration::from_millis(*timeout_ms))
                    .map_err(|e| failed(e.to_string()))?;
                format!("{running} machines")
            }
            Step::AssertState { deployment, state } => {
                let want: ComponentState = state.parse().map_err(failed)?;
                let r = need_record(record, index)?;
                let key = r
                    .deployment(deployment)
                    .and_then(|d| d.store_key.clone())
                    .ok_or_else(|| failed(format!("{deployment} has no store key")))?;
                let statuses = t.nodes.iter().map(|n| n.status()).collect::<Result<Vec<_>, _>>()?;
                let got = derive_state(&statuses, &key);
                if got != want {
                    return Err(failed(format!("{deployment} is {got}, expected {want}")));
                }
                format!("{deployment} {got}")
            }
            Step::AssertChannel {
                deployment,
                channel,
                state,
            } => {
                let r = need_record(record, index)?;
                let d = r
                    .deployment(deployment)
                    .ok_or_else(|| failed(format!("no deployment {deployment}")))?;
                let machine = d.machine.clone().ok_or_else(|| failed(format!("{deployment} not running")))?;
                let node = t.node(&d.host).ok_or_else(|| failed(format!("no node {}", d.host)))?;
                let st = node.status()?;
                let got = st
                    .machine(&machine)
                    .and_then(|m| m.channel(channel))
                    .map(ChannelState::label)
                    .unwrap_or("ABSENT");
                if got != state {
                    return Err(failed(format!("{deployment}.{channel} is {got}, expected {state}")));
                }
                format!("{deployment}.{channel} {got}")
            }
            Step::AssertMachines { node, count } => {
                let n = t.node(node).ok_or_else(|| failed(format!("no node {node}")))?;
                let got = n.status()?.machines.len();
                if got != *count {
                    return Err(failed(format!("node {node} runs {got} machines, expected {count}")));
                }
                format!("{node}: {got}")
            }
            Step::Probe {
                from,
                to,
                message,
                within_ms,
            } => {
                let r = need_record(record, index)?;
                let conn = |name: &str| {
                    r.deployment(name)
                        .and_then(|d| d.connector.clone())
                        .ok_or_else(|| failed(format!("{name} has no connector")))
                };
                let (src, dst) = (conn(from)?, conn(to)?);
                let took = probes
                    .check(&src, &dst, message.as_bytes(), Duration::from_millis(*within_ms))
                    .map_err(|e| failed(e.to_string()))?;
                format!("{from} -> {to} in {took:?}")
            }
        };
        for n in &t.nodes {
            out.snapshots.push((index, n.id.clone(), n.status()?));
        }
        out.steps.push(StepOutcome {
            index,
            action: step.action(),
            detail,
        });
    }
    out.task_reports = std::mem::take(&mut *reports.lock().unwrap());
    Ok(out)
}
