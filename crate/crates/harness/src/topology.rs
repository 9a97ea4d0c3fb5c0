use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use cingal_core::channel::DEFAULT_MAX_FRAME;
use cingal_core::deploy::{builtin_code, entity_admin_bundle, parse_ddd, Ddd, Engine, EngineConfig, Host};
use cingal_core::runtime::{EntityOp, DEMO_SINK, DEMO_SOURCE};
use cingal_core::security::{PrivateKey, RightSet, Signer};
use cingal_core::server::{fire_remote, query_status, ControlEvent, NodeConfig, NodeStatus, ServerError, ThinServer};
use cingal_core::{Bundle, BundleDraft, Datum, EntityId};
use tempfile::TempDir;

use crate::HarnessError;

/// The checked-in caching-server deployment description.
pub const CACHING_SERVER_DDD: &str = include_str!("../../../fixtures/caching_server_ddd.xml");

const TIMEOUT: Duration = Duration::from_secs(5);

pub fn admin_signer() -> Signer {
    Signer::new(EntityId::new("harness-admin").unwrap(), PrivateKey::from_seed([0xA1; 32]))
}

pub fn deployer_signer() -> Signer {
    Signer::new(EntityId::new("harness-deployer").unwrap(), PrivateKey::from_seed([0xD2; 32]))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeMode {
    InProcess,
    /// Each node is `<binary> node start --config <file>`.
    Subprocess(PathBuf),
}

enum Running {
    InProcess(ThinServer),
    Subprocess(Child),
    Stopped,
}

pub struct TestNode {
    pub id: String,
    addr: String,
    config: PathBuf,
    mode: NodeMode,
    running: Running,
    _dir: TempDir,
}

impl TestNode {
    fn start(id: String, mode: &NodeMode) -> Result<TestNode, HarnessError> {
        let dir = TempDir::new()?;
        let admin = admin_signer();
        let cfg = NodeConfig::new(dir.path().join("data"), &admin.entity, &admin.certificate());
        let config = dir.path().join("node.toml");
        fs::write(&config, cfg.to_toml())?;
        let mut node = TestNode {
            id,
            addr: String::new(),
            config,
            mode: mode.clone(),
            running: Running::Stopped,
            _dir: dir,
        };
        node.boot()?;
        Ok(node)
    }

    fn boot(&mut self) -> Result<(), HarnessError> {
        let err = |detail: String| HarnessError::Node {
            node: self.id.clone(),
            detail,
        };
        match &self.mode {
            NodeMode::InProcess => {
                let cfg = NodeConfig::load(&self.config).map_err(|e| err(e.to_string()))?;
                let server = ThinServer::start(&cfg).map_err(|e| match e {
                    ServerError::PortInUse(d) => HarnessError::ResourceExhausted(d),
                    other => err(other.to_string()),
                })?;
                self.addr = server.fire_addr().to_string();
                self.running = Running::InProcess(server);
            }
            NodeMode::Subprocess(bin) => {
                let mut child = Command::new(bin)
                    .args(["node", "start", "--config"])
                    .arg(&self.config)
                    .stdout(Stdio::piped())
                    .stderr(Stdio::null())
                    .spawn()
                    .map_err(|e| HarnessError::ResourceExhausted(format!("{}: {e}", bin.display())))?;
                let mut line = String::new();
                BufReader::new(child.stdout.take().expect("piped"))
                    .read_line(&mut line)
                    .map_err(|e| err(e.to_string()))?;
                let port = line.trim().strip_prefix("fire-port: ").and_then(|p| p.parse::<u16>().ok());
                let Some(port) = port else {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(err(format!("daemon announced {line:?}")));
                };
                self.addr = format!("127.0.0.1:{port}");
                self.running = Running::Subprocess(child);
            }
        }
        Ok(())
    }

    pub fn fire_addr(&self) -> &str {
        &self.addr
    }

    pub fn mode(&self) -> &NodeMode {
        &self.mode
    }

    /// `node_status` over the wire, identical for both modes.
    pub fn status(&self) -> Result<NodeStatus, HarnessError> {
        query_status(&self.addr, TIMEOUT, DEFAULT_MAX_FRAME).map_err(|e| HarnessError::Node {
            node: self.id.clone(),
            detail: e.to_string(),
        })
    }

    /// The in-process server, if this node runs in-process.
    pub fn server(&self) -> Option<&ThinServer> {
        match &self.running {
            Running::InProcess(s) => Some(s),
            _ => None,
        }
    }

    /// Machine-channel traffic seen by this node (in-process nodes only).
    pub fn control_log(&self) -> Option<Vec<ControlEvent>> {
        self.server().map(|s| s.node().control_log())
    }

    pub fn stop(&mut self) {
        match std::mem::replace(&mut self.running, Running::Stopped) {
            Running::InProcess(s) => s.shutdown(),
            Running::Subprocess(mut c) => {
                let _ = c.kill();
                let _ = c.wait();
            }
            Running::Stopped => {}
        }
    }

    /// Stops the daemon and starts it again on the same data directory.
    /// The fire port may change.
    pub fn restart(&mut self) -> Result<(), HarnessError> {
        self.stop();
        self.boot()
    }
}

impl Drop for TestNode {
    fn drop(&mut self) {
        self.stop();
    }
}

/// N loopback nodes with an admin and a deployer entity on each, plus a
/// catalogue holding the demo component bundles.
pub struct TestTopology {
    pub nodes: Vec<TestNode>,
    catalogue: TempDir,
}

impl TestTopology {
    pub fn spawn(n: usize) -> Result<TestTopology, HarnessError> {
        Self::spawn_with(n, NodeMode::InProcess)
    }

    pub fn spawn_with(n: usize, mode: NodeMode) -> Result<TestTopology, HarnessError> {
        if n == 0 {
            return Err(HarnessError::Script("a topology needs at least one node".into()));
        }
        let mut nodes = Vec::with_capacity(n);
        for i in 0..n {
            let node = TestNode::start(node_id(i), &mode)?;
            provision(&node)?;
            nodes.push(node);
        }
        let catalogue = TempDir::new()?;
        fs::write(catalogue.path().join("server.xml"), demo_source().serialize())?;
        fs::write(catalogue.path().join("cache.xml"), demo_sink().serialize())?;
        let t = TestTopology { nodes, catalogue };
        // provisioning tools unregister just after reporting
        t.await_quiesce(0, TIMEOUT)?;
        Ok(t)
    }

    pub fn node(&self, id: &str) -> Option<&TestNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn node_mut(&mut self, id: &str) -> Option<&mut TestNode> {
        self.nodes.iter_mut().find(|n| n.id == id)
    }

    pub fn catalogue(&self) -> &Path {
        self.catalogue.path()
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            catalogue: Some(self.catalogue.path().to_path_buf()),
            ..EngineConfig::default()
        }
    }

    pub fn engine(&self) -> Engine {
        Engine::new(deployer_signer(), self.engine_config())
    }

    /// The caching-server DDD with host `A` on the first node and `B` on the second (or
    /// both on the only node).
    pub fn caching_server(&self) -> Ddd {
        let mut ddd = parse_ddd(CACHING_SERVER_DDD.as_bytes()).expect("checked-in document parses");
        for (i, h) in ddd.hosts.iter_mut().enumerate() {
            h.address = self.nodes[i.min(self.nodes.len() - 1)].addr.clone();
        }
        ddd
    }

    /// Declares node `node` in `ddd` under its own id.
    pub fn add_host(&self, ddd: &mut Ddd, node: &str) -> Result<(), HarnessError> {
        let n = self
            .node(node)
            .ok_or_else(|| HarnessError::Script(format!("no node {node}")))?;
        ddd.hosts.retain(|h| h.id != n.id);
        ddd.hosts.push(Host {
            id: n.id.clone(),
            address: n.addr.clone(),
        });
        Ok(())
    }

    /// Current addresses of every node, in order.
    pub fn addresses(&self) -> Vec<String> {
        self.nodes.iter().map(|n| n.addr.clone()).collect()
    }

    /// Waits until at most `machines` machines run across all nodes,
    /// i.e. every tool bundle has finished.
    pub fn await_quiesce(&self, machines: usize, timeout: Duration) -> Result<(), HarnessError> {
        let deadline = Instant::now() + timeout;
        loop {
            let mut total = 0;
            for n in &self.nodes {
                total += n.status()?.machines.len();
            }
            if total <= machines {
                return Ok(());
            }
            if Instant::now() >= deadline {
                return Err(HarnessError::Probe(format!("{total} machines still running")));
            }
            std::thread::sleep(Duration::from_millis(5));
        }
    }
}

fn node_id(i: usize) -> String {
    if i < 26 {
        ((b'A' + i as u8) as char).to_string()
    } else {
        format!("N{i}")
    }
}

/// Adds the deployer through the node's own entity-admin tool, so the
/// same path works for subprocess daemons.
fn provision(node: &TestNode) -> Result<(), HarnessError> {
    let d = deployer_signer();
    let op = EntityOp::Add {
        entity: d.entity.clone(),
        certificate: d.certificate(),
        rights: RightSet::all(),
    };
    let err = |detail: String| HarnessError::Node {
        node: node.id.clone(),
        detail,
    };
    let report = fire_remote(&node.addr, &entity_admin_bundle(&admin_signer(), &op), TIMEOUT, DEFAULT_MAX_FRAME)
        .and_then(|mut m| m.read_report(TIMEOUT))
        .map_err(|e| err(e.to_string()))?;
    if !report.all_ok() {
        return Err(err(format!("provisioning failed: {report}")));
    }
    Ok(())
}

fn demo(entry: &str, channel: &str) -> Bundle {
    deployer_signer().sign(BundleDraft::new(builtin_code(entry)).with_datum(Datum::text("Channel", channel)))
}

/// Stands in for the caching application's Server bundle.
pub fn demo_source() -> Bundle {
    demo(DEMO_SOURCE, "DownstreamCache")
}

/// Stands in for the caching application's Cache bundle.
pub fn demo_sink() -> Bundle {
    demo(DEMO_SINK, "UpstreamServer")
}
