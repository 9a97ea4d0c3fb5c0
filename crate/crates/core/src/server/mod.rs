//! The thin server: node configuration, the fire daemon and the lifetime of
//! a node's services.

mod client;
mod node;

use std::fs::{self, File};
use std::io;
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundle::EntityId;
use crate::channel::{bridge, read_frame, write_frame, DEFAULT_MAX_FRAME};
use crate::guid::DigestAlgorithm;
use crate::runtime::{ExecutorRegistry, FireError};
use crate::security::{Certificate, EntityRecord, RightSet, Ver};
use crate::store::{Binder, Store};
use crate::xml::Element;

pub use client::{fire_document, fire_remote, query_status, RemoteMachine};
pub use node::{ControlEvent, Fired, MachineStatus, Node, NodeSettings, NodeStatus};

/// Environment variable that overrides the configured data directory.
pub const DATA_DIR_ENV: &str = "CINGAL_DATA_DIR";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ServerError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("port in use: {0}")]
    PortInUse(String),
    #[error("corrupt state: {0}")]
    CorruptState(String),
    #[error("data directory in use by another daemon: {0}")]
    DataDirInUse(String),
    #[error("i/o: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct AdminConfig {
    pub entity: String,
    /// Inline PEM certificate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<String>,
    /// Or a path to one, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    #[serde(default = "default_listen")]
    pub listen_address: String,
    /// Host advertised in connectors; defaults to `listen_address`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advertise_address: Option<String>,
    /// 0 picks an ephemeral port.
    #[serde(default)]
    pub fire_port: u16,
    pub data_dir: PathBuf,
    #[serde(default)]
    pub digest: DigestAlgorithm,
    pub admin: AdminConfig,
    #[serde(default = "default_max_frame")]
    pub max_frame: usize,
    #[serde(default = "default_connect_timeout")]
    pub connect_timeout_ms: u64,
    #[serde(default = "default_report_timeout")]
    pub report_timeout_ms: u64,
}

fn default_listen() -> String {
    "127.0.0.1".into()
}

fn default_max_frame() -> usize {
    DEFAULT_MAX_FRAME
}

fn default_connect_timeout() -> u64 {
    5_000
}

fn default_report_timeout() -> u64 {
    30_000
}

impl NodeConfig {
    pub fn new(data_dir: impl Into<PathBuf>, admin: &EntityId, admin_cert: &Certificate) -> Self {
        NodeConfig {
            listen_address: default_listen(),
            advertise_address: None,
            fire_port: 0,
            data_dir: data_dir.into(),
            digest: DigestAlgorithm::default(),
            admin: AdminConfig {
                entity: admin.to_string(),
                certificate: Some(admin_cert.to_pem()),
                certificate_file: None,
            },
            max_frame: default_max_frame(),
            connect_timeout_ms: default_connect_timeout(),
            report_timeout_ms: default_report_timeout(),
        }
    }

    /// Reads a TOML config. Relative paths resolve against the file's
    /// directory; `CINGAL_DATA_DIR` replaces `data_dir` when set.
    pub fn load(path: &Path) -> Result<NodeConfig, ServerError> {
        let text = fs::read_to_string(path).map_err(|e| ServerError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: NodeConfig =
            toml::from_str(&text).map_err(|e| ServerError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.data_dir.is_relative() {
            cfg.data_dir = base.join(&cfg.data_dir);
        }
        if let Some(f) = &cfg.admin.certificate_file {
            if f.is_relative() {
                cfg.admin.certificate_file = Some(base.join(f));
            }
        }
        if let Some(dir) = std::env::var_os(DATA_DIR_ENV).filter(|d| !d.is_empty()) {
            cfg.data_dir = PathBuf::from(dir);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn admin_record(&self) -> Result<EntityRecord, ServerError> {
        let pem = match (&self.admin.certificate, &self.admin.certificate_file) {
            (Some(inline), _) => inline.clone(),
            (None, Some(f)) => {
                fs::read_to_string(f).map_err(|e| ServerError::Config(format!("{}: {e}", f.display())))?
            }
            (None, None) => return Err(ServerError::Config("admin certificate missing".into())),
        };
        Ok(EntityRecord {
            entity: EntityId::new(&self.admin.entity).map_err(|e| ServerError::Config(e.to_string()))?,
            certificate: Certificate::from_pem(&pem).map_err(|e| ServerError::Config(e.to_string()))?,
            rights: RightSet::all(),
        })
    }
}

/// A running node: its services plus the fire daemon.
pub struct ThinServer {
    node: Arc<Node>,
    addr: SocketAddr,
    stopping: Arc<AtomicBool>,
    acceptor: Mutex<Option<JoinHandle<()>>>,
    _lock: File,
}

impl ThinServer {
    pub fn start(cfg: &NodeConfig) -> Result<ThinServer, ServerError> {
        ThinServer::start_with(cfg, Arc::new(ExecutorRegistry::standard()))
    }

    pub fn start_with(cfg: &NodeConfig, registry: Arc<ExecutorRegistry>) -> Result<ThinServer, ServerError> {
        let admin = cfg.admin_record()?;
        let io = |e: io::Error| ServerError::Io(e.to_string());
        fs::create_dir_all(&cfg.data_dir).map_err(io)?;
        let lock = File::create(cfg.data_dir.join("lock")).map_err(io)?;
        if lock.try_lock().is_err() {
            return Err(ServerError::DataDirInUse(cfg.data_dir.display().to_string()));
        }

        let listener = TcpListener::bind((cfg.listen_address.as_str(), cfg.fire_port)).map_err(|e| {
            if e.kind() == io::ErrorKind::AddrInUse {
                ServerError::PortInUse(format!("{}:{}", cfg.listen_address, cfg.fire_port))
            } else {
                ServerError::Io(e.to_string())
            }
        })?;
        let addr = listener.local_addr().map_err(io)?;

        let corrupt = |e: String| ServerError::CorruptState(e);
        let store = Store::open(&cfg.data_dir.join("store"), cfg.digest).map_err(|e| corrupt(e.to_string()))?;
        let sbinder = Binder::open("store", &cfg.data_dir.join("binders.doc")).map_err(|e| corrupt(e.to_string()))?;
        let ver = Ver::open(&cfg.data_dir.join("ver.doc"), admin).map_err(|e| corrupt(e.to_string()))?;

        let settings = NodeSettings {
            bind_host: cfg.listen_address.clone(),
            host: cfg
                .advertise_address
                .clone()
                .unwrap_or_else(|| cfg.listen_address.clone()),
            max_frame: cfg.max_frame,
            connect_timeout: Duration::from_millis(cfg.connect_timeout_ms),
            report_timeout: Duration::from_millis(cfg.report_timeout_ms),
        };
        let node = Node::new(settings, store, sbinder, ver, registry);
        node.set_fire_port(addr.port());

        let stopping = Arc::new(AtomicBool::new(false));
        let acceptor = {
            let (node, stopping) = (Arc::clone(&node), Arc::clone(&stopping));
            thread::Builder::new()
                .name("fire-daemon".into())
                .spawn(move || {
                    for conn in listener.incoming() {
                        if stopping.load(Ordering::SeqCst) {
                            break;
                        }
                        let Ok(stream) = conn else { continue };
                        let node = Arc::clone(&node);
                        let _ = thread::Builder::new()
                            .name("fire".into())
                            .spawn(move || serve_fire(&node, stream));
                    }
                })
                .map_err(io)?
        };
        log::info!("thin server on {addr}, data in {}", cfg.data_dir.display());
        Ok(ThinServer {
            node,
            addr,
            stopping,
            acceptor: Mutex::new(Some(acceptor)),
            _lock: lock,
        })
    }

    pub fn node(&self) -> &Arc<Node> {
        &self.node
    }

    pub fn fire_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn fire_port(&self) -> u16 {
        self.addr.port()
    }

    pub fn status(&self) -> NodeStatus {
        self.node.status()
    }

    /// Stops the fire daemon and terminates every machine.
    pub fn shutdown(&self) {
        if self.stopping.swap(true, Ordering::SeqCst) {
            return;
        }
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.acceptor.lock().unwrap().take() {
            let _ = h.join();
        }
        self.node.shutdown();
    }
}

impl Drop for ThinServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn serve_fire(node: &Arc<Node>, mut stream: TcpStream) {
    let max = node.max_frame();
    let _ = stream.set_read_timeout(Some(node.report_timeout()));
    let doc = match read_frame(&mut stream, max) {
        Ok(Some(d)) => d,
        _ => return,
    };
    let root_name = Element::parse(&doc).map(|e| e.name).unwrap_or_default();
    if root_name == "STATUS" {
        let _ = write_frame(&mut stream, &node.status().to_element().to_bytes(), max);
        return;
    }
    match node.fire(&doc) {
        Ok(fired) => {
            let reply = client::fire_result_ok(fired.machine.id(), fired.machine.connector());
            if write_frame(&mut stream, &reply.to_bytes(), max).is_err() {
                fired.machine.park_progenitor(fired.endpoint);
                return;
            }
            let _ = stream.set_read_timeout(None);
            if let Err(e) = bridge(stream, fired.endpoint) {
                log::warn!("default channel bridge failed: {e}");
            }
        }
        Err(e) => {
            log::info!("fire rejected: {e}");
            let _ = write_frame(&mut stream, &client::fire_result_error(&e).to_bytes(), max);
            let _ = stream.shutdown(Shutdown::Write);
        }
    }
}

/// Whether `e` is a refusal by the fire gate rather than a transport
/// failure.
pub fn is_gate_rejection(e: &FireError) -> bool {
    matches!(
        e,
        FireError::MalformedDocument(_)
            | FireError::UnknownEntity(_)
            | FireError::BadSignature(_)
            | FireError::CapabilityDenied(_)
            | FireError::UnknownEntryPoint(_)
    )
}
