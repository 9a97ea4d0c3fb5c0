use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, Weak};
use std::thread;
use std::time::{Duration, Instant};

use super::registry::Executor;
use super::todo::TaskReport;
use super::{ApiError, FireError};
use crate::bundle::{Bundle, EntityId};
use crate::channel::{
    bridge, channel_pair, read_frame, write_frame, ChannelError, ChannelState, ControlClient, ControlRequest,
    ControlResponse, Endpoint, NamedChannel, NamedChannelTable,
};
use crate::connector::Connector;
use crate::guid::Guid;
use crate::security::{EntityRecord, Right, Service};
use crate::server::{fire_remote, Fired, Node, RemoteMachine};
use crate::store::MachineRef;
use crate::xml::Element;

/// A running execution context for one fired bundle.
pub struct Machine {
    id: Guid,
    entity: EntityId,
    entry: String,
    bundle_key: Option<Guid>,
    connector: Connector,
    channels: Arc<NamedChannelTable>,
    default: Endpoint,
    // progenitor end of the default channel, held here when the progenitor
    // went away (runner-started components) until someone adopts it
    parked: Mutex<Option<Endpoint>>,
    terminated: AtomicBool,
    node: Weak<Node>,
    conns: Mutex<Vec<TcpStream>>,
}

impl Machine {
    pub fn id(&self) -> &Guid {
        &self.id
    }

    pub fn entity(&self) -> &EntityId {
        &self.entity
    }

    pub fn entry(&self) -> &str {
        &self.entry
    }

    /// Store key of the bundle, when it was started from the store.
    pub fn bundle_key(&self) -> Option<&Guid> {
        self.bundle_key.as_ref()
    }

    pub fn connector(&self) -> &Connector {
        &self.connector
    }

    pub fn channels(&self) -> &Arc<NamedChannelTable> {
        &self.channels
    }

    pub fn channel_states(&self) -> Vec<(String, ChannelState)> {
        self.channels.states()
    }

    pub fn is_terminated(&self) -> bool {
        self.terminated.load(Ordering::SeqCst)
    }

    pub fn park_progenitor(&self, ep: Endpoint) {
        *self.parked.lock().unwrap() = Some(ep);
    }

    pub fn take_parked(&self) -> Option<Endpoint> {
        self.parked.lock().unwrap().take()
    }

    /// Closes every channel and listener and unregisters the machine.
    /// Idempotent.
    pub fn terminate(&self) {
        if self.terminated.swap(true, Ordering::SeqCst) {
            return;
        }
        log::debug!("terminating machine {}", self.id);
        self.channels.shutdown();
        self.default.close();
        if let Some(p) = self.parked.lock().unwrap().take() {
            p.close();
        }
        for c in self.conns.lock().unwrap().drain(..) {
            let _ = c.shutdown(Shutdown::Both);
        }
        // wake both accept loops so they observe the flag
        let _ = TcpStream::connect(self.connector.machine_addr());
        let _ = TcpStream::connect(self.connector.resource_addr());
        if let Some(node) = self.node.upgrade() {
            node.unregister(&self.id);
        }
    }

    fn track(&self, s: &TcpStream) {
        if let Ok(c) = s.try_clone() {
            self.conns.lock().unwrap().push(c);
        }
    }
}

/// Creates a machine for `bundle` and starts its executor. The caller gets
/// the progenitor end of the default channel. No authentication happens
/// here; that is the fire gate's job.
pub(crate) fn spawn(node: &Arc<Node>, bundle: Bundle, bundle_key: Option<Guid>) -> Result<Fired, FireError> {
    let executor = node.registry().lookup(&bundle.code)?;
    let exhausted = |e: std::io::Error| FireError::ResourceExhausted(e.to_string());
    let control = TcpListener::bind((node.bind_host(), 0)).map_err(exhausted)?;
    let resource = TcpListener::bind((node.bind_host(), 0)).map_err(exhausted)?;
    let connector = Connector::new(
        node.host(),
        control.local_addr().map_err(exhausted)?.port(),
        resource.local_addr().map_err(exhausted)?.port(),
    )
    .map_err(|e| FireError::ResourceExhausted(e.to_string()))?;

    let (mine, theirs) = channel_pair(node.max_frame());
    let machine = Arc::new(Machine {
        id: Guid::random(),
        entity: bundle.entity().clone(),
        entry: bundle.code.entry.clone(),
        bundle_key,
        connector,
        channels: NamedChannelTable::new(node.bind_host(), node.max_frame(), node.connect_timeout()),
        default: mine,
        parked: Mutex::new(None),
        terminated: AtomicBool::new(false),
        node: Arc::downgrade(node),
        conns: Mutex::new(Vec::new()),
    });
    let api = MachineApi {
        node: Arc::clone(node),
        machine: Arc::clone(&machine),
    };
    executor.prepare(&bundle, &api);
    node.register(&machine);

    let started = start_control(&machine, control, Arc::clone(node))
        .and_then(|_| start_resource(&machine, resource))
        .and_then(|_| start_executor(executor, bundle, api));
    if let Err(e) = started {
        machine.terminate();
        return Err(FireError::ResourceExhausted(e.to_string()));
    }
    log::debug!("machine {} started at {}", machine.id, machine.connector);
    Ok(Fired {
        machine,
        endpoint: theirs,
    })
}

fn start_executor(executor: Arc<dyn Executor>, bundle: Bundle, api: MachineApi) -> std::io::Result<()> {
    thread::Builder::new()
        .name(format!("exec-{}", bundle.code.entry))
        .spawn(move || {
            if let Err(e) = executor.run(&bundle, &api) {
                if !api.machine.is_terminated() {
                    log::debug!("{} on {} ended: {e}", bundle.code.entry, api.machine.id);
                }
            }
            api.machine.terminate();
        })
        .map(|_| ())
}

fn start_control(machine: &Arc<Machine>, listener: TcpListener, node: Arc<Node>) -> std::io::Result<()> {
    let m = Arc::clone(machine);
    thread::Builder::new().name("machine-channel".into()).spawn(move || {
        for conn in listener.incoming() {
            if m.is_terminated() {
                break;
            }
            let Ok(stream) = conn else { continue };
            m.track(&stream);
            let (m, node) = (Arc::clone(&m), Arc::clone(&node));
            let _ = thread::Builder::new()
                .name("control".into())
                .spawn(move || serve_control(&m, &node, stream));
        }
    })?;
    Ok(())
}

fn serve_control(machine: &Arc<Machine>, node: &Arc<Node>, mut stream: TcpStream) {
    let max = node.max_frame();
    loop {
        let bytes = match read_frame(&mut stream, max) {
            Ok(Some(b)) => b,
            _ => return,
        };
        let request = Element::parse(&bytes)
            .map_err(|e| e.to_string())
            .and_then(|el| ControlRequest::from_element(&el));
        let request = match request {
            Ok(r) => r,
            Err(e) => {
                let resp = ControlResponse::error("Protocol", e);
                let _ = write_frame(&mut stream, &resp.to_element().to_bytes(), max);
                continue;
            }
        };
        let table = machine.channels();
        let response = match &request {
            ControlRequest::Create { name } => match table.create(name) {
                Ok(port) => ControlResponse {
                    port: Some(port),
                    ..ControlResponse::ok()
                },
                Err(e) => ControlResponse::from_channel_error(&e),
            },
            ControlRequest::Connect { name, host, port } => match table.connect(name, host, *port) {
                Ok(()) => ControlResponse::ok(),
                Err(e) => ControlResponse::from_channel_error(&e),
            },
            ControlRequest::Disconnect { name } => match table.disconnect(name) {
                Ok(()) => ControlResponse::ok(),
                Err(e) => ControlResponse::from_channel_error(&e),
            },
            ControlRequest::Status => ControlResponse {
                channels: table.states(),
                machine: Some(machine.id.to_string()),
                ..ControlResponse::ok()
            },
            ControlRequest::Node => ControlResponse {
                machine: Some(machine.id.to_string()),
                fire_host: Some(node.host().to_string()),
                fire_port: Some(node.fire_port()),
                ..ControlResponse::ok()
            },
            ControlRequest::Terminate | ControlRequest::Adopt => ControlResponse::ok(),
        };
        let adopted = match request {
            ControlRequest::Adopt => match machine.take_parked() {
                Some(ep) => Some(ep),
                None => {
                    let resp = ControlResponse::error("Unavailable", "default channel is not parked");
                    node.log_control(&machine.id, &request, &resp);
                    let _ = write_frame(&mut stream, &resp.to_element().to_bytes(), max);
                    continue;
                }
            },
            _ => None,
        };
        node.log_control(&machine.id, &request, &response);
        if write_frame(&mut stream, &response.to_element().to_bytes(), max).is_err() {
            return;
        }
        if let Some(ep) = adopted {
            let _ = bridge(stream, ep);
            return;
        }
        if request == ControlRequest::Terminate {
            machine.terminate();
            return;
        }
    }
}

fn start_resource(machine: &Arc<Machine>, listener: TcpListener) -> std::io::Result<()> {
    let m = Arc::clone(machine);
    thread::Builder::new().name("resource-port".into()).spawn(move || {
        for conn in listener.incoming() {
            if m.is_terminated() {
                break;
            }
            let Ok(mut stream) = conn else { continue };
            let m = Arc::clone(&m);
            let _ = thread::Builder::new().name("attach".into()).spawn(move || {
                let max = m.channels.max_frame();
                let _ = stream.set_read_timeout(Some(Duration::from_secs(10)));
                let Ok(Some(hello)) = read_frame(&mut stream, max) else { return };
                let _ = stream.set_read_timeout(None);
                let name = Element::parse(&hello)
                    .ok()
                    .filter(|el| el.name == "ATTACH")
                    .and_then(|el| el.get_attr("channel").map(str::to_string));
                if let Some(name) = name {
                    if let Err(e) = m.channels.attach_inbound(&name, stream) {
                        log::debug!("attach to {name} refused: {e}");
                    }
                }
            });
        }
    })?;
    Ok(())
}

/// Mediated access to node services for code running in a machine. Every
/// service call is checked against the machine's signing entity.
pub struct MachineApi {
    node: Arc<Node>,
    machine: Arc<Machine>,
}

impl MachineApi {
    pub fn machine(&self) -> &Arc<Machine> {
        &self.machine
    }

    pub fn entity(&self) -> &EntityId {
        self.machine.entity()
    }

    pub fn connect_timeout(&self) -> Duration {
        self.node.connect_timeout()
    }

    pub fn report_timeout(&self) -> Duration {
        self.node.report_timeout()
    }

    fn authorize(&self, service: Service, right: Right) -> Result<(), ApiError> {
        Ok(self.node.ver().authorize(self.entity(), service, right)?)
    }

    pub fn store_put(&self, b: &Bundle) -> Result<Guid, ApiError> {
        self.authorize(Service::Store, Right::Put)?;
        Ok(self.node.store().put(b)?)
    }

    pub fn store_get(&self, key: &Guid) -> Result<Bundle, ApiError> {
        self.authorize(Service::Store, Right::Get)?;
        Ok(self.node.store().get(key)?)
    }

    pub fn sbinder_put(&self, name: &str, key: Guid) -> Result<(), ApiError> {
        self.authorize(Service::SBinder, Right::Put)?;
        Ok(self.node.sbinder().put(name, key)?)
    }

    pub fn sbinder_get(&self, name: &str) -> Result<Guid, ApiError> {
        self.authorize(Service::SBinder, Right::Get)?;
        Ok(self.node.sbinder().get(name)?)
    }

    pub fn sbinder_remove(&self, name: &str) -> Result<(), ApiError> {
        self.authorize(Service::SBinder, Right::Remove)?;
        Ok(self.node.sbinder().remove(name)?)
    }

    pub fn pbinder_put(&self, name: &str, m: MachineRef) -> Result<(), ApiError> {
        self.authorize(Service::PBinder, Right::Put)?;
        Ok(self.node.pbinder().put(name, m)?)
    }

    pub fn pbinder_get(&self, name: &str) -> Result<MachineRef, ApiError> {
        self.authorize(Service::PBinder, Right::Get)?;
        Ok(self.node.pbinder().get(name)?)
    }

    pub fn pbinder_remove(&self, name: &str) -> Result<(), ApiError> {
        self.authorize(Service::PBinder, Right::Remove)?;
        Ok(self.node.pbinder().remove(name)?)
    }

    pub fn ver_lookup(&self, entity: &EntityId) -> Result<Option<EntityRecord>, ApiError> {
        self.authorize(Service::Ver, Right::Get)?;
        Ok(self.node.ver().lookup(entity))
    }

    /// The VER checks (VER, PUT) for the caller itself.
    pub fn ver_add(&self, rec: EntityRecord) -> Result<(), ApiError> {
        Ok(self.node.ver().add(self.entity(), rec)?)
    }

    pub fn ver_remove(&self, entity: &EntityId) -> Result<(), ApiError> {
        Ok(self.node.ver().remove(self.entity(), entity)?)
    }

    pub fn default_channel(&self) -> &Endpoint {
        &self.machine.default
    }

    pub fn report(&self, report: &TaskReport) -> Result<(), ApiError> {
        Ok(self.machine.default.write(report.to_bytes())?)
    }

    pub fn named_channel(&self, name: &str) -> NamedChannel {
        NamedChannel::new(Arc::clone(&self.machine.channels), name)
    }

    /// Fires `b` on this node through the full gate (its own signer must be
    /// known and allowed to fire), after checking this machine may fire.
    pub fn fire_local(&self, b: Bundle, bundle_key: Option<Guid>) -> Result<Fired, ApiError> {
        self.authorize(Service::Fire, Right::Fire)?;
        Ok(self.node.fire_bundle(b, bundle_key)?)
    }

    /// Like [`fire_local`](Self::fire_local) but the child outlives this
    /// machine: its default channel is parked until adopted.
    pub fn spawn_detached(&self, b: Bundle, bundle_key: Option<Guid>) -> Result<Arc<Machine>, ApiError> {
        let fired = self.fire_local(b, bundle_key)?;
        fired.machine.park_progenitor(fired.endpoint);
        Ok(fired.machine)
    }

    pub fn fire_remote(&self, host: &str, port: u16, b: &Bundle) -> Result<RemoteMachine, ApiError> {
        self.authorize(Service::Fire, Right::Fire)?;
        Ok(fire_remote(
            &format!("{host}:{port}"),
            b,
            self.node.connect_timeout(),
            self.node.max_frame(),
        )?)
    }

    /// Opens the machine channel of the machine at `c`.
    pub fn control(&self, c: &Connector) -> Result<ControlClient, ApiError> {
        Ok(ControlClient::connect(
            &c.machine_addr(),
            self.node.connect_timeout(),
            self.node.max_frame(),
        )?)
    }

    /// Polls `c`'s machine channel until `name` reports CONNECTED.
    pub fn await_connected(&self, ctl: &mut ControlClient, name: &str, timeout: Duration) -> Result<(), ApiError> {
        let deadline = Instant::now() + timeout;
        loop {
            let status = ctl.request(&ControlRequest::Status)?;
            if status.channels.iter().any(|(n, s)| n == name && s.is_connected()) {
                return Ok(());
            }
            if Instant::now() >= deadline {
                return Err(ChannelError::Timeout.into());
            }
            thread::sleep(Duration::from_millis(10));
        }
    }
}
