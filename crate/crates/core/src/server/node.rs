use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU16, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use crate::bundle::Bundle;
use crate::channel::{ChannelState, ControlRequest, ControlResponse, Endpoint};
use crate::connector::Connector;
use crate::guid::Guid;
use crate::runtime::{ExecutorRegistry, FireError, Machine};
use crate::security::{verify_bundle, Right, Service, Ver};
use crate::store::{Binder, MachineRef, Store};
use crate::xml::Element;

/// Network and limit settings shared by a node's machines.
#[derive(Debug, Clone)]
pub struct NodeSettings {
    /// Address listeners bind to.
    pub bind_host: String,
    /// Host written into connectors and fire addresses.
    pub host: String,
    pub max_frame: usize,
    pub connect_timeout: Duration,
    pub report_timeout: Duration,
}

/// Result of a successful fire: the machine and the progenitor's end of its
/// default channel.
pub struct Fired {
    pub machine: Arc<Machine>,
    pub endpoint: Endpoint,
}

/// One exchange on some machine's machine channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControlEvent {
    pub machine: Guid,
    pub request: ControlRequest,
    pub response: ControlResponse,
}

/// The per-node services: store, binders, VER and the live machines.
pub struct Node {
    settings: NodeSettings,
    fire_port: AtomicU16,
    store: Store,
    sbinder: Binder<Guid>,
    pbinder: Binder<MachineRef>,
    ver: Ver,
    registry: Arc<ExecutorRegistry>,
    machines: Mutex<BTreeMap<Guid, Arc<Machine>>>,
    control_log: Mutex<Vec<ControlEvent>>,
}

impl Node {
    pub fn new(
        settings: NodeSettings,
        store: Store,
        sbinder: Binder<Guid>,
        ver: Ver,
        registry: Arc<ExecutorRegistry>,
    ) -> Arc<Node> {
        Arc::new(Node {
            settings,
            fire_port: AtomicU16::new(0),
            store,
            sbinder,
            pbinder: Binder::new("process"),
            ver,
            registry,
            machines: Mutex::new(BTreeMap::new()),
            control_log: Mutex::new(Vec::new()),
        })
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn sbinder(&self) -> &Binder<Guid> {
        &self.sbinder
    }

    pub fn pbinder(&self) -> &Binder<MachineRef> {
        &self.pbinder
    }

    pub fn ver(&self) -> &Ver {
        &self.ver
    }

    pub fn registry(&self) -> &ExecutorRegistry {
        &self.registry
    }

    pub fn bind_host(&self) -> &str {
        &self.settings.bind_host
    }

    pub fn host(&self) -> &str {
        &self.settings.host
    }

    pub fn fire_port(&self) -> u16 {
        self.fire_port.load(Ordering::SeqCst)
    }

    pub(crate) fn set_fire_port(&self, port: u16) {
        self.fire_port.store(port, Ordering::SeqCst);
    }

    pub fn max_frame(&self) -> usize {
        self.settings.max_frame
    }

    pub fn connect_timeout(&self) -> Duration {
        self.settings.connect_timeout
    }

    pub fn report_timeout(&self) -> Duration {
        self.settings.report_timeout
    }

    /// The fire gate: parse, known entity, valid signature, (FIRE, FIRE),
    /// then spawn. Nothing runs and nothing changes if any step fails.
    pub fn fire(self: &Arc<Self>, doc: &[u8]) -> Result<Fired, FireError> {
        let bundle = Bundle::parse(doc).map_err(|e| FireError::MalformedDocument(e.to_string()))?;
        self.fire_bundle(bundle, None)
    }

    pub fn fire_bundle(self: &Arc<Self>, bundle: Bundle, bundle_key: Option<Guid>) -> Result<Fired, FireError> {
        let entity = bundle.entity().clone();
        let record = self
            .ver
            .lookup(&entity)
            .ok_or_else(|| FireError::UnknownEntity(entity.to_string()))?;
        if !verify_bundle(&bundle, &record.certificate) {
            return Err(FireError::BadSignature(entity.to_string()));
        }
        self.ver
            .authorize(&entity, Service::Fire, Right::Fire)
            .map_err(|e| FireError::CapabilityDenied(e.to_string()))?;
        self.machine_spawn(bundle, bundle_key)
    }

    /// Spawns without the gate; callers must have authenticated `bundle`.
    pub fn machine_spawn(self: &Arc<Self>, bundle: Bundle, bundle_key: Option<Guid>) -> Result<Fired, FireError> {
        crate::runtime::spawn(self, bundle, bundle_key)
    }

    pub(crate) fn register(&self, m: &Arc<Machine>) {
        self.machines.lock().unwrap().insert(m.id().clone(), Arc::clone(m));
        let _ = self.pbinder.put(
            m.id().hex(),
            MachineRef {
                machine_id: m.id().clone(),
                connector: m.connector().clone(),
            },
        );
    }

    pub(crate) fn unregister(&self, id: &Guid) {
        self.machines.lock().unwrap().remove(id);
        let _ = self.pbinder.remove(id.hex());
    }

    pub fn machines(&self) -> Vec<Arc<Machine>> {
        self.machines.lock().unwrap().values().cloned().collect()
    }

    pub fn machine(&self, id: &Guid) -> Option<Arc<Machine>> {
        self.machines.lock().unwrap().get(id).cloned()
    }

    pub(crate) fn log_control(&self, machine: &Guid, request: &ControlRequest, response: &ControlResponse) {
        self.control_log.lock().unwrap().push(ControlEvent {
            machine: machine.clone(),
            request: request.clone(),
            response: response.clone(),
        });
    }

    /// Every machine-channel exchange served on this node, oldest first.
    pub fn control_log(&self) -> Vec<ControlEvent> {
        self.control_log.lock().unwrap().clone()
    }

    pub fn status(&self) -> NodeStatus {
        let machines = self
            .machines()
            .iter()
            .map(|m| MachineStatus {
                id: m.id().clone(),
                entity: m.entity().to_string(),
                entry: m.entry().to_string(),
                bundle_key: m.bundle_key().cloned(),
                connector: m.connector().clone(),
                channels: m.channel_states(),
            })
            .collect();
        NodeStatus {
            host: self.host().to_string(),
            fire_port: self.fire_port(),
            machines,
            store_keys: self.store.keys(),
            store_names: self.sbinder.names(),
            process_names: self.pbinder.names(),
        }
    }

    /// Terminates every machine.
    pub fn shutdown(&self) {
        for m in self.machines() {
            m.terminate();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MachineStatus {
    pub id: Guid,
    pub entity: String,
    pub entry: String,
    pub bundle_key: Option<Guid>,
    pub connector: Connector,
    pub channels: Vec<(String, ChannelState)>,
}

impl MachineStatus {
    pub fn channel(&self, name: &str) -> Option<&ChannelState> {
        self.channels.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }
}

/// Snapshot answered to status queries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeStatus {
    pub host: String,
    pub fire_port: u16,
    pub machines: Vec<MachineStatus>,
    pub store_keys: Vec<Guid>,
    pub store_names: Vec<String>,
    pub process_names: Vec<String>,
}

impl NodeStatus {
    pub fn store_size(&self) -> usize {
        self.store_keys.len()
    }

    pub fn machine(&self, id: &Guid) -> Option<&MachineStatus> {
        self.machines.iter().find(|m| &m.id == id)
    }

    pub fn to_element(&self) -> Element {
        let mut el = Element::new("NODESTATUS")
            .attr("host", &self.host)
            .attr("firePort", self.fire_port.to_string())
            .attr("storeSize", self.store_size().to_string());
        for m in &self.machines {
            let mut me = Element::new("MACHINE")
                .attr("id", m.id.as_str())
                .attr("entity", &m.entity)
                .attr("entry", &m.entry);
            if let Some(k) = &m.bundle_key {
                me.set_attr("bundle", k.as_str());
            }
            me = me.child(m.connector.to_element());
            for (name, state) in &m.channels {
                me = me.child(state.to_element(name));
            }
            el = el.child(me);
        }
        for k in &self.store_keys {
            el = el.child(Element::new("KEY").text(k.as_str()));
        }
        for (binder, names) in [("store", &self.store_names), ("process", &self.process_names)] {
            for n in names {
                el = el.child(Element::new("BOUND").attr("binder", binder).attr("name", n));
            }
        }
        el
    }

    pub fn from_element(el: &Element) -> Result<NodeStatus, String> {
        if el.name != "NODESTATUS" {
            return Err(format!("expected NODESTATUS, found {}", el.name));
        }
        let guid = |s: &str| Guid::parse(s).map_err(|e| e.to_string());
        let mut machines = Vec::new();
        for m in el.elements_named("MACHINE") {
            let connector = m
                .first("CONNECTOR")
                .ok_or("MACHINE lacks CONNECTOR")
                .map_err(str::to_string)
                .and_then(|c| Connector::from_element(c).map_err(|e| e.to_string()))?;
            machines.push(MachineStatus {
                id: guid(m.required_attr("id")?)?,
                entity: m.required_attr("entity")?.to_string(),
                entry: m.get_attr("entry").unwrap_or_default().to_string(),
                bundle_key: m.get_attr("bundle").map(guid).transpose()?,
                connector,
                channels: m
                    .elements_named("CHANNEL")
                    .map(ChannelState::from_element)
                    .collect::<Result<_, _>>()?,
            });
        }
        let names = |binder: &str| -> Vec<String> {
            el.elements_named("BOUND")
                .filter(|b| b.get_attr("binder") == Some(binder))
                .filter_map(|b| b.get_attr("name").map(str::to_string))
                .collect()
        };
        Ok(NodeStatus {
            host: el.required_attr("host")?.to_string(),
            fire_port: el
                .required_attr("firePort")?
                .parse()
                .map_err(|e| format!("firePort: {e}"))?,
            machines,
            store_keys: el
                .elements_named("KEY")
                .map(|k| guid(k.text_content().trim()))
                .collect::<Result<_, _>>()?,
            store_names: names("store"),
            process_names: names("process"),
        })
    }
}
