//! The generic tool bundles: installer, runner and wirer, each driven
//! entirely by its to-do list, plus an entity-administration tool.

use std::sync::Arc;

use super::machine::MachineApi;
use super::registry::{Executor, ExecutorRegistry};
use super::todo::{Task, TaskReport, TaskResult, TaskType, ToDoList, TODO_DATUM};
use super::ApiError;
use crate::bundle::{Bundle, BundleDraft, BundleError, EntityId};
use crate::channel::ControlRequest;
use crate::guid::Guid;
use crate::security::{Certificate, EntityRecord, RightSet};
use crate::xml::Element;

pub const INSTALLER_ENTRY: &str = "uk.ac.stand.cingal.Installer";
pub const RUNNER_ENTRY: &str = "uk.ac.stand.cingal.Runner";
pub const WIRER_ENTRY: &str = "uk.ac.stand.cingal.Wirer";
pub const ENTITY_ADMIN_ENTRY: &str = "uk.ac.stand.cingal.EntityAdmin";

/// Added by an initiating wirer to the task it hands its offspring.
pub const LISTENING_PORT_DATUM: &str = "ListeningPort";
pub const ENTITY_OP_DATUM: &str = "EntityOp";

type ToolFn = fn(&Task, &Bundle, &MachineApi) -> Result<TaskResult, ApiError>;

pub(super) fn register(r: &ExecutorRegistry) {
    let tools: [(&str, ToolFn); 3] = [
        (INSTALLER_ENTRY, install),
        (RUNNER_ENTRY, run),
        (WIRER_ENTRY, wire),
    ];
    for (entry, f) in tools {
        r.register(entry, Arc::new(TodoTool(f)))
            .expect("fresh registry");
    }
    r.register_fn(ENTITY_ADMIN_ENTRY, entity_admin).expect("fresh registry");
}

/// Runs every task of the bundle's to-do list and sends one report back
/// with exactly one result per task, then lets the machine terminate.
struct TodoTool(ToolFn);

impl Executor for TodoTool {
    fn run(&self, bundle: &Bundle, api: &MachineApi) -> Result<(), ApiError> {
        let list = match bundle.datum(TODO_DATUM).and_then(ToDoList::from_datum) {
            Ok(list) => list,
            Err(e) => {
                let failed = TaskResult::failed("", "MalformedDocument", &e.to_string());
                return api.report(&TaskReport { results: vec![failed] });
            }
        };
        let results = list
            .tasks
            .iter()
            .map(|t| match (self.0)(t, bundle, api) {
                Ok(r) => r,
                Err(e) => TaskResult::failed(&t.guid, &e.code(), &e.detail()),
            })
            .collect();
        api.report(&TaskReport { results })
    }
}

fn expect_type(task: &Task, want: TaskType) -> Result<(), ApiError> {
    if task.task_type != want {
        return Err(BundleError::SchemaViolation(format!(
            "task {} has type {}, expected {want}",
            task.guid, task.task_type
        ))
        .into());
    }
    Ok(())
}

fn install(task: &Task, bundle: &Bundle, api: &MachineApi) -> Result<TaskResult, ApiError> {
    expect_type(task, TaskType::Install)?;
    let payload_ref = task.text("PayloadRef")?;
    let payload = bundle.datum(&payload_ref)?.as_bundle()?;
    let key = api.store_put(&payload)?;
    Ok(TaskResult::ok(&task.guid).with(payload_ref, key.to_string()))
}

fn run(task: &Task, _bundle: &Bundle, api: &MachineApi) -> Result<TaskResult, ApiError> {
    expect_type(task, TaskType::Run)?;
    let text = task.text("StoreGuid")?;
    let key = Guid::parse(&text).map_err(|_| ApiError::Remote {
        code: "KeyNotFound".into(),
        detail: text.clone(),
    })?;
    let component = api.store_get(&key)?;
    let m = api.spawn_detached(component, Some(key))?;
    let c = m.connector();
    Ok(TaskResult::ok(&task.guid)
        .with("Machine", m.id().to_string())
        .with("Host", &c.host)
        .with("MachinePort", c.machine_port.to_string())
        .with("ResourcePort", c.resource_port.to_string()))
}

fn wire(task: &Task, bundle: &Bundle, api: &MachineApi) -> Result<TaskResult, ApiError> {
    expect_type(task, TaskType::Wire)?;
    let primary = task.connector("PrimaryConnector")?;
    let secondary = task.connector("SecondaryConnector")?;
    let primary_name = task.text("PrimaryNamedChannel")?;
    let secondary_name = task.text("SecondaryNamedChannel")?;

    if let Ok(port) = task.text(LISTENING_PORT_DATUM) {
        // offspring: dial the listener the initiating wirer opened
        let port: u16 = port.parse().map_err(|_| {
            BundleError::SchemaViolation(format!("{LISTENING_PORT_DATUM} is not a port: {port}"))
        })?;
        api.control(&secondary)?.request(&ControlRequest::Connect {
            name: secondary_name,
            host: primary.host.clone(),
            port,
        })?;
        return Ok(TaskResult::ok(&task.guid).with("Port", port.to_string()));
    }

    let mut ctl = api.control(&primary)?;
    let port = ctl
        .request(&ControlRequest::Create {
            name: primary_name.clone(),
        })?
        .port
        .ok_or_else(|| ApiError::Remote {
            code: "Protocol".into(),
            detail: "create response without a port".into(),
        })?;

    let mut finish = || -> Result<(), ApiError> {
        let node = api.control(&secondary)?.request(&ControlRequest::Node)?;
        let (Some(fire_host), Some(fire_port)) = (node.fire_host, node.fire_port) else {
            return Err(ApiError::Remote {
                code: "Protocol".into(),
                detail: "secondary machine did not name its node".into(),
            });
        };
        let offspring = offspring(bundle, task, port)?;
        let mut remote = api.fire_remote(&fire_host, fire_port, &offspring)?;
        let report = remote.read_report(api.report_timeout())?;
        match report.result(&task.guid) {
            Some(r) if r.is_ok() => {}
            Some(r) => return Err(ApiError::from_report_text(r.error().unwrap_or("Unknown"))),
            None => {
                return Err(ApiError::Remote {
                    code: "Protocol".into(),
                    detail: "offspring report lacks the task".into(),
                })
            }
        }
        api.await_connected(&mut ctl, &primary_name, api.connect_timeout())
    };
    if let Err(e) = finish() {
        let _ = ctl.request(&ControlRequest::Disconnect { name: primary_name });
        return Err(e);
    }
    Ok(TaskResult::ok(&task.guid).with("Port", port.to_string()))
}

/// Same code and credentials as the parent, with a to-do list holding just
/// this task plus the listening port.
fn offspring(parent: &Bundle, task: &Task, port: u16) -> Result<Bundle, ApiError> {
    let mut t = task.clone();
    t.datums.retain(|d| d.id != LISTENING_PORT_DATUM);
    t.datums
        .push(crate::bundle::Datum::text(LISTENING_PORT_DATUM, port.to_string()));
    let list = ToDoList::new(vec![t])?;
    Ok(BundleDraft::new(parent.code.clone())
        .with_datum(list.to_datum())
        .authenticate(parent.auth.clone()))
}

/// Instruction for the entity-admin tool.
#[derive(Debug, Clone, PartialEq, Eq)]
#[allow(clippy::large_enum_variant)] // built once per admin bundle
pub enum EntityOp {
    Add {
        entity: EntityId,
        certificate: Certificate,
        rights: RightSet,
    },
    Remove {
        entity: EntityId,
    },
}

impl EntityOp {
    pub fn to_element(&self, guid: &str) -> Element {
        let el = Element::new("ENTITYOP").attr("guid", guid);
        match self {
            EntityOp::Add {
                entity,
                certificate,
                rights,
            } => el
                .attr("op", "add")
                .attr("entity", entity.as_str())
                .attr("rights", rights.to_string())
                .text(certificate.to_pem()),
            EntityOp::Remove { entity } => el.attr("op", "remove").attr("entity", entity.as_str()),
        }
    }

    pub fn from_element(el: &Element) -> Result<(String, EntityOp), BundleError> {
        let schema = BundleError::SchemaViolation;
        if el.name != "ENTITYOP" {
            return Err(schema(format!("expected ENTITYOP, found {}", el.name)));
        }
        let guid = el.get_attr("guid").unwrap_or_default().to_string();
        let entity = EntityId::new(el.required_attr("entity").map_err(schema)?)?;
        let op = match el.required_attr("op").map_err(schema)? {
            "add" => EntityOp::Add {
                entity,
                certificate: Certificate::from_pem(&el.text_content()).map_err(|e| schema(e.to_string()))?,
                rights: el
                    .required_attr("rights")
                    .map_err(schema)?
                    .parse()
                    .map_err(|e: String| schema(e))?,
            },
            "remove" => EntityOp::Remove { entity },
            other => return Err(schema(format!("unknown entity op {other}"))),
        };
        Ok((guid, op))
    }
}

fn entity_admin(bundle: &Bundle, api: &MachineApi) -> Result<(), ApiError> {
    let parsed = bundle
        .datum(ENTITY_OP_DATUM)
        .and_then(|d| {
            d.first_element()
                .ok_or_else(|| BundleError::SchemaViolation("EntityOp datum is empty".into()))
                .and_then(EntityOp::from_element)
        });
    let result = match parsed {
        Err(e) => TaskResult::failed("", "MalformedDocument", &e.to_string()),
        Ok((guid, op)) => {
            let outcome = match op {
                EntityOp::Add {
                    entity,
                    certificate,
                    rights,
                } => api.ver_add(EntityRecord {
                    entity,
                    certificate,
                    rights,
                }),
                EntityOp::Remove { entity } => api.ver_remove(&entity),
            };
            match outcome {
                Ok(()) => TaskResult::ok(guid),
                Err(e) => TaskResult::failed(guid, &e.code(), &e.detail()),
            }
        }
    };
    api.report(&TaskReport { results: vec![result] })
}
