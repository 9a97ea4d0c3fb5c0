//! To-do list generation and tool-bundle construction.

use crate::bundle::{Bundle, BundleDraft, CodeSection, CodeUnit, Datum};
use crate::connector::Connector;
use crate::guid::Guid;
use crate::runtime::{
    EntityOp, Task, TaskType, ToDoList, BUILTIN_CODE_TYPE, ENTITY_ADMIN_ENTRY, ENTITY_OP_DATUM, INSTALLER_ENTRY,
    RUNNER_ENTRY, WIRER_ENTRY,
};
use crate::security::Signer;

/// One connection as a wirer sees it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireSpec {
    pub primary: Connector,
    pub secondary: Connector,
    pub primary_channel: String,
    pub secondary_channel: String,
}

/// What each phase's to-do list is generated from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PhaseInputs {
    /// Ids of the installer datums carrying payload bundles.
    Install(Vec<String>),
    /// Store keys of installed bundles.
    Run(Vec<Guid>),
    Wire(Vec<WireSpec>),
}

pub fn generate_todolist(inputs: &PhaseInputs) -> ToDoList {
    let task = |ty| Task::new(Guid::random().to_string(), ty);
    let tasks = match inputs {
        PhaseInputs::Install(ids) => ids
            .iter()
            .map(|id| task(TaskType::Install).with_datum(Datum::text("PayloadRef", id)))
            .collect(),
        PhaseInputs::Run(keys) => keys
            .iter()
            .map(|k| task(TaskType::Run).with_datum(Datum::text("StoreGuid", k.as_str())))
            .collect(),
        PhaseInputs::Wire(specs) => specs
            .iter()
            .map(|s| {
                task(TaskType::Wire)
                    .with_datum(Datum::element("PrimaryConnector", s.primary.to_element()))
                    .with_datum(Datum::element("SecondaryConnector", s.secondary.to_element()))
                    .with_datum(Datum::text("PrimaryNamedChannel", &s.primary_channel))
                    .with_datum(Datum::text("SecondaryNamedChannel", &s.secondary_channel))
            })
            .collect(),
    };
    ToDoList::new(tasks).expect("random task guids are unique")
}

/// CODE section naming one of the node's built-in behaviors.
pub fn builtin_code(entry: &str) -> CodeSection {
    CodeSection {
        entry: entry.to_string(),
        code_type: BUILTIN_CODE_TYPE.to_string(),
        units: vec![CodeUnit {
            name: entry.to_string(),
            content: String::new(),
        }],
    }
}

/// Installer carrying `payloads` as `(datum id, bundle)` pairs.
pub fn installer_bundle(signer: &Signer, payloads: &[(String, Bundle)]) -> Bundle {
    let ids: Vec<String> = payloads.iter().map(|(id, _)| id.clone()).collect();
    let mut draft = BundleDraft::new(builtin_code(INSTALLER_ENTRY));
    for (id, b) in payloads {
        draft = draft.with_datum(Datum::bundle(id, b));
    }
    signer.sign(draft.with_datum(generate_todolist(&PhaseInputs::Install(ids)).to_datum()))
}

pub fn runner_bundle(signer: &Signer, keys: &[Guid]) -> Bundle {
    signer.sign(
        BundleDraft::new(builtin_code(RUNNER_ENTRY))
            .with_datum(generate_todolist(&PhaseInputs::Run(keys.to_vec())).to_datum()),
    )
}

pub fn wirer_bundle(signer: &Signer, specs: &[WireSpec]) -> Bundle {
    signer.sign(
        BundleDraft::new(builtin_code(WIRER_ENTRY))
            .with_datum(generate_todolist(&PhaseInputs::Wire(specs.to_vec())).to_datum()),
    )
}

pub fn entity_admin_bundle(signer: &Signer, op: &EntityOp) -> Bundle {
    signer.sign(
        BundleDraft::new(builtin_code(ENTITY_ADMIN_ENTRY))
            .with_datum(Datum::element(ENTITY_OP_DATUM, op.to_element(Guid::random().as_str()))),
    )
}
