//! Deployment descriptions and the engine that enacts them: install, run
//! and wire phases, plus rewiring and moving deployed components.

mod ddd;
mod engine;
mod plan;
mod record;

use std::fmt;

use thiserror::Error;

pub use ddd::{parse_ddd, BundleSource, Connection, Ddd, Deployment, Endpoint, Host};
pub use engine::{Engine, EngineConfig, EngineEvent, Observer};
pub use plan::{
    builtin_code, entity_admin_bundle, generate_todolist, installer_bundle, runner_bundle, wirer_bundle, PhaseInputs,
    WireSpec,
};
pub use record::{ComponentState, ConnectionEntry, DeploymentEntry, DeploymentRecord, WireStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Install,
    Run,
    Wire,
    /// Tearing down connections during evolution.
    Unwire,
    /// Stopping a component's machine during a move.
    Terminate,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Install => "install",
            Phase::Run => "run",
            Phase::Wire => "wire",
            Phase::Unwire => "unwire",
            Phase::Terminate => "terminate",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DeployError {
    #[error("malformed document: {0}")]
    MalformedDocument(String),
    #[error("dangling reference: {0}")]
    DanglingReference(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("cannot load bundle {bundle}: {detail}")]
    Source { bundle: String, detail: String },
    #[error("unknown deployment: {0}")]
    UnknownDeployment(String),
    #[error("phase {phase} failed on node {node}: {detail}")]
    PhaseFailed { phase: Phase, node: String, detail: String },
}
