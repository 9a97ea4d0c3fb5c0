//! Desk-scale test harness: loopback topologies of thin servers with
//! pre-provisioned entities, a probe oracle for wired data paths, state
//! tracing through `node_status`, and scripted scenarios.

mod observe;
mod probe;
mod scenario;
mod topology;

use thiserror::Error;

pub use observe::{derive_state, is_legal_path, StateTrace};
pub use probe::Probes;
pub use scenario::{run_scenario, Scenario, ScenarioReport, Step, StepOutcome};
pub use topology::{admin_signer, demo_sink, demo_source, deployer_signer, NodeMode, TestNode, TestTopology, CACHING_SERVER_DDD};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("resource exhausted: {0}")]
    ResourceExhausted(String),
    #[error("node {node}: {detail}")]
    Node { node: String, detail: String },
    #[error(transparent)]
    Deploy(#[from] cingal_core::deploy::DeployError),
    #[error("probe: {0}")]
    Probe(String),
    #[error("scenario script: {0}")]
    Script(String),
    #[error("step {step} failed: {detail}")]
    AssertionFailed { step: usize, detail: String },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}
