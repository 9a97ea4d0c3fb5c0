//! Machines: execution contexts for fired bundles, the API they run
//! against, and the built-in tool and demo behaviors.

mod demo;
mod machine;
mod registry;
mod todo;
mod tools;

use thiserror::Error;

use crate::bundle::BundleError;
use crate::channel::ChannelError;
use crate::security::SecurityError;
use crate::store::{BinderError, StoreError};

pub use demo::{DEMO_ECHO, DEMO_SINK, DEMO_SOURCE};
pub(crate) use machine::spawn;
pub use machine::{Machine, MachineApi};
pub use registry::{Executor, ExecutorRegistry, RegistryError, BUILTIN_CODE_TYPE};
pub use todo::{Task, TaskReport, TaskResult, TaskStatus, TaskType, ToDoList, TODO_DATUM};
pub use tools::{
    EntityOp, ENTITY_ADMIN_ENTRY, ENTITY_OP_DATUM, INSTALLER_ENTRY, LISTENING_PORT_DATUM, RUNNER_ENTRY, WIRER_ENTRY,
};

/// Why a bundle could not be fired.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FireError {
    #[error("malformed document: {0}")]
    MalformedDocument(String),
    #[error("unknown entity: {0}")]
    UnknownEntity(String),
    #[error("bad signature from {0}")]
    BadSignature(String),
    #[error("capability denied: {0}")]
    CapabilityDenied(String),
    #[error("unknown entry point: {0}")]
    UnknownEntryPoint(String),
    #[error("resources exhausted: {0}")]
    ResourceExhausted(String),
    #[error("node unreachable: {0}")]
    Unreachable(String),
    #[error("timed out: {0}")]
    Timeout(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl FireError {
    pub fn code(&self) -> &'static str {
        match self {
            FireError::MalformedDocument(_) => "MalformedDocument",
            FireError::UnknownEntity(_) => "UnknownEntity",
            FireError::BadSignature(_) => "BadSignature",
            FireError::CapabilityDenied(_) => "CapabilityDenied",
            FireError::UnknownEntryPoint(_) => "UnknownEntryPoint",
            FireError::ResourceExhausted(_) => "ResourceExhausted",
            FireError::Unreachable(_) => "Unreachable",
            FireError::Timeout(_) => "Timeout",
            FireError::Protocol(_) => "Protocol",
        }
    }

    pub fn detail(&self) -> &str {
        match self {
            FireError::MalformedDocument(s)
            | FireError::UnknownEntity(s)
            | FireError::BadSignature(s)
            | FireError::CapabilityDenied(s)
            | FireError::UnknownEntryPoint(s)
            | FireError::ResourceExhausted(s)
            | FireError::Unreachable(s)
            | FireError::Timeout(s)
            | FireError::Protocol(s) => s,
        }
    }

    pub fn from_code(code: &str, detail: &str) -> FireError {
        let d = detail.to_string();
        match code {
            "MalformedDocument" => FireError::MalformedDocument(d),
            "UnknownEntity" => FireError::UnknownEntity(d),
            "BadSignature" => FireError::BadSignature(d),
            "CapabilityDenied" => FireError::CapabilityDenied(d),
            "UnknownEntryPoint" => FireError::UnknownEntryPoint(d),
            "ResourceExhausted" => FireError::ResourceExhausted(d),
            "Unreachable" => FireError::Unreachable(d),
            "Timeout" => FireError::Timeout(d),
            _ => FireError::Protocol(format!("{code}: {detail}")),
        }
    }
}

/// Failure of a mediated machine-API call.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ApiError {
    #[error(transparent)]
    Security(#[from] SecurityError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Binder(#[from] BinderError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Fire(#[from] FireError),
    #[error(transparent)]
    Bundle(#[from] BundleError),
    /// An error relayed from another machine, kept as `code` + `detail`.
    #[error("{code}: {detail}")]
    Remote { code: String, detail: String },
}

impl ApiError {
    pub fn code(&self) -> String {
        match self {
            ApiError::Security(e) => match e {
                SecurityError::InvalidKey(_) => "InvalidKey",
                SecurityError::BadCertificate(_) => "BadCertificate",
                SecurityError::DuplicateEntity(_) => "DuplicateEntity",
                SecurityError::EntityNotFound(_) => "EntityNotFound",
                SecurityError::CapabilityDenied { .. } => "CapabilityDenied",
                SecurityError::Io(_) => "Io",
            }
            .into(),
            ApiError::Store(e) => match e {
                StoreError::KeyNotFound(_) => "KeyNotFound",
                StoreError::Io(_) => "Io",
                StoreError::Corrupt(_) => "Corrupt",
            }
            .into(),
            ApiError::Binder(e) => match e {
                BinderError::EmptyName => "EmptyName",
                BinderError::NotBound(_) => "NotBound",
                BinderError::Io(_) => "Io",
            }
            .into(),
            ApiError::Channel(e) => e.code().into(),
            ApiError::Fire(e) => e.code().into(),
            ApiError::Bundle(e) => match e {
                BundleError::MalformedDocument(_) => "MalformedDocument",
                BundleError::SchemaViolation(_) => "SchemaViolation",
                BundleError::DatumNotFound(_) => "DatumNotFound",
            }
            .into(),
            ApiError::Remote { code, .. } => code.clone(),
        }
    }

    pub fn detail(&self) -> String {
        match self {
            ApiError::Channel(e) => e.detail(),
            ApiError::Fire(e) => e.detail().to_string(),
            ApiError::Store(StoreError::KeyNotFound(k)) => k.to_string(),
            ApiError::Remote { detail, .. } => detail.clone(),
            other => other.to_string(),
        }
    }

    /// Parses a `Code: detail` string as written into failed task results.
    pub fn from_report_text(text: &str) -> ApiError {
        let (code, detail) = text.split_once(": ").unwrap_or((text, ""));
        ApiError::Remote {
            code: code.to_string(),
            detail: detail.to_string(),
        }
    }
}
