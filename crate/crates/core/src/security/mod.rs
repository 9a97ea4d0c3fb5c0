//! Signing, the Valid Entity Repository and the capability gate.

mod keys;
mod rights;
mod ver;

use thiserror::Error;

use crate::bundle::EntityId;

pub use keys::{sign_bundle, verify_bundle, Certificate, PrivateKey, Signer, SCHEME_ED25519};
pub use rights::{Right, RightSet, Service};
pub use ver::{check_capability, ver_add, ver_remove, AuditEntry, EntityRecord, Ver};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SecurityError {
    #[error("invalid key: {0}")]
    InvalidKey(String),
    #[error("bad certificate: {0}")]
    BadCertificate(String),
    #[error("duplicate entity: {0}")]
    DuplicateEntity(EntityId),
    #[error("entity not found: {0}")]
    EntityNotFound(EntityId),
    #[error("capability denied: {entity} lacks {service}:{right}")]
    CapabilityDenied {
        entity: EntityId,
        service: Service,
        right: Right,
    },
    #[error("ver i/o: {0}")]
    Io(String),
}
