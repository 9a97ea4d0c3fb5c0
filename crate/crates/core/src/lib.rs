//! Thin-server nodes that accept signed bundles for execution, and a
//! deployment engine that enacts deployment description documents onto
//! them.

pub mod bundle;
pub mod channel;
pub mod connector;
pub mod deploy;
pub mod guid;
pub mod runtime;
pub mod security;
pub mod server;
pub mod store;
pub mod xml;

pub use bundle::{Bundle, BundleDraft, BundleError, CodeSection, CodeUnit, Datum, EntityId};
pub use connector::Connector;
pub use guid::{compute_guid, DigestAlgorithm, Guid};
