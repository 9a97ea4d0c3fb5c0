use std::fmt;
use std::str::FromStr;

use md5::Md5;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const GUID_PREFIX: &str = "urn:cingal:";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid guid {0:?}: expected urn:cingal:<even-length hex>")]
pub struct GuidError(pub String);

/// Globally unique identifier, always held in normalized `urn:cingal:<hex>` form.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Guid(String);

impl Guid {
    pub fn parse(s: &str) -> Result<Guid, GuidError> {
        let trimmed = s.trim();
        let hex = trimmed.strip_prefix(GUID_PREFIX).unwrap_or(trimmed);
        if hex.is_empty() || !hex.len().is_multiple_of(2) || !hex.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(GuidError(s.to_string()));
        }
        Ok(Guid(format!("{GUID_PREFIX}{}", hex.to_ascii_lowercase())))
    }

    pub fn from_bytes(raw: &[u8]) -> Guid {
        let mut s = String::with_capacity(GUID_PREFIX.len() + raw.len() * 2);
        s.push_str(GUID_PREFIX);
        for b in raw {
            s.push_str(&format!("{b:02x}"));
        }
        Guid(s)
    }

    /// Fresh random identifier (128 bits).
    pub fn random() -> Guid {
        Guid::from_bytes(&rand::random::<[u8; 16]>())
    }

    pub fn hex(&self) -> &str {
        &self.0[GUID_PREFIX.len()..]
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Guid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for Guid {
    type Err = GuidError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Guid::parse(s)
    }
}

/// Digest behind content keys. Every node of one deployment must agree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DigestAlgorithm {
    #[default]
    Md5,
    Sha256,
}

impl DigestAlgorithm {
    pub fn name(self) -> &'static str {
        match self {
            DigestAlgorithm::Md5 => "md5",
            DigestAlgorithm::Sha256 => "sha256",
        }
    }
}

impl FromStr for DigestAlgorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "md5" => Ok(DigestAlgorithm::Md5),
            "sha256" | "sha-256" => Ok(DigestAlgorithm::Sha256),
            other => Err(format!("unknown digest algorithm {other:?}")),
        }
    }
}

pub fn compute_guid(algorithm: DigestAlgorithm, bytes: &[u8]) -> Guid {
    match algorithm {
        DigestAlgorithm::Md5 => Guid::from_bytes(&Md5::digest(bytes)),
        DigestAlgorithm::Sha256 => Guid::from_bytes(&Sha256::digest(bytes)),
    }
}
