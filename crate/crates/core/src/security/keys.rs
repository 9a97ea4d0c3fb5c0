//! Ed25519 keys and certificates, exchanged as PEM text blocks.
//!
//! The PEM tag carries the scheme: `ED25519 CERTIFICATE` for public keys and
//! `ED25519 PRIVATE KEY` for 32-byte seeds.

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use ed25519_dalek::{Signature, Signer as _, SigningKey, Verifier as _, VerifyingKey};

use super::SecurityError;
use crate::bundle::{Authentication, Bundle, BundleDraft, EntityId};
use crate::guid::{compute_guid, DigestAlgorithm};

pub const SCHEME_ED25519: &str = "ED25519";
const CERT_TAG: &str = "ED25519 CERTIFICATE";
const KEY_TAG: &str = "ED25519 PRIVATE KEY";

#[derive(Clone)]
pub struct PrivateKey(SigningKey);

impl PrivateKey {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        PrivateKey(SigningKey::from_bytes(&seed))
    }

    pub fn generate() -> Self {
        PrivateKey::from_seed(rand::random())
    }

    pub fn certificate(&self) -> Certificate {
        Certificate(self.0.verifying_key())
    }

    pub fn to_pem(&self) -> String {
        pem::encode(&pem::Pem::new(KEY_TAG, self.0.to_bytes().to_vec()))
    }

    pub fn from_pem(text: &str) -> Result<Self, SecurityError> {
        let p = pem::parse(text).map_err(|e| SecurityError::InvalidKey(e.to_string()))?;
        if p.tag() != KEY_TAG {
            return Err(SecurityError::InvalidKey(format!("unsupported key type {}", p.tag())));
        }
        let seed: [u8; 32] = p
            .contents()
            .try_into()
            .map_err(|_| SecurityError::InvalidKey("ed25519 seed must be 32 bytes".into()))?;
        Ok(PrivateKey::from_seed(seed))
    }

    fn sign_raw(&self, msg: &[u8]) -> Vec<u8> {
        self.0.sign(msg).to_bytes().to_vec()
    }
}

impl std::fmt::Debug for PrivateKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "PrivateKey({})", self.certificate().fingerprint())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certificate(VerifyingKey);

impl Certificate {
    pub fn scheme(&self) -> &'static str {
        SCHEME_ED25519
    }

    pub fn to_pem(&self) -> String {
        pem::encode(&pem::Pem::new(CERT_TAG, self.0.to_bytes().to_vec()))
    }

    pub fn from_pem(text: &str) -> Result<Self, SecurityError> {
        let p = pem::parse(text.trim()).map_err(|e| SecurityError::BadCertificate(e.to_string()))?;
        if p.tag() != CERT_TAG {
            return Err(SecurityError::BadCertificate(format!(
                "unsupported certificate type {}",
                p.tag()
            )));
        }
        let raw: [u8; 32] = p
            .contents()
            .try_into()
            .map_err(|_| SecurityError::BadCertificate("ed25519 key must be 32 bytes".into()))?;
        VerifyingKey::from_bytes(&raw)
            .map(Certificate)
            .map_err(|e| SecurityError::BadCertificate(e.to_string()))
    }

    /// Hex MD5 of the public key; convenient default entity id.
    pub fn fingerprint(&self) -> String {
        compute_guid(DigestAlgorithm::Md5, self.0.as_bytes()).hex().to_string()
    }

    pub fn verify(&self, msg: &[u8], signature_b64: &str) -> bool {
        let Ok(raw) = STANDARD.decode(signature_b64.trim()) else {
            return false;
        };
        let Ok(sig) = Signature::from_slice(&raw) else {
            return false;
        };
        self.0.verify(msg, &sig).is_ok()
    }
}

/// Signs the canonical CODE section. DATA is not covered.
pub fn sign_bundle(b: impl Into<BundleDraft>, key: &PrivateKey, entity: &EntityId) -> Bundle {
    let draft = b.into();
    let signature = STANDARD.encode(key.sign_raw(&draft.code.canonical_bytes()));
    draft.authenticate(Authentication {
        entity: entity.clone(),
        signature,
    })
}

pub fn verify_bundle(b: &Bundle, cert: &Certificate) -> bool {
    cert.verify(&b.code.canonical_bytes(), &b.auth.signature)
}

/// An entity paired with its private key.
#[derive(Debug, Clone)]
pub struct Signer {
    pub entity: EntityId,
    pub key: PrivateKey,
}

impl Signer {
    pub fn new(entity: EntityId, key: PrivateKey) -> Self {
        Signer { entity, key }
    }

    /// Entity id derived from the key's certificate fingerprint.
    pub fn from_key(key: PrivateKey) -> Self {
        let entity = EntityId::new(key.certificate().fingerprint()).expect("fingerprint is non-empty");
        Signer { entity, key }
    }

    pub fn certificate(&self) -> Certificate {
        self.key.certificate()
    }

    pub fn sign(&self, b: impl Into<BundleDraft>) -> Bundle {
        sign_bundle(b, &self.key, &self.entity)
    }
}
