use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use super::keys::Certificate;
use super::rights::{Right, RightSet, Service};
use super::SecurityError;
use crate::bundle::EntityId;
use crate::xml::Element;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityRecord {
    pub entity: EntityId,
    pub certificate: Certificate,
    pub rights: RightSet,
}

/// One capability decision.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditEntry {
    pub entity: EntityId,
    pub service: Service,
    pub right: Right,
    pub allowed: bool,
}

/// Valid Entity Repository: trusted entities, their certificates and rights.
pub struct Ver {
    records: RwLock<BTreeMap<EntityId, EntityRecord>>,
    path: Option<PathBuf>,
    audit: Mutex<Vec<AuditEntry>>,
}

impl Ver {
    /// In-memory VER containing only the bootstrap admin.
    pub fn bootstrap(admin: EntityRecord) -> Ver {
        let mut records = BTreeMap::new();
        records.insert(admin.entity.clone(), admin);
        Ver {
            records: RwLock::new(records),
            path: None,
            audit: Mutex::new(Vec::new()),
        }
    }

    /// Loads `path` if present; the admin record is (re)inserted either way.
    pub fn open(path: &Path, admin: EntityRecord) -> Result<Ver, SecurityError> {
        let mut records = BTreeMap::new();
        if path.exists() {
            let bytes = fs::read(path).map_err(|e| SecurityError::Io(e.to_string()))?;
            let doc = Element::parse(&bytes).map_err(|e| SecurityError::Io(e.to_string()))?;
            for el in doc.elements_named("ENTITY") {
                let rec = record_from_element(el)?;
                records.insert(rec.entity.clone(), rec);
            }
        }
        records.insert(admin.entity.clone(), admin);
        let ver = Ver {
            records: RwLock::new(records),
            path: Some(path.to_path_buf()),
            audit: Mutex::new(Vec::new()),
        };
        ver.persist(&ver.records.read().unwrap())?;
        Ok(ver)
    }

    pub fn lookup(&self, entity: &EntityId) -> Option<EntityRecord> {
        self.records.read().unwrap().get(entity).cloned()
    }

    pub fn entities(&self) -> Vec<EntityId> {
        self.records.read().unwrap().keys().cloned().collect()
    }

    /// Pure decision: is `entity` present and holding (service, right)?
    pub fn check_capability(&self, entity: &EntityId, service: Service, right: Right) -> bool {
        self.records
            .read()
            .unwrap()
            .get(entity)
            .is_some_and(|r| r.rights.contains(service, right))
    }

    /// The gate used by every mediated operation. Records an audit entry.
    pub fn authorize(&self, entity: &EntityId, service: Service, right: Right) -> Result<(), SecurityError> {
        let allowed = self.check_capability(entity, service, right);
        self.audit.lock().unwrap().push(AuditEntry {
            entity: entity.clone(),
            service,
            right,
            allowed,
        });
        if allowed {
            Ok(())
        } else {
            Err(SecurityError::CapabilityDenied {
                entity: entity.clone(),
                service,
                right,
            })
        }
    }

    pub fn add(&self, caller: &EntityId, rec: EntityRecord) -> Result<(), SecurityError> {
        self.authorize(caller, Service::Ver, Right::Put)?;
        let mut records = self.records.write().unwrap();
        if records.contains_key(&rec.entity) {
            return Err(SecurityError::DuplicateEntity(rec.entity));
        }
        records.insert(rec.entity.clone(), rec);
        self.persist(&records)
    }

    pub fn remove(&self, caller: &EntityId, entity: &EntityId) -> Result<(), SecurityError> {
        self.authorize(caller, Service::Ver, Right::Remove)?;
        let mut records = self.records.write().unwrap();
        if records.remove(entity).is_none() {
            return Err(SecurityError::EntityNotFound(entity.clone()));
        }
        self.persist(&records)
    }

    pub fn audit_log(&self) -> Vec<AuditEntry> {
        self.audit.lock().unwrap().clone()
    }

    fn persist(&self, records: &BTreeMap<EntityId, EntityRecord>) -> Result<(), SecurityError> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let mut doc = Element::new("VER");
        for rec in records.values() {
            doc = doc.child(
                Element::new("ENTITY")
                    .attr("id", rec.entity.as_str())
                    .attr("rights", rec.rights.to_string())
                    .text(rec.certificate.to_pem()),
            );
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, doc.to_bytes()).map_err(|e| SecurityError::Io(e.to_string()))?;
        fs::rename(&tmp, path).map_err(|e| SecurityError::Io(e.to_string()))
    }
}

fn record_from_element(el: &Element) -> Result<EntityRecord, SecurityError> {
    let entity = EntityId::new(el.get_attr("id").unwrap_or_default())
        .map_err(|e| SecurityError::Io(e.to_string()))?;
    let rights = el
        .get_attr("rights")
        .unwrap_or_default()
        .parse()
        .map_err(SecurityError::Io)?;
    let certificate = Certificate::from_pem(&el.text_content())?;
    Ok(EntityRecord {
        entity,
        certificate,
        rights,
    })
}

pub fn ver_add(v: &Ver, caller: &EntityId, rec: EntityRecord) -> Result<(), SecurityError> {
    v.add(caller, rec)
}

pub fn ver_remove(v: &Ver, caller: &EntityId, e: &EntityId) -> Result<(), SecurityError> {
    v.remove(caller, e)
}

pub fn check_capability(v: &Ver, e: &EntityId, s: Service, r: Right) -> bool {
    v.check_capability(e, s, r)
}
