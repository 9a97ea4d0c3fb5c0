//! Content-addressable bundle store and the symbolic name binders.
//!
//! The store is append-only: the bytes under a key never change. Binders are
//! the mutable counterpart, mapping symbolic names to store keys (store
//! binder) or to running machines (process binder).

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use thiserror::Error;

use crate::bundle::Bundle;
use crate::connector::Connector;
use crate::guid::{compute_guid, DigestAlgorithm, Guid};
use crate::xml::Element;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StoreError {
    #[error("key not found: {0}")]
    KeyNotFound(Guid),
    #[error("store i/o: {0}")]
    Io(String),
    #[error("corrupt store entry: {0}")]
    Corrupt(String),
}

impl From<io::Error> for StoreError {
    fn from(e: io::Error) -> Self {
        StoreError::Io(e.to_string())
    }
}

pub struct Store {
    digest: DigestAlgorithm,
    dir: Option<PathBuf>,
    entries: RwLock<BTreeMap<Guid, Arc<[u8]>>>,
}

impl Store {
    pub fn in_memory(digest: DigestAlgorithm) -> Store {
        Store {
            digest,
            dir: None,
            entries: RwLock::new(BTreeMap::new()),
        }
    }

    /// Opens (creating if needed) a store rooted at `dir`, loading every
    /// `<hex>.bundle` file and checking that its name matches its digest.
    pub fn open(dir: &Path, digest: DigestAlgorithm) -> Result<Store, StoreError> {
        fs::create_dir_all(dir)?;
        let mut entries = BTreeMap::new();
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("bundle") {
                continue;
            }
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| StoreError::Corrupt(path.display().to_string()))?;
            let key = Guid::parse(stem).map_err(|e| StoreError::Corrupt(e.to_string()))?;
            let bytes = fs::read(&path)?;
            if compute_guid(digest, &bytes) != key {
                return Err(StoreError::Corrupt(format!(
                    "{} does not hash to its name under {}",
                    path.display(),
                    digest.name()
                )));
            }
            entries.insert(key, Arc::from(bytes));
        }
        Ok(Store {
            digest,
            dir: Some(dir.to_path_buf()),
            entries: RwLock::new(entries),
        })
    }

    pub fn digest(&self) -> DigestAlgorithm {
        self.digest
    }

    pub fn put(&self, bundle: &Bundle) -> Result<Guid, StoreError> {
        let bytes = bundle.serialize();
        let key = compute_guid(self.digest, &bytes);
        let mut entries = self.entries.write().unwrap();
        if entries.contains_key(&key) {
            return Ok(key);
        }
        if let Some(dir) = &self.dir {
            let path = dir.join(format!("{}.bundle", key.hex()));
            let tmp = dir.join(format!(".{}.tmp", key.hex()));
            fs::write(&tmp, &bytes)?;
            fs::rename(&tmp, &path)?;
        }
        entries.insert(key.clone(), Arc::from(bytes));
        Ok(key)
    }

    pub fn get(&self, key: &Guid) -> Result<Bundle, StoreError> {
        let bytes = self.get_bytes(key)?;
        Bundle::parse(&bytes).map_err(|e| StoreError::Corrupt(e.to_string()))
    }

    pub fn get_bytes(&self, key: &Guid) -> Result<Arc<[u8]>, StoreError> {
        self.entries
            .read()
            .unwrap()
            .get(key)
            .cloned()
            .ok_or_else(|| StoreError::KeyNotFound(key.clone()))
    }

    pub fn contains(&self, key: &Guid) -> bool {
        self.entries.read().unwrap().contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn keys(&self) -> Vec<Guid> {
        self.entries.read().unwrap().keys().cloned().collect()
    }

    /// Every (key, bytes) pair; used for before/after comparisons.
    pub fn snapshot(&self) -> BTreeMap<Guid, Vec<u8>> {
        self.entries
            .read()
            .unwrap()
            .iter()
            .map(|(k, v)| (k.clone(), v.to_vec()))
            .collect()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BinderError {
    #[error("binding name must be non-empty")]
    EmptyName,
    #[error("not bound: {0}")]
    NotBound(String),
    #[error("binder i/o: {0}")]
    Io(String),
}

/// A value a binder can hold and persist as text.
pub trait BindingValue: Clone + Send + Sync + 'static {
    fn encode(&self) -> String;
    fn decode(text: &str) -> Option<Self>;
}

impl BindingValue for Guid {
    fn encode(&self) -> String {
        self.to_string()
    }

    fn decode(text: &str) -> Option<Self> {
        Guid::parse(text).ok()
    }
}

/// Process-binder value: a running machine and where to reach it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MachineRef {
    pub machine_id: Guid,
    pub connector: Connector,
}

impl BindingValue for MachineRef {
    fn encode(&self) -> String {
        format!(
            "{} {} {} {}",
            self.machine_id, self.connector.host, self.connector.machine_port, self.connector.resource_port
        )
    }

    fn decode(text: &str) -> Option<Self> {
        let mut parts = text.split_whitespace();
        let machine_id = Guid::parse(parts.next()?).ok()?;
        let host = parts.next()?;
        let mp = parts.next()?.parse().ok()?;
        let rp = parts.next()?.parse().ok()?;
        Some(MachineRef {
            machine_id,
            connector: Connector::new(host, mp, rp).ok()?,
        })
    }
}

pub struct Binder<V> {
    kind: &'static str,
    path: Option<PathBuf>,
    bindings: RwLock<BTreeMap<String, V>>,
}

impl<V: BindingValue> Binder<V> {
    pub fn new(kind: &'static str) -> Self {
        Binder {
            kind,
            path: None,
            bindings: RwLock::new(BTreeMap::new()),
        }
    }

    /// Binder persisted as a whole document at `path` after every mutation.
    pub fn open(kind: &'static str, path: &Path) -> Result<Self, BinderError> {
        let mut bindings = BTreeMap::new();
        if path.exists() {
            let bytes = fs::read(path).map_err(|e| BinderError::Io(e.to_string()))?;
            let doc = Element::parse(&bytes).map_err(|e| BinderError::Io(e.to_string()))?;
            for b in doc.elements_named("BINDING") {
                if b.get_attr("binder") != Some(kind) {
                    continue;
                }
                let name = b.get_attr("name").unwrap_or_default();
                let value = V::decode(b.get_attr("value").unwrap_or_default())
                    .ok_or_else(|| BinderError::Io(format!("undecodable binding {name}")))?;
                bindings.insert(name.to_string(), value);
            }
        }
        Ok(Binder {
            kind,
            path: Some(path.to_path_buf()),
            bindings: RwLock::new(bindings),
        })
    }

    pub fn put(&self, name: &str, value: V) -> Result<(), BinderError> {
        if name.is_empty() {
            return Err(BinderError::EmptyName);
        }
        let mut map = self.bindings.write().unwrap();
        map.insert(name.to_string(), value);
        self.persist(&map)
    }

    pub fn get(&self, name: &str) -> Result<V, BinderError> {
        self.bindings
            .read()
            .unwrap()
            .get(name)
            .cloned()
            .ok_or_else(|| BinderError::NotBound(name.to_string()))
    }

    pub fn remove(&self, name: &str) -> Result<(), BinderError> {
        let mut map = self.bindings.write().unwrap();
        if map.remove(name).is_none() {
            return Err(BinderError::NotBound(name.to_string()));
        }
        self.persist(&map)
    }

    pub fn names(&self) -> Vec<String> {
        self.bindings.read().unwrap().keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.bindings.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn persist(&self, map: &BTreeMap<String, V>) -> Result<(), BinderError> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let mut doc = Element::new("BINDERS");
        for (name, value) in map {
            doc = doc.child(
                Element::new("BINDING")
                    .attr("binder", self.kind)
                    .attr("name", name)
                    .attr("value", value.encode()),
            );
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, doc.to_bytes()).map_err(|e| BinderError::Io(e.to_string()))?;
        fs::rename(&tmp, path).map_err(|e| BinderError::Io(e.to_string()))
    }
}

pub fn store_put(s: &Store, b: &Bundle) -> Result<Guid, StoreError> {
    s.put(b)
}

pub fn store_get(s: &Store, k: &Guid) -> Result<Bundle, StoreError> {
    s.get(k)
}
