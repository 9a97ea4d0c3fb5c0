use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use thiserror::Error;

use super::machine::MachineApi;
use super::{demo, tools, ApiError, FireError};
use crate::bundle::{Bundle, CodeSection};

/// The only code type executed: behaviors compiled into the node.
pub const BUILTIN_CODE_TYPE: &str = "builtin";

/// Behavior behind a code entry point.
pub trait Executor: Send + Sync {
    /// Runs before the spawn returns, e.g. to declare named channels so they
    /// are visible to status queries as soon as the machine exists.
    fn prepare(&self, _bundle: &Bundle, _api: &MachineApi) {}

    fn run(&self, bundle: &Bundle, api: &MachineApi) -> Result<(), ApiError>;
}

struct FnExecutor<F>(F);

impl<F> Executor for FnExecutor<F>
where
    F: Fn(&Bundle, &MachineApi) -> Result<(), ApiError> + Send + Sync,
{
    fn run(&self, bundle: &Bundle, api: &MachineApi) -> Result<(), ApiError> {
        (self.0)(bundle, api)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegistryError {
    #[error("entry point already registered: {0}")]
    DuplicateEntry(String),
}

#[derive(Default)]
pub struct ExecutorRegistry {
    entries: RwLock<HashMap<String, Arc<dyn Executor>>>,
}

impl ExecutorRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Installer, runner, wirer and the entity-admin tool.
    pub fn builtin() -> Self {
        let r = Self::empty();
        tools::register(&r);
        r
    }

    /// The tools plus the demo components.
    pub fn standard() -> Self {
        let r = Self::builtin();
        demo::register(&r);
        r
    }

    pub fn register(&self, entry: &str, executor: Arc<dyn Executor>) -> Result<(), RegistryError> {
        let mut map = self.entries.write().unwrap();
        if map.contains_key(entry) {
            return Err(RegistryError::DuplicateEntry(entry.to_string()));
        }
        map.insert(entry.to_string(), executor);
        Ok(())
    }

    pub fn register_fn<F>(&self, entry: &str, f: F) -> Result<(), RegistryError>
    where
        F: Fn(&Bundle, &MachineApi) -> Result<(), ApiError> + Send + Sync + 'static,
    {
        self.register(entry, Arc::new(FnExecutor(f)))
    }

    pub fn contains(&self, entry: &str) -> bool {
        self.entries.read().unwrap().contains_key(entry)
    }

    pub fn entries(&self) -> Vec<String> {
        let mut v: Vec<_> = self.entries.read().unwrap().keys().cloned().collect();
        v.sort();
        v
    }

    pub fn lookup(&self, code: &CodeSection) -> Result<Arc<dyn Executor>, FireError> {
        if code.code_type != BUILTIN_CODE_TYPE {
            return Err(FireError::UnknownEntryPoint(format!(
                "{} (code type {} is not executable here)",
                code.entry, code.code_type
            )));
        }
        self.entries
            .read()
            .unwrap()
            .get(&code.entry)
            .cloned()
            .ok_or_else(|| FireError::UnknownEntryPoint(code.entry.clone()))
    }
}
