use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use cingal_core::channel::DEFAULT_MAX_FRAME;
use cingal_core::deploy::{ComponentState, Observer};
use cingal_core::server::{query_status, NodeStatus};
use cingal_core::Guid;

/// A component's state as visible in node statuses: wired when its
/// machine's channels are all CONNECTED, running when the machine exists,
/// installed when only the store holds its bundle. The most advanced
/// state across nodes wins, which covers a move in progress.
pub fn derive_state<'a>(statuses: impl IntoIterator<Item = &'a NodeStatus>, key: &Guid) -> ComponentState {
    let mut best = ComponentState::Pending;
    for st in statuses {
        for m in st.machines.iter().filter(|m| m.bundle_key.as_ref() == Some(key)) {
            let wired = !m.channels.is_empty() && m.channels.iter().all(|(_, s)| s.is_connected());
            best = best.max(if wired { ComponentState::Wired } else { ComponentState::Running });
        }
        if best == ComponentState::Pending && st.store_keys.contains(key) {
            best = ComponentState::Installed;
        }
    }
    best
}

/// Every step moves exactly one state up or down the lifecycle.
pub fn is_legal_path(states: &[ComponentState]) -> bool {
    states
        .windows(2)
        .all(|w| (w[0] as i32 - w[1] as i32).abs() == 1)
}

/// Records, per tracked component, the distinct states seen in node
/// statuses taken at every engine event.
pub struct StateTrace {
    addrs: Mutex<Vec<String>>,
    tracked: Vec<(String, Guid)>,
    seen: Mutex<BTreeMap<String, Vec<ComponentState>>>,
    errors: Mutex<Vec<String>>,
}

impl StateTrace {
    pub fn new(addrs: Vec<String>, tracked: Vec<(String, Guid)>) -> Arc<Self> {
        Arc::new(StateTrace {
            addrs: Mutex::new(addrs),
            tracked,
            seen: Mutex::new(BTreeMap::new()),
            errors: Mutex::new(Vec::new()),
        })
    }

    pub fn set_addresses(&self, addrs: Vec<String>) {
        *self.addrs.lock().unwrap() = addrs;
    }

    pub fn snapshot(&self) {
        // Events arrive from the engine's per-host threads; querying and
        // recording under one lock keeps the trace in query order.
        let mut seen = self.seen.lock().unwrap();
        let addrs = self.addrs.lock().unwrap().clone();
        let mut statuses = Vec::new();
        for a in &addrs {
            match query_status(a, Duration::from_secs(5), DEFAULT_MAX_FRAME) {
                Ok(s) => statuses.push(s),
                Err(e) => {
                    // a partial view would misread components as pending
                    self.errors.lock().unwrap().push(format!("{a}: {e}"));
                    return;
                }
            }
        }
        for (name, key) in &self.tracked {
            let s = derive_state(&statuses, key);
            let v = seen.entry(name.clone()).or_default();
            if v.last() != Some(&s) {
                v.push(s);
            }
        }
    }

    pub fn observer(self: &Arc<Self>) -> Observer {
        let me = self.clone();
        Arc::new(move |_| me.snapshot())
    }

    pub fn sequence(&self, name: &str) -> Vec<ComponentState> {
        self.seen.lock().unwrap().get(name).cloned().unwrap_or_default()
    }

    /// Forgets history, keeping each component's latest state.
    pub fn reset(&self) {
        for v in self.seen.lock().unwrap().values_mut() {
            let last = v.pop();
            v.clear();
            v.extend(last);
        }
    }

    pub fn errors(&self) -> Vec<String> {
        self.errors.lock().unwrap().clone()
    }
}
