//! Small components for exercising wiring end to end.
//!
//! `demo.Source` forwards whatever arrives on its default channel to the
//! named channel given by its `Channel` datum; `demo.Sink` forwards its
//! named channel to its default channel; `demo.Echo` echoes its default
//! channel.

use std::sync::Arc;

use super::machine::MachineApi;
use super::registry::{Executor, ExecutorRegistry};
use super::ApiError;
use crate::bundle::Bundle;

pub const DEMO_ECHO: &str = "demo.Echo";
pub const DEMO_SOURCE: &str = "demo.Source";
pub const DEMO_SINK: &str = "demo.Sink";

const CHANNEL_DATUM: &str = "Channel";

pub(super) fn register(r: &ExecutorRegistry) {
    r.register_fn(DEMO_ECHO, |_, api| {
        let ch = api.default_channel();
        loop {
            let m = ch.read()?;
            ch.write(m)?;
        }
    })
    .expect("fresh registry");
    r.register(DEMO_SOURCE, Arc::new(Forwarder { outbound: true }))
        .expect("fresh registry");
    r.register(DEMO_SINK, Arc::new(Forwarder { outbound: false }))
        .expect("fresh registry");
}

fn channel_name(bundle: &Bundle) -> String {
    bundle
        .datum(CHANNEL_DATUM)
        .map(|d| d.text_value())
        .unwrap_or_else(|_| "out".to_string())
}

struct Forwarder {
    outbound: bool,
}

impl Executor for Forwarder {
    fn prepare(&self, bundle: &Bundle, api: &MachineApi) {
        api.named_channel(&channel_name(bundle));
    }

    fn run(&self, bundle: &Bundle, api: &MachineApi) -> Result<(), ApiError> {
        let named = api.named_channel(&channel_name(bundle));
        let default = api.default_channel();
        loop {
            if self.outbound {
                let m = default.read()?;
                named.write(&m)?;
            } else {
                let m = named.read()?;
                default.write(m)?;
            }
        }
    }
}
