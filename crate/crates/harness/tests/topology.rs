use std::collections::BTreeSet;
use std::time::Duration;

use cingal_core::channel::DEFAULT_MAX_FRAME;
use cingal_core::runtime::FireError;
use cingal_core::security::{PrivateKey, Signer};
use cingal_core::server::fire_remote;
use cingal_core::{BundleDraft, Datum, EntityId};
use cingal_core::deploy::builtin_code;
use cingal_harness::{demo_source, TestTopology};

const T: Duration = Duration::from_secs(5);

#[test]
fn fresh_nodes_run_nothing() {
    let t = TestTopology::spawn(2).unwrap();
    for n in &t.nodes {
        let st = n.status().unwrap();
        assert!(st.machines.is_empty(), "{} runs {:?}", n.id, st.machines);
    }
    let ids: Vec<&str> = t.nodes.iter().map(|n| n.id.as_str()).collect();
    assert_eq!(ids, ["A", "B"]);
}

#[test]
fn nodes_listen_on_distinct_ports() {
    let t = TestTopology::spawn(3).unwrap();
    let addrs: BTreeSet<String> = t.addresses().into_iter().collect();
    assert_eq!(addrs.len(), 3);
    for n in &t.nodes {
        assert_eq!(n.status().unwrap().fire_port.to_string(), n.fire_addr().rsplit(':').next().unwrap());
    }
}

#[test]
fn unprovisioned_signer_is_refused() {
    let t = TestTopology::spawn(1).unwrap();
    let outsider = Signer::new(EntityId::new("outsider").unwrap(), PrivateKey::from_seed([7; 32]));
    let b = outsider.sign(BundleDraft::new(builtin_code("demo.Source")).with_datum(Datum::text("Channel", "x")));
    let r = fire_remote(t.nodes[0].fire_addr(), &b, T, DEFAULT_MAX_FRAME);
    assert!(matches!(r, Err(FireError::UnknownEntity(_))), "{:?}", r.err());
    // the pre-provisioned deployer is accepted
    let m = fire_remote(t.nodes[0].fire_addr(), &demo_source(), T, DEFAULT_MAX_FRAME).unwrap();
    drop(m);
    t.await_quiesce(1, T).unwrap();
}

#[test]
fn restart_keeps_the_address_book() {
    let mut t = TestTopology::spawn(1).unwrap();
    let before = t.nodes[0].status().unwrap();
    t.nodes[0].restart().unwrap();
    let after = t.nodes[0].status().unwrap();
    assert_eq!(before.store_keys, after.store_keys);
    let m = fire_remote(t.nodes[0].fire_addr(), &demo_source(), T, DEFAULT_MAX_FRAME);
    assert!(m.is_ok(), "deployer lost after restart: {:?}", m.err());
}
