#![allow(dead_code)]

use std::fs;
use std::path::Path;
use std::time::Duration;

use cingal_core::channel::{ControlClient, ControlRequest, DEFAULT_MAX_FRAME};
use cingal_core::deploy::{builtin_code, parse_ddd, Ddd, Engine, EngineConfig};
use cingal_core::runtime::{DEMO_SINK, DEMO_SOURCE};
use cingal_core::security::{EntityRecord, PrivateKey, RightSet, Signer};
use cingal_core::server::{NodeConfig, ThinServer};
use cingal_core::{Bundle, BundleDraft, Connector, Datum, EntityId};
use tempfile::TempDir;

pub const T: Duration = Duration::from_secs(5);

pub fn admin() -> Signer {
    Signer::new(EntityId::new("admin").unwrap(), PrivateKey::from_seed([1; 32]))
}

pub fn deployer() -> Signer {
    Signer::new(EntityId::new("deployer").unwrap(), PrivateKey::from_seed([2; 32]))
}

pub struct TestNode {
    pub server: ThinServer,
    pub dir: TempDir,
}

impl TestNode {
    pub fn addr(&self) -> String {
        self.server.fire_addr().to_string()
    }
}

pub fn config(dir: &Path) -> NodeConfig {
    let a = admin();
    NodeConfig::new(dir.join("data"), &a.entity, &a.certificate())
}

/// A loopback node with the deployer granted `rights`.
pub fn node_with(rights: RightSet) -> TestNode {
    let dir = TempDir::new().unwrap();
    let server = ThinServer::start(&config(dir.path())).unwrap();
    grant(&server, &deployer(), rights);
    TestNode { server, dir }
}

pub fn node() -> TestNode {
    node_with(RightSet::all())
}

pub fn grant(server: &ThinServer, who: &Signer, rights: RightSet) {
    server
        .node()
        .ver()
        .add(
            &admin().entity,
            EntityRecord {
                entity: who.entity.clone(),
                certificate: who.certificate(),
                rights,
            },
        )
        .unwrap();
}

pub fn demo_bundle(entry: &str, channel: &str) -> Bundle {
    deployer().sign(BundleDraft::new(builtin_code(entry)).with_datum(Datum::text("Channel", channel)))
}

/// Catalogue holding `server.xml` (a source on DownstreamCache) and
/// `cache.xml` (a sink on UpstreamServer).
pub fn catalogue() -> TempDir {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("server.xml"), demo_bundle(DEMO_SOURCE, "DownstreamCache").serialize()).unwrap();
    fs::write(dir.path().join("cache.xml"), demo_bundle(DEMO_SINK, "UpstreamServer").serialize()).unwrap();
    dir
}

pub fn fixture(name: &str) -> Vec<u8> {
    fs::read(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)).unwrap()
}

/// The checked-in caching-server DDD with hosts pointed at `addrs` in order.
pub fn caching_server_on(addrs: &[String]) -> Ddd {
    let mut ddd = parse_ddd(&fixture("caching_server_ddd.xml")).unwrap();
    for (h, a) in ddd.hosts.iter_mut().zip(addrs) {
        h.address = a.clone();
    }
    ddd
}

pub fn engine(catalogue: &Path) -> Engine {
    Engine::new(
        deployer(),
        EngineConfig {
            catalogue: Some(catalogue.to_path_buf()),
            ..EngineConfig::default()
        },
    )
}

/// Takes over a machine's parked default channel.
pub fn adopt(c: &Connector) -> std::net::TcpStream {
    let mut ctl = ControlClient::connect(&c.machine_addr(), T, DEFAULT_MAX_FRAME).unwrap();
    ctl.request(&ControlRequest::Adopt).unwrap();
    ctl.into_stream()
}

/// Writes `msg` into `from`'s default channel and expects it on `to`'s.
pub fn probe(from: &mut std::net::TcpStream, to: &mut std::net::TcpStream, msg: &[u8]) {
    use cingal_core::channel::{read_frame, write_frame};
    write_frame(from, msg, DEFAULT_MAX_FRAME).unwrap();
    to.set_read_timeout(Some(T)).unwrap();
    let got = read_frame(to, DEFAULT_MAX_FRAME).unwrap().unwrap();
    assert_eq!(got, msg);
}

/// Waits until only `keep` machines remain on the node (tool machines
/// unregister just after sending their report).
pub fn quiesce(server: &ThinServer, keep: usize) {
    let deadline = std::time::Instant::now() + T;
    while server.status().machines.len() > keep {
        assert!(std::time::Instant::now() < deadline, "node never quiesced");
        std::thread::sleep(Duration::from_millis(5));
    }
}
