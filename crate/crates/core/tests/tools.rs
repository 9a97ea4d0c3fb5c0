mod common;

use cingal_core::channel::{ChannelState, ControlRequest, DEFAULT_MAX_FRAME};
use cingal_core::deploy::{installer_bundle, runner_bundle, wirer_bundle, EngineConfig, WireSpec};
use cingal_core::runtime::{TaskReport, DEMO_SINK, DEMO_SOURCE};
use cingal_core::server::fire_remote;
use cingal_core::{Bundle, Connector, Guid};
use common::*;

fn fire(addr: &str, b: &Bundle) -> TaskReport {
    fire_remote(addr, b, T, DEFAULT_MAX_FRAME).unwrap().read_report(T).unwrap()
}

/// Installs and runs `bundle` on `n`, returning its machine and connector.
fn start(n: &TestNode, bundle: Bundle) -> (Guid, Connector) {
    let r = fire(&n.addr(), &installer_bundle(&deployer(), &[("payload".into(), bundle)]));
    let key = Guid::parse(r.results[0].get("payload").unwrap()).unwrap();
    let r = fire(&n.addr(), &runner_bundle(&deployer(), &[key]));
    assert!(r.all_ok(), "{r}");
    let res = &r.results[0];
    (Guid::parse(res.get("Machine").unwrap()).unwrap(), res.connector().unwrap())
}

#[test]
fn installer_reports_oracle_digests() {
    let n = node();
    let payloads: Vec<(String, Bundle)> = (0..3)
        .map(|i| (format!("urn:cingal:p{i}"), demo_bundle(DEMO_SOURCE, &format!("c{i}"))))
        .collect();
    let report = fire(&n.addr(), &installer_bundle(&deployer(), &payloads));
    assert!(report.all_ok(), "{report}");
    for ((id, b), r) in payloads.iter().zip(&report.results) {
        let oracle = format!("urn:cingal:{:x}", md5_oracle::compute(b.serialize()));
        assert_eq!(r.get(id), Some(oracle.as_str()));
    }
    assert_eq!(n.server.status().store_size(), 3);
}

#[test]
fn runner_reports_live_connectors_and_unknown_keys() {
    let n = node();
    let (machine, c) = start(&n, demo_bundle(DEMO_SOURCE, "out"));
    let st = n.server.status();
    let m = st.machine(&machine).unwrap();
    assert_eq!(m.connector, c);
    assert_eq!(m.channel("out"), Some(&ChannelState::Unbound));
    // the connector answers on its machine channel
    let mut ctl = cingal_core::channel::ControlClient::connect(&c.machine_addr(), T, DEFAULT_MAX_FRAME).unwrap();
    let resp = ctl.request(&ControlRequest::Status).unwrap();
    assert_eq!(resp.machine.as_deref(), Some(machine.as_str()));

    let r = fire(&n.addr(), &runner_bundle(&deployer(), &[Guid::random()]));
    assert!(r.results[0].error().unwrap().starts_with("KeyNotFound"), "{r}");
}

#[test]
fn wirer_uses_the_primary_listener_port() {
    let (a, b) = (node(), node());
    let (src_id, src) = start(&a, demo_bundle(DEMO_SOURCE, "DownstreamCache"));
    let (dst_id, dst) = start(&b, demo_bundle(DEMO_SINK, "UpstreamServer"));
    let spec = WireSpec {
        primary: src.clone(),
        secondary: dst.clone(),
        primary_channel: "DownstreamCache".into(),
        secondary_channel: "UpstreamServer".into(),
    };
    let r = fire(&a.addr(), &wirer_bundle(&deployer(), &[spec]));
    assert!(r.all_ok(), "{r}");

    let created: Vec<u16> = a
        .server
        .node()
        .control_log()
        .into_iter()
        .filter(|e| e.machine == src_id && matches!(&e.request, ControlRequest::Create { name } if name == "DownstreamCache"))
        .filter_map(|e| e.response.port)
        .collect();
    assert_eq!(created.len(), 1);
    let connects: Vec<(String, u16)> = b
        .server
        .node()
        .control_log()
        .into_iter()
        .filter(|e| e.machine == dst_id)
        .filter_map(|e| match e.request {
            ControlRequest::Connect { name, host, port } if name == "UpstreamServer" => Some((host, port)),
            _ => None,
        })
        .collect();
    assert_eq!(connects, [(src.host.clone(), created[0])]);

    let mut from = adopt(&src);
    let mut to = adopt(&dst);
    probe(&mut from, &mut to, b"wired");
}

#[test]
fn wirer_failure_leaves_the_primary_name_unbound() {
    let a = node();
    let (src_id, src) = start(&a, demo_bundle(DEMO_SOURCE, "DownstreamCache"));
    // a secondary connector nobody answers on
    let dead = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let spec = WireSpec {
        primary: src,
        secondary: Connector::new("127.0.0.1", dead, dead).unwrap(),
        primary_channel: "DownstreamCache".into(),
        secondary_channel: "UpstreamServer".into(),
    };
    let r = fire(&a.addr(), &wirer_bundle(&deployer(), &[spec]));
    assert!(!r.all_ok());
    let st = a.server.status();
    assert_eq!(st.machine(&src_id).unwrap().channel("DownstreamCache"), Some(&ChannelState::Unbound));
}

#[test]
fn named_channel_blocks_until_third_party_wiring() {
    let (a, b) = (node(), node());
    let (_, src) = start(&a, demo_bundle(DEMO_SOURCE, "DownstreamCache"));
    let (_, dst) = start(&b, demo_bundle(DEMO_SINK, "UpstreamServer"));
    let mut from = adopt(&src);
    let mut to = adopt(&dst);
    // the source reads the message and blocks writing to its unwired channel
    cingal_core::channel::write_frame(&mut from, b"early", DEFAULT_MAX_FRAME).unwrap();
    to.set_read_timeout(Some(std::time::Duration::from_millis(300))).unwrap();
    assert!(cingal_core::channel::read_frame(&mut to, DEFAULT_MAX_FRAME).is_err());

    let spec = WireSpec {
        primary: src,
        secondary: dst,
        primary_channel: "DownstreamCache".into(),
        secondary_channel: "UpstreamServer".into(),
    };
    assert!(fire(&a.addr(), &wirer_bundle(&deployer(), &[spec])).all_ok());
    to.set_read_timeout(Some(T)).unwrap();
    assert_eq!(cingal_core::channel::read_frame(&mut to, DEFAULT_MAX_FRAME).unwrap().unwrap(), b"early");
}

#[test]
fn parallel_and_sequential_wiring_agree() {
    use cingal_core::deploy::{BundleSource, Connection, Ddd, Deployment, Endpoint, Engine, Host};
    let (a, b) = (node(), node());
    let cat = catalogue();
    let mut ddd = Ddd {
        name: "Quad".into(),
        bundles: vec![
            BundleSource { name: "Server".into(), source: "server.xml".into() },
            BundleSource { name: "Cache".into(), source: "cache.xml".into() },
        ],
        hosts: vec![
            Host { id: "A".into(), address: a.addr() },
            Host { id: "B".into(), address: b.addr() },
        ],
        deployments: Vec::new(),
        connections: Vec::new(),
    };
    for i in 0..4 {
        let (sh, dh) = if i % 2 == 0 { ("A", "B") } else { ("B", "A") };
        ddd.deployments.push(Deployment { name: format!("S{i}"), bundle: "Server".into(), target: sh.into() });
        ddd.deployments.push(Deployment { name: format!("C{i}"), bundle: "Cache".into(), target: dh.into() });
        ddd.connections.push(Connection::new(
            Endpoint::new(format!("S{i}"), "DownstreamCache"),
            Endpoint::new(format!("C{i}"), "UpstreamServer"),
        ));
    }
    let run = |parallel: bool| {
        let cfg = EngineConfig {
            catalogue: Some(cat.path().to_path_buf()),
            parallel_wiring: parallel,
            ..EngineConfig::default()
        };
        Engine::new(deployer(), cfg).deploy(&ddd).unwrap()
    };
    let par = run(true);
    let seq = run(false);
    assert_eq!(par.summary(), seq.summary());
    assert!(par.summary().iter().filter(|l| l.contains("state=wired")).count() == 8);
}
