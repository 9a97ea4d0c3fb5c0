//! The eight acceptance criteria, one PASS/FAIL line each. Exits non-zero
//! when any criterion fails.

use std::collections::{BTreeSet, HashMap};
use std::net::TcpStream;
use std::panic;
use std::process::ExitCode;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use cingal_core::channel::{
    read_frame, write_frame, ChannelState, ControlClient, ControlRequest, NamedChannelTable, DEFAULT_MAX_FRAME,
};
use cingal_core::deploy::{
    builtin_code, generate_todolist, installer_bundle, parse_ddd, BundleSource, ComponentState, Connection, Ddd,
    Deployment, DeploymentRecord, Endpoint, Engine, EngineConfig, EngineEvent, Host, Phase, PhaseInputs, WireSpec,
};
use cingal_core::runtime::{FireError, ToDoList};
use cingal_core::security::{PrivateKey, Right, RightSet, Service, Signer};
use cingal_core::server::{fire_document, fire_remote};
use cingal_core::store::{Binder, BinderError, Store};
use cingal_core::xml::Element;
use cingal_core::{Bundle, BundleDraft, Connector, Datum, DigestAlgorithm, EntityId, Guid};
use cingal_harness::{deployer_signer, is_legal_path, Probes, StateTrace, TestTopology};
use proptest::strategy::{Strategy, ValueTree};
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

const T: Duration = Duration::from_secs(5);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("caching-server-end-to-end", caching_server_end_to_end),
        ("security-gate", security_gate),
        ("content-store-properties", content_store),
        ("binder-contract", binder_contract),
        ("channel-semantics", channel_semantics),
        ("state-machine-and-evolution", state_machine),
        ("wiring-protocol", wiring_protocol),
        ("canonical-format-fidelity", canonical_formats),
    ];
    // keep panics from tearing through the report lines
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = panic::catch_unwind(f).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let took = start.elapsed();
        match outcome {
            Ok(detail) => println!("PASS {} {name} ({took:.2?}): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {} {name} ({took:.2?}): {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

/// Digest oracle independent of the store implementation.
fn md5_key(bytes: &[u8]) -> Guid {
    Guid::parse(&format!("urn:cingal:{:x}", md5_oracle::compute(bytes))).unwrap()
}

fn catalogue_keys(t: &TestTopology) -> Result<(Guid, Guid), String> {
    let read = |f: &str| std::fs::read(t.catalogue().join(f)).map_err(e);
    Ok((md5_key(&read("server.xml")?), md5_key(&read("cache.xml")?)))
}

fn recording(engine: Engine) -> (Engine, Arc<Mutex<Vec<EngineEvent>>>) {
    let log: Arc<Mutex<Vec<EngineEvent>>> = Arc::default();
    let l = log.clone();
    (engine.with_observer(Arc::new(move |ev: &EngineEvent| l.lock().unwrap().push(ev.clone()))), log)
}

fn connector(r: &DeploymentRecord, name: &str) -> Result<Connector, String> {
    r.deployment(name)
        .and_then(|d| d.connector.clone())
        .ok_or_else(|| format!("{name} has no connector"))
}

fn caching_server_end_to_end() -> Outcome {
    let start = Instant::now();
    let t = TestTopology::spawn(2).map_err(e)?;
    let (server_key, cache_key) = catalogue_keys(&t)?;
    let (engine, log) = recording(t.engine());
    let record = engine.deploy(&t.caching_server()).map_err(e)?;
    let events = log.lock().unwrap().clone();

    let phases: Vec<Phase> = events
        .iter()
        .filter_map(|ev| match ev {
            EngineEvent::Progress { phase, ok: true, .. } => Some(*phase),
            _ => None,
        })
        .collect();
    ensure!(
        phases == [Phase::Install, Phase::Install, Phase::Run, Phase::Run, Phase::Wire],
        "phase order {phases:?}"
    );

    let installed: BTreeSet<Guid> = events
        .iter()
        .filter_map(|ev| match ev {
            EngineEvent::Report { phase: Phase::Install, report, .. } => Some(report),
            _ => None,
        })
        .flat_map(|r| r.results.iter().flat_map(|res| res.info.iter().map(|(_, v)| v.clone())))
        .map(|k| Guid::parse(&k).map_err(e))
        .collect::<Result<_, _>>()?;
    ensure!(
        installed == BTreeSet::from([server_key.clone(), cache_key.clone()]),
        "installer keys {installed:?} differ from the digest oracle"
    );

    let mut live = 0;
    for ev in &events {
        if let EngineEvent::Report { phase: Phase::Run, report, .. } = ev {
            for res in &report.results {
                let c = res.connector().ok_or("runner report without connector")?;
                let mut ctl = ControlClient::connect(&c.machine_addr(), T, DEFAULT_MAX_FRAME).map_err(e)?;
                let resp = ctl.request(&ControlRequest::Status).map_err(e)?;
                ensure!(resp.machine.as_deref() == res.get("Machine"), "connector {c} answers for another machine");
                live += 1;
            }
        }
    }
    ensure!(live == 2, "{live} live connectors");

    for (node, dep, channel) in [(0, "PrimaryServer", "DownstreamCache"), (1, "CachingServer", "UpstreamServer")] {
        let d = record.deployment(dep).ok_or("missing deployment")?;
        let st = t.nodes[node].status().map_err(e)?;
        let m = st
            .machine(d.machine.as_ref().ok_or("no machine")?)
            .ok_or_else(|| format!("{dep} absent from node {}", t.nodes[node].id))?;
        ensure!(m.bundle_key.as_ref() == d.store_key.as_ref(), "{dep} runs another bundle");
        ensure!(
            matches!(m.channel(channel), Some(ChannelState::Connected(_))),
            "{dep}.{channel} is {:?}",
            m.channel(channel)
        );
    }

    let latency = Probes::new()
        .check(
            &connector(&record, "PrimaryServer")?,
            &connector(&record, "CachingServer")?,
            b"probe: DownstreamCache -> UpstreamServer",
            T,
        )
        .map_err(e)?;
    let total = start.elapsed();
    ensure!(total < Duration::from_secs(30), "took {total:?}");
    Ok(format!("2 hosts wired, probe latency {latency:.2?}, total {total:.2?}"))
}

fn stranger() -> Signer {
    Signer::new(EntityId::new("stranger").unwrap(), PrivateKey::from_seed([0x5E; 32]))
}

fn echo_bundle(by: &Signer) -> Bundle {
    by.sign(BundleDraft::new(builtin_code("demo.Echo")).with_datum(Datum::text("Channel", "x")))
}

fn security_gate() -> Outcome {
    let t = TestTopology::spawn(1).map_err(e)?;
    let node = &t.nodes[0];
    let server = node.server().ok_or("in-process node expected")?;
    let store = || server.node().store().snapshot();
    let addr = node.fire_addr();

    // (a) unknown entity
    let start = Instant::now();
    let before = store();
    let tool = installer_bundle(&stranger(), &[("p".into(), echo_bundle(&deployer_signer()))]);
    let r = fire_remote(addr, &tool, T, DEFAULT_MAX_FRAME);
    ensure!(matches!(r, Err(FireError::UnknownEntity(_))), "(a) fire gave {:?}", r.err());
    ensure!(node.status().map_err(e)?.machines.is_empty(), "(a) machines were created");
    ensure!(store() == before, "(a) store changed");
    let a = start.elapsed();
    ensure!(a < T, "(a) took {a:?}");

    // (b) one flipped byte inside CODE
    let start = Instant::now();
    let doc = installer_bundle(&deployer_signer(), &[]).serialize();
    let code = find(&doc, b"<CODE").ok_or("no CODE")?;
    let at = code + find(&doc[code..], b"Installer").ok_or("no entry")?;
    let mut tampered = doc.clone();
    tampered[at] ^= 0x20;
    let r = fire_document(addr, &tampered, T, DEFAULT_MAX_FRAME);
    ensure!(matches!(r, Err(FireError::BadSignature(_))), "(b) fire gave {:?}", r.err());
    ensure!(node.status().map_err(e)?.machines.is_empty(), "(b) machines were created");
    let b = start.elapsed();
    ensure!(b < T, "(b) took {b:?}");

    // (c) FIRE without STORE:PUT
    let start = Instant::now();
    let limited = stranger();
    server
        .node()
        .ver()
        .add(
            &cingal_harness::admin_signer().entity,
            cingal_core::security::EntityRecord {
                entity: limited.entity.clone(),
                certificate: limited.certificate(),
                rights: RightSet::empty().with(Service::Fire, Right::Fire),
            },
        )
        .map_err(e)?;
    let before = store();
    let tool = installer_bundle(&limited, &[("p".into(), echo_bundle(&deployer_signer()))]);
    let report = fire_remote(addr, &tool, T, DEFAULT_MAX_FRAME)
        .and_then(|mut m| m.read_report(T))
        .map_err(e)?;
    let res = report.results.first().ok_or("(c) empty report")?;
    ensure!(
        !res.is_ok() && res.error().is_some_and(|m| m.starts_with("CapabilityDenied")),
        "(c) report {report}"
    );
    ensure!(store() == before, "(c) store changed");
    let c = start.elapsed();
    ensure!(c < T, "(c) took {c:?}");
    Ok(format!("(a) {a:.2?} (b) {b:.2?} (c) {c:.2?}"))
}

fn find(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}

fn arb_bundle() -> impl Strategy<Value = Bundle> {
    let signer = deployer_signer();
    ("[a-z][a-zA-Z.]{0,16}", "[ -~]{0,64}", 0usize..4).prop_map(move |(entry, payload, extra)| {
        let mut d = BundleDraft::new(builtin_code(&entry)).with_datum(Datum::text("Payload", payload));
        for i in 0..extra {
            d = d.with_datum(Datum::text(format!("x{i}"), i.to_string()));
        }
        signer.sign(d)
    })
}

fn content_store() -> Outcome {
    const CASES: u32 = 1000;
    let mut runner = TestRunner::new(Config {
        cases: CASES,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&arb_bundle(), |b| {
            let s = Store::in_memory(DigestAlgorithm::Md5);
            let k = s.put(&b).unwrap();
            proptest::prop_assert_eq!(&k, &md5_key(&b.serialize()));
            proptest::prop_assert_eq!(&s.get(&k).unwrap(), &b);
            proptest::prop_assert_eq!(s.put(&b).unwrap(), k);
            proptest::prop_assert_eq!(s.len(), 1);
            Ok(())
        })
        .map_err(|f| format!("get/put property: {f}"))?;

    // distinctness and restart, through a daemon
    let mut t = TestTopology::spawn(1).map_err(e)?;
    let mut bundles = Vec::new();
    for _ in 0..CASES {
        bundles.push(arb_bundle().new_tree(&mut runner).map_err(e)?.current());
    }
    let contents: BTreeSet<Vec<u8>> = bundles.iter().map(Bundle::serialize).collect();
    let payloads: Vec<(String, Bundle)> = bundles
        .iter()
        .enumerate()
        .map(|(i, b)| (format!("p{i}"), b.clone()))
        .collect();
    let addr = t.nodes[0].fire_addr().to_string();
    let report = fire_remote(&addr, &installer_bundle(&deployer_signer(), &payloads), T, DEFAULT_MAX_FRAME)
        .and_then(|mut m| m.read_report(T * 6))
        .map_err(e)?;
    ensure!(report.all_ok(), "installer failed: {:?}", report.first_failure());
    let keys: BTreeSet<String> = report
        .results
        .iter()
        .zip(&payloads)
        .map(|(r, (id, _))| r.get(id).unwrap_or_default().to_string())
        .collect();
    ensure!(keys.len() == contents.len(), "{} keys for {} distinct contents", keys.len(), contents.len());
    let size = t.nodes[0].status().map_err(e)?.store_size();
    ensure!(size == contents.len(), "store holds {size}, expected {}", contents.len());

    t.nodes[0].restart().map_err(e)?;
    let store = t.nodes[0].server().ok_or("in-process node expected")?.node().store();
    for b in &bundles {
        let bytes = b.serialize();
        let got = store.get_bytes(&md5_key(&bytes)).map_err(e)?;
        ensure!(got[..] == bytes[..], "content changed across restart");
    }
    ensure!(store.len() == contents.len(), "store size changed across restart");
    Ok(format!("{CASES} cases, {} distinct contents survived restart", contents.len()))
}

fn binder_contract() -> Outcome {
    const OPS: usize = 10_000;
    let t = TestTopology::spawn(1).map_err(e)?;
    let daemon = t.nodes[0].server().ok_or("in-process node expected")?.node().sbinder();
    let scratch: Binder<Guid> = Binder::new("store");
    let mut model: HashMap<String, Guid> = HashMap::new();
    let mut rng = rand::rngs::StdRng::seed_from_u64(0xB1DE);
    let values: Vec<Guid> = (0..32).map(|_| Guid::random()).collect();
    for i in 0..OPS {
        let name = format!("name-{}", rng.gen_range(0..100));
        let value = values[rng.gen_range(0..values.len())].clone();
        let op = rng.gen_range(0..3);
        for b in [daemon, &scratch] {
            match op {
                0 => {
                    b.put(&name, value.clone()).map_err(e)?;
                    let got = b.get(&name).map_err(e)?;
                    ensure!(got == value, "op {i}: rebinding {name} not visible");
                }
                1 => {
                    let got = b.get(&name);
                    let want = model.get(&name).cloned().ok_or(BinderError::NotBound(name.clone()));
                    ensure!(got == want, "op {i}: get {name} gave {got:?}, model {want:?}");
                }
                _ => {
                    let got = b.remove(&name);
                    let want = if model.contains_key(&name) {
                        Ok(())
                    } else {
                        Err(BinderError::NotBound(name.clone()))
                    };
                    ensure!(got == want, "op {i}: remove {name} gave {got:?}");
                    let again = b.get(&name);
                    ensure!(again == Err(BinderError::NotBound(name.clone())), "op {i}: {name} still bound");
                }
            }
        }
        match op {
            0 => {
                model.insert(name, value);
            }
            2 => {
                model.remove(&name);
            }
            _ => {}
        }
        ensure!(daemon.len() == model.len(), "op {i}: {} bindings, model {}", daemon.len(), model.len());
    }
    Ok(format!("{OPS} operations, {} names bound at the end", model.len()))
}

fn adopt(c: &Connector) -> Result<TcpStream, String> {
    let mut ctl = ControlClient::connect(&c.machine_addr(), T, DEFAULT_MAX_FRAME).map_err(e)?;
    ctl.request(&ControlRequest::Adopt).map_err(e)?;
    Ok(ctl.into_stream())
}

fn channel_semantics() -> Outcome {
    const N: u32 = 10_000;
    let t = TestTopology::spawn(2).map_err(e)?;

    // concurrent writer and reader across a deployed, wired pair
    let record = t.engine().deploy(&t.caching_server()).map_err(e)?;
    let mut tx = adopt(&connector(&record, "PrimaryServer")?)?;
    let mut rx = adopt(&connector(&record, "CachingServer")?)?;
    rx.set_read_timeout(Some(T)).map_err(e)?;
    let writer = thread::spawn(move || {
        for i in 0..N {
            write_frame(&mut tx, &i.to_be_bytes(), DEFAULT_MAX_FRAME).unwrap();
        }
        tx
    });
    for i in 0..N {
        let m = read_frame(&mut rx, DEFAULT_MAX_FRAME).map_err(e)?.ok_or("stream closed")?;
        ensure!(m == i.to_be_bytes(), "message {i} arrived as {m:?}");
    }
    let _tx = writer.join().map_err(|_| "writer panicked")?;

    // both directions at once on a bare pair of named channels
    let a = NamedChannelTable::new("127.0.0.1", DEFAULT_MAX_FRAME, T);
    let b = NamedChannelTable::new("127.0.0.1", DEFAULT_MAX_FRAME, T);
    let port = a.create("up").map_err(e)?;
    b.connect("down", "127.0.0.1", port).map_err(e)?;
    let pump = |from: Arc<NamedChannelTable>, fname: &'static str, to: Arc<NamedChannelTable>, tname: &'static str| {
        let w = thread::spawn(move || {
            for i in 0..N {
                from.write(fname, &i.to_be_bytes()).unwrap();
            }
        });
        thread::spawn(move || {
            for i in 0..N {
                if to.read(tname).unwrap() != i.to_be_bytes() {
                    return Err(format!("{tname}: reordered at {i}"));
                }
            }
            w.join().unwrap();
            Ok(())
        })
    };
    let ab = pump(a.clone(), "up", b.clone(), "down");
    let ba = pump(b.clone(), "down", a.clone(), "up");
    ab.join().map_err(|_| "reader panicked")??;
    ba.join().map_err(|_| "reader panicked")??;

    // blocked until a third party wires the channel through machine channels
    let mut ddd = t.caching_server();
    ddd.connections.clear();
    let record = t.engine().deploy(&ddd).map_err(e)?;
    let (src, dst) = (connector(&record, "PrimaryServer")?, connector(&record, "CachingServer")?);
    let mut tx = adopt(&src)?;
    let mut rx = adopt(&dst)?;
    write_frame(&mut tx, b"early", DEFAULT_MAX_FRAME).map_err(e)?;
    rx.set_read_timeout(Some(Duration::from_millis(300))).map_err(e)?;
    ensure!(read_frame(&mut rx, DEFAULT_MAX_FRAME).is_err(), "message crossed an unwired channel");
    let mut ca = ControlClient::connect(&src.machine_addr(), T, DEFAULT_MAX_FRAME).map_err(e)?;
    let port = ca
        .request(&ControlRequest::Create { name: "DownstreamCache".into() })
        .map_err(e)?
        .port
        .ok_or("create returned no port")?;
    let mut cb = ControlClient::connect(&dst.machine_addr(), T, DEFAULT_MAX_FRAME).map_err(e)?;
    cb.request(&ControlRequest::Connect {
        name: "UpstreamServer".into(),
        host: src.host.clone(),
        port,
    })
    .map_err(e)?;
    rx.set_read_timeout(Some(T)).map_err(e)?;
    let got = read_frame(&mut rx, DEFAULT_MAX_FRAME).map_err(e)?.ok_or("stream closed")?;
    ensure!(got == b"early", "read {got:?} after wiring");
    Ok(format!("{N} ordered messages per direction; blocked I/O completed after external wiring"))
}

fn state_machine() -> Outcome {
    use ComponentState::*;
    let start = Instant::now();
    let t = TestTopology::spawn(3).map_err(e)?;
    let (server_key, cache_key) = catalogue_keys(&t)?;
    let trace = StateTrace::new(
        t.addresses(),
        vec![("PrimaryServer".into(), server_key), ("CachingServer".into(), cache_key)],
    );
    let engine = t.engine().with_observer(trace.observer());
    trace.snapshot();
    let mut record = engine.deploy(&t.caching_server()).map_err(e)?;
    for name in ["PrimaryServer", "CachingServer"] {
        let seq = trace.sequence(name);
        ensure!(seq == [Pending, Installed, Running, Wired], "deploy: {name} went {seq:?}");
    }

    trace.reset();
    let machines: Vec<Option<Guid>> = record.deployments.iter().map(|d| d.machine.clone()).collect();
    let original = record.ddd.connections.clone();
    engine.rewire(&mut record, &[]).map_err(e)?;
    engine.rewire(&mut record, &original).map_err(e)?;
    for name in ["PrimaryServer", "CachingServer"] {
        let seq = trace.sequence(name);
        ensure!(seq == [Wired, Running, Wired], "rewire: {name} went {seq:?}");
    }
    let after: Vec<Option<Guid>> = record.deployments.iter().map(|d| d.machine.clone()).collect();
    ensure!(machines == after, "rewire restarted a machine");
    for (i, d) in record.deployments.iter().enumerate() {
        let st = t.nodes[i].status().map_err(e)?;
        ensure!(st.machine(d.machine.as_ref().unwrap()).is_some(), "{} machine vanished", d.name);
    }

    trace.reset();
    t.add_host(&mut record.ddd, "C").map_err(e)?;
    engine.move_component(&mut record, "CachingServer", "C").map_err(e)?;
    let seq = trace.sequence("CachingServer");
    ensure!(
        seq == [Wired, Running, Installed, Running, Wired],
        "move: CachingServer went {seq:?}"
    );
    let seq = trace.sequence("PrimaryServer");
    ensure!(is_legal_path(&seq) && seq.last() == Some(&Wired), "move: PrimaryServer went {seq:?}");
    ensure!(trace.errors().is_empty(), "status errors: {:?}", trace.errors());

    let moved = record.deployment("CachingServer").ok_or("missing")?;
    ensure!(moved.host == "C", "record still places the cache on {}", moved.host);
    ensure!(
        t.nodes[2].status().map_err(e)?.machine(moved.machine.as_ref().unwrap()).is_some(),
        "cache machine not on C"
    );
    let latency = Probes::new()
        .check(&connector(&record, "PrimaryServer")?, &connector(&record, "CachingServer")?, b"probe: moved", T)
        .map_err(e)?;
    let total = start.elapsed();
    ensure!(total < Duration::from_secs(30), "took {total:?}");
    Ok(format!("deploy, rewire and move followed the lifecycle; probe via C {latency:.2?}, total {total:.2?}"))
}

fn quad(t: &TestTopology) -> Ddd {
    let mut ddd = Ddd {
        name: "FourConnections".into(),
        bundles: vec![
            BundleSource {
                name: "Server".into(),
                source: "file://server.xml".into(),
            },
            BundleSource {
                name: "Cache".into(),
                source: "file://cache.xml".into(),
            },
        ],
        hosts: t
            .nodes
            .iter()
            .map(|n| Host {
                id: n.id.clone(),
                address: n.fire_addr().to_string(),
            })
            .collect(),
        deployments: Vec::new(),
        connections: Vec::new(),
    };
    for i in 0..4 {
        let (s, d) = if i % 2 == 0 { ("A", "B") } else { ("B", "A") };
        ddd.deployments.push(Deployment {
            name: format!("Server{i}"),
            bundle: "Server".into(),
            target: s.into(),
        });
        ddd.deployments.push(Deployment {
            name: format!("Cache{i}"),
            bundle: "Cache".into(),
            target: d.into(),
        });
        ddd.connections.push(Connection::new(
            Endpoint::new(format!("Server{i}"), "DownstreamCache"),
            Endpoint::new(format!("Cache{i}"), "UpstreamServer"),
        ));
    }
    ddd
}

fn wiring_protocol() -> Outcome {
    let t = TestTopology::spawn(2).map_err(e)?;
    let record = t.engine().deploy(&t.caching_server()).map_err(e)?;
    let primary = record.deployment("PrimaryServer").ok_or("missing")?;
    let secondary = record.deployment("CachingServer").ok_or("missing")?;
    let log_a = t.nodes[0].control_log().ok_or("in-process node expected")?;
    let log_b = t.nodes[1].control_log().ok_or("in-process node expected")?;

    let created: Vec<u16> = log_a
        .iter()
        .filter(|ev| Some(&ev.machine) == primary.machine.as_ref())
        .filter(|ev| matches!(&ev.request, ControlRequest::Create { name } if name == "DownstreamCache"))
        .filter_map(|ev| ev.response.port)
        .collect();
    ensure!(created.len() == 1, "primary machine saw {} create requests", created.len());
    let connects: Vec<(String, u16)> = log_b
        .iter()
        .filter(|ev| Some(&ev.machine) == secondary.machine.as_ref())
        .filter_map(|ev| match &ev.request {
            ControlRequest::Connect { name, host, port } if name == "UpstreamServer" => Some((host.clone(), *port)),
            _ => None,
        })
        .collect();
    let host = &primary.connector.as_ref().ok_or("no connector")?.host;
    ensure!(
        connects == [(host.clone(), created[0])],
        "offspring connected to {connects:?}, listener was {host}:{}",
        created[0]
    );

    let run = |parallel: bool| -> Result<DeploymentRecord, String> {
        let t = TestTopology::spawn(2).map_err(e)?;
        let cfg = EngineConfig {
            parallel_wiring: parallel,
            ..t.engine_config()
        };
        Engine::new(deployer_signer(), cfg).deploy(&quad(&t)).map_err(e)
    };
    let par = run(true)?;
    let seq = run(false)?;
    ensure!(
        par.summary() == seq.summary(),
        "records differ:\n{:?}\n{:?}",
        par.summary(),
        seq.summary()
    );
    let wired = par.deployments.iter().filter(|d| d.state == ComponentState::Wired).count();
    ensure!(wired == 8, "{wired} of 8 components wired");
    Ok(format!(
        "listener port {} reused by the offspring; 4 concurrent wirers match sequential",
        created[0]
    ))
}

const RUNNER: &[u8] = include_bytes!("../../../fixtures/runner_bundle.xml");
const INSTALLER: &[u8] = include_bytes!("../../../fixtures/installer_bundle.xml");
const APP_DDD: &[u8] = include_bytes!("../../../fixtures/caching_server_ddd.xml");
const WIRER: &[u8] = include_bytes!("../../../fixtures/wirer_bundle.xml");

fn canonical_formats() -> Outcome {
    for (name, doc) in [("runner", RUNNER), ("installer", INSTALLER), ("caching_server", APP_DDD), ("wirer", WIRER)] {
        let once = Element::parse(doc).map_err(|x| format!("{name}: {x}"))?;
        let twice = Element::parse(&once.to_bytes()).map_err(|x| format!("{name}: {x}"))?;
        ensure!(once == twice && once.to_bytes() == twice.to_bytes(), "{name} is not a fixed point");
    }
    for (name, doc) in [("runner", RUNNER), ("installer", INSTALLER), ("wirer", WIRER)] {
        let b = Bundle::parse(doc).map_err(|x| format!("{name}: {x}"))?;
        ensure!(Bundle::parse(&b.serialize()).map_err(e)? == b, "{name} bundle does not round-trip");
    }
    let ddd = parse_ddd(APP_DDD).map_err(e)?;
    ensure!(parse_ddd(&ddd.to_bytes()).map_err(e)? == ddd, "DDD does not round-trip");

    let reference = ToDoList::from_datum(Bundle::parse(WIRER).map_err(e)?.datum("ToDoList").map_err(e)?).map_err(e)?;
    let spec = WireSpec {
        primary: Connector::new("129.127.8.34", 30112, 29000).map_err(e)?,
        secondary: Connector::new("129.127.8.35", 47121, 26083).map_err(e)?,
        primary_channel: "DownstreamCache".into(),
        secondary_channel: "UpstreamServer".into(),
    };
    let generated = generate_todolist(&PhaseInputs::Wire(vec![spec]));
    ensure!(generated.tasks.len() == 1, "{} tasks generated", generated.tasks.len());
    let mut task = generated.tasks[0].to_element();
    task.set_attr("guid", &reference.tasks[0].guid);
    let want = reference.tasks[0].to_element();
    ensure!(task == want, "generated {task}\nexpected {want}");
    Ok("4 documents parse and are fixed points; WIRE task matches".into())
}
