mod common;

use std::time::Instant;

use cingal_core::channel::DEFAULT_MAX_FRAME;
use cingal_core::deploy::{entity_admin_bundle, installer_bundle, runner_bundle};
use cingal_core::runtime::{EntityOp, FireError};
use cingal_core::security::{PrivateKey, Right, RightSet, Service, Signer};
use cingal_core::server::{fire_document, fire_remote, is_gate_rejection};
use cingal_core::{EntityId, Guid};
use common::*;

fn stranger() -> Signer {
    Signer::new(EntityId::new("stranger").unwrap(), PrivateKey::from_seed([9; 32]))
}

#[test]
fn unknown_entity_is_rejected_before_anything_happens() {
    let start = Instant::now();
    let n = node();
    let before = n.server.node().store().snapshot();
    let tool = installer_bundle(&stranger(), &[("p".into(), demo_bundle("demo.Echo", "x"))]);
    let err = fire_remote(&n.addr(), &tool, T, DEFAULT_MAX_FRAME).err().unwrap();
    assert!(matches!(err, FireError::UnknownEntity(_)), "{err:?}");
    assert!(is_gate_rejection(&err));
    assert!(n.server.status().machines.is_empty());
    assert_eq!(n.server.node().store().snapshot(), before);
    assert!(start.elapsed() < T);
}

#[test]
fn one_flipped_code_byte_breaks_the_signature() {
    let start = Instant::now();
    let n = node();
    let before = n.server.node().store().snapshot();
    let tool = installer_bundle(&deployer(), &[("p".into(), demo_bundle("demo.Echo", "x"))]);
    let doc = tool.serialize();
    let code_at = find(&doc, b"<CODE").unwrap();
    let entry_at = code_at + find(&doc[code_at..], b"Installer").unwrap();
    let mut tampered = doc.clone();
    tampered[entry_at] ^= 0x20; // 'I' -> 'i'
    let err = fire_document(&n.addr(), &tampered, T, DEFAULT_MAX_FRAME).err().unwrap();
    assert!(matches!(err, FireError::BadSignature(_)), "{err:?}");
    assert!(n.server.status().machines.is_empty());
    assert_eq!(n.server.node().store().snapshot(), before);

    // the untouched document still fires
    let mut m = fire_document(&n.addr(), &doc, T, DEFAULT_MAX_FRAME).unwrap();
    assert!(m.read_report(T).unwrap().all_ok());
    assert!(start.elapsed() < T);
}

#[test]
fn fire_without_store_put_reports_capability_denied() {
    let start = Instant::now();
    let n = node();
    let limited = stranger();
    grant(&n.server, &limited, RightSet::empty().with(Service::Fire, Right::Fire));
    let before = n.server.node().store().snapshot();
    let tool = installer_bundle(&limited, &[("p".into(), demo_bundle("demo.Echo", "x"))]);
    let mut m = fire_remote(&n.addr(), &tool, T, DEFAULT_MAX_FRAME).unwrap();
    let report = m.read_report(T).unwrap();
    assert_eq!(report.results.len(), 1);
    let r = &report.results[0];
    assert!(!r.is_ok());
    assert!(r.error().unwrap().starts_with("CapabilityDenied"), "{r:?}");
    assert_eq!(n.server.node().store().snapshot(), before);
    assert!(start.elapsed() < T);
}

#[test]
fn fire_right_is_required() {
    let n = node();
    let limited = stranger();
    grant(&n.server, &limited, "STORE:PUT,GET".parse().unwrap());
    let tool = installer_bundle(&limited, &[]);
    let err = fire_remote(&n.addr(), &tool, T, DEFAULT_MAX_FRAME).err().unwrap();
    assert!(matches!(err, FireError::CapabilityDenied(_)), "{err:?}");
}

#[test]
fn garbage_and_unknown_entry_points() {
    let n = node();
    let err = fire_document(&n.addr(), b"<BUNDLE><CODE", T, DEFAULT_MAX_FRAME).err().unwrap();
    assert!(matches!(err, FireError::MalformedDocument(_)), "{err:?}");
    let b = deployer().sign(cingal_core::BundleDraft::new(cingal_core::deploy::builtin_code("no.such.Entry")));
    let err = fire_remote(&n.addr(), &b, T, DEFAULT_MAX_FRAME).err().unwrap();
    assert!(matches!(err, FireError::UnknownEntryPoint(_)), "{err:?}");
    assert!(n.server.status().machines.is_empty());
}

#[test]
fn capability_decisions_are_audited() {
    let n = node();
    let limited = stranger();
    grant(&n.server, &limited, RightSet::empty().with(Service::Fire, Right::Fire));
    let tool = installer_bundle(&limited, &[("p".into(), demo_bundle("demo.Echo", "x"))]);
    fire_remote(&n.addr(), &tool, T, DEFAULT_MAX_FRAME)
        .unwrap()
        .read_report(T)
        .unwrap();
    let log = n.server.node().ver().audit_log();
    let mine: Vec<_> = log.iter().filter(|e| e.entity == limited.entity).collect();
    assert!(mine.iter().any(|e| e.service == Service::Fire && e.right == Right::Fire && e.allowed));
    assert!(mine.iter().any(|e| e.service == Service::Store && e.right == Right::Put && !e.allowed));
}

#[test]
fn entity_admin_adds_and_removes_entities() {
    let n = node();
    let e = stranger();
    let add = EntityOp::Add {
        entity: e.entity.clone(),
        certificate: e.certificate(),
        rights: "STORE:PUT,GET;FIRE:FIRE".parse().unwrap(),
    };

    // the deployer holds every right here, so use a non-admin without VER rights
    let outsider = Signer::new(EntityId::new("outsider").unwrap(), PrivateKey::from_seed([7; 32]));
    grant(&n.server, &outsider, RightSet::empty().with(Service::Fire, Right::Fire));
    let report = fire_remote(&n.addr(), &entity_admin_bundle(&outsider, &add), T, DEFAULT_MAX_FRAME)
        .unwrap()
        .read_report(T)
        .unwrap();
    assert!(report.results[0].error().unwrap().starts_with("CapabilityDenied"));
    assert!(n.server.node().ver().lookup(&e.entity).is_none());

    let report = fire_remote(&n.addr(), &entity_admin_bundle(&admin(), &add), T, DEFAULT_MAX_FRAME)
        .unwrap()
        .read_report(T)
        .unwrap();
    assert!(report.all_ok(), "{report}");
    let tool = installer_bundle(&e, &[("p".into(), demo_bundle("demo.Echo", "x"))]);
    let report = fire_remote(&n.addr(), &tool, T, DEFAULT_MAX_FRAME).unwrap().read_report(T).unwrap();
    assert!(report.all_ok(), "{report}");

    let remove = EntityOp::Remove { entity: e.entity.clone() };
    let report = fire_remote(&n.addr(), &entity_admin_bundle(&admin(), &remove), T, DEFAULT_MAX_FRAME)
        .unwrap()
        .read_report(T)
        .unwrap();
    assert!(report.all_ok(), "{report}");
    let err = fire_remote(&n.addr(), &runner_bundle(&e, &[Guid::random()]), T, DEFAULT_MAX_FRAME)
        .err()
        .unwrap();
    assert!(matches!(err, FireError::UnknownEntity(_)));
}

fn find(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}
