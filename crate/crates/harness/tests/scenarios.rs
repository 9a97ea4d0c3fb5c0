use std::path::Path;
use std::thread;

use cingal_harness::{run_scenario, HarnessError, Scenario, Step, TestTopology};

fn caching_server_script() -> Scenario {
    Scenario::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/caching_server.toml")).unwrap()
}

#[test]
fn caching_server_script_passes() {
    let s = caching_server_script();
    let mut t = TestTopology::spawn(s.nodes).unwrap();
    let report = run_scenario(&mut t, &s).unwrap();
    assert_eq!(report.steps.len(), s.steps.len());
    assert!(report.task_reports.iter().all(|r| r.all_ok()));
    assert_eq!(report.snapshots.len(), s.steps.len() * 3);
    let rec = report.record.unwrap();
    assert_eq!(rec.deployment("CachingServer").unwrap().host, "C");
}

#[test]
fn failing_assertion_names_its_step() {
    let s = Scenario::parse(
        r#"
name = "wrong"
nodes = 2
[[step]]
action = "deploy"
ddd = "caching_server"
[[step]]
action = "assert_state"
deployment = "CachingServer"
state = "installed"
"#,
    )
    .unwrap();
    let mut t = TestTopology::spawn(2).unwrap();
    match run_scenario(&mut t, &s) {
        Err(HarnessError::AssertionFailed { step, detail }) => {
            assert_eq!(step, 1);
            assert!(detail.contains("expected installed"), "{detail}");
        }
        other => panic!("expected an assertion failure, got {other:?}"),
    }
}

#[test]
fn steps_before_any_deploy_fail_cleanly() {
    let s = Scenario {
        name: "early".into(),
        nodes: 1,
        steps: vec![Step::Move {
            deployment: "X".into(),
            host: "A".into(),
        }],
    };
    let mut t = TestTopology::spawn(1).unwrap();
    assert!(matches!(
        run_scenario(&mut t, &s),
        Err(HarnessError::AssertionFailed { step: 0, .. })
    ));
}

#[test]
fn empty_script_is_an_empty_report() {
    let s = Scenario::parse("name = \"nothing\"").unwrap();
    let mut t = TestTopology::spawn(1).unwrap();
    let r = run_scenario(&mut t, &s).unwrap();
    assert!(r.steps.is_empty() && r.task_reports.is_empty() && r.record.is_none());
}

#[test]
fn too_few_nodes_is_a_script_error() {
    let s = caching_server_script();
    let mut t = TestTopology::spawn(1).unwrap();
    assert!(matches!(run_scenario(&mut t, &s), Err(HarnessError::Script(_))));
}

#[test]
fn reruns_are_deterministic() {
    let s = caching_server_script();
    let summary = || {
        let mut t = TestTopology::spawn(s.nodes).unwrap();
        let r = run_scenario(&mut t, &s).unwrap();
        let actions: Vec<&str> = r.steps.iter().map(|o| o.action).collect();
        (actions, r.record.unwrap().summary())
    };
    let first = summary();
    // hosts are bound to ephemeral addresses, but ids, states and keys repeat
    assert_eq!(first, summary());
}

#[test]
fn concurrent_scenarios_are_isolated() {
    let s = caching_server_script();
    let runs: Vec<_> = (0..3)
        .map(|_| {
            let s = s.clone();
            thread::spawn(move || {
                let mut t = TestTopology::spawn(s.nodes).unwrap();
                run_scenario(&mut t, &s).map(|r| r.record.unwrap().summary())
            })
        })
        .collect();
    let results: Vec<_> = runs.into_iter().map(|h| h.join().unwrap().unwrap()).collect();
    assert!(results.windows(2).all(|w| w[0] == w[1]));
}
