mod common;

use covidchain::ledger::NodeLedger;
use covidchain::simnet::{node_digest, run_scenario, Action, Scenario, ScenarioEvent, SimConfig, SimError, Simulation};
use covidchain::txmodel::CovidStatus;

use common::*;

fn test_event(tick: u64, subject: &str, status: CovidStatus) -> ScenarioEvent {
    ScenarioEvent::new(
        tick,
        Action::SubmitTest { center: "tc1".into(), subject: subject.into(), status, epid: epid(30), at: None },
    )
}

#[test]
fn four_tests_seal_one_block_everywhere() {
    let script: Vec<_> = (0..4).map(|i| test_event(i + 1, &phone(i as usize), CovidStatus::Negative)).collect();
    let r = run_scenario(SimConfig::with_seed(1), &script).unwrap();
    assert!(!r.divergence);
    assert_eq!(r.nodes.len(), 8);
    assert!(r.nodes.iter().all(|n| n.height == 1 && n.valid));
    assert!(r.outcomes[3].outcome.ends_with("sealed=1"));
    assert!(r.outcomes[..3].iter().all(|o| !o.outcome.contains("sealed")));
}

#[test]
fn identical_runs_give_identical_reports() {
    let script = mixed_script(77, 100, 12, false);
    let a = run_scenario(SimConfig::with_seed(4), &script).unwrap().to_text();
    let b = run_scenario(SimConfig::with_seed(4), &script).unwrap().to_text();
    assert_eq!(a, b);
}

#[test]
fn tamper_is_isolated_to_one_node() {
    let mut script: Vec<_> = (0..8).map(|i| test_event(i + 1, &phone(i as usize % 3), CovidStatus::Positive)).collect();
    script.push(ScenarioEvent::new(20, Action::Tamper { node: "hosp1".into(), height: 1 }));
    let r = run_scenario(SimConfig::with_seed(2), &script).unwrap();
    assert!(r.divergence);
    for n in &r.nodes {
        assert_eq!(n.valid, n.name != "hosp1", "{}", n.name);
    }
    let good: Vec<_> = r.nodes.iter().filter(|n| n.name != "hosp1").map(|n| n.digest).collect();
    assert!(good.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn submission_order_oracle_on_hundred_events() {
    let script = mixed_script(100, 100, 10, false);
    let mut sim = Simulation::new(SimConfig::with_seed(100)).unwrap();
    let r = sim.run(&script).unwrap();
    let last_sealed = r.outcomes.iter().rposition(|o| o.outcome.contains(" sealed=")).unwrap();
    let mut expected = std::collections::BTreeMap::new();
    for (ev, o) in script.iter().zip(&r.outcomes).take(last_sealed + 1) {
        if let Action::SubmitTest { subject, status, .. } = &ev.action {
            if o.outcome.starts_with("accepted") {
                expected.insert(sim.device_public(subject).unwrap().fingerprint(), *status);
            }
        }
    }
    assert!(!expected.is_empty());
    for node in sim.nodes() {
        for (subject, status) in &expected {
            assert_eq!(node.ledger.query_subject(subject).status, Some(*status));
        }
        assert_eq!(replay_statuses(&node.ledger), expected);
    }
}

#[test]
fn node_digest_properties() {
    let script: Vec<_> = (0..8).map(|i| test_event(i + 1, &phone(i as usize), CovidStatus::Negative)).collect();
    let mut sim = Simulation::new(SimConfig::with_seed(3)).unwrap();
    sim.run(&script).unwrap();
    let nodes = sim.nodes();
    assert_eq!(node_digest(&nodes[0]), node_digest(&nodes[1]));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("n.ledger");
    nodes[0].ledger.save(&path).unwrap();
    let loaded = NodeLedger::load(&path).unwrap();
    assert_eq!(loaded.digest(), node_digest(&nodes[0]));

    let net_chain = five_block_chain(3);
    let mut shorter = NodeLedger::from_blocks_unchecked(net_chain.chain()[..4].to_vec());
    assert_ne!(shorter.digest(), net_chain.digest());
    shorter.append_block(net_chain.chain()[4].clone()).unwrap();
    assert_eq!(shorter.digest(), net_chain.digest());
}

#[test]
fn read_only_nodes_cannot_author() {
    let text = "\
@node|name=miner|role=miner
@node|name=v1|role=validator
@node|name=v2|role=validator
@node|name=tc|role=testing-center
@node|name=gov|role=government
@node|name=ca|role=central-authority
1|SUBMIT_TEST|center=gov|subject=+91-9000000001|status=+ive|epid=age=40;gender=M;blood=A+;state=Goa;cond=
2|SUBMIT_ZONE|authority=tc|lat=1.0|lon=1.0|radius=100|type=RED
3|SUBMIT_TEST|center=tc|subject=+91-9000000001|status=-ive|epid=age=40;gender=M;blood=A+;state=Goa;cond=
";
    let sc = Scenario::parse(text).unwrap();
    let r = run_scenario(sc.config(1), &sc.events).unwrap();
    assert_eq!(r.outcomes[0].outcome, "rejected=read-only-node");
    assert!(r.outcomes[1].outcome.starts_with("rejected=unauthorized-signer"));
    assert!(r.outcomes[2].outcome.starts_with("accepted"));
}

#[test]
fn script_errors_name_the_event() {
    let text = "1|QUERY_STATUS|node=miner|subject=x\n2|FLY|node=miner\n";
    match Scenario::parse(text) {
        Err(SimError::Script { index, .. }) => assert_eq!(index, 1),
        other => panic!("unexpected {other:?}"),
    }
    let script = vec![
        ScenarioEvent::new(5, Action::QueryStatus { node: "miner".into(), subject: "x".into() }),
        ScenarioEvent::new(4, Action::QueryStatus { node: "miner".into(), subject: "x".into() }),
    ];
    match run_scenario(SimConfig::with_seed(0), &script) {
        Err(SimError::Script { index, .. }) => assert_eq!(index, 1),
        other => panic!("unexpected {other:?}"),
    }
    let unknown = vec![ScenarioEvent::new(1, Action::QueryStatus { node: "nobody".into(), subject: "x".into() })];
    assert!(matches!(run_scenario(SimConfig::with_seed(0), &unknown), Err(SimError::Script { index: 0, .. })));
}

#[test]
fn script_text_round_trips() {
    let sc = Scenario { events: mixed_script(8, 60, 5, true), ..Scenario::default() };
    let back = Scenario::parse(&sc.to_text()).unwrap();
    assert_eq!(back, sc);
}

#[test]
fn roster_invariants_are_enforced() {
    let mut cfg = SimConfig::with_seed(0);
    cfg.roster.retain(|e| e.name != "val2" && e.name != "val3");
    assert!(matches!(Simulation::new(cfg), Err(SimError::Config(_))));
    let mut cfg = SimConfig::with_seed(0);
    cfg.roster.retain(|e| e.name != "miner");
    assert!(matches!(Simulation::new(cfg), Err(SimError::Config(_))));
}
