use trusdn::harness::{
    degrade_network, enable_cuckoo, inject_sybil_switch, run_scenario, Assertion, Scenario,
};
use trusdn::net::Segment;

fn load(name: &str) -> Scenario {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.json"));
    Scenario::from_json(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn bundled_files_round_trip_through_json() {
    for name in [
        "eavesdrop",
        "forge_rule",
        "replay_enrollment",
        "sybil_switch",
        "cuckoo",
        "tamper_beta",
        "degrade_network",
        "failing_liveness",
    ] {
        let s = load(name);
        assert_eq!(Scenario::from_json(&s.to_json()).unwrap(), s, "{name}");
    }
}

#[test]
fn sybil_mutator_on_a_clean_scenario() {
    let mut s = load("eavesdrop");
    inject_sybil_switch(&mut s, 300, 2, Some(b"trojan switch"));
    inject_sybil_switch(&mut s, 310, 2, None);
    s.assertions.extend([Assertion::SybilRejected, Assertion::IdenticalCodeEnrolled]);
    let r = run_scenario(&s, 3).unwrap();
    assert!(r.passed(), "{:?}", r.assertions);
    assert_eq!(r.metrics["nc.enrollment_rejections"], 1);
}

#[test]
fn cuckoo_mutator_needs_the_list_to_be_caught() {
    let mut s = load("eavesdrop");
    s.topology.hosts = 4;
    s.topology.anti_cuckoo = true;
    enable_cuckoo(&mut s, 500, 1, 3);
    assert_eq!(s.topology.rogue_hosts, vec![3]);
    s.assertions = vec![
        Assertion::CuckooDetected,
        Assertion::CuckooAcceptedWithoutCheck,
        Assertion::CuckooCheckFails,
    ];
    assert!(run_scenario(&s, 8).unwrap().passed());
}

#[test]
fn degraded_network_keeps_safety() {
    let mut s = load("eavesdrop");
    degrade_network(&mut s, 1, 0.2, Segment::Beta);
    degrade_network(&mut s, 1, 0.2, Segment::Gamma);
    s.assertions = vec![Assertion::NoPayloadPlaintext];
    for seed in 0..10 {
        let r = run_scenario(&s, seed).unwrap();
        // The safety set is always evaluated, so passing means no forged or
        // replayed acceptance and no leaked keys despite the loss.
        assert!(r.passed(), "seed {seed}: {:?}", r.assertions);
        assert!(r.metrics["tap.dropped"] > 0);
    }
}

#[test]
fn different_seeds_give_different_transcripts() {
    let s = load("tamper_beta");
    let a = run_scenario(&s, 1).unwrap();
    let b = run_scenario(&s, 2).unwrap();
    assert_ne!(a.transcript_digest, b.transcript_digest);
    assert_eq!(a.transcript_digest, run_scenario(&s, 1).unwrap().transcript_digest);
}
