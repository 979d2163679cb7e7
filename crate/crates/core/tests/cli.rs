use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn trusdn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trusdn"))
        .args(args)
        .env_remove("TRUSDN_SEED")
        .output()
        .unwrap()
}

fn scenario(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.json"))
        .display()
        .to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_passes_and_prints_verdicts() {
    let o = trusdn(&["run", &scenario("forge_rule")]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.starts_with("scenario forge_rule (seed 12)"));
    assert!(text.contains("PASS fib_unchanged_alarm_raised"));
    assert!(!text.contains("FAIL"));
    assert!(text.lines().last().unwrap().starts_with("transcript digest "));
}

#[test]
fn failed_assertion_exits_1() {
    let o = trusdn(&["run", &scenario("failing_liveness")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL all_flows_established"));
}

#[test]
fn malformed_inputs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"name\": \"x\", \"topology\": ").unwrap();
    let unknown = dir.path().join("unknown.json");
    std::fs::write(
        &unknown,
        r#"{"name":"x","seed":1,"topology":{"hosts":1},"adversary_script":[{"at":1,"action":"teleport"}],"assertions":[]}"#,
    )
    .unwrap();
    let bad_host = dir.path().join("host.json");
    std::fs::write(
        &bad_host,
        r#"{"name":"x","seed":1,"topology":{"hosts":1,"cts":[{"host":5}]},"adversary_script":[],"assertions":[]}"#,
    )
    .unwrap();
    let csv = dir.path().join("bad.csv");
    std::fs::write(&csv, "flow,mode\n1,psk\n").unwrap();
    for args in [
        vec!["run", bad.to_str().unwrap()],
        vec!["run", unknown.to_str().unwrap()],
        vec!["run", bad_host.to_str().unwrap()],
        vec!["run", "/nonexistent/scenario.json"],
        vec!["summary", csv.to_str().unwrap()],
        vec!["bench", "--flows", "0", "--mode", "psk", "--csv", "x.csv"],
        vec!["bench", "--flows", "2", "--mode", "rsa", "--csv", "x.csv"],
        vec!["frobnicate"],
        vec![],
    ] {
        let o = trusdn(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn seed_precedence_flag_env_file() {
    let path = scenario("eavesdrop");
    let from_file = trusdn(&["run", &path]);
    assert!(stdout(&from_file).starts_with("scenario eavesdrop (seed 11)"));

    let env = Command::new(env!("CARGO_BIN_EXE_trusdn"))
        .args(["run", &path])
        .env("TRUSDN_SEED", "5")
        .output()
        .unwrap();
    assert!(stdout(&env).starts_with("scenario eavesdrop (seed 5)"));

    let flag = Command::new(env!("CARGO_BIN_EXE_trusdn"))
        .args(["run", &path, "--seed", "9"])
        .env("TRUSDN_SEED", "5")
        .output()
        .unwrap();
    assert!(stdout(&flag).starts_with("scenario eavesdrop (seed 9)"));
    assert_ne!(stdout(&env), stdout(&flag));
}

#[test]
fn json_report_parses() {
    let o = trusdn(&["run", &scenario("tamper_beta"), "--json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["name"], "tamper_beta");
    assert_eq!(v["assertions"]["beta_alarm_raised"], true);
    assert!(v["metrics"]["switch.beta_rejected"].as_u64().unwrap() > 0);
}

#[test]
fn bench_then_summary() {
    let dir = tempfile::tempdir().unwrap();
    let csv: PathBuf = dir.path().join("out.csv");
    let o = trusdn(&[
        "bench", "--flows", "4", "--repeats", "2", "--mode", "pk", "--csv",
        csv.to_str().unwrap(), "--seed", "3",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "flow,mode,first_packet_ticks,keygen_wall_ns,distribution_wall_ns,handshake_messages,handshake_pk_ops"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| r.split(',').nth(1) == Some("pk")));

    let s = trusdn(&["summary", csv.to_str().unwrap()]);
    assert_eq!(s.status.code(), Some(0));
    let out = stdout(&s);
    assert!(out.lines().next().unwrap().split_whitespace().eq(["column", "min", "max", "mean", "median", "stddev"]));
    let ticks = out.lines().find(|l| l.starts_with("first_packet_ticks")).unwrap();
    assert_eq!(ticks.split_whitespace().nth(1), Some("4.000"));
}
