mod common;

use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::Command;

use covidchain::cli::{read_keyfile, run_args, CmdOutput};
use covidchain::geoalert::{classify, AlertLevel, GeoPoint};
use covidchain::ledger::NodeLedger;
use covidchain::simnet::{run_scenario, Scenario};
use tempfile::TempDir;

use common::*;

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> CmdOutput {
        let ledger = self.path("test.ledger");
        let roles = self.path("test.roles");
        let mut full = vec![
            "covidchain".to_owned(),
            "--ledger".into(),
            ledger.display().to_string(),
            "--roles".into(),
            roles.display().to_string(),
        ];
        full.extend(args.iter().map(|s| s.to_string()));
        run_args(full)
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert_eq!(out.code, 0, "{args:?}: {}", out.stderr);
        out.stdout
    }

    fn key(&self, name: &str, seed_byte: u8) -> String {
        let p = self.path(name);
        let seed = hex::encode([seed_byte; 32]);
        self.ok(&["keygen", "--seed", &seed, "--out", p.to_str().unwrap()]);
        p.display().to_string()
    }

    fn pubkey(&self, keyfile: &str) -> String {
        read_keyfile(Path::new(keyfile)).unwrap().public().to_hex()
    }
}

/// Registry with miner, two validators, a testing centre, a law-enforcement
/// agency and the Central Authority, plus an initialized chain.
fn workspace() -> Workspace {
    let ws = Workspace { dir: tempfile::tempdir().unwrap() };
    for (name, role, b) in [
        ("miner", "miner", 1u8),
        ("v1", "validator", 2),
        ("v2", "validator", 3),
        ("tc", "testing-center", 10),
        ("lea", "law-enforcement", 11),
        ("ca", "central-authority", 12),
    ] {
        let k = ws.key(name, b);
        ws.ok(&["roles", "add", "--role", role, "--key", &k]);
    }
    assert_eq!(ws.ok(&["chain", "init"]), "OK height=0\n");
    ws
}

const EPID: &str = "age=34;gender=F;blood=O+;state=Assam;cond=asthma";

#[test]
fn keygen_is_deterministic_and_matches_library() {
    let ws = Workspace { dir: tempfile::tempdir().unwrap() };
    let seed = hex::encode([7u8; 32]);
    let a = ws.ok(&["keygen", "--seed", &seed]);
    assert_eq!(a, ws.ok(&["keygen", "--seed", &seed]));
    let lines: Vec<&str> = a.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], kp(7).public().to_hex());
    assert_eq!(ws.run(&["keygen", "--seed", "abcd"]).code, 2);
    assert_eq!(ws.run(&["keygen", "--seed", &hex::encode([0xab; 32]).to_uppercase()]).code, 2);
}

#[test]
fn full_lifecycle() {
    let ws = workspace();
    let subject = ws.key("subject", 40);
    let subject_pub = ws.pubkey(&subject);
    let tc = ws.path("tc").display().to_string();
    let lea = ws.path("lea").display().to_string();

    let out = ws.ok(&["submit-test", "--subject-pub", &subject_pub, "--status", "+ive", "--epid", EPID, "--signer", &tc]);
    assert!(out.starts_with("ACCEPTED tid="));
    ws.ok(&["submit-zone", "--lat", "26.1446", "--lon", "91.7362", "--radius", "500", "--type", "RED", "--signer", &lea]);
    assert!(ws.ok(&["mine", "--seed", "1"]).starts_with("SEALED height=1 txs=2 "));
    assert_eq!(ws.run(&["mine"]).code, 1);
    assert_eq!(ws.ok(&["chain", "validate"]), "OK height=1\n");

    let ledger = NodeLedger::load(&ws.path("test.ledger")).unwrap();
    let key = read_keyfile(Path::new(&subject)).unwrap();
    let q = ws.ok(&["query-status", "--pub", &subject_pub]);
    assert_eq!(q, format!("{}\n", ledger.query_status(key.public()).to_line(&key.public().fingerprint())));
    assert!(q.contains("status=+ive"));
    assert!(!std::fs::read_to_string(ws.path("test.ledger")).unwrap().contains(&subject_pub));

    let pass = ws.run(&["verify-pass", "--subject", &subject, "--verifier", &lea]);
    assert_eq!(pass.code, 1);
    assert_eq!(pass.stdout, "DENY restricted\n");
    let machine = ws.run(&["--output", "machine", "verify-pass", "--subject", &subject, "--verifier", &lea]);
    let frames: Vec<&str> = machine.stdout.lines().collect();
    assert_eq!(frames.len(), 3);
    assert!(frames[0].starts_with("CHAL|") && frames[1].starts_with("RESP|"));
    assert_eq!(frames[2], "DEC|DENY|restricted");

    let alert = ws.ok(&["alert", "--lat", "26.1450", "--lon", "91.7362"]);
    let lib: String = classify(GeoPoint::new(26.1450, 91.7362).unwrap(), &ledger.active_zones(), 100.0)
        .into_iter()
        .filter(|a| a.level != AlertLevel::Clear)
        .map(|a| format!("{}\n", a.to_line()))
        .collect();
    assert_eq!(alert, lib);
    assert!(alert.contains("level=INSIDE"));
    assert_eq!(ws.ok(&["alert", "--lat", "-10", "--lon", "-10"]), "");

    ws.ok(&["submit-test", "--subject-pub", &subject_pub, "--status", "-ive", "--epid", EPID, "--signer", &tc, "--date", "2099-01-01", "--time", "00:00:00"]);
    ws.ok(&["mine"]);
    assert_eq!(ws.ok(&["verify-pass", "--subject", &subject, "--verifier", &lea]), "ALLOW clear\n");
}

#[test]
fn unknown_key_has_no_record() {
    let ws = workspace();
    let out = ws.run(&["query-status", "--pub", &kp(99).public().to_hex()]);
    assert_eq!((out.code, out.stdout.as_str()), (0, "no-record\n"));
    let stranger = ws.key("stranger", 98);
    let lea = ws.path("lea").display().to_string();
    assert_eq!(ws.ok(&["verify-pass", "--subject", &stranger, "--verifier", &lea]), "ALLOW no-record\n");
}

#[test]
fn unauthorized_signer_is_a_validation_failure() {
    let ws = workspace();
    let subject_pub = kp(41).public().to_hex();
    let lea = ws.path("lea").display().to_string();
    let tc = ws.path("tc").display().to_string();
    let out = ws.run(&["submit-zone", "--lat", "1", "--lon", "1", "--radius", "10", "--type", "RED", "--signer", &tc]);
    assert_eq!(out.code, 1);
    assert!(out.stdout.starts_with("REJECTED"));
    let ok = ws.run(&["submit-test", "--subject-pub", &subject_pub, "--status", "IQ", "--epid", EPID, "--signer", &lea]);
    assert_eq!(ok.code, 0);
}

#[test]
fn usage_errors_exit_two() {
    let ws = workspace();
    assert_eq!(ws.run(&["frobnicate"]).code, 2);
    assert_eq!(ws.run(&["query-status"]).code, 2);
    assert_eq!(ws.run(&["query-status", "--pub", "zz"]).code, 2);
    assert_eq!(ws.run(&["alert", "--lat", "91", "--lon", "0"]).code, 2);
    let tc = ws.path("tc").display().to_string();
    let bad_status = ws.run(&["submit-test", "--subject-pub", &kp(3).public().to_hex(), "--status", "maybe", "--epid", EPID, "--signer", &tc]);
    assert_eq!(bad_status.code, 2);
    let bad_radius = ws.run(&["submit-zone", "--lat", "1", "--lon", "1", "--radius", "-5", "--type", "RED", "--signer", &tc]);
    assert_eq!(bad_radius.code, 2);
}

#[test]
fn validate_detects_tampered_file() {
    let ws = workspace();
    let tc = ws.path("tc").display().to_string();
    ws.ok(&["submit-test", "--subject-pub", &kp(42).public().to_hex(), "--status", "+ive", "--epid", EPID, "--signer", &tc]);
    ws.ok(&["mine"]);
    let path = ws.path("test.ledger");
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.replacen("|+ive|", "|-ive|", 1)).unwrap();
    let out = ws.run(&["chain", "validate"]);
    assert_eq!(out.code, 1);
    assert!(out.stdout.starts_with("FAIL height=1"));
}

#[test]
fn scenario_run_matches_library_report() {
    let ws = Workspace { dir: tempfile::tempdir().unwrap() };
    let sc = Scenario { events: mixed_script(21, 40, 6, false), ..Scenario::default() };
    let script = ws.path("s.script");
    std::fs::write(&script, sc.to_text()).unwrap();
    let report = ws.path("s.report");
    let out = ws.ok(&["scenario", "run", script.to_str().unwrap(), "--seed", "5", "--report", report.to_str().unwrap()]);
    let lib = run_scenario(sc.config(5), &sc.events).unwrap().to_text();
    assert_eq!(out, lib);
    assert_eq!(std::fs::read_to_string(report).unwrap(), lib);
    std::fs::write(&script, "1|NOPE|x=1\n").unwrap();
    assert_eq!(ws.run(&["scenario", "run", script.to_str().unwrap(), "--seed", "5"]).code, 2);
}

#[test]
fn binary_exit_codes_and_lock() {
    let ws = workspace();
    let bin = env!("CARGO_BIN_EXE_covidchain");
    let ledger = ws.path("test.ledger");
    let roles = ws.path("test.roles");
    let cmd = |args: &[&str]| {
        Command::new(bin).arg("--ledger").arg(&ledger).arg("--roles").arg(&roles).args(args).output().unwrap()
    };
    let v = cmd(&["chain", "validate"]);
    assert_eq!(v.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&v.stdout), "OK height=0\n");
    assert_eq!(cmd(&["no-such-command"]).status.code(), Some(2));

    let mut lock_path = ledger.clone().into_os_string();
    lock_path.push(".lock");
    let held = File::options().create(true).truncate(false).write(true).open(&lock_path).unwrap();
    held.lock().unwrap();
    let tc = ws.path("tc").display().to_string();
    let blocked = cmd(&["submit-test", "--subject-pub", &kp(43).public().to_hex(), "--status", "+ive", "--epid", EPID, "--signer", &tc]);
    assert_eq!(blocked.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&blocked.stderr).contains("locked"));
    // readers do not take the lock
    assert_eq!(cmd(&["chain", "validate"]).status.code(), Some(0));
    held.unlock().unwrap();
    assert_eq!(cmd(&["submit-test", "--subject-pub", &kp(43).public().to_hex(), "--status", "+ive", "--epid", EPID, "--signer", &tc]).status.code(), Some(0));
}
