use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_abmse");
const CLOCK: &str = "2026-03-01T09:00:00Z";

fn abmse(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .env("ABMSE_DATA_DIR", dir.join("ws"))
        .args(["--fixed-clock", CLOCK, "--format", "machine"])
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[track_caller]
fn ok(dir: &Path, args: &[&str]) -> serde_json::Value {
    let o = abmse(dir, args);
    assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let last = text.lines().last().unwrap_or("null");
    serde_json::from_str(last).unwrap()
}

#[track_caller]
fn fails(dir: &Path, args: &[&str], expected: i32) -> serde_json::Value {
    let o = abmse(dir, args);
    assert_eq!(code(&o), expected, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stderr).unwrap()
}

#[test]
fn stepwise_flow_and_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let p = |name: &str| d.join(name).display().to_string();

    fails(d, &["ledger", "verify"], 3);
    ok(d, &["setup", "--seed", "3"]);
    fails(d, &["setup"], 5);
    ok(
        d,
        &[
            "authority",
            "add",
            "hospital",
            "--name",
            "General Hospital",
            "--sign-attr",
            "patient_id",
            "--abe-attr",
            "lab_scientist",
        ],
    );
    ok(d, &["authority", "add", "dmv", "--name", "DMV", "--sign-attr", "driver_license"]);
    ok(d, &["authority", "add", "insurer", "--name", "Insurer", "--sign-attr", "insurance_id"]);
    ok(d, &["patient", "register", "annie", "--name", "Annie Foster"]);
    let dup = fails(d, &["patient", "register", "annie", "--name", "Annie Foster"], 5);
    assert_eq!(dup["kind"], "duplicate");

    let attrs = [
        ("patient_id@hospital", "0003231"),
        ("driver_license@dmv", "9907184"),
        ("insurance_id@insurer", "1EG4-TE5-MK72"),
    ];
    for (attr, value) in attrs {
        ok(d, &["keys", "extract", "--gid", "annie", "--attr", attr, "--value", value]);
        ok(d, &["sign", "--gid", "annie", "--attr", attr, "--value", value]);
    }
    ok(d, &["profile", "write", "--gid", "annie"]);
    ok(
        d,
        &[
            "acl",
            "grant",
            "--owner",
            "annie",
            "--grantee",
            "provider:medical_lab_scientist",
            "--permission",
            "request_access",
        ],
    );

    let record = b"annie foster, lipid panel 2026-02-20".repeat(100);
    fs::write(p("ehr.txt"), &record).unwrap();
    ok(
        d,
        &["ehr", "encrypt", "--input", &p("ehr.txt"), "--policy", "lab_scientist@hospital", "--output", &p("ehr.ct")],
    );
    fails(d, &["ehr", "encrypt", "--input", &p("ehr.txt"), "--policy", "lab_scientist@@", "--output", &p("x")], 4);
    ok(d, &["ehr", "upload", "--gid", "annie", "--input", &p("ehr.ct")]);

    ok(d, &["provider", "register", "lab", "--name", "Lab", "--kind", "medical_lab_scientist", "--threshold", "3/3"]);
    ok(d, &["provider", "register", "clerk", "--name", "Clerk", "--kind", "billing", "--threshold", "1/3"]);
    // rejected while parsing arguments
    assert_eq!(
        code(&abmse(d, &["provider", "register", "bad", "--name", "Bad", "--kind", "x", "--threshold", "4/3"])),
        2
    );
    ok(d, &["keys", "abe-issue", "--gid", "lab", "--attr", "lab_scientist@hospital"]);

    let denied = fails(d, &["access", "request", "--gid", "clerk", "--owner", "annie"], 7);
    assert_eq!(denied["kind"], "permission_denied");
    fails(d, &["access", "request", "--gid", "ghost", "--owner", "annie"], 6);

    let grant = ok(d, &["access", "request", "--gid", "lab", "--owner", "annie"]);
    assert_eq!(grant["outcome"], "granted");
    assert_eq!(grant["schema_version"], 1);
    let url = grant["url"].as_str().unwrap().to_owned();
    assert!(url.starts_with("https://edge.local/once/"));

    ok(d, &["ehr", "fetch", "--url", &url, "--output", &p("got.ct")]);
    fails(d, &["ehr", "fetch", "--url", &url, "--output", &p("again.ct")], 9);
    ok(d, &["ehr", "decrypt", "--gid", "lab", "--input", &p("got.ct"), "--output", &p("got.txt")]);
    assert_eq!(fs::read(p("got.txt")).unwrap(), record);
    fails(d, &["ehr", "decrypt", "--gid", "clerk", "--input", &p("got.ct"), "--output", &p("no.txt")], 10);

    let mut bad = fs::read(p("got.ct")).unwrap();
    let last = bad.len() - 1;
    bad[last] ^= 1;
    fs::write(p("bad.ct"), bad).unwrap();
    fails(d, &["ehr", "decrypt", "--gid", "lab", "--input", &p("bad.ct"), "--output", &p("no.txt")], 11);

    let v = ok(d, &["ledger", "verify"]);
    assert_eq!(v["status"], "ok");
    let chain = d.join("ws/ledger/chain.log");
    let mut bytes = fs::read(&chain).unwrap();
    bytes[4 + 134 * 3 + 40] ^= 1;
    fs::write(&chain, bytes).unwrap();
    let broken = fails(d, &["ledger", "verify"], 12);
    assert_eq!(broken["kind"], "ledger_broken");

    assert_eq!(code(&abmse(d, &["no-such-command"])), 2);
}

fn scenario(dir: &Path) -> (Vec<u8>, Vec<u8>) {
    let o = Command::new(BIN)
        .args(["--data-dir"])
        .arg(dir)
        .args([
            "--seed",
            "42",
            "--fixed-clock",
            CLOCK,
            "--format",
            "machine",
            "scenario",
            "annie",
            "--ehr-size",
            "65536",
        ])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    (fs::read(dir.join("ledger/chain.log")).unwrap(), o.stdout)
}

#[test]
fn seeded_scenario_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (chain_a, out_a) = scenario(a.path());
    let (chain_b, out_b) = scenario(b.path());
    assert_eq!(chain_a, chain_b);
    assert_eq!(out_a, out_b);
    let last: serde_json::Value =
        serde_json::from_slice(out_a.split(|&c| c == b'\n').rfind(|l| !l.is_empty()).unwrap()).unwrap();
    assert_eq!(last["status"], "ok");

    let again = Command::new(BIN).arg("--data-dir").arg(a.path()).args(["scenario", "annie"]).output().unwrap();
    assert_eq!(code(&again), 5);
}
