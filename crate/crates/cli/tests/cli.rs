use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ecoweave"));
    c.env_remove("ECOWEAVE_SEED").env_remove("RUST_LOG");
    c
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/scenarios").join(name)
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

#[test]
fn memory_reference_configuration() {
    let o = run(&["memory", "4", "4", "2", "2", "--channels", "8"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "base: 450 bytes\nbuffers: 1464 bytes (12 slots x 122)\nchannels: 448 bytes (8 x 56)\ntotal: 2362 bytes\n");
}

#[test]
fn memory_edge_cases() {
    let o = run(&["memory", "0", "0", "0", "0", "--channels", "0"]);
    assert!(stdout(&o).ends_with("total: 450 bytes\n"));
    let o = run(&["memory", "1", "0", "0", "0"]);
    assert!(stdout(&o).ends_with("total: 572 bytes\n"));
}

#[test]
fn validate_is_silent_on_good_files() {
    for f in ["staggered.toml", "hospital.toml", "aal.toml"] {
        let o = run(&["validate", "--scenario", scenario(f).to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{f}");
        assert!(o.stdout.is_empty() && o.stderr.is_empty(), "{f}");
    }
}

#[test]
fn validate_reports_every_problem_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, "[[island]]\npid = 0\n[[island.mote]]\ndevid = 65535\n[link]\nloss_prob = 2.0\n").unwrap();
    let o = run(&["validate", "--scenario", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8(o.stderr).unwrap();
    assert_eq!(err.lines().count(), 3, "{err}");
    for line in err.lines() {
        let rest = line.strip_prefix(p.to_str().unwrap()).unwrap();
        let mut parts = rest.splitn(4, ':');
        assert_eq!(parts.next(), Some(""));
        assert!(parts.next().unwrap().parse::<usize>().is_ok(), "{line}");
        assert!(parts.next().unwrap().parse::<usize>().is_ok(), "{line}");
    }
}

#[test]
fn malformed_input_never_panics() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("junk.toml");
    for junk in [&b"\xff\xfe\x00garbage"[..], b"[[[", b"island = 3", b"[sim]\nduration_ms = -1\n"] {
        std::fs::write(&p, junk).unwrap();
        for cmd in ["validate", "run"] {
            let o = run(&[cmd, "--scenario", p.to_str().unwrap()]);
            let code = o.status.code();
            assert!(code == Some(1) || code == Some(2), "{cmd} on {junk:?}: {code:?}");
            assert!(!String::from_utf8_lossy(&o.stderr).contains("panicked"));
        }
    }
}

#[test]
fn missing_scenario_is_an_io_error_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run(&["run", "--scenario", "missing.scenario", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(o.stdout.is_empty());
    assert!(!out.exists());
}

#[test]
fn run_staggered_summary_shows_join_instants() {
    let o = run(&["run", "--scenario", scenario("staggered.toml").to_str().unwrap(), "--seed", "1"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let mut rows = text.lines();
    let header: Vec<&str> = rows.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "joined_ms").unwrap();
    let joined: Vec<&str> = rows.filter(|r| r.starts_with("mote")).map(|r| r.split(',').nth(col).unwrap()).collect();
    assert_eq!(joined, ["0", "3842", "6940"]);
}

#[test]
fn run_hospital_writes_csv_trace() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "run",
        "--scenario",
        scenario("hospital.toml").to_str().unwrap(),
        "--duration",
        "10000",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(trace.starts_with("time_ms,node,kind,iface,peer,am,src,dst,seq,reliable,nbytes,appid,ref_seq,channel,status,key,data,note\n"));
    let emits = trace.lines().filter(|l| l.split(',').nth(2) == Some("SYN_EMIT")).count();
    assert_eq!(emits, 140);
    assert!(dir.path().join("summary.csv").exists());
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let sc = scenario("aal.toml");
    let link = "[link]\nloss_prob = 0.4\n";
    let text = std::fs::read_to_string(&sc).unwrap().replace("[link]\nloss_prob = 0.0\n", link);
    let lossy = dir.path().join("lossy.toml");
    std::fs::write(&lossy, text).unwrap();
    let lossy = lossy.to_str().unwrap();
    let o1 = run(&["run", "--scenario", lossy, "--seed", "99", "--format", "ndjson", "--out", a.to_str().unwrap()]);
    let o2 = bin()
        .args(["run", "--scenario", lossy, "--format", "ndjson", "--out", b.to_str().unwrap()])
        .env("ECOWEAVE_SEED", "99")
        .output()
        .unwrap();
    assert!(o1.status.success() && o2.status.success());
    let ta = std::fs::read(a.join("trace.ndjson")).unwrap();
    let tb = std::fs::read(b.join("trace.ndjson")).unwrap();
    assert!(!ta.is_empty());
    assert_eq!(ta, tb);
    let o3 = run(&["run", "--scenario", lossy, "--seed", "100", "--format", "ndjson", "--out", b.to_str().unwrap()]);
    assert!(o3.status.success());
    assert_ne!(ta, std::fs::read(b.join("trace.ndjson")).unwrap());
}

#[test]
fn zero_duration_is_rejected() {
    let o = run(&["run", "--scenario", scenario("staggered.toml").to_str().unwrap(), "--duration", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn replay_hospital_echoes_configuration() {
    let o = run(&["replay-hospital"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "configuration = {RSSI, PIR, PIR, PIR, PIR, PIR, PIR}\nchannels created: 7\nSYN_EMIT: 140\nSYN_SIGNAL: 140\n");
}

#[test]
fn replay_aal_lists_converters_and_tuples() {
    let o = run(&["replay-aal"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("converter 1: joined\n"));
    assert!(text.contains("converter 4: updates\n"));
    assert!(text.contains("tuple proxy/1/2/updates\n"));
    assert!(text.contains("tuple island/1/mote/3/descr\n"));
    let writes: usize = text.lines().find_map(|l| l.strip_prefix("TUPLE_WRITE: ")).unwrap().parse().unwrap();
    assert!(writes > 0);
}
