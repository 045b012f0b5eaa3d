use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn apps_dir() -> PathBuf {
    root().join("../core/fixtures/apps")
}

fn cfg(name: &str) -> PathBuf {
    root().join(format!("../core/fixtures/configs/{name}.cfg"))
}

fn homecheck(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_homecheck"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn exit_codes_follow_the_outcome() {
    let apps = apps_dir();
    let found = homecheck(&["check", s(&cfg("alice")), "--apps", s(&apps)]);
    assert_eq!(found.status.code(), Some(2));
    assert!(stdout(&found).contains("door-locked-away"));

    let clean = homecheck(&["check", s(&cfg("goodgroup")), "--apps", s(&apps), "-k", "2"]);
    assert_eq!(clean.status.code(), Some(0), "{}", stdout(&clean));

    let missing = homecheck(&["check", "/nonexistent.cfg", "--apps", s(&apps)]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error:"));

    let bad_prop = homecheck(&["check", s(&cfg("alice")), "--apps", s(&apps), "--props", "no-such-property"]);
    assert_eq!(bad_prop.status.code(), Some(1));
}

#[test]
fn records_are_json_lines() {
    let o = homecheck(&["check", s(&cfg("alice")), "--apps", s(&apps_dir()), "--format", "records"]);
    let lines: Vec<serde_json::Value> = stdout(&o)
        .lines()
        .map(|l| serde_json::from_str(l).expect("json line"))
        .collect();
    let kinds: Vec<&str> = lines.iter().map(|l| l["type"].as_str().unwrap()).collect();
    assert_eq!(kinds.last(), Some(&"summary"));
    assert_eq!(kinds.iter().filter(|k| **k == "violation").count(), 1);
    assert_eq!(lines.last().unwrap()["violations"], 1);
}

#[test]
fn written_traces_replay() {
    let dir = tempfile::tempdir().unwrap();
    let apps = apps_dir();
    let o = homecheck(&[
        "check",
        s(&cfg("makeitso")),
        "--apps",
        s(&apps),
        "-k",
        "2",
        "--failures",
        "--comm-failures",
        "--traces",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let mut traces: Vec<PathBuf> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().path()).collect();
    traces.sort();
    assert!(!traces.is_empty());
    for t in &traces {
        let r = homecheck(&["replay", s(&cfg("makeitso")), s(t), "--apps", s(&apps), "--failures", "--comm-failures"]);
        assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
        assert!(stdout(&r).contains("replay ok"));
    }

    let text = std::fs::read_to_string(&traces[0]).unwrap();
    let mut trace: serde_json::Value = serde_json::from_str(&text).unwrap();
    trace["steps"][0]["event"] = "nobody.presence=present".into();
    let edited = dir.path().join("edited.json");
    std::fs::write(&edited, trace.to_string()).unwrap();
    let r = homecheck(&["replay", s(&cfg("makeitso")), s(&edited), "--apps", s(&apps)]);
    assert_eq!(r.status.code(), Some(1));
}

#[test]
fn deps_prints_table_and_dot() {
    let apps = apps_dir();
    let table = homecheck(&["deps", s(&cfg("fiveapps")), "--apps", s(&apps)]);
    assert_eq!(table.status.code(), Some(0));
    let dot = homecheck(&["deps", s(&cfg("fiveapps")), "--apps", s(&apps), "--dot"]);
    let dot = stdout(&dot);
    assert!(dot.trim_start().starts_with("digraph"));
    assert!(dot.trim_end().ends_with('}'));
}

#[test]
fn attribute_reports_a_verdict() {
    let apps = apps_dir();
    let o = homecheck(&[
        "attribute",
        s(&apps.join("door_logger.app")),
        "--into",
        s(&cfg("inventory")),
        "--apps",
        s(&apps),
        "--format",
        "records",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["verdict"], "Malicious");
}

#[test]
fn import_writes_a_checkable_system() {
    let dir = tempfile::tempdir().unwrap();
    let ifttt = root().join("fixtures/ifttt");
    let o = homecheck(&[
        "import-ifttt",
        s(&ifttt.join("rules.txt")),
        "--inventory",
        s(&ifttt.join("home.cfg")),
        "--out-dir",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let check = homecheck(&[
        "check",
        s(&dir.path().join("system.cfg")),
        "--apps",
        s(&dir.path().join("rules.app")),
        "--props",
        "door-locked-away",
    ]);
    assert_eq!(check.status.code(), Some(2));
    assert!(stdout(&check).contains("door-locked-away"));
}
