use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tebvs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tebvs"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn assets() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/assets"))
}

#[test]
fn bench_single_planner_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.csv");
    let o = tebvs(&[
        "bench",
        "--planner",
        "teb-vs",
        "--scenario",
        "corridor",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let text = fs::read_to_string(out).unwrap();
    // header, one planner row and four stat rows
    assert!(text.lines().count() >= 5, "{text}");
    assert!(text.contains("teb-vs"));
}

#[test]
fn missing_grid_is_invalid_input() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(assets().join("corridor.toml")).unwrap();
    let path = dir.path().join("s.toml");
    fs::write(&path, text.replace("corridor.pgm", "nowhere.pgm")).unwrap();
    let o = tebvs(&["simulate", "--scenario", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nowhere.pgm"));
}

#[test]
fn unknown_scenario_key_is_invalid_input() {
    let dir = tempfile::tempdir().unwrap();
    fs::copy(
        assets().join("corridor.pgm"),
        dir.path().join("corridor.pgm"),
    )
    .unwrap();
    fs::copy(
        assets().join("corridor.meta"),
        dir.path().join("corridor.meta"),
    )
    .unwrap();
    let text = fs::read_to_string(assets().join("corridor.toml")).unwrap();
    let path = dir.path().join("s.toml");
    fs::write(&path, format!("speed = 3\n{text}")).unwrap();
    let o = tebvs(&["plan", "--scenario", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("speed"));
}

#[test]
fn scenario_file_matches_builtin_corridor() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    let toml = assets().join("corridor.toml");
    for (scenario, out) in [("corridor", &a), (toml.to_str().unwrap(), &b)] {
        let o = tebvs(&[
            "plan",
            "--scenario",
            scenario,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
}

#[test]
fn plan_writes_band_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.jsonl");
    let o = tebvs(&["plan", "--trace", trace.to_str().unwrap(), "--no-timing"]);
    assert_eq!(o.status.code(), Some(0));
    let band: Vec<serde_json::Value> = o
        .stdout
        .split(|b| *b == b'\n')
        .filter(|l| !l.is_empty())
        .map(|l| serde_json::from_slice(l).unwrap())
        .collect();
    assert_eq!(band[0]["x"], 2.0);
    assert_eq!(band[0]["y"], 5.0);
    assert!(band[1..].iter().all(|p| p["dt"].as_f64().unwrap() > 0.0));
    let records = fs::read_to_string(trace).unwrap();
    assert!(records.lines().count() >= 1);
    assert!(records.lines().all(|l| l.contains("\"wall_ms\":0.0")));
}

#[test]
fn check_is_seeded_and_deterministic() {
    let a = tebvs(&["check", "--seed", "7"]);
    let b = tebvs(&["check", "--seed", "7"]);
    assert_eq!(
        a.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&a.stdout)
    );
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert_eq!(text.lines().count(), 7);
    assert!(text.lines().all(|l| l.starts_with("PASS ")));
}

#[test]
fn bad_arguments_exit_2() {
    assert_eq!(
        tebvs(&["simulate", "--planner", "rrt"]).status.code(),
        Some(2)
    );
    assert_eq!(
        tebvs(&["bench", "--repetitions", "0", "--planner", "teb"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(tebvs(&["frobnicate"]).status.code(), Some(2));
}
