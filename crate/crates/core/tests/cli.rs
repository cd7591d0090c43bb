use std::process::Command;

use local_hughes::experiments::{parse_scenario, preset, run_scenario, PRESETS};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_local-hughes"))
}

#[test]
fn presets_round_trip_through_the_cli() {
    for name in PRESETS {
        let out = bin().args(["dump-preset", name]).output().unwrap();
        assert!(out.status.success());
        let scn = parse_scenario(std::str::from_utf8(&out.stdout).unwrap()).unwrap();
        assert_eq!(scn, preset(name, false).unwrap());
    }
    let out = bin().args(["dump-preset", "nope"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_passes() {
    let out = bin().arg("verify").output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{text}");
    assert!(!text.contains("FAIL"));
}

#[test]
fn run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut scn = preset("corridor1d", false).unwrap();
    scn.resolution = vec![100];
    scn.time.dt = 5e-3;
    scn.output.snapshot_times = vec![0.0, 0.5];
    let path = dir.path().join("s.json");
    std::fs::write(&path, serde_json::to_string(&scn).unwrap()).unwrap();
    let out_dir = dir.path().join("out");
    let out = bin()
        .args(["run", path.to_str().unwrap(), "--outdir", out_dir.to_str().unwrap(), "--sequential"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["summary.txt", "history.csv", "scenario.json", "final_density.csv"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    let snaps = std::fs::read_dir(&out_dir)
        .unwrap()
        .filter(|e| {
            let name = e.as_ref().unwrap().file_name().to_string_lossy().into_owned();
            name.starts_with("snapshot_") && name.ends_with("_density.csv")
        })
        .count();
    assert_eq!(snaps, 2);
    let summary = std::fs::read_to_string(out_dir.join("summary.txt")).unwrap();
    let (report, _, _) = run_scenario(&scn).unwrap();
    let t = report.evacuation_time.unwrap();
    assert!(summary.contains(&format!("evacuation_time = {t}")));
}

#[test]
fn sweep_writes_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let mut scn = preset("corridor1d", false).unwrap();
    scn.resolution = vec![100];
    scn.time.dt = 5e-3;
    scn.output.snapshot_times.clear();
    let path = dir.path().join("s.json");
    std::fs::write(&path, serde_json::to_string(&scn).unwrap()).unwrap();
    let out_dir = dir.path().join("sweep");
    let out = bin()
        .args(["sweep", path.to_str().unwrap(), "--param", "L", "--values", "0,0.5,inf"])
        .args(["--outdir", out_dir.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    assert!(table.lines().nth(3).unwrap().starts_with("inf"));
}

#[test]
fn bad_input_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"name": "x"}"#).unwrap();
    let out = bin().args(["run", path.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
    let out = bin().args(["sweep", "corridor1d", "--param", "dt", "--values", "1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
