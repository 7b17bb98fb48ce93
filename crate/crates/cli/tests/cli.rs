use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use pointdrag::metrics::{Report, SweepReport};
use pointdrag::record::{RunRecord, SessionStatus};
use pointdrag::scenario::ScenarioFile;

fn pointdrag(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pointdrag"))
        .args(args)
        .env("POINTDRAG_OUT", out)
        .output()
        .unwrap()
}

fn stdout_paths(o: &Output) -> Vec<String> {
    String::from_utf8_lossy(&o.stdout).lines().map(str::to_string).collect()
}

#[test]
fn run_writes_and_prints_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let o = pointdrag(&["run", "--scenario", "twin_distractor_1"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let printed = stdout_paths(&o);
    assert_eq!(printed.len(), 4);
    for p in &printed {
        assert!(Path::new(p).starts_with(dir.path()) && Path::new(p).exists(), "{p}");
    }
    let rec = RunRecord::load(&dir.path().join("twin_distractor_1.record.json")).unwrap();
    assert_eq!(rec.status, SessionStatus::Converged);
    let npy = fs::read(dir.path().join("twin_distractor_1.field.npy")).unwrap();
    assert_eq!(&npy[..6], b"\x93NUMPY");
}

#[test]
fn out_of_bounds_handle_exits_1_naming_the_point() {
    let dir = tempfile::tempdir().unwrap();
    let o = pointdrag(&["gen-scenario", "twin_distractor"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let path = dir.path().join("twin_distractor_0.scenario.json");
    let mut sc = ScenarioFile::from_json(&fs::read_to_string(&path).unwrap()).unwrap();
    sc.points[0].handle.x = 999;
    fs::write(&path, sc.to_json().unwrap()).unwrap();

    let o = pointdrag(&["run", "--scenario", path.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("points[0].handle"));
    assert!(!dir.path().join("twin_distractor_0.record.json").exists());
}

#[test]
fn unknown_keys_are_rejected_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    let mut v: serde_json::Value = serde_json::from_str(
        &pointdrag::scenario::twin_distractor(0).to_json().unwrap(),
    )
    .unwrap();
    v["colour"] = serde_json::json!("red");
    fs::write(&path, v.to_string()).unwrap();
    let o = pointdrag(&["run", "--scenario", path.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));
}

#[test]
fn flags_land_in_the_record() {
    let dir = tempfile::tempdir().unwrap();
    let o = pointdrag(
        &["run", "--scenario", "twin_distractor", "--steps", "3", "--tau", "0.7", "--lambda", "0.5", "--seed", "9"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    let rec = RunRecord::load(&dir.path().join("twin_distractor_0.record.json")).unwrap();
    assert_eq!(rec.steps.len(), 3);
    assert_eq!(rec.status, SessionStatus::MaxSteps);
    assert_eq!((rec.config.tau, rec.config.lambda, rec.scenario.seed), (0.7, 0.5, 9));

    let o = pointdrag(&["run", "--scenario", "twin_distractor", "--tau", "1.5"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = pointdrag(&["run", "--scenario", "low_confidence_drift_2", "--steps", "20"], d.path());
        assert_eq!(o.status.code(), Some(0));
    }
    for name in ["record.json", "before.png", "after.png", "field.npy"] {
        let f = format!("low_confidence_drift_2.{name}");
        assert_eq!(fs::read(a.path().join(&f)).unwrap(), fs::read(b.path().join(&f)).unwrap(), "{f}");
    }
}

#[test]
fn render_replays_any_step() {
    let dir = tempfile::tempdir().unwrap();
    pointdrag(&["run", "--scenario", "twin_distractor_3", "--steps", "8"], dir.path());
    let rec = dir.path().join("twin_distractor_3.record.json");
    let rec = rec.to_str().unwrap();
    for step in ["0", "8"] {
        let o = pointdrag(&["render", "--record", rec, "--step", step], dir.path());
        assert_eq!(o.status.code(), Some(0));
        assert!(Path::new(&stdout_paths(&o)[0]).exists());
    }
    // the last step redraws exactly what `run` saved as the after image
    assert_eq!(
        fs::read(dir.path().join("twin_distractor_3.step0008.png")).unwrap(),
        fs::read(dir.path().join("twin_distractor_3.after.png")).unwrap()
    );
    let o = pointdrag(&["render", "--record", rec, "--step", "9"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn ablate_writes_a_four_variant_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = pointdrag(&["ablate", "--suite", "twin", "--steps", "4"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: Report =
        serde_json::from_str(&fs::read_to_string(dir.path().join("ablation_twin.json")).unwrap()).unwrap();
    assert_eq!(report.rows.len(), 5 * 4);
    let txt = fs::read_to_string(dir.path().join("ablation_twin.txt")).unwrap();
    for v in ["full", "no_dpt", "no_cms", "baseline"] {
        assert!(txt.contains(v));
    }
}

#[test]
fn sweep_writes_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let o = pointdrag(
        &["sweep", "--param", "lambda", "--values", "0,0.5,1", "--suite", "twin", "--steps", "3"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    let report: SweepReport =
        serde_json::from_str(&fs::read_to_string(dir.path().join("sweep_lambda_twin.json")).unwrap()).unwrap();
    assert_eq!(report.rows.iter().map(|r| r.value).collect::<Vec<_>>(), vec![0.0, 0.5, 1.0]);
    assert!(report.rows.iter().all(|r| r.failures == 0));

    let o = pointdrag(&["sweep", "--param", "eta", "--suite", "twin"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let o = pointdrag(&["sweep", "--param", "tau", "--suite", "nope"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(pointdrag(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(pointdrag(&["run"], dir.path()).status.code(), Some(1));
    assert_eq!(pointdrag(&["run", "--scenario", "no_such_thing"], dir.path()).status.code(), Some(1));
    assert_eq!(pointdrag(&["--help"], dir.path()).status.code(), Some(0));
}
