use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::DVector;
use nomctl::RunConfig;
use nomctl_core::dataset;
use tempfile::TempDir;

/// Small solver and trainer settings so every command finishes quickly.
const FAST: &[&str] = &[
    "--set",
    "nom.epochs=150",
    "--set",
    "nom.starts=3",
    "--set",
    "nom.cells=3",
    "--set",
    "data.grid=3x3",
    "--set",
    "train.hidden=4",
    "--set",
    "train.epochs=20",
    "--set",
    "train.batch=4",
];

fn nomctl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nomctl"))
        .current_dir(dir)
        .env_remove("NOMCTL_SEED")
        .args(args)
        .output()
        .expect("binary runs")
}

fn fast(dir: &Path, args: &[&str]) -> Output {
    let mut all: Vec<&str> = args.to_vec();
    all.extend_from_slice(FAST);
    nomctl(dir, &all)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_ok(o: &Output) {
    assert_eq!(o.status.code(), Some(0), "stdout:\n{}\nstderr:\n{}", stdout(o), stderr(o));
}

fn field<'a>(text: &'a str, key: &str) -> &'a str {
    text.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(" = ")))
        .unwrap_or_else(|| panic!("no '{key}' in:\n{text}"))
}

fn first_entry(bracketed: &str) -> f64 {
    bracketed.trim_matches(|c| c == '[' || c == ']').split(',').next().unwrap().trim().parse().unwrap()
}

#[test]
fn solve_at_target_is_feasible_with_zero_input() {
    let dir = TempDir::new().unwrap();
    let o = nomctl(dir.path(), &["solve", "--x", "0,0", "--r", "0"]);
    assert_ok(&o);
    let out = stdout(&o);
    assert_eq!(field(&out, "feasible"), "true");
    assert!(first_entry(field(&out, "u*")).abs() < 1e-3);
}

#[test]
fn solve_benchmark_state_writes_record() {
    let dir = TempDir::new().unwrap();
    let o = nomctl(dir.path(), &["solve", "--x", "1,0", "--out", "rec.csv"]);
    assert_ok(&o);
    assert_eq!(field(&stdout(&o), "feasible"), "true");
    let text = std::fs::read_to_string(dir.path().join("rec.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], dataset::column_names(2, 1, 1).join(","));
    assert_eq!(lines[1].split(',').count(), lines[0].split(',').count());
}

#[test]
fn infeasible_solve_exits_with_two() {
    let dir = TempDir::new().unwrap();
    let o = nomctl(dir.path(), &["solve", "--x", "1,0", "--set", "ocp.theta=1e6"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert_eq!(field(&stdout(&o), "feasible"), "false");
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = TempDir::new().unwrap();
    let o = nomctl(dir.path(), &["solve", "--x", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("expected 2 entries"), "{}", stderr(&o));
    assert_eq!(nomctl(dir.path(), &["solve"]).status.code(), Some(1));
    assert_eq!(nomctl(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(nomctl(dir.path(), &["solve", "--x", "1,0", "--set", "nom.bogus=1"]).status.code(), Some(1));
    assert_eq!(nomctl(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn missing_files_exit_with_one() {
    let dir = TempDir::new().unwrap();
    for args in [
        &["evaluate", "--dataset", "nope.nomd"][..],
        &["train", "--dataset", "nope.nomd"][..],
        &["bounds", "--dataset", "nope.nomd", "--net", "nope.nomw"][..],
        &["solve", "--x", "1,0", "--config", "nope.cfg"][..],
    ] {
        let o = nomctl(dir.path(), args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        assert!(stderr(&o).starts_with("error:"), "{args:?}: {}", stderr(&o));
    }
}

fn make_dataset(dir: &Path, extra: &[&str]) -> PathBuf {
    let mut args = vec!["dataset", "--out", "ds.nomd"];
    args.extend_from_slice(extra);
    assert_ok(&fast(dir, &args));
    dir.join("ds.nomd")
}

#[test]
fn dataset_and_evaluate() {
    let dir = TempDir::new().unwrap();
    let path = make_dataset(dir.path(), &[]);
    let ds = dataset::load(&path).unwrap();
    assert_eq!(ds.len(), 9);
    assert_eq!(ds.meta.grid, vec![3, 3]);

    let o = fast(dir.path(), &["evaluate", "--dataset", "ds.nomd", "--steps", "0", "--oracle-sample", "2"]);
    assert_ok(&o);
    let out = stdout(&o);
    assert_eq!(field(&out, "records"), "9");
    assert_eq!(field(&out, "violation"), "0.00%");
    assert_eq!(field(&out, "oracle sample"), "2");
    assert!(field(&out, "max relative loss gap").parse::<f64>().is_ok());
}

#[test]
fn evaluate_detects_a_corrupted_feasible_flag() {
    let dir = TempDir::new().unwrap();
    let path = make_dataset(dir.path(), &[]);
    let mut ds = dataset::load(&path).unwrap();
    let rec = &mut ds.records[4];
    rec.u = DVector::from_element(1, 9.0);
    rec.feasible = true;
    dataset::save(&ds, &path).unwrap();
    let o = nomctl(dir.path(), &["evaluate", "--dataset", "ds.nomd", "--steps", "0"]);
    assert_ok(&o);
    let v: f64 = field(&stdout(&o), "violation").trim_end_matches('%').parse().unwrap();
    assert!(v > 0.0);
}

#[test]
fn evaluate_runs_a_closed_loop() {
    let dir = TempDir::new().unwrap();
    make_dataset(dir.path(), &[]);
    let o = fast(dir.path(), &["evaluate", "--dataset", "ds.nomd", "--steps", "3"]);
    assert_ok(&o);
    let ce: f64 = field(&stdout(&o), "closed-loop control effort").parse().unwrap();
    assert!(ce.is_finite() && ce >= 0.0);
}

#[test]
fn train_simulate_and_plot_panels() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    make_dataset(d, &[]);
    assert_ok(&fast(d, &["train", "--dataset", "ds.nomd", "--out", "net.nomw"]));
    for ctrl in ["nom", "nn", "ilqr"] {
        let out = format!("{ctrl}.csv");
        let o = fast(d, &["simulate", "--controller", ctrl, "--x0", "1,0", "--steps", "4", "--out", &out]);
        assert_ok(&o);
        let text = std::fs::read_to_string(d.join(&out)).unwrap();
        assert!(text.starts_with("t,x1,x2,u1,"), "{text}");
    }
    let o = nomctl(
        d,
        &["plot-data", "--trace", "nom=nom.csv", "--trace", "nn.csv", "--trace", "ilqr=ilqr.csv", "--out-dir", "fig"],
    );
    assert_ok(&o);
    for panel in ["x1", "x2", "u1"] {
        let text = std::fs::read_to_string(d.join("fig").join(format!("panel_{panel}.csv"))).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,series,value"));
        let tags: Vec<&str> = lines.clone().take(3).map(|l| l.split(',').nth(1).unwrap()).collect();
        assert_eq!(tags, ["nom", "nn", "ilqr"]);
    }

    assert_ok(&nomctl(d, &["plot-data", "--trace", "nom.csv", "--out-dir", "single"]));
    assert!(d.join("single/panel_u1.csv").exists());
    assert_eq!(nomctl(d, &["plot-data", "--out-dir", "none"]).status.code(), Some(1));
}

#[test]
fn bounds_and_retrain_loop() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    make_dataset(d, &[]);
    assert_ok(&fast(d, &["train", "--dataset", "ds.nomd", "--out", "net.nomw"]));
    let o = fast(d, &["bounds", "--dataset", "ds.nomd", "--net", "net.nomw"]);
    assert_ok(&o);
    let out = stdout(&o);
    for key in ["lambda_bar_P", "delta_u_bar", "theta threshold", "sigma"] {
        assert!(out.lines().any(|l| l.starts_with(key)), "{key} missing:\n{out}");
    }

    let o = fast(d, &["retrain-loop", "--dataset", "ds.nomd", "--max-rounds", "1", "--out", "best.nomw"]);
    assert!(matches!(o.status.code(), Some(0) | Some(1)), "{}", stderr(&o));
    assert!(d.join("best.nomw").exists());
    assert_eq!(field(&stdout(&o), "rounds"), "1");
}

fn pipeline(dir: &Path) -> Vec<(String, Vec<u8>)> {
    make_dataset(dir, &["--seed", "11"]);
    assert_ok(&fast(dir, &["train", "--dataset", "ds.nomd", "--out", "net.nomw", "--seed", "11"]));
    assert_ok(&fast(dir, &["simulate", "--controller", "nn", "--steps", "10", "--out", "trace.csv", "--seed", "11"]));
    ["ds.nomd", "net.nomw", "trace.csv"]
        .iter()
        .map(|f| {
            let bytes = std::fs::read(dir.join(f)).unwrap();
            let kept: Vec<u8> = String::from_utf8(bytes)
                .unwrap()
                .lines()
                .filter(|l| !l.starts_with("created="))
                .flat_map(|l| l.bytes().chain(std::iter::once(b'\n')))
                .collect();
            (f.to_string(), kept)
        })
        .collect()
}

#[test]
fn pipeline_is_deterministic() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    assert_eq!(pipeline(a.path()), pipeline(b.path()));
}

#[test]
fn seed_precedence_config_env_flag() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let mut cfg = RunConfig::default();
    cfg.seed = 5;
    cfg.data.grid = vec![1, 1];
    cfg.nom.epochs = 20;
    std::fs::write(d.join("run.cfg"), cfg.to_text()).unwrap();

    let seed_of = |env: Option<&str>, flag: Option<&str>| -> u64 {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_nomctl"));
        cmd.current_dir(d).env_remove("NOMCTL_SEED");
        if let Some(s) = env {
            cmd.env("NOMCTL_SEED", s);
        }
        cmd.args(["dataset", "--config", "run.cfg", "--out", "s.nomd"]);
        if let Some(s) = flag {
            cmd.args(["--seed", s]);
        }
        let o = cmd.output().unwrap();
        assert_ok(&o);
        dataset::load(d.join("s.nomd")).unwrap().meta.seed
    };
    assert_eq!(seed_of(None, None), 5);
    assert_eq!(seed_of(Some("9"), None), 9);
    assert_eq!(seed_of(Some("9"), Some("13")), 13);
}

#[test]
fn config_file_round_trips_and_flags_override_it() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let text = "[run]\nseed = 3\n\n[nom]\nepochs = 25\nschedule = constant\n\n[data]\ngrid = 2x1\n";
    let cfg = RunConfig::parse(text).unwrap();
    assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    std::fs::write(d.join("run.cfg"), text).unwrap();

    assert_ok(&nomctl(d, &["dataset", "--config", "run.cfg", "--out", "a.nomd"]));
    let a = dataset::load(d.join("a.nomd")).unwrap();
    assert_eq!(a.len(), 2);
    assert!(a.meta.nom_digest.contains("epochs=25;"));
    assert!(a.meta.nom_digest.contains("sched=constant"));

    assert_ok(&nomctl(
        d,
        &["dataset", "--config", "run.cfg", "--grid", "1x3", "--set", "nom.epochs=30", "--out", "b.nomd"],
    ));
    let b = dataset::load(d.join("b.nomd")).unwrap();
    assert_eq!(b.meta.grid, vec![1, 3]);
    assert!(b.meta.nom_digest.contains("epochs=30;"));
}

#[test]
fn jobs_flag_is_accepted() {
    let dir = TempDir::new().unwrap();
    let o = nomctl(dir.path(), &["--jobs", "2", "solve", "--x", "0.5,0.5"]);
    assert!(matches!(o.status.code(), Some(0) | Some(2)));
    assert_eq!(nomctl(dir.path(), &["--jobs", "0", "solve", "--x", "0,0"]).status.code(), Some(1));
}
