use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use bregman_dc::data::load_instance;
use bregman_dc_cli::args::PlotAxis;
use bregman_dc_cli::commands::normalized_curves;
use bregman_dc_cli::report::RunReport;
use serde_json::Value;

fn bdc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bdc"))
        .current_dir(dir)
        .env_remove("BDC_OUT_DIR")
        .args(args)
        .output()
        .expect("spawn bdc")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = bdc(dir, args);
    assert!(
        out.status.success(),
        "bdc {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Drops fields that carry wall-clock measurements.
fn strip_times(v: &mut Value) {
    match v {
        Value::Object(map) => {
            for key in ["time", "t0", "elapsed"] {
                map.remove(key);
            }
            map.values_mut().for_each(strip_times);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_times),
        _ => {}
    }
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn gen(dir: &Path, name: &str, m: &str, n: &str, s: &str, seed: &str) {
    ok(dir, &["gen", "--m", m, "--n", n, "--s", s, "--seed", seed, "--out", name]);
}

#[test]
fn gen_writes_loadable_deterministic_files() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "a.bdc", "200", "2000", "40", "1");
    gen(dir.path(), "b.bdc", "200", "2000", "40", "1");
    let inst = load_instance(dir.path().join("a.bdc")).unwrap();
    assert_eq!((inst.rows(), inst.cols(), inst.s), (200, 2000, 40));
    assert_eq!(
        fs::read(dir.path().join("a.bdc")).unwrap(),
        fs::read(dir.path().join("b.bdc")).unwrap()
    );
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = bdc(dir.path(), &["gen", "--m", "20", "--n", "100", "--s", "0", "--out", "x.bdc"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(bdc(dir.path(), &[]).status.code(), Some(1));
    assert_eq!(bdc(dir.path(), &["solve", "--instance", "missing.bdc"]).status.code(), Some(1));
    assert_eq!(bdc(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn numerical_failure_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("A.csv"), "1,1,0\n2,2,0\n").unwrap();
    fs::write(dir.path().join("b.csv"), "1\n2\n").unwrap();
    let out = bdc(
        dir.path(),
        &["solve", "--a-csv", "A.csv", "--b-csv", "b.csv", "--problem", "l12con", "--kappa", "0.1"],
    );
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn solve_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "i.bdc", "30", "150", "5", "4");
    for out in ["r1.json", "r2.json"] {
        ok(dir.path(), &["solve", "--instance", "i.bdc", "--criterion", "sc2", "--out", out]);
    }
    let (mut a, mut b) = (json(&dir.path().join("r1.json")), json(&dir.path().join("r2.json")));
    assert_eq!(a["report_version"], 1);
    assert!(!a["trajectory"].as_array().unwrap().is_empty());
    strip_times(&mut a);
    strip_times(&mut b);
    assert_eq!(a, b);
}

#[test]
fn constrained_sc2_builds_fewer_certificates_than_newton_steps() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "i.bdc", "100", "1000", "20", "7");
    ok(
        dir.path(),
        &["solve", "--instance", "i.bdc", "--problem", "l12con", "--criterion", "sc2", "--out", "r.json"],
    );
    let r = RunReport::load(&dir.path().join("r.json")).unwrap();
    assert!(r.cert_constructions < r.ssn_iter, "{} vs {}", r.cert_constructions, r.ssn_iter);
    assert!(r.feas <= 1e-9);
    assert!(r.rec.is_some());
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "i.bdc", "20", "100", "4", "2");
    fs::write(dir.path().join("cfg.json"), r#"{"lambda": 1.0, "method": "pdcae", "max_iter": 5}"#).unwrap();
    ok(dir.path(), &["solve", "--instance", "i.bdc", "--config", "cfg.json", "--lambda", "0.5", "--out", "r.json"]);
    let r = RunReport::load(&dir.path().join("r.json")).unwrap();
    assert_eq!(r.method, "pdcae");
    assert_eq!(r.params.lambda, Some(0.5));
    assert_eq!(r.outer_iter, 5);

    fs::write(dir.path().join("bad.json"), r#"{"lamda": 1.0}"#).unwrap();
    let out = bdc(dir.path(), &["solve", "--instance", "i.bdc", "--config", "bad.json"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn output_directory_override() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("outputs");
    let status = Command::new(env!("CARGO_BIN_EXE_bdc"))
        .current_dir(dir.path())
        .env("BDC_OUT_DIR", &target)
        .args(["gen", "--m", "5", "--n", "20", "--s", "2", "--out", "i.bdc"])
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    assert!(target.join("i.bdc").exists());
    assert!(!dir.path().join("i.bdc").exists());
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn bench_grid_table() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "bench",
        "--problem",
        "l12reg",
        "--sizes",
        "20x100x4",
        "--lambdas",
        "0.1,1",
        "--methods",
        "ibpdca-sc1,ibpdca-sc2",
        "--trials",
        "1",
        "--base-seed",
        "5",
    ];
    ok(dir.path(), &[&args[..], &["--out-dir", "b1"]].concat());
    ok(dir.path(), &[&args[..], &["--out-dir", "b2"]].concat());
    let t1 = read_csv(&dir.path().join("b1/bench.csv"));
    let t2 = read_csv(&dir.path().join("b2/bench.csv"));
    assert_eq!(t1[0].join(","), "size,method,obj,feas,rec,outer_iter,ssn_iter,time,t0");
    assert_eq!(t1.len(), 1 + 2 * 2);
    let methods: Vec<&str> = t1[1..].iter().map(|r| r[1].as_str()).collect();
    assert_eq!(
        methods,
        ["ibpdca-sc1|lambda=0.1", "ibpdca-sc2|lambda=0.1", "ibpdca-sc1|lambda=1", "ibpdca-sc2|lambda=1"]
    );
    for (r1, r2) in t1.iter().zip(&t2) {
        assert_eq!(r1[..7], r2[..7]);
    }
    let runs = fs::read_dir(dir.path().join("b1/runs")).unwrap().count();
    assert_eq!(runs, 4);
}

#[test]
fn bench_from_config_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("grid.json"),
        r#"{"problem": "l12con", "sizes": [[20, 100, 4]], "nfs": [1.1], "trials": 2, "base_seed": 3}"#,
    )
    .unwrap();
    ok(dir.path(), &["bench", "--config", "grid.json", "--out-dir", "b"]);
    let t = read_csv(&dir.path().join("b/bench.csv"));
    assert_eq!(t.len(), 3);
    assert_eq!(t[1][1], "ibpdca-sc1|nf=1.1");
    assert_eq!(t[2][1], "ibpdca-sc2|nf=1.1");

    fs::write(dir.path().join("empty.json"), r#"{"problem": "l12reg", "sizes": []}"#).unwrap();
    assert_eq!(bdc(dir.path(), &["bench", "--config", "empty.json"]).status.code(), Some(1));
}

#[test]
fn plot_normalizes_against_the_best_run() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "i.bdc", "30", "150", "5", "9");
    ok(dir.path(), &["solve", "--instance", "i.bdc", "--criterion", "sc1", "--out", "a.json"]);
    ok(dir.path(), &["solve", "--instance", "i.bdc", "--method", "pdcae", "--out", "b.json"]);
    ok(dir.path(), &["plot", "a.json", "b.json", "--out", "fig.svg"]);
    let svg = fs::read_to_string(dir.path().join("fig.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("<polyline") && svg.trim_end().ends_with("</svg>"));
    assert!(dir.path().join("fig.csv").exists());

    let a = RunReport::load(&dir.path().join("a.json")).unwrap();
    let b = RunReport::load(&dir.path().join("b.json")).unwrap();
    let f_min = a.obj.min(b.obj);
    let curves = normalized_curves(&[("a".into(), a.clone()), ("b".into(), b.clone())], PlotAxis::Iter).unwrap();
    for c in &curves {
        assert_eq!(c.points[0].1, 1.0);
    }
    let best = if a.obj <= b.obj { &curves[0] } else { &curves[1] };
    assert!(best.points.last().unwrap().1 <= f64::EPSILON);
    // both curves use the same F_min
    let last_a = curves[0].points.last().unwrap().1;
    assert!((last_a - (a.obj - f_min) / (a.initial_obj - f_min)).abs() <= 1e-15);

    let single = normalized_curves(&[("a".into(), a)], PlotAxis::Time).unwrap();
    assert_eq!(single[0].points[0].1, 1.0);
    assert!(normalized_curves(&[], PlotAxis::Time).is_err());
    assert_eq!(bdc(dir.path(), &["plot"]).status.code(), Some(1));
}
