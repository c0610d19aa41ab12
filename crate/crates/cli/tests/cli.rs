use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn lspart(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lspart"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_data(dir: &Path, n: usize) -> String {
    let path = dir.join("data.csv");
    let mut s = String::from("x1,y\n");
    for i in 0..n {
        let x = (i as f64 + 0.5) / n as f64;
        // deterministic pseudo-noise
        let e = ((i * 7919) % 101) as f64 / 101.0 - 0.5;
        s.push_str(&format!("{x},{}\n", (6.0 * x).sin() + e));
    }
    std::fs::write(&path, s).unwrap();
    path.to_str().unwrap().to_string()
}

fn without_runtime(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("runtime_ms");
    v
}

#[test]
fn fit_report_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path(), 400);
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = lspart(&[
            "fit",
            "--data",
            &data,
            "--kappa",
            "dpi",
            "--B",
            "200",
            "--seed",
            "3",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        serde_json::from_str::<Value>(&std::fs::read_to_string(out).unwrap()).unwrap()
    };
    let a = run("a.json");
    let b = run("b.json");
    assert_eq!(a["schema"], "lspart/1");
    assert!(a["runtime_ms"].is_u64());
    assert_eq!(a["estimators"].as_array().unwrap().len(), 4);
    assert_eq!(without_runtime(a), without_runtime(b));
}

#[test]
fn fit_writes_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path(), 300);
    let plot = dir.path().join("band.csv");
    let o = lspart(&[
        "fit",
        "--data",
        &data,
        "--kappa",
        "6",
        "--j",
        "2",
        "--B",
        "100",
        "--grid",
        "100",
        "--plot",
        plot.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(plot).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "x,estimate,lo,hi");
    assert_eq!(lines.len(), 101);
    for l in &lines[1..] {
        let v: Vec<f64> = l.split(',').map(|f| f.parse().unwrap()).collect();
        assert!(v[2] <= v[1] && v[1] <= v[3]);
    }
}

#[test]
fn malformed_row_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "x1,y\na,b\n").unwrap();
    let o = lspart(&["fit", "--data", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn bad_configuration_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path(), 100);
    assert_eq!(
        lspart(&["fit", "--data", &data, "--alpha", "1.5"]).status.code(),
        Some(2)
    );
    assert_eq!(
        lspart(&["fit", "--data", &data, "--family", "haar", "--m", "1"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        lspart(&["fit", "--data", &data, "--family", "cosine"]).status.code(),
        Some(2)
    );
    assert_eq!(lspart(&["simulate", "--model", "9"]).status.code(), Some(2));
}

#[test]
fn too_many_cells_is_a_numerical_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path(), 40);
    let o = lspart(&["fit", "--data", &data, "--kappa", "200"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("reducing"));
}

#[test]
fn missing_file_is_a_data_error() {
    assert_eq!(
        lspart(&["fit", "--data", "/nonexistent/data.csv"]).status.code(),
        Some(3)
    );
}

#[test]
fn simulate_writes_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let metrics = dir.path().join("metrics.csv");
    let out = dir.path().join("sim.json");
    let o = lspart(&[
        "simulate",
        "--model",
        "4",
        "--n",
        "400",
        "--reps",
        "4",
        "--kappa",
        "rot",
        "--j",
        "0,2",
        "--B",
        "100",
        "--metrics",
        metrics.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(report["schema"], "lspart/1");
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    for r in rows {
        let b = &r["band"];
        for key in ["cp", "ucr"] {
            let v = b[key].as_f64().unwrap();
            assert!((0.0..=1.0).contains(&v));
        }
        assert!(b["aw"].as_f64().unwrap() >= 0.0);
    }
    let table = std::fs::read_to_string(metrics).unwrap();
    // header plus two estimators at three evaluation points
    assert_eq!(table.lines().count(), 7);
}

#[test]
fn serial_and_parallel_simulations_agree() {
    let dir = tempfile::tempdir().unwrap();
    let run = |serial: bool| {
        let out = dir.path().join(format!("s{serial}.json"));
        let mut args = vec![
            "simulate", "--model", "1", "--n", "300", "--reps", "6", "--kappa", "5", "--B", "100",
        ];
        args.extend(["--out", out.to_str().unwrap()]);
        if serial {
            args.push("--serial");
        }
        let o = lspart(&args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        without_runtime(serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap())
    };
    assert_eq!(run(true), run(false));
}

#[test]
fn eval_points_and_quantile_knots() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path(), 400);
    let out = dir.path().join("r.json");
    let o = lspart(&[
        "fit",
        "--data",
        &data,
        "--knots",
        "quantile",
        "--kappa",
        "rot",
        "--j",
        "0,2",
        "--eval",
        "0.25;0.5",
        "--band",
        "none",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    let est = report["estimators"].as_array().unwrap();
    assert_eq!(est.len(), 2);
    let points = est[1]["points"].as_array().unwrap();
    assert_eq!(points.len(), 2);
    assert_eq!(points[1]["x"][0].as_f64(), Some(0.5));
    assert!(est[1]["band"].is_null());
}
