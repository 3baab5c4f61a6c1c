use std::process::{Command, Output};

use serde_json::Value;

fn keyboard(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_keyboard"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn table_csv_has_expected_boundaries() {
    let out = keyboard(&[
        "table", "--phi", "0.2", "--eps1", "0.03", "--eps2", "0.03", "--nmax", "16",
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("n,escalate_le,deescalate_ge"));
    let rows: Vec<(i64, i64)> = lines
        .map(|l| {
            let f: Vec<i64> = l.split(',').map(|x| x.parse().unwrap()).collect();
            (f[1], f[2])
        })
        .collect();
    let esc: Vec<i64> = rows.iter().map(|r| r.0).collect();
    let de: Vec<i64> = rows.iter().map(|r| r.1).collect();
    assert_eq!(esc, [0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 2, 2, 2, 2, 2]);
    assert_eq!(de, [1, 1, 1, 1, 2, 2, 2, 2, 3, 3, 3, 3, 3, 4, 4, 4]);
}

#[test]
fn table_json_and_markdown() {
    let out = keyboard(&[
        "table", "--phi", "0.3", "--eps1", "0.05", "--eps2", "0.05", "--nmax", "4", "--format", "json",
    ]);
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["n_max"], 4);
    let md = keyboard(&[
        "table", "--phi", "0.3", "--eps1", "0.05", "--eps2", "0.05", "--format", "md",
    ]);
    assert!(stdout(&md).contains("(0.2500, 0.3500)"));
}

#[test]
fn invalid_target_key_exits_with_code_2() {
    let out = keyboard(&["table", "--phi", "0.05", "--eps1", "0.06", "--eps2", "0.05"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unreachable_mtd_count_exits_with_code_3() {
    let out = keyboard(&[
        "scenario",
        "--rows",
        "1",
        "--cols",
        "2",
        "--phi",
        "0.3",
        "--eps1",
        "0.0001",
        "--eps2",
        "0.0001",
        "--mtds",
        "2",
        "--max-attempts",
        "10",
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn scenarios_are_reproducible_and_have_the_requested_mtd_count() {
    let dir = tempfile::tempdir().unwrap();
    let json_path = dir.path().join("s.json");
    let csv_path = dir.path().join("s.csv");
    let base = [
        "scenario", "--rows", "3", "--cols", "4", "--phi", "0.3", "--eps1", "0.05", "--eps2", "0.05", "--mtds", "2",
        "--count", "5", "--seed", "11", "--out",
    ];
    let mut args = base.to_vec();
    args.push(json_path.to_str().unwrap());
    assert!(keyboard(&args).status.success());
    let mut args = base.to_vec();
    args.push(csv_path.to_str().unwrap());
    assert!(keyboard(&args).status.success());

    let scenarios: Vec<Value> = serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
    assert_eq!(scenarios.len(), 5);
    for s in &scenarios {
        assert_eq!(s["mtd_count"], 2);
        assert_eq!(s["matrix"].as_array().unwrap().len(), 3);
    }

    let csv = std::fs::read_to_string(&csv_path).unwrap();
    assert_eq!(csv.lines().next(), Some("scenario_id,j,k,p"));
    assert_eq!(csv.lines().count(), 1 + 5 * 12);
    // Both outputs describe the same draws.
    let first = csv.lines().nth(1).unwrap();
    let p: f64 = first.rsplit(',').next().unwrap().parse().unwrap();
    assert_eq!(p, scenarios[0]["matrix"][0][0].as_f64().unwrap());
}

#[test]
fn simulate_writes_summary_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(
        &spec,
        r#"{"trial": {"rows": 2, "cols": 3, "phi": 0.3, "eps1": 0.05, "eps2": 0.05, "max_n": 18},
            "scenarios": {"kind": "generated", "target_mtd_count": 1},
            "n_scenarios": 3, "trials_per_scenario": 10}"#,
    )
    .unwrap();
    let run = |name: &str, threads: &str| {
        let out_dir = dir.path().join(name);
        let out = keyboard(&[
            "simulate",
            "--spec",
            spec.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--seed",
            "5",
            "--threads",
            threads,
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read_to_string(out_dir.join("summary.csv")).unwrap()
    };
    let one = run("a", "1");
    let four = run("b", "4");
    assert_eq!(one, four);
    assert_eq!(one.lines().count(), 1 + 3 + 1);
    assert!(dir.path().join("a").join("report.json").exists());
}

#[test]
fn malformed_spec_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(&spec, r#"{"trial": {"rows": 2}}"#).unwrap();
    let out = keyboard(&[
        "simulate",
        "--spec",
        spec.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(
        &spec,
        r#"{"trial": {"rows": 2, "cols": 3, "phi": 0.3, "eps1": 0.05, "eps2": 0.05, "max_n": 18},
            "scenarios": {"kind": "generated"}, "n_scenarios": 0}"#,
    )
    .unwrap();
    let out = keyboard(&[
        "simulate",
        "--spec",
        spec.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
