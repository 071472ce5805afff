use std::path::{Path, PathBuf};
use std::process::Command;

use clap::Parser;
use flowtree::cli::{run, RunConfig};

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
        .display()
        .to_string()
}

fn config(args: &[&str]) -> RunConfig {
    RunConfig::try_parse_from(std::iter::once("flowtree").chain(args.iter().copied())).unwrap()
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect()
}

#[test]
fn critical_points_of_the_double_well() {
    let o = run(&config(&["critical-points", &fixture("double-well-1d"), "--pair", "1,2"]));
    assert_eq!(o.code, 0, "{}", o.summary);
    let rows = csv_rows(&o.artifacts[0].content);
    // F = x^3/3 - x: F' = x^2 - 1, F'' = 2x.
    let oracle = [(-1.0, 1, 2.0 / 3.0), (1.0, 0, -2.0 / 3.0)];
    assert_eq!(rows.len(), 2);
    for (row, (x, idx, f)) in rows.iter().zip(oracle) {
        assert!((row[0].parse::<f64>().unwrap() - x).abs() < 1e-9);
        assert_eq!(row[1].parse::<usize>().unwrap(), idx);
        assert!((row[2].parse::<f64>().unwrap() - f).abs() < 1e-9);
        assert!((row[3].parse::<f64>().unwrap() - 2.0).abs() < 1e-6);
    }
}

#[test]
fn torus_limit_certificate() {
    let o = run(&config(&[
        "limit",
        &fixture("torus-2d"),
        "--pair",
        "1,2",
        "--family",
        "morse",
        "--starts",
        &fixture("torus-offsets.csv"),
    ]));
    assert_eq!(o.code, 0, "{}", o.summary);
    let cert: serde_json::Value = serde_json::from_str(&o.artifacts[1].content).unwrap();
    let b = &cert["breaks"][0];
    assert!((b[0].as_f64().unwrap() - 0.5).abs() < 1e-3 && b[1].as_f64().unwrap().abs() < 1e-3);
    let radii: Vec<f64> = cert["ladder"]["radii"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(radii, vec![0.05, 0.025, 0.0125, 0.00625]);
    let res: Vec<f64> = cert["residuals"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!(res.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn outputs_are_reproducible() {
    let cases: Vec<Vec<String>> = vec![
        vec!["flow".into(), fixture("torus-2d"), "--pair".into(), "1,2".into(), "--start".into(), "0.25,0.1".into(), "--svg".into()],
        vec!["limit".into(), fixture("torus-2d"), "--pair".into(), "1,2".into(), "--starts".into(), fixture("torus-offsets.csv")],
        vec!["tree".into(), "reduce".into(), fixture("trees/double-well-split.toml")],
    ];
    for args in cases {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let a = run(&config(&args));
        let b = run(&config(&args));
        assert_eq!(a.code, 0, "{}", a.summary);
        assert_eq!(a.artifacts, b.artifacts);
    }
}

#[test]
fn rejects_nonpositive_tolerances() {
    let o = run(&config(&["critical-points", &fixture("double-well-1d"), "--pair", "1,2", "--tol-match", "0"]));
    assert_eq!(o.code, 1);
}

fn exe(args: &[&str], envs: &[(&str, &str)]) -> (i32, PathBuf) {
    let out = tempfile::tempdir().unwrap().keep();
    let status = Command::new(env!("CARGO_BIN_EXE_flowtree"))
        .args(args)
        .arg("--out")
        .arg(&out)
        .envs(envs.iter().copied())
        .output()
        .unwrap();
    (status.status.code().unwrap(), out)
}

#[test]
fn exit_code_matrix() {
    let cases: Vec<(Vec<String>, i32)> = vec![
        (vec!["tree".into(), "validate".into(), fixture("trees/double-well-edge.toml")], 0),
        (vec!["tree".into(), "validate".into(), fixture("trees/double-well-moved.toml")], 1),
        (vec!["tree".into(), "gamma".into(), fixture("trees/double-well-split.toml")], 0),
        (
            vec!["limit".into(), fixture("torus-2d"), "--pair".into(), "1,2".into(), "--starts".into(), fixture("torus-offsets-short.csv")],
            2,
        ),
        (
            vec![
                "limit".into(),
                fixture("torus-2d"),
                "--pair".into(),
                "1,2".into(),
                "--family".into(),
                "singular".into(),
                "--starts".into(),
                fixture("torus-offsets.csv"),
            ],
            1,
        ),
        (vec!["critical-points".into(), fixture("missing"), "--pair".into(), "1,2".into()], 1),
        (vec!["critical-points".into(), fixture("trees/double-well-edge.toml"), "--pair".into(), "1,2".into()], 1),
        (vec!["no-such-command".into()], 1),
    ];
    for (args, want) in cases {
        let a: Vec<&str> = args.iter().map(String::as_str).collect();
        let (code, _) = exe(&a, &[]);
        assert_eq!(code, want, "{args:?}");
    }
}

#[test]
fn fixture_directory_from_environment() {
    let dir = fixture("");
    let (code, out) = exe(&["critical-points", "double-well-1d", "--pair", "1,2"], &[("FLOWTREE_FIXTURES", &dir)]);
    assert_eq!(code, 0);
    let text = std::fs::read_to_string(out.join("critical-points.csv")).unwrap();
    assert_eq!(csv_rows(&text).len(), 2);
}

#[test]
fn svg_marks_folds_critical_points_and_flows() {
    let o = run(&config(&["flow", &fixture("cusp-2d"), "--pair", "1,2", "--start", "0.5,0", "--svg"]));
    assert_eq!(o.code, 0, "{}", o.summary);
    let svg = &o.artifacts[1].content;
    assert!(svg.contains(r#"class="fold""#) && svg.contains("stroke-dasharray"));
    assert!(svg.contains(r#"class="flow""#));
    let o = run(&config(&["flow", &fixture("torus-2d"), "--pair", "1,2", "--start", "0.25,0.1", "--svg"]));
    let svg = &o.artifacts[1].content;
    assert_eq!(svg.matches(r#"class="critical""#).count(), 4);
}

#[test]
fn tree_limit_of_the_family_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&config(&["tree", "limit", &fixture("torus-trees"), "--sequence", "breaking"]));
    assert_eq!(o.code, 0, "{}", o.summary);
    let limit = dir.path().join("limit.toml");
    std::fs::write(&limit, &o.artifacts[0].content).unwrap();
    let t = flowtree::tree::document::load_tree(&limit).unwrap();
    assert_eq!(t.edges[0].flow().unwrap().chain, vec![2]);
    let v = run(&config(&["tree", "validate", limit.to_str().unwrap()]));
    assert_eq!(v.code, 0, "{}", v.summary);
}
