use std::path::Path;
use std::process::{Command, Output};

const TRIPARTITE_11: &str = r#"{"type":"dirichlet_tripartite","gamma":1.0,"beta":1.0}"#;

fn recsplit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_recsplit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(path).unwrap();
    assert!(!text.contains('\r'));
    text.lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn solve_from_file_and_inline() {
    let dir = tempfile::tempdir().unwrap();
    let law = dir.path().join("tripartite11.json");
    std::fs::write(&law, TRIPARTITE_11).unwrap();

    let out = recsplit(&["solve", "--law", law.to_str().unwrap(), "--json"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let alpha = v["alpha_star"].as_f64().unwrap();
    assert!((alpha - (17f64.sqrt() - 3.0) / 2.0).abs() < 1e-14);
    for key in ["psi_prime", "phi", "c_blocks", "c_nx"] {
        assert!(v[key].as_f64().unwrap().is_finite(), "{key}");
    }

    let out = recsplit(&["solve", "--law", TRIPARTITE_11]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("alpha_star  0.56155281280883"));
}

#[test]
fn usage_errors_exit_one() {
    let out = recsplit(&["solve", "--law", TRIPARTITE_11, "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(recsplit(&["frobnicate"]).status.code(), Some(1));
    let out = recsplit(&["solve", "--law", r#"{"type":"dirichlet_tripartite","gamma":-1,"beta":1}"#]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(recsplit(&["--help"]).status.code(), Some(0));
}

#[test]
fn sample_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for path in [&a, &b] {
        let out = recsplit(&[
            "sample", "--law", TRIPARTITE_11, "-n", "50", "--reps", "200", "--seed", "42", "--out",
            path.to_str().unwrap(),
        ]);
        assert!(out.status.success());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let rows = csv_rows(&a);
    assert_eq!(rows[0][..3], ["rep", "K_n", "K_n1"]);
    assert_eq!(rows[0].len(), 52);
    assert_eq!(rows.len(), 201);
    for row in &rows[1..] {
        let counts: Vec<u64> = row[2..].iter().map(|c| c.parse().unwrap()).collect();
        let weighted: u64 = counts.iter().enumerate().map(|(i, c)| (i as u64 + 1) * c).sum();
        assert_eq!(weighted, 50);
        assert_eq!(counts.iter().sum::<u64>(), row[1].parse::<u64>().unwrap());
    }

    let other = dir.path().join("c.csv");
    recsplit(&[
        "sample", "--law", TRIPARTITE_11, "-n", "50", "--reps", "200", "--seed", "43", "--out",
        other.to_str().unwrap(),
    ]);
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&other).unwrap());
}

#[test]
fn paintbox_and_martingale_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let solids = dir.path().join("solids.csv");
    let out = recsplit(&["paintbox", "--law", TRIPARTITE_11, "--delta", "1e-3", "--out", solids.to_str().unwrap()]);
    assert!(out.status.success());
    let rows = csv_rows(&solids);
    assert_eq!(rows[0], ["rank", "size"]);
    let sizes: Vec<f64> = rows[1..].iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(sizes.windows(2).all(|w| w[0] >= w[1]));
    assert!(sizes.iter().sum::<f64>() < 1.0);

    let m = dir.path().join("m.csv");
    let out = recsplit(&[
        "martingale", "--law", TRIPARTITE_11, "--kmax", "5", "--reps", "10", "--out", m.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let rows = csv_rows(&m);
    assert_eq!(rows[0], ["rep", "k", "M_k"]);
    assert_eq!(rows.len(), 1 + 10 * 6);
    assert_eq!(rows[1], ["0", "0", "1"]);
}

#[test]
fn expect_and_moments_tables() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("expect.csv");
    let out = recsplit(&[
        "expect", "--law", TRIPARTITE_11, "-n", "1,2,100", "-r", "1,2", "--out", path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&path);
    assert_eq!(rows[0], ["n", "r", "value", "ratio_to_asymptote"]);
    assert_eq!(rows[1][..3], ["1", "", "1"]);
    // two balls share a block with probability p(2) = 1/4
    assert_eq!(rows[3][..2], ["2", ""]);
    assert!((rows[3][2].parse::<f64>().unwrap() - 1.75).abs() < 1e-15);
    assert_eq!(rows.len(), 1 + 2 + 3 + 3);

    let path = dir.path().join("moments.csv");
    let bessel = r#"{"type":"dirichlet_tripartite","gamma":0.5,"beta":0.5}"#;
    let out = recsplit(&["moments", "--law", bessel, "-K", "8", "--out", path.to_str().unwrap()]);
    assert!(out.status.success());
    let rows = csv_rows(&path);
    assert_eq!(rows[0], ["k", "a_k", "b_k", "closed_form_if_any", "rel_gap"]);
    assert_eq!(rows.len(), 10);
    let a2: f64 = rows[3][1].parse().unwrap();
    assert!((a2 - 4.0 / std::f64::consts::PI).abs() < 1e-12);
    for row in &rows[1..] {
        assert!(row[4].parse::<f64>().unwrap() < 1e-8);
    }

    let out = recsplit(&["moments", "--law", TRIPARTITE_11, "-K", "4"]);
    let text = stdout(&out);
    assert!(text.lines().nth(1).unwrap().ends_with(",,"));
}

#[test]
fn equivalence_and_noncoincidence() {
    let out = recsplit(&[
        "equivalence", "--alpha", "0.5", "-d", "2", "-n", "5", "--reps", "20000", "--seed", "7", "--json",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(v["p_value"].as_f64().unwrap() >= 1e-3);
    assert!(v["control"]["p_value"].as_f64().unwrap() < 1e-6);
    assert_eq!(v["p_n_gaps"].as_array().unwrap().len(), 12);

    let out = recsplit(&["noncoincidence", "-r", "2", "--gamma", "1.0", "--json"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!((v["residual_at_4"].as_f64().unwrap() - 1.0 / 832.0).abs() < 1e-14);
}

#[test]
fn quick_verification_passes() {
    let out = recsplit(&["verify", "--quick", "--threads", "4"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let checks = v.as_array().unwrap();
    assert!(checks.len() >= 20);
    for c in checks {
        assert_eq!(c["pass"], serde_json::Value::Bool(true), "{c}");
        assert!(c["check_name"].is_string() && c["threshold"].is_number());
    }
}
