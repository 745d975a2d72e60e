use std::fs;
use std::process::{Command, Output};

fn cbm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cbm"))
        .args(args)
        .output()
        .expect("spawn cbm")
}

#[test]
fn run_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let o = cbm(&[
        "run", "--kappa-d", "4", "--n", "300", "--kernel", "double", "--leaf-size", "20",
        "--error-samples", "50", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    for key in ["\"N\": 300", "\"eps_a\"", "\"nnz\"", "\"M_Q\"", "\"layer\": \"double\""] {
        assert!(text.contains(key), "missing {key}");
    }
    assert!(String::from_utf8_lossy(&o.stderr).contains("eps_a"));
}

#[test]
fn run_to_stdout() {
    let o = cbm(&["run", "--kappa-d", "2", "--n", "150", "--error-samples", "20"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).trim_start().starts_with('{'));
}

#[test]
fn sweep_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    let o = cbm(&[
        "sweep", "--kappa-d-list", "2,4", "--ppw", "6", "--leaf-size", "20", "--error-samples", "20",
        "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "kappa_D,N,T_c,T_m,T_p,T_t,M_Q,M_m,nnz,eps_a");
    assert_eq!(lines.iter().filter(|l| !l.starts_with('#')).count(), 3);
    assert!(lines.iter().any(|l| l.starts_with("# nnz_slope,")));
}

#[test]
fn csv_geometry() {
    let dir = tempfile::tempdir().unwrap();
    let pts = dir.path().join("pts.csv");
    let rows: String = (0..120)
        .map(|i| {
            let t = i as f64 * 0.37;
            let z = -1.0 + 2.0 * (i as f64 + 0.5) / 120.0;
            let r = (1.0 - z * z).sqrt();
            format!("{},{},{}\n", r * t.cos(), r * t.sin(), z)
        })
        .collect();
    fs::write(&pts, rows).unwrap();
    let geometry = format!("csv:{}", pts.display());
    let o = cbm(&["run", "--kappa-d", "3", "--geometry", &geometry, "--error-samples", "30"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("\"N\": 120"));
}

#[test]
fn rejects_bad_input() {
    assert!(!cbm(&["run", "--kappa-d", "2", "--epsilon", "2"]).status.success());
    assert!(!cbm(&["run", "--kappa-d", "2", "--n", "10", "--ppw", "5"]).status.success());
    assert!(!cbm(&["run", "--kappa-d", "2", "--geometry", "obj:/nonexistent.obj"]).status.success());
    assert!(!cbm(&["run", "--kappa-d", "2", "--kernel", "triple"]).status.success());
}
