use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ogp-bounds"));
    cmd.args(args).env_remove("OGPB_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn bound_reports_the_threshold() {
    let out = run(&["--format", "json", "bound", "--k", "1,2", "--q", "0.9689"], &[]);
    assert!(out.status.success());
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    let rec = &v[0];
    assert!((rec["alpha_bar"].as_f64().unwrap() - 1.7001).abs() < 1e-4);
    assert_eq!(rec["manifest"]["tool"], "ogp-bounds");
    assert_eq!(rec["mode"], "level-consistent");
}

#[test]
fn csv_leads_with_the_manifest() {
    let out = run(
        &["--format", "csv", "bound", "--k", "1,2,4", "--q", "0.9932,0.964"],
        &[],
    );
    assert!(out.status.success());
    let text = stdout(&out);
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# manifest {"));
    assert_eq!(
        lines.next().unwrap(),
        "table,k,q,kappa,mode,h,log_p,alpha_bar,printed,delta,evaluations"
    );
    let row = lines.next().unwrap();
    assert!(row.starts_with(",1;2;4,0.9932;0.964,1,level-consistent,"), "{row}");
}

#[test]
fn invalid_input_exits_with_validation_code() {
    assert_eq!(run(&["bound", "--k", "1,2", "--q", "1.5"], &[]).status.code(), Some(2));
    assert_eq!(
        run(&["bound", "--k", "1,3,4", "--q", "0.9,0.5"], &[]).status.code(),
        Some(2)
    );
    assert_eq!(run(&["table", "99"], &[]).status.code(), Some(2));
    assert_eq!(run(&["suggest-k", "--c", "2,4"], &[]).status.code(), Some(2));
    assert_eq!(
        run(&["bound", "--k", "1,2", "--q", "0.9", "--kappa", "-1"], &[])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn suggest_k_prints_the_sequence() {
    let out = run(&["suggest-k", "--c", "1,4.3528,12.7310,29.6479"], &[]);
    assert!(out.status.success());
    assert_eq!(stdout(&out).trim(), "[1,4,12,24]");
}

#[test]
fn reruns_are_bit_identical() {
    for format in ["json", "csv"] {
        let args = ["--format", format, "table", "7", "--printed-q"];
        let a = run(&args, &[]);
        let b = run(&args, &[("OGPB_THREADS", "1")]);
        assert!(a.status.success() && b.status.success());
        assert_eq!(a.stdout, b.stdout, "{format}");
    }
    let args = ["--format", "json", "verify", "quadrature", "--samples", "20000"];
    let a = run(&args, &[("OGPB_THREADS", "1")]);
    let b = run(&args, &[("OGPB_THREADS", "4")]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn out_flag_writes_the_file() {
    let path = std::env::temp_dir().join(format!("ogpb-cli-{}.json", std::process::id()));
    let p = path.to_str().unwrap();
    let out = run(
        &["--format", "json", "--out", p, "bound", "--k", "1,3", "--q", "0.978"],
        &[],
    );
    assert!(out.status.success());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert!((v[0]["alpha_bar"].as_f64().unwrap() - 1.6664).abs() < 2e-4);
    std::fs::remove_file(&path).unwrap();
}

#[test]
fn constraint_dump_has_a_header_and_rhs() {
    let path = std::env::temp_dir().join(format!("ogpb-cli-{}.txt", std::process::id()));
    let p = path.to_str().unwrap();
    let out = run(&["bound", "--k", "1,4", "--q", "0.984", "--dump-constraints", p], &[]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next().unwrap(), "6 7 18");
    assert!(text.lines().any(|l| l == "# rhs 6"));
    std::fs::remove_file(&path).unwrap();
}

#[test]
fn verify_entropy_passes() {
    let out = run(&["--format", "json", "verify", "entropy"], &[]);
    assert!(out.status.success());
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(v.as_array().unwrap().iter().all(|c| c["passed"] == true));
}
