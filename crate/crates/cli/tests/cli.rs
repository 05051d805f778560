use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_chaosgraph"));
    c.env_remove("CHAOSGRAPH_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const SIMULATE: &str = r#"
dimension = 1
lambdas = [30.0, 60.0]
replicates = 300
seed = 9

[rule]
kind = "ball"
radius = 0.1

[samples]
geometric = 20000
"#;

#[test]
fn diagram_second_cumulant_matches_isometry() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "d.toml",
        "dimension = 1\nlambdas = []\n[rule]\nkind = \"ball\"\nradius = 0.1\n\
         [diagram]\norder = 2\nmeasures = [0.5, 1.5, 1.0]\nkernel = [1.0, 0.2, 0.0, 0.2, 0.0, 2.0, 0.0, 2.0, 0.5]\nlambda = 2.0\n",
    );
    let out = dir.path().join("o");
    let o = run(&["diagram", "--config", &cfg, "--out", out.to_str().unwrap(), "--check"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&out.join("diagram.json"));
    // Independent evaluation of 2 Σ (λμ_a)(λμ_b) f_ab².
    let mu = [0.5, 1.5, 1.0];
    let f = [[1.0, 0.2, 0.0], [0.2, 0.0, 2.0], [0.0, 2.0, 0.5]];
    let mut iso = 0.0;
    for a in 0..3 {
        for b in 0..3 {
            iso += 2.0 * (2.0 * mu[a]) * (2.0 * mu[b]) * f[a][b] * f[a][b];
        }
    }
    let chi2 = v["cumulant"].as_f64().unwrap();
    assert!((chi2 - iso).abs() <= 1e-10 * iso, "{chi2} vs {iso}");
    assert_eq!(v["two_block_partitions"], 2);
}

#[test]
fn diagram_third_cumulant_matches_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "d.toml",
        "dimension = 1\nlambdas = []\n[rule]\nkind = \"ball\"\nradius = 0.1\n\
         [diagram]\norder = 3\nmeasures = [1.5, 2.0]\nkernel = [1.0, 1.0, 1.0, 0.0]\nsimulate = 100000\n",
    );
    let out = dir.path().join("o");
    let o = run(&["diagram", "--config", &cfg, "--out", out.to_str().unwrap(), "--check"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    // Pmf summation of the third cumulant of (N1 − 1.5)² − N1 + 2(N1 − 1.5)(N2 − 2).
    assert_eq!(json(&out.join("diagram.json"))["cumulant"].as_f64().unwrap(), 168.0);
}

#[test]
fn simulate_writes_fixed_artifacts_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.toml", SIMULATE);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    let o = run(&["simulate", "--config", &cfg, "--out", a.to_str().unwrap(), "--check"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(run(&["simulate", "--config", &cfg, "--out", b.to_str().unwrap()]).status.success());
    let o = bin()
        .args(["simulate", "--config", &cfg, "--out", c.to_str().unwrap()])
        .env("CHAOSGRAPH_THREADS", "1")
        .output()
        .unwrap();
    assert!(o.status.success());

    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 8);
    for n in &names {
        let x = fs::read(a.join(n)).unwrap();
        assert_eq!(x, fs::read(b.join(n)).unwrap(), "{n:?}");
        assert_eq!(x, fs::read(c.join(n)).unwrap(), "{n:?}");
    }

    let ens = fs::read_to_string(a.join("ensemble_lambda_30.csv")).unwrap();
    assert_eq!(ens.lines().next().unwrap(), "replicate_id,F,I1,I2,n_points");
    assert_eq!(ens.lines().count(), 301);
    let summary = fs::read_to_string(a.join("summary.csv")).unwrap();
    assert_eq!(
        summary.lines().next().unwrap(),
        "lambda,var_analytic,var_empirical,w1,fourth_gap,bound_general,regime"
    );
    assert_eq!(fs::read_to_string(a.join("plot_w1_vs_lambda.csv")).unwrap().lines().next().unwrap(), "x,y");
    let s = json(&a.join("ensemble_lambda_60.json"));
    assert_eq!(s["standardization"]["mode"], "analytic");
    assert!(s["max_relative_residual"].as_f64().unwrap() < 1e-8);
    // Campbell mean λ²(2δ − δ²).
    assert!((s["mean_analytic"].as_f64().unwrap() - 3600.0 * 0.19).abs() < 1e-9);
}

#[test]
fn seed_flag_changes_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.toml", SIMULATE);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(run(&["simulate", "--config", &cfg, "--out", a.to_str().unwrap()]).status.success());
    assert!(run(&["simulate", "--config", &cfg, "--out", b.to_str().unwrap(), "--seed", "10"]).status.success());
    assert_ne!(
        fs::read(a.join("ensemble_lambda_30.csv")).unwrap(),
        fs::read(b.join("ensemble_lambda_30.csv")).unwrap()
    );
}

#[test]
fn bounds_emit_reports_with_documented_fields() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.toml", SIMULATE);
    let out = dir.path().join("o");
    let o = run(&["bounds", "--config", &cfg, "--out", out.to_str().unwrap(), "--check"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&out.join("bounds_lambda_30.json"));
    for k in ["lambda", "v1_sq", "v2_sq", "a", "b", "c", "d", "e", "bound_general", "bound_first", "bound_second", "stderr"] {
        assert!(v.get(k).is_some(), "missing {k}");
    }
    assert!(out.join("sandwich_lambda_60.json").exists());
}

#[test]
fn validation_failures_exit_one_with_field_paths() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write(dir.path(), "e.toml", &SIMULATE.replace("[30.0, 60.0]", "[]"));
    let o = run(&["simulate", "--config", &empty]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("lambdas: must not be empty"));

    let neg = write(dir.path(), "n.toml", &SIMULATE.replace("[30.0, 60.0]", "[30.0, -60.0]"));
    let o = run(&["simulate", "--config", &neg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("lambdas[1]"));

    let flower = write(
        dir.path(),
        "f.toml",
        &SIMULATE.replace("kind = \"ball\"\nradius = 0.1", "kind = \"flower\"\nprofile = \"inverse\""),
    );
    let o = run(&["bounds", "--config", &flower]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("dimension"));

    assert_eq!(run(&["simulate"]).status.code(), Some(1));
    assert_eq!(run(&["regimes", "--preset", "nope"]).status.code(), Some(1));
    assert_eq!(run(&["simulate", "--config", "/definitely/missing.toml"]).status.code(), Some(1));
}

#[test]
fn flower_presets_reproduce_regimes() {
    let dir = tempfile::tempdir().unwrap();
    for (preset, regime) in [("flower-a", "R2"), ("flower-b", "R3"), ("flower-c", "R1"), ("flower-e", "R4")] {
        let out = dir.path().join(preset);
        let o = run(&["regimes", "--preset", preset, "--out", out.to_str().unwrap(), "--check"]);
        assert!(o.status.success(), "{preset}: {}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(json(&out.join("regime_verdict.json"))["verdict"]["regime"], regime);
    }
}

#[test]
fn failed_check_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let text = "experiment = \"regimes\"\ndimension = 1\nlambdas = [100.0, 300.0, 1000.0, 3000.0]\n\
                [rule]\nkind = \"ball\"\nradius = 1.0\nalpha_exponent = 0.0\n[check]\nexpected_regime = \"R1\"\n";
    let cfg = write(dir.path(), "r.toml", text);
    let out = dir.path().join("o");
    let o = run(&["regimes", "--config", &cfg, "--out", out.to_str().unwrap(), "--check"]);
    assert_eq!(o.status.code(), Some(3));
    // Without --check the same run succeeds.
    assert!(run(&["regimes", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
}

#[test]
fn gaussian_family_in_limit_test_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let text = "dimension = 1\nlambdas = [100.0, 300.0, 1000.0, 3000.0]\nreplicates = 100\n\
                [rule]\nkind = \"ball\"\nradius = 1.0\nalpha_exponent = 0.0\n";
    let cfg = write(dir.path(), "l.toml", text);
    let o = run(&["limit-test", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("R4"));
}

#[test]
fn per_lambda_failures_are_isolated() {
    let dir = tempfile::tempdir().unwrap();
    // A zero weight has zero variance, so no intensity can be standardized.
    let text = format!("{SIMULATE}\n[weight]\nkind = \"constant\"\nvalue = 0.0\n");
    let cfg = write(dir.path(), "z.toml", &text);
    let out = dir.path().join("o");
    let o = run(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let errors = json(&out.join("errors.json"));
    assert_eq!(errors.as_array().unwrap().len(), 2);
    assert!(out.join("summary.csv").exists());
}
