use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

fn spec_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("specs").join(name)
}

struct Outcome {
    code: i32,
    stdout: String,
    stderr: String,
}

fn nlmc(args: &[&str]) -> Outcome {
    nlmc_with_env(args, &[])
}

fn nlmc_with_env(args: &[&str], env: &[(&str, &Path)]) -> Outcome {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_nlmc"));
    cmd.args(args).env_remove("NLMC_OUT_DIR");
    for (k, v) in env {
        cmd.env(k, v);
    }
    let out = cmd.output().expect("binary runs");
    Outcome {
        code: out.status.code().expect("exit code"),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

fn run_spec(command: &str, spec: &Path, out: &Path, extra: &[&str]) -> Outcome {
    let mut args = vec![
        command,
        "--spec",
        spec.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    nlmc(&args)
}

fn report(out: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

fn error_object(o: &Outcome) -> Value {
    let line = o.stderr.lines().last().expect("stderr has the error object");
    serde_json::from_str(line).unwrap()
}

fn write_spec(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

const FAST: &[&str] = &["--n", "400", "--m", "400"];

/// Copy of a bundled spec with CLT thresholds widened to suit small `M`.
fn loose_spec(dir: &Path, name: &str) -> PathBuf {
    let mut spec: Value = serde_json::from_str(&std::fs::read_to_string(spec_path(name)).unwrap()).unwrap();
    spec["run"] = serde_json::json!({"ks_max": 0.2, "g_gap_max": 0.2});
    write_spec(dir, name, &spec.to_string())
}

#[test]
fn all_on_two_state_demo() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_spec("all", &spec_path("two_state.json"), dir.path(), &[]);
    assert_eq!(o.code, 0, "{}{}", o.stdout, o.stderr);
    let r = report(dir.path());
    assert_eq!(r["schema_version"], 1);
    assert_eq!(r["spec"]["run"]["n"], 10_000);
    let sigma2 = r["conclusions"]["variance"]["report"]["sigma2"].as_f64().unwrap();
    assert!((sigma2 - 34.0 / 27.0).abs() < 1e-8, "{sigma2}");
    assert_eq!(r["verdict"]["passed"], true);
    for (file, header) in [
        ("flow_tv.csv", "step,tv,envelope,in_window"),
        ("kernel_ratio.csv", "step,ratio_gap,bound,holds"),
        ("beta.csv", "n,beta,alpha_upper,il_partial_sum"),
        ("samples.csv", "index,value"),
    ] {
        let text = std::fs::read_to_string(dir.path().join(file)).unwrap();
        assert_eq!(text.lines().next(), Some(header), "{file}");
    }
    let samples = std::fs::read_to_string(dir.path().join("samples.csv")).unwrap();
    assert_eq!(samples.lines().count(), 10_001);
}

#[test]
fn hypotheses_on_frozen_chain_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_spec("hypotheses", &spec_path("frozen.json"), dir.path(), &[]);
    assert_eq!(o.code, 2, "{}{}", o.stdout, o.stderr);
    assert!(o.stdout.contains("minorization") && o.stdout.contains("FAIL"));
    let r = report(dir.path());
    assert_eq!(r["hypotheses"]["minorization"]["lower_bound_estimate"], 0.0);
    assert_eq!(r["hypotheses"]["invariant"]["unique_within_tolerance"], false);
    assert_eq!(r["verdict"]["hypotheses"]["minorization"], false);
    assert_eq!(r["verdict"]["exit_code"], 2);
}

#[test]
fn clt_on_constant_observable_is_degenerate() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_spec("clt", &spec_path("constant_observable.json"), dir.path(), FAST);
    assert_eq!(o.code, 0, "{}{}", o.stdout, o.stderr);
    let r = report(dir.path());
    let clt = &r["conclusions"]["clt"]["report"];
    assert_eq!(clt["degenerate"], true);
    assert_eq!(clt["passed"], true);
    let samples = std::fs::read_to_string(dir.path().join("samples.csv")).unwrap();
    for line in samples.lines().skip(1) {
        let value: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(value, 0.0);
    }
}

#[test]
fn every_subcommand_passes_on_a_good_chain() {
    let specs = tempfile::tempdir().unwrap();
    let spec = loose_spec(specs.path(), "affine_mixture.json");
    for command in ["hypotheses", "variance", "mixing", "clt", "lln", "oracle", "all"] {
        let dir = tempfile::tempdir().unwrap();
        let o = run_spec(command, &spec, dir.path(), FAST);
        assert_eq!(o.code, 0, "{command}: {}{}", o.stdout, o.stderr);
        let r = report(dir.path());
        assert_eq!(r["command"], command);
        assert_eq!(r["verdict"]["exit_code"], 0);
    }
}

#[test]
fn conclusion_failures_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    // Period-2 chain; damping lets the fixed-point search settle on (1/2, 1/2).
    let periodic = write_spec(
        dir.path(),
        "periodic.json",
        r#"{"states": 2, "kernel": {"family": "constant", "matrix": [[0, 1], [1, 0]]},
            "observable": [0, 1], "run": {"damping": 0.5, "k_cap": 2000}}"#,
    );
    for command in ["variance", "mixing"] {
        let out = dir.path().join(command);
        let o = run_spec(command, &periodic, &out, &[]);
        assert_eq!(o.code, 3, "{command}: {}{}", o.stdout, o.stderr);
    }
    let strict = write_spec(
        dir.path(),
        "strict.json",
        r#"{"states": 2, "kernel": {"family": "constant", "matrix": [[0.9, 0.1], [0.2, 0.8]]},
            "observable": [0, 1],
            "run": {"ks_max": 1e-6, "lln_c": 1e-6, "oracle_gap_max": 1e-9, "oracle_n": 6, "oracle_m": 200}}"#,
    );
    for command in ["clt", "lln", "oracle"] {
        let out = dir.path().join(command);
        let o = run_spec(command, &strict, &out, FAST);
        assert_eq!(o.code, 3, "{command}: {}{}", o.stdout, o.stderr);
        assert_eq!(report(&out)["verdict"]["passed"], false);
    }
}

#[test]
fn hypothesis_failure_outranks_conclusion_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_spec("all", &spec_path("frozen.json"), dir.path(), FAST);
    assert_eq!(o.code, 2);
}

#[test]
fn operational_errors_exit_1_with_error_object() {
    let dir = tempfile::tempdir().unwrap();

    let o = run_spec("all", &dir.path().join("missing.json"), dir.path(), &[]);
    assert_eq!(o.code, 1);
    let e = error_object(&o);
    assert_eq!(e["schema_version"], 1);
    assert_eq!(e["error"]["kind"], "io");

    let bad = write_spec(dir.path(), "bad.json", "{\n  \"states\": 2,\n  \"kernel\": ]\n}");
    let o = run_spec("variance", &bad, &dir.path().join("bad"), &[]);
    assert_eq!(o.code, 1);
    let e = error_object(&o);
    assert_eq!(e["error"]["kind"], "syntax");
    assert_eq!(e["error"]["line"], 3);
    let written: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("bad/error.json")).unwrap()).unwrap();
    assert_eq!(written, e);

    let rows = write_spec(
        dir.path(),
        "rows.json",
        r#"{"states": 2, "kernel": {"family": "constant", "matrix": [[0.9, 0.1], [0.2, 0.79]]}, "observable": [0, 1]}"#,
    );
    let o = run_spec("mixing", &rows, dir.path(), &[]);
    assert_eq!(o.code, 1);
    let e = error_object(&o);
    assert_eq!(e["error"]["kind"], "semantic");
    assert_eq!(e["error"]["field"], "kernel.matrix[1]");

    let big = write_spec(
        dir.path(),
        "big.json",
        r#"{"states": 3, "kernel": {"family": "constant", "matrix": [[0.4, 0.3, 0.3], [0.3, 0.4, 0.3], [0.3, 0.3, 0.4]]},
            "observable": [0, 1, 2], "run": {"oracle_n": 20}}"#,
    );
    let o = run_spec("oracle", &big, dir.path(), &[]);
    assert_eq!(o.code, 1);
    assert_eq!(error_object(&o)["error"]["stage"], "oracle");

    let o = nlmc(&["sideways", "--spec", "x.json"]);
    assert_eq!(o.code, 1);
    assert_eq!(error_object(&o)["error"]["kind"], "usage");
}

#[test]
fn all_skips_oversized_enumeration() {
    let dir = tempfile::tempdir().unwrap();
    let big = write_spec(
        dir.path(),
        "big.json",
        r#"{"states": 3, "kernel": {"family": "constant", "matrix": [[0.4, 0.3, 0.3], [0.3, 0.4, 0.3], [0.3, 0.3, 0.4]]},
            "observable": [0, 1, 2], "run": {"oracle_n": 20, "ks_max": 0.2, "g_gap_max": 0.2}}"#,
    );
    let out = dir.path().join("out");
    let o = run_spec("all", &big, &out, FAST);
    assert_eq!(o.code, 0, "{}{}", o.stdout, o.stderr);
    let r = report(&out);
    assert!(r["conclusions"]["oracle"]["skipped"].is_string());
    assert!(r["verdict"]["conclusions"].get("oracle").is_none());
}

#[test]
fn out_dir_defaults_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let spec = spec_path("two_state.json");
    let o = nlmc_with_env(
        &["variance", "--spec", spec.to_str().unwrap()],
        &[("NLMC_OUT_DIR", dir.path())],
    );
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert!(dir.path().join("report.json").exists());
}

#[test]
fn overrides_are_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_spec(
        "lln",
        &spec_path("two_state.json"),
        dir.path(),
        &["--seed", "77", "--n", "123", "--m", "45"],
    );
    assert_eq!(o.code, 0);
    let r = report(dir.path());
    assert_eq!(r["spec"]["run"]["seed"], 77);
    assert_eq!(r["spec"]["run"]["n"], 123);
    assert_eq!(r["conclusions"]["lln"]["m"], 45);
}

fn without_timings(out: &Path) -> String {
    let text = std::fs::read_to_string(out.join("report.json")).unwrap();
    let cut = text.find("\"timings\"").expect("timings field");
    text[..cut].to_string()
}

#[test]
fn reports_reproduce_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let spec = loose_spec(dir.path(), "polynomial.json");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    assert_eq!(
        run_spec("all", &spec, &a, &["--n", "1000", "--m", "1000", "--threads", "1"]).code,
        0
    );
    assert_eq!(
        run_spec("all", &spec, &b, &["--n", "1000", "--m", "1000", "--threads", "4"]).code,
        0
    );
    assert_eq!(without_timings(&a), without_timings(&b));
    let samples = |d: &Path| std::fs::read(d.join("samples.csv")).unwrap();
    assert_eq!(samples(&a), samples(&b));

    run_spec("all", &spec, &c, &["--n", "1000", "--m", "1000", "--seed", "2"]);
    assert_ne!(samples(&a), samples(&c));
}
