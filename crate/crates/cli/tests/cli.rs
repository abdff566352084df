use std::path::Path;
use std::process::{Command, Output};

const STAR: &str = "\
epsilon 0.1
node 0 aux fix=0 block=0
node 1 input block=0
node 2 input block=0
edge 0 1
edge 0 2
tx 1 := in
tx 2 := in
out 0 := xor(rx[0], rx[1])
";

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_noisy-parity"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).expect("JSON on stdout")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn star_exact_error_and_advantage() {
    let dir = tempfile::tempdir().unwrap();
    let star = write(dir.path(), "star.proto", STAR);
    let o = bin(&["run-protocol", "--protocol", &star]);
    assert_eq!(o.status.code(), Some(0));
    let v = stdout_json(&o);
    assert!((v["worst"].as_f64().unwrap() - 0.18).abs() < 1e-12);

    let o = bin(&["advantage", "--protocol", &star, "--exact"]);
    assert!((stdout_json(&o)["advantage"].as_f64().unwrap() - 0.64).abs() < 1e-12);
}

#[test]
fn mc_output_depends_only_on_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let star = write(dir.path(), "star.proto", STAR);
    let args = ["advantage", "--protocol", &star, "--mc", "5000", "--seed", "9"];
    let a = bin(&args);
    let b = bin(&[&args[..], &["--threads", "1"]].concat());
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn reduce_then_inspect_the_tree() {
    let dir = tempfile::tempdir().unwrap();
    let star = write(dir.path(), "star.proto", STAR);
    let tree = dir.path().join("ro.json");
    let o = bin(&["reduce", "--protocol", &star, "--stage", "readonce", "--out", tree.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let o = bin(&["tree", "--input", tree.to_str().unwrap(), "--advantage"]);
    let v = stdout_json(&o);
    assert_eq!(v["read_once"], true);
    assert!((v["advantage"].as_f64().unwrap() - 0.64).abs() < 1e-9);

    let o = bin(&["reduce", "--protocol", &star, "--stage", "semi"]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("class semi-noisy"), "{text}");
}

#[test]
fn network_and_decomposition_files() {
    let dir = tempfile::tempdir().unwrap();
    let net = dir.path().join("net.json");
    let dec = dir.path().join("dec.json");
    let o = bin(&["gen-network", "--n", "2000", "--seed", "4", "--out", net.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let first = std::fs::read(&net).unwrap();
    bin(&["gen-network", "--n", "2000", "--seed", "4", "--out", net.to_str().unwrap()]);
    assert_eq!(std::fs::read(&net).unwrap(), first);
    let o = bin(&["decompose", "--network", net.to_str().unwrap(), "--out", dec.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&dec).unwrap()).unwrap();
    assert!(v["k"].as_u64().unwrap() >= 1);
}

#[test]
fn bounds_values() {
    let csv = |o: &Output| String::from_utf8(o.stdout.clone()).unwrap();
    let o = bin(&["bounds", "--alpha", "--n", "4", "--big-d", "0", "--eps", "0.1"]);
    assert_eq!(csv(&o), "bound,params,value\nalpha,n=4;D=0;eps=0.1;c=1;log=two,0.875\n");
    let o = bin(&["bounds", "--gks", "--eps", "0.1", "--delta", "0.1", "--s", "0"]);
    assert!(csv(&o).ends_with(",0\n"), "{}", csv(&o));
    let o = bin(&["bounds", "--minS", "--eps", "0.1", "--delta", "0.1", "--nodes", "256"]);
    let text = csv(&o);
    assert!(text.contains("\nmin_s,N=256;eps=0.1;delta=0.1;"), "{text}");
    assert!(text.ends_with(",488\n"), "{text}");
    let o = bin(&["bounds", "--min-s", "--eps", "0.1", "--delta", "0.1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn spelled_out_flags() {
    let dir = tempfile::tempdir().unwrap();
    let star = write(dir.path(), "star.proto", STAR);
    let o = bin(&["run-protocol", "--file", &star, "--epsilon", "0.2", "--exact"]);
    assert!((stdout_json(&o)["worst"].as_f64().unwrap() - 0.32).abs() < 1e-12);
    assert_eq!(bin(&["run-protocol", "--file", &star, "--exact", "--trials", "9"]).status.code(), Some(1));

    let o = bin(&["reduce", "--in", &star, "--stage", "copy", "--check-advantage", "exact"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert!(report["advantage_after"].as_f64().unwrap() >= report["advantage_before"].as_f64().unwrap() - 1e-9);
    let o = bin(&["reduce", "--in", &star, "--stage", "xnd", "--check-advantage", "off"]);
    assert_eq!(o.status.code(), Some(0));

    // A bit kept with probability 0.8: advantage 0.6 for the identity.
    let ch = write(
        dir.path(),
        "ch.json",
        r#"{"outcome_bits": 1, "rows": [{"input": "0", "probs": [[0, 0.8], [1, 0.2]]},
                                        {"input": "1", "probs": [[0, 0.2], [1, 0.8]]}]}"#,
    );
    let o = bin(&["advantage", "--channel", &ch, "--exact", "--f", "x[0]"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!((stdout_json(&o)["advantage"].as_f64().unwrap() - 0.6).abs() < 1e-12);
    let o = bin(&["advantage", "--channel", &ch, "--mc", "20000", "--f", "parity"]);
    let v = stdout_json(&o);
    assert!((v["value"].as_f64().unwrap() - 0.6).abs() < 0.03, "{v}");
    let bad = write(dir.path(), "bad.json", r#"{"outcome_bits": 1, "rows": [{"input": "0", "probs": [[0, 0.5]]}]}"#);
    assert_eq!(bin(&["advantage", "--channel", &bad, "--exact"]).status.code(), Some(1));
}

#[test]
fn experiment_from_config_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "e7.json",
        r#"{"experiment": "E7", "seeds": [1, 2], "params": {"trees": 20}}"#,
    );
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let o = bin(&["experiment", "--config", &cfg, "--out", a.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    bin(&["experiment", "--config", &cfg, "--threads", "2", "--out", b.to_str().unwrap()]);
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    assert!(text.starts_with("experiment,metric,params,value,reference,ci_low,ci_high,pass,seed\n"));
}

#[test]
fn invalid_input_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.json", "{\n  \"experiment\": \"E3\",\n  \"parms\": {}\n}");
    let o = bin(&["experiment", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3"), "{err}");

    assert_eq!(bin(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(bin(&["run-protocol", "--protocol", "/nonexistent"]).status.code(), Some(1));
    let broken = write(dir.path(), "broken.proto", "node 0 aux\nout 0 := nonsense(\n");
    assert_eq!(bin(&["run-protocol", "--protocol", &broken]).status.code(), Some(1));
}

#[test]
fn failed_checks_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    // A negative tolerance fails every row.
    let cfg = write(
        dir.path(),
        "e4.json",
        r#"{"experiment": "E4", "params": {"t": [2], "epsilon": [0.1], "tolerance": -1}}"#,
    );
    let o = bin(&["experiment", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
}
