//! Command-line behaviour through `cli::run`.

use morsechart::cli::run;

fn call(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv: Vec<&str> = std::iter::once("morsechart").chain(args.iter().copied()).collect();
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn tmp(name: &str) -> String {
    let dir = std::env::temp_dir().join(format!("morsechart-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name).to_string_lossy().into_owned()
}

#[test]
fn verify_gluing_suite_passes() {
    let (code, out, _) = call(&["verify", "chain3", "--suite", "gluing"]);
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("result: PASS"));
}

#[test]
fn verify_failure_exits_one() {
    let (code, out, _) = call(&["verify", "chain3", "--suite", "gluing", "--tol", "alpha=0.9"]);
    assert_eq!(code, 1, "{out}");
    assert!(out.contains("FAIL"));
}

#[test]
fn verify_output_is_deterministic() {
    let strip = |s: String| s.lines().filter(|l| !l.contains("runtime")).map(|l| l.split("  (").next().unwrap().to_string()).collect::<Vec<_>>();
    let a = call(&["--seed", "7", "verify", "chain4", "--suite", "metric"]).1;
    let b = call(&["--seed", "7", "verify", "chain4", "--suite", "metric"]).1;
    assert_eq!(strip(a), strip(b));
}

#[test]
fn critseqs_chain4_max_to_min() {
    let (code, out, _) = call(&["critseqs", "chain4", "--from", "max", "--to", "min"]);
    assert_eq!(code, 0);
    assert_eq!(out.lines().count(), 1 + 4, "{out}");
    assert!(out.contains("(max; s1, s2; min)"));
}

#[test]
fn glue_distance_and_plot() {
    let (code, json, err) = call(&["glue", "chain4", "--seq", "max,s1,s2,min", "--taus", "0.1,0.05", "--factors", "#0;#0;#0"]);
    assert_eq!(code, 0, "{err}");
    let p = tmp("g.json");
    std::fs::write(&p, json).unwrap();
    let (code, out, _) = call(&["distance", "chain4", &p, &p]);
    assert_eq!(code, 0);
    assert_eq!(out.trim().parse::<f64>().unwrap(), 0.0);
    let (code, csv, _) = call(&["export-plot", &p]);
    assert_eq!(code, 0);
    assert!(csv.starts_with("leg,index,c0,c1,c2\n"));
    assert!(csv.lines().count() > 10);
}

#[test]
fn flow_csv() {
    let (code, out, err) = call(&["flow", "chain3", "--start", "s:1:0.3", "--until", "time:0.5"]);
    assert_eq!(code, 0, "{err}");
    assert!(out.starts_with("time,coords,region"));
}

#[test]
fn chart_dump_is_json() {
    let (code, out, _) = call(&["chart-dump", "chain3", "--from", "max", "--to", "min"]);
    assert_eq!(code, 0);
    assert!(serde_json::from_str::<serde_json::Value>(&out).is_ok());
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(call(&["bogus"]).0, 2);
    assert_eq!(call(&["critseqs", "chain4", "--from", "nope", "--to", "min"]).0, 2);
    assert_eq!(call(&["verify", "chain3", "--suite", "nosuch"]).0, 2);
    assert_eq!(call(&["verify", "no_such_model"]).0, 2);
    assert_eq!(call(&["--set", "bogus=1", "critseqs", "chain3", "--from", "max", "--to", "min"]).0, 2);
    assert_eq!(call(&["--help"]).0, 0);
}
