use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chargescope"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn jsonl(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn missing_input_exits_2_and_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("o.csv");
    let out = run(&["segment", "/nonexistent/trace.jsonl", "-o", s(&out_path)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/trace.jsonl"));
}

#[test]
fn synth_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for (p, seed) in [(&a, "7"), (&b, "7"), (&c, "8")] {
        ok(&["synth", "-o", s(p), "--seed", seed, "--count", "5", "--noise", "5"]);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn synth_truth_sidecar_records_technique() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("dlc.jsonl");
    let truth = dir.path().join("truth.json");
    ok(&["synth", "-o", s(&out), "--truth", s(&truth), "--count", "100", "--technique", "dlc"]);
    let v: Value = serde_json::from_str(&fs::read_to_string(&truth).unwrap()).unwrap();
    let users = v["truth"].as_object().unwrap();
    assert_eq!(users.len(), 100);
    assert!(users.values().all(|t| t["technique"] == "dlc"));
}

#[test]
fn manifest_strata_counts_are_exact() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.toml");
    fs::write(
        &manifest,
        r#"
seed = 3

[[entries]]
count = 7
technique = "cc_cv"
capacity_loss_pct = 4.0

[[entries]]
count = 5
technique = "quick"
fuel_gauge = "voltage_based"
"#,
    )
    .unwrap();
    let out = dir.path().join("c.jsonl");
    let truth = dir.path().join("t.json");
    ok(&["synth", "-o", s(&out), "--truth", s(&truth), "--manifest", s(&manifest)]);
    let v: Value = serde_json::from_str(&fs::read_to_string(&truth).unwrap()).unwrap();
    let users = v["truth"].as_object().unwrap();
    let count = |t: &str| users.values().filter(|u| u["technique"] == t).count();
    assert_eq!((count("cc_cv"), count("quick"), users.len()), (7, 5, 12));
    assert!(users
        .values()
        .filter(|u| u["technique"] == "quick")
        .all(|u| u["fuel_gauge"] == "voltage_based"));
}

fn count_events(csv: &Path) -> usize {
    let text = fs::read_to_string(csv).unwrap();
    let mut header = text.lines().next().unwrap().split(',');
    let user_col = header.clone().position(|h| h == "user").unwrap();
    let event_col = header.position(|h| h == "event_id").unwrap();
    let ids: std::collections::BTreeSet<(String, String)> = text
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[user_col].to_string(), f[event_col].to_string())
        })
        .collect();
    ids.len()
}

#[test]
fn higher_termination_threshold_splits_more() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.csv");
    // 0.5C, one 0.05C step, then 0.5C again.
    let mut text = String::from("time,user,model,soc,voltage_mv,temp_c,health,charger,charging,screen\n");
    let mut t = 0;
    for soc in 20..60 {
        t += if soc == 40 { 720 } else { 72 };
        text.push_str(&format!("{t},p,m,{soc},3900,30,good,ac,true,off\n"));
    }
    fs::write(&trace, text).unwrap();
    let base = dir.path().join("a.csv");
    let wide = dir.path().join("b.csv");
    ok(&["segment", s(&trace), "-o", s(&base)]);
    ok(&["segment", s(&trace), "-o", s(&wide), "--termination-c", "0.07"]);
    assert_eq!((count_events(&base), count_events(&wide)), (1, 2));
    assert!(dir.path().join("a.csv.run.json").exists());
}

#[test]
fn group_by_model_pools_devices() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.json");
    fs::write(
        &manifest,
        r#"{"seed": 1, "entries": [
            {"count": 4, "technique": "cc_cv", "model": "alpha"},
            {"count": 6, "technique": "dlc", "model": "beta"}]}"#,
    )
    .unwrap();
    let trace = dir.path().join("t.jsonl");
    ok(&["synth", "-o", s(&trace), "--manifest", s(&manifest)]);
    let out = dir.path().join("out");
    ok(&["profile", s(&trace), "-o", s(&out), "--group", "model"]);
    let profiles = jsonl(&out.join("profiles.jsonl"));
    assert_eq!(profiles.len(), 2);
    let by_model: Vec<(&str, &str, u64)> = profiles
        .iter()
        .map(|p| {
            (
                p["model"].as_str().unwrap(),
                p["technique"].as_str().unwrap(),
                p["device_count"].as_u64().unwrap(),
            )
        })
        .collect();
    assert_eq!(by_model, vec![("alpha", "cc_cv", 4), ("beta", "dlc", 6)]);
}

#[test]
fn no_full_charge_gives_no_loss_with_reason() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("partial.csv");
    let mut text = String::from("time,user,model,soc,voltage_mv,temp_c,health,charger,charging,screen\n");
    for i in 0..40 {
        text.push_str(&format!("{},p,m,{},{},30,good,ac,true,off\n", 1000 + 120 * i, 20 + i, 3700 + 5 * i));
    }
    fs::write(&trace, text).unwrap();
    let out = dir.path().join("out");
    ok(&["profile", s(&trace), "-o", s(&out)]);
    let profiles = jsonl(&out.join("profiles.jsonl"));
    assert_eq!(profiles.len(), 1);
    assert!(profiles[0]["capacity_loss_pct"].is_null());
    assert!(!profiles[0]["reasons"].as_array().unwrap().is_empty());
}

#[test]
fn behavior_wasted_energy_and_clean_trace() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("full.jsonl");
    ok(&["synth", "-o", s(&trace), "--full-plugged-hours", "10"]);
    let out = dir.path().join("b.jsonl");
    ok(&["behavior", s(&trace), "-o", s(&out), "--capacity-mah", "1810", "--maintenance-pct", "1.0"]);
    let rec = &jsonl(&out)[0];
    let wasted = rec["wasted_energy_estimate"].as_f64().unwrap();
    assert!((1357.0..=2172.0).contains(&wasted), "{wasted}");

    let clean = dir.path().join("clean.jsonl");
    ok(&["synth", "-o", s(&clean), "--seed", "4"]);
    ok(&["behavior", s(&clean), "-o", s(&out)]);
    let rec = &jsonl(&out)[0];
    assert_eq!(rec["fluctuation_episodes"], Value::Array(vec![]));
    assert_eq!(rec["full_plugged_episodes"], Value::Array(vec![]));
}

#[test]
fn profiles_agree_across_job_counts() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("dlc.jsonl");
    ok(&["synth", "-o", s(&trace), "--count", "40", "--technique", "dlc", "--loss", "3"]);
    let (one, eight) = (dir.path().join("j1"), dir.path().join("j8"));
    ok(&["profile", s(&trace), "-o", s(&one), "--jobs", "1"]);
    ok(&["profile", s(&trace), "-o", s(&eight), "--jobs", "8"]);
    let profiles = jsonl(&one.join("profiles.jsonl"));
    assert_eq!(profiles.len(), 40);
    assert!(profiles.iter().all(|p| p["technique"] == "dlc"));
    for f in ["profiles.jsonl", "curves.csv", "health.csv"] {
        assert_eq!(fs::read(one.join(f)).unwrap(), fs::read(eight.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn report_renders_markdown_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.jsonl");
    ok(&["synth", "-o", s(&trace), "--count", "10", "--technique", "dlc", "--loss", "5"]);
    let out = ok(&["report", s(&trace)]);
    let md = String::from_utf8(out.stdout).unwrap();
    assert!(md.starts_with('#'));
    assert!(md.contains("dlc"));
    let json = dir.path().join("r.json");
    ok(&["report", s(&trace), "--report-format", "json", "-o", s(&json)]);
    let v: Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(v["techniques"]["dlc"]["count"], 10);
}
