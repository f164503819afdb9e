use carnot::cli::execute;

fn carnot(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = execute(std::iter::once("carnot").chain(args.iter().copied()), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

#[test]
fn overlay_prints_three_committees() {
    let (code, out, _) = carnot(&["overlay", "--n-nodes", "10", "--committee-size", "3", "--seed", "0xAB"]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["k"], 3);
    assert_eq!(v["r"], 1);
    let sizes: Vec<usize> = v["committees"].as_array().unwrap().iter().map(|c| c.as_array().unwrap().len()).collect();
    assert_eq!(sizes, vec![3, 3, 4]);
    assert_eq!(v["edges"], serde_json::json!([[1, 2], [1, 3]]));
    assert_eq!(carnot(&["overlay", "--n-nodes", "10", "--committee-size", "3", "--seed", "0xAB"]).1, out);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(carnot(&["overlay", "--n-nodes", "10", "--committee-size", "0"]).0, 2);
    assert_eq!(carnot(&["overlay", "--n-nodes", "3", "--committee-size", "4"]).0, 2);
    assert_eq!(carnot(&["size", "--n-nodes", "1", "--delta", "0.001"]).0, 2);
    assert_eq!(carnot(&["analyze", "--event", "e9x", "--model", "binomial"]).0, 2);
    assert_eq!(carnot(&["analyze", "--preset", "nope"]).0, 2);
    assert_eq!(carnot(&["simulate", "--scenario", "/nonexistent/scenario.json"]).0, 2);
    assert_eq!(carnot(&["bogus"]).0, 2);
}

#[test]
fn size_refuses_adversary_above_threshold() {
    let (code, _, err) = carnot(&["size", "--n-nodes", "1000", "--delta", "0.001", "--p", "0.4"]);
    assert_eq!(code, 2);
    assert!(err.contains("error"), "{err}");
}

#[test]
fn size_single_point() {
    let (code, out, _) = carnot(&["size", "--n-nodes", "10000", "--delta", "1e-4"]);
    assert_eq!(code, 0);
    let mut rows = csv::Reader::from_reader(out.as_bytes());
    let headers = rows.headers().unwrap().clone();
    let row = rows.records().next().unwrap().unwrap();
    let get = |name: &str| row.get(headers.iter().position(|h| h == name).unwrap()).unwrap().to_string();
    assert_eq!(get("K"), "17");
    assert_eq!(get("n"), "588");
}

#[test]
fn size_preset_grid() {
    let (code, out, err) = carnot(&["size", "--preset", "fig6"]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(out.lines().count(), 1 + 4 * 7);
}

#[test]
fn analyze_preset_meets_ceiling() {
    let (code, out, err) = carnot(&["analyze", "--preset", "fig5_bl"]);
    assert_eq!(code, 0, "{err}");
    assert!(out.starts_with("model,K,n,r,event,exact,bound"));
    assert!(err.contains("<= 7.31e-53: ok"), "{err}");
}

#[test]
fn analyze_explicit_binomial_table() {
    let (code, out, _) =
        carnot(&["analyze", "--event", "e1", "--fraction", "1/3", "--model", "binomial", "--n-nodes", "1000", "--committees", "3,7"]);
    assert_eq!(code, 0);
    let rows: Vec<&str> = out.lines().collect();
    assert_eq!(rows.len(), 3);
    // Exact values: 8.149175e-4 at K = 3 and 8.882726e-2 at K = 7.
    assert!(rows[1].contains("8.149175e-04"), "{}", rows[1]);
    assert!(rows[2].contains("8.882726e-02"), "{}", rows[2]);
    let (_, table, _) = carnot(&[
        "analyze", "--event", "e1", "--model", "binomial", "--n-nodes", "1000", "--committees", "3,7", "--format", "table",
    ]);
    assert!(!table.contains(','));
}

#[test]
fn simulate_scenario_trace_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("scenario.json");
    let trace = dir.path().join("trace.jsonl");
    std::fs::write(
        &scenario,
        r#"{"n_nodes": 10, "committee_size": 3, "master_seed": 7, "views_to_run": 12,
            "adversaries": {"exact": 2}, "behaviors": ["equivocate-leader", "silent"], "gst": 40}"#,
    )
    .unwrap();
    let (code, out, err) = carnot(&[
        "simulate",
        "--scenario",
        scenario.to_str().unwrap(),
        "--trace",
        trace.to_str().unwrap(),
        "--record-log",
    ]);
    assert_eq!(code, 0, "{err}");
    let summary: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!(summary.is_object());

    let (code, _, err) = carnot(&["simulate", "--replay", trace.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");

    // A trace whose recorded digest was altered no longer replays cleanly.
    let text = std::fs::read_to_string(&trace).unwrap();
    let digest = text.rsplit("\"log_digest\":\"").next().unwrap()[..8].to_string();
    let flipped = if digest.starts_with('0') { "1" } else { "0" };
    let tampered = text.replacen(&format!("\"log_digest\":\"{digest}"), &format!("\"log_digest\":\"{flipped}{}", &digest[1..]), 1);
    std::fs::write(&trace, tampered).unwrap();
    assert_eq!(carnot(&["simulate", "--replay", trace.to_str().unwrap()]).0, 1);
}

#[test]
fn simulate_happy_path_campaign() {
    let dir = tempfile::tempdir().unwrap();
    let summary = dir.path().join("summary.csv");
    let (code, _, err) = carnot(&["simulate", "--matrix", "happy-path", "--seeds", "2", "--summary", summary.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let mut reader = csv::Reader::from_path(&summary).unwrap();
    let headers = reader.headers().unwrap().clone();
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3 * 2);
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    for r in &rows {
        let views: usize = r[col("views")].parse().unwrap();
        assert_eq!(r[col("min_commits")].parse::<usize>().unwrap(), views - 2);
        assert_eq!(&r[col("safety_violations")], "0");
        assert_eq!(&r[col("timeout_qcs")], "0");
    }
}
