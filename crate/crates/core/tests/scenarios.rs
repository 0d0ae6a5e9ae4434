use std::collections::BTreeMap;

use fedflow_core::builtin::{generate, Builtin};
use fedflow_core::scenario::{load_scenario, Scenario, ScenarioError};
use fedflow_core::sim::{run, RunConfig};

#[test]
fn builtins_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    for b in Builtin::ALL {
        for scale in [1.0, 0.1, 0.01] {
            let s = generate(b, scale).unwrap();
            let path = dir.path().join(format!("{}-{scale}.json", b.as_str()));
            s.save(&path).unwrap();
            let back = load_scenario(&path).unwrap();
            assert_eq!(back, s, "{} at {scale}", b.as_str());
        }
    }
}

fn stage_counts(s: &Scenario) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for t in &s.workflow {
        *out.entry(t.function.clone()).or_default() += 1;
    }
    out
}

#[test]
fn drug_stages_shrink_together() {
    let full = stage_counts(&generate(Builtin::DrugLike, 1.0).unwrap());
    let small = stage_counts(&generate(Builtin::DrugLike, 0.01).unwrap());
    assert_eq!(full.values().sum::<usize>(), 24_001);
    assert_eq!(small.values().sum::<usize>(), 241);
    for (stage, &n) in &full {
        let expect = if n == 1 { 1 } else { n / 100 };
        assert_eq!(small[stage], expect, "{stage}");
    }
}

#[test]
fn montage_full_scale_count() {
    let s = generate(Builtin::MontageLike, 1.0).unwrap();
    assert_eq!(s.workflow.len(), 11_340);
    let stages = stage_counts(&s);
    assert_eq!(stages["mDiffFit"], 2 * stages["mProject"]);
    assert_eq!(stages["mBackground"], stages["mProject"]);
}

#[test]
fn largest_single_endpoint_moves_nothing() {
    let s = generate(Builtin::DrugLike, 0.01).unwrap();
    let one = s.restrict_to("taiyi").unwrap();
    assert_eq!(one.endpoints.len(), 1);
    one.validate().unwrap();
    let log = run(&one, &RunConfig::from_scenario(&one)).unwrap();
    assert_eq!(log.transfer_bytes, 0);
    assert_eq!(log.tasks_done, one.workflow.len());
    assert!(matches!(s.restrict_to("nowhere"), Err(ScenarioError::Dangling { .. })));
}

#[test]
fn unknown_fields_are_rejected() {
    let text = r#"{
        "endpoints": [{"endpoint_id": "ep1", "cores_per_worker": 1, "cpu_freq": 2.4, "ram": 64,
                       "workers_per_node": 4, "max_nodes": 1, "initial_nodes": 1,
                       "idle_timeout": 30, "perf_factor": 1.0, "gpus": 2}],
        "functions": [{"name": "f", "true_fixed_s": 5}]
    }"#;
    let err = Scenario::from_json(text).unwrap_err();
    assert!(matches!(err, ScenarioError::Parse(_)));
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_scenario(&dir.path().join("absent.json")).unwrap_err();
    assert!(matches!(err, ScenarioError::Io { .. }));
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn undeclared_file_location_is_dangling() {
    let text = r#"{
        "endpoints": [{"endpoint_id": "ep1", "cores_per_worker": 1, "cpu_freq": 2.4, "ram": 64,
                       "workers_per_node": 4, "max_nodes": 1, "initial_nodes": 1,
                       "idle_timeout": 30, "perf_factor": 1.0}],
        "functions": [{"name": "f", "true_fixed_s": 5}],
        "workflow": [{"id": "t1", "function": "f",
                      "file_deps": [{"data_id": "d", "size_MB": 1, "locations": ["mars"]}]}]
    }"#;
    let err = Scenario::from_json(text).unwrap_err();
    assert!(err.to_string().contains("dangling reference"), "{err}");
}

fn keys(v: &serde_json::Value, out: &mut std::collections::BTreeSet<String>) {
    match v {
        serde_json::Value::Object(m) => {
            for (k, v) in m {
                out.insert(k.clone());
                keys(v, out);
            }
        }
        serde_json::Value::Array(a) => a.iter().for_each(|v| keys(v, out)),
        _ => {}
    }
}

#[test]
fn schema_covers_every_field() {
    let schema: serde_json::Value =
        serde_json::from_str(include_str!("../../../schema/scenario.schema.json")).unwrap();
    let mut declared = std::collections::BTreeSet::new();
    let mut walk = vec![&schema];
    while let Some(v) = walk.pop() {
        if let Some(props) = v.get("properties").and_then(|p| p.as_object()) {
            declared.extend(props.keys().cloned());
        }
        match v {
            serde_json::Value::Object(m) => walk.extend(m.values()),
            serde_json::Value::Array(a) => walk.extend(a.iter()),
            _ => {}
        }
    }
    let mut used = std::collections::BTreeSet::new();
    for b in Builtin::ALL {
        let mut s = generate(b, 0.01).unwrap();
        s.network.default_link = s.network.links.first().map(|l| fedflow_core::scenario::LinkSpec {
            bandwidth_mbps: l.bandwidth_mbps,
            latency_s: l.latency_s,
            concurrency_penalty: l.concurrency_penalty,
        });
        keys(&serde_json::to_value(&s).unwrap(), &mut used);
    }
    let missing: Vec<_> = used.difference(&declared).collect();
    assert!(missing.is_empty(), "{missing:?}");
}
