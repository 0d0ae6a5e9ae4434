use std::collections::{BTreeMap, HashMap};

use fedflow_core::dag::TaskState;
use fedflow_core::metrics::MetricsLog;
use fedflow_core::scenario::Scenario;
use fedflow_core::scheduler::SchedulerKind;
use fedflow_core::sim::{run, RunConfig, SimError};
use proptest::prelude::*;
use serde_json::json;

const KINDS: [SchedulerKind; 3] = [SchedulerKind::Capacity, SchedulerKind::Locality, SchedulerKind::Dha];

/// (function, parents, file dep (size MB, endpoint), submit time)
type TaskShape = (usize, Vec<usize>, Option<(f64, usize)>, f64);

#[derive(Debug, Clone)]
struct Shape {
    workers: Vec<u32>,
    perf: Vec<f64>,
    bandwidth: f64,
    latency: f64,
    fixed: [f64; 2],
    noise: f64,
    tasks: Vec<TaskShape>,
    concurrency: usize,
}

fn shape() -> impl Strategy<Value = Shape> {
    let endpoints = proptest::collection::vec((1u32..5, 0.7f64..1.6), 1..4);
    (
        endpoints,
        20.0f64..200.0,
        0.0f64..2.0,
        (1.0f64..20.0, 1.0f64..20.0),
        0.0f64..0.2,
        1usize..4,
        1usize..25,
    )
        .prop_flat_map(|(eps, bw, lat, fixed, noise, conc, n)| {
            let ne = eps.len();
            let task = (
                0usize..2,
                proptest::collection::vec(any::<prop::sample::Index>(), 0..3),
                proptest::option::of((1.0f64..50.0, 0..ne)),
                prop_oneof![3 => Just(0.0), 1 => 0.0f64..30.0],
            );
            (Just((eps, bw, lat, fixed, noise, conc)), proptest::collection::vec(task, n))
        })
        .prop_map(|((eps, bw, lat, fixed, noise, conc), raw)| {
            let tasks = raw
                .into_iter()
                .enumerate()
                .map(|(i, (f, parents, file, submit))| {
                    let mut ps: Vec<usize> = if i == 0 {
                        vec![]
                    } else {
                        parents.iter().map(|p| p.index(i)).collect()
                    };
                    ps.sort_unstable();
                    ps.dedup();
                    (f, ps, file, submit)
                })
                .collect();
            Shape {
                workers: eps.iter().map(|e| e.0).collect(),
                perf: eps.iter().map(|e| e.1).collect(),
                bandwidth: bw,
                latency: lat,
                fixed: [fixed.0, fixed.1],
                noise,
                tasks,
                concurrency: conc,
            }
        })
}

fn endpoint_json(id: &str, workers: u32, perf: f64) -> serde_json::Value {
    json!({
        "endpoint_id": id, "cores_per_worker": 1, "cpu_freq": 2.4, "ram": 64,
        "workers_per_node": workers, "max_nodes": 1, "initial_nodes": 1,
        "idle_timeout": 30, "perf_factor": perf
    })
}

fn build(s: &Shape) -> Scenario {
    let endpoints: Vec<_> = s
        .workers
        .iter()
        .zip(&s.perf)
        .enumerate()
        .map(|(i, (&w, &p))| endpoint_json(&format!("ep{i}"), w, p))
        .collect();
    let workflow: Vec<_> = s
        .tasks
        .iter()
        .enumerate()
        .map(|(i, (f, parents, file, submit))| {
            let mut t = json!({
                "id": format!("t{i}"),
                "function": format!("f{f}"),
                "deps": parents.iter().map(|p| format!("t{p}")).collect::<Vec<_>>(),
                "submit_time_s": submit,
            });
            if let Some((mb, ep)) = file {
                t["file_deps"] = json!([{"data_id": format!("d{i}"), "size_MB": mb, "locations": [format!("ep{ep}")]}]);
            }
            t
        })
        .collect();
    let doc = json!({
        "name": "random",
        "endpoints": endpoints,
        "network": {"default_link": {"bandwidth_MBps": s.bandwidth, "latency_s": s.latency}},
        "functions": [
            {"name": "f0", "true_fixed_s": s.fixed[0], "true_rate_s_per_MB": 0.05, "output_ratio": 0.5, "noise": s.noise},
            {"name": "f1", "true_fixed_s": s.fixed[1], "output_ratio": 1.0, "noise": s.noise}
        ],
        "workflow": workflow,
        "defaults": {"transfer_concurrency": s.concurrency}
    });
    Scenario::from_json(&doc.to_string()).unwrap()
}

fn simulate(sc: &Scenario, kind: SchedulerKind, seed: u64) -> MetricsLog {
    let mut cfg = RunConfig::from_scenario(sc);
    cfg.scheduler = kind;
    cfg.seed = seed;
    run(sc, &cfg).unwrap()
}

fn peak_pair_concurrency(log: &MetricsLog) -> usize {
    let mut edges: Vec<(f64, i32, usize, usize)> = Vec::new();
    for t in &log.transfers {
        edges.push((t.start, 1, t.src, t.dst));
        edges.push((t.end, -1, t.src, t.dst));
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut live: BTreeMap<(usize, usize), i32> = BTreeMap::new();
    let mut peak = 0;
    for (_, d, s, t) in edges {
        let c = live.entry((s, t)).or_default();
        *c += d;
        peak = peak.max(*c);
    }
    peak as usize
}

fn check_invariants(sc: &Scenario, log: &MetricsLog, cap: usize) -> Result<(), TestCaseError> {
    prop_assert_eq!(log.tasks_done, log.tasks_total);
    prop_assert!(log.utilization.iter().all(|u| u.busy <= u.active));
    prop_assert!(log.utilization.windows(2).all(|w| w[0].time <= w[1].time));
    prop_assert!(log.transfers.iter().all(|t| !t.dst_had_replica && t.success));
    prop_assert!(peak_pair_concurrency(log) <= cap);

    let by_id: HashMap<&str, _> = log.tasks.iter().map(|t| (t.task.as_str(), t)).collect();
    for (i, release) in sc.submission_order() {
        let entry = &sc.workflow[i];
        let m = by_id[entry.id.as_str()];
        prop_assert_eq!(m.state, TaskState::Done);
        let (staged, dispatched, started, finished) =
            (m.staged.unwrap(), m.dispatched.unwrap(), m.started.unwrap(), m.finished.unwrap());
        prop_assert!(m.submitted.unwrap() >= release - 1e-9);
        prop_assert!(staged <= dispatched && dispatched <= started && started <= finished);
        for d in &entry.deps {
            prop_assert!(by_id[d.as_str()].finished.unwrap() <= started + 1e-9);
        }
    }
    let first = log.tasks.iter().filter_map(|t| t.submitted).fold(f64::INFINITY, f64::min);
    let last = log.tasks.iter().filter_map(|t| t.finished).fold(0.0, f64::max);
    prop_assert!((log.makespan - (last - first)).abs() < 1e-6);
    let moved: u64 = log.transfers.iter().filter(|t| t.success && !t.probe).map(|t| t.size).sum();
    prop_assert_eq!(moved, log.transfer_bytes);
    Ok(())
}

/// Area under the busy step function, summed over endpoints.
fn busy_integral(log: &MetricsLog) -> f64 {
    let mut area = 0.0;
    for e in 0..log.endpoints.len() {
        let rows: Vec<_> = log.utilization.iter().filter(|u| u.endpoint == e).collect();
        for w in rows.windows(2) {
            area += w[0].busy as f64 * (w[1].time - w[0].time);
        }
    }
    area
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn runs_respect_invariants(s in shape(), k in 0usize..3, seed in 0u64..1000) {
        let sc = build(&s);
        let log = simulate(&sc, KINDS[k], seed);
        check_invariants(&sc, &log, s.concurrency)?;
    }

    #[test]
    fn busy_time_is_conserved(s in shape(), k in 0usize..3) {
        let sc = build(&s);
        let log = simulate(&sc, KINDS[k], 1);
        let running: f64 = log.tasks.iter().map(|t| t.finished.unwrap() - t.started.unwrap()).sum();
        prop_assert!((busy_integral(&log) - running).abs() <= 1e-6 * running.max(1.0));
    }

    #[test]
    fn same_seed_same_trace(s in shape(), k in 0usize..3, seed in 0u64..1000) {
        let sc = build(&s);
        let mut a = simulate(&sc, KINDS[k], seed);
        let mut b = simulate(&sc, KINDS[k], seed);
        prop_assert_eq!(a.trace_hash, b.trace_hash);
        // wall-clock overhead is the one non-simulated quantity
        a.overhead.wall_seconds = 0.0;
        b.overhead.wall_seconds = 0.0;
        prop_assert_eq!(a, b);
    }

    #[test]
    fn one_endpoint_means_one_placement(mut s in shape(), seed in 0u64..100) {
        s.workers.truncate(1);
        s.perf.truncate(1);
        for t in &mut s.tasks {
            if let Some(f) = &mut t.2 {
                f.1 = 0;
            }
        }
        let sc = build(&s);
        let logs: Vec<MetricsLog> = KINDS.iter().map(|&k| simulate(&sc, k, seed)).collect();
        for log in &logs {
            prop_assert_eq!(log.transfer_bytes, 0);
            prop_assert!(log.tasks.iter().all(|t| t.endpoint.as_deref() == Some("ep0")));
        }
    }
}

fn independent(n: usize, workers: u32) -> Scenario {
    let workflow: Vec<_> = (0..n)
        .map(|i| json!({"id": format!("t{i}"), "function": "f"}))
        .collect();
    let doc = json!({
        "name": "flat",
        "endpoints": [endpoint_json("a", workers, 1.0), endpoint_json("b", workers, 1.3)],
        "network": {"default_link": {"bandwidth_MBps": 100.0, "latency_s": 0.5}},
        "functions": [{"name": "f", "true_fixed_s": 7, "noise": 0.1}],
        "workflow": workflow
    });
    Scenario::from_json(&doc.to_string()).unwrap()
}

#[test]
fn batching_same_time_submissions_keeps_makespan() {
    let sc = independent(40, 3);
    for k in KINDS {
        let mut cfg = RunConfig::from_scenario(&sc);
        cfg.scheduler = k;
        let one = run(&sc, &cfg).unwrap().makespan;
        for batch in [2, 7, 40] {
            cfg.batch_size = batch;
            assert_eq!(run(&sc, &cfg).unwrap().makespan, one, "{k} batch {batch}");
        }
    }
}

#[test]
fn single_task_takes_its_declared_time() {
    let doc = json!({
        "endpoints": [endpoint_json("ep1", 4, 1.0)],
        "functions": [{"name": "f", "true_fixed_s": 5}],
        "workflow": [{"id": "t1", "function": "f"}]
    });
    let sc = Scenario::from_json(&doc.to_string()).unwrap();
    for k in KINDS {
        let mut cfg = RunConfig::from_scenario(&sc);
        cfg.scheduler = k;
        let log = run(&sc, &cfg).unwrap();
        assert_eq!(log.makespan, 5.0);
        assert_eq!(log.tasks_done, 1);
    }
}

#[test]
fn perf_factor_scales_execution() {
    let doc = json!({
        "endpoints": [endpoint_json("slow", 1, 2.0)],
        "functions": [{"name": "f", "true_fixed_s": 5}],
        "workflow": [{"id": "t1", "function": "f"}, {"id": "t2", "function": "f", "deps": ["t1"]}]
    });
    let sc = Scenario::from_json(&doc.to_string()).unwrap();
    let log = run(&sc, &RunConfig::from_scenario(&sc)).unwrap();
    assert_eq!(log.makespan, 20.0);
}

#[test]
fn workers_run_tasks_in_parallel() {
    let sc = independent(6, 3);
    let mut cfg = RunConfig::from_scenario(&sc);
    cfg.scheduler = SchedulerKind::Locality;
    let log = run(&sc, &cfg).unwrap();
    assert_eq!(log.tasks_done, 6);
    assert!(log.makespan < 6.0 * 7.0 / 2.0, "makespan {}", log.makespan);
    assert_eq!(log.peak_active(), vec![3, 3]);
}

#[test]
fn empty_workflow_finishes_at_zero() {
    let doc = json!({
        "endpoints": [endpoint_json("ep1", 1, 1.0)],
        "functions": [{"name": "f", "true_fixed_s": 5}]
    });
    let sc = Scenario::from_json(&doc.to_string()).unwrap();
    let log = run(&sc, &RunConfig::from_scenario(&sc)).unwrap();
    assert_eq!(log.tasks_total, 0);
    assert_eq!(log.makespan, 0.0);

    let dir = tempfile::tempdir().unwrap();
    let files = log.emit(dir.path()).unwrap();
    assert_eq!(files.len(), 6);
    for f in files {
        let text = std::fs::read_to_string(&f).unwrap();
        assert_eq!(text.lines().count(), 1, "{}", f.display());
    }
}

#[test]
fn unstaffed_endpoint_is_a_deadlock() {
    let mut ep = endpoint_json("ep1", 4, 1.0);
    ep["initial_nodes"] = json!(0);
    let doc = json!({
        "endpoints": [ep],
        "functions": [{"name": "f", "true_fixed_s": 5}],
        "workflow": [{"id": "t1", "function": "f"}]
    });
    let sc = Scenario::from_json(&doc.to_string()).unwrap();
    let err = run(&sc, &RunConfig::from_scenario(&sc)).unwrap_err();
    assert!(matches!(err, SimError::Deadlock { count: 1, .. }), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn elasticity_grows_an_empty_endpoint() {
    let mut ep = endpoint_json("ep1", 4, 1.0);
    ep["initial_nodes"] = json!(0);
    ep["max_nodes"] = json!(2);
    let workflow: Vec<_> = (0..8).map(|i| json!({"id": format!("t{i}"), "function": "f"})).collect();
    let doc = json!({
        "endpoints": [ep],
        "functions": [{"name": "f", "true_fixed_s": 5}],
        "workflow": workflow,
        "defaults": {"elasticity": true}
    });
    let sc = Scenario::from_json(&doc.to_string()).unwrap();
    let log = run(&sc, &RunConfig::from_scenario(&sc)).unwrap();
    assert_eq!(log.tasks_done, 8);
    assert_eq!(log.active_series(0), vec![0, 8, 0]);
}

#[test]
fn capacity_trace_changes_active_workers() {
    let mut ep = endpoint_json("ep1", 1, 1.0);
    ep["max_nodes"] = json!(4);
    ep["capacity_trace"] = json!([{"time_s": 10, "delta_workers": 2}, {"time_s": 30, "delta_workers": -2}]);
    let workflow: Vec<_> = (0..12).map(|i| json!({"id": format!("t{i}"), "function": "f"})).collect();
    let doc = json!({
        "endpoints": [ep],
        "functions": [{"name": "f", "true_fixed_s": 8}],
        "workflow": workflow
    });
    let sc = Scenario::from_json(&doc.to_string()).unwrap();
    let log = run(&sc, &RunConfig::from_scenario(&sc)).unwrap();
    assert_eq!(log.tasks_done, 12);
    let series = log.active_series(0);
    assert_eq!(series.first(), Some(&1));
    assert!(series.contains(&3), "{series:?}");
    assert!(log.utilization.iter().all(|u| u.busy <= u.active));
}

#[test]
fn hopeless_transfers_fail_tasks_and_strand_descendants() {
    let doc = json!({
        "name": "lossy",
        "endpoints": [endpoint_json("a", 2, 1.0), endpoint_json("b", 2, 1.0)],
        "network": {"default_link": {"bandwidth_MBps": 100.0, "latency_s": 0.1}},
        "functions": [{"name": "f", "true_fixed_s": 2}],
        "workflow": [
            {"id": "t0", "function": "f", "file_deps": [
                {"data_id": "x", "size_MB": 5, "locations": ["a"]},
                {"data_id": "y", "size_MB": 5, "locations": ["b"]}
            ]},
            {"id": "t1", "function": "f", "deps": ["t0"]}
        ]
    });
    let sc = Scenario::from_json(&doc.to_string()).unwrap();
    let mut cfg = RunConfig::from_scenario(&sc);
    cfg.transfer_failure_rate = 1.0;
    cfg.max_transfer_retries = 2;
    let log = run(&sc, &cfg).unwrap();
    assert_eq!(log.tasks_failed, 1);
    assert_eq!(log.tasks_unrunnable, 1);
    assert_eq!(log.transfer_bytes, 0);
    let f = &log.failures[0];
    assert_eq!(f.task, "t0");
    // the first retry goes back through the scheduler and may land on the same endpoint
    let tried: std::collections::BTreeSet<&str> = f.failed_on.iter().map(String::as_str).collect();
    assert_eq!(tried.into_iter().collect::<Vec<_>>(), ["a", "b"]);
    let mut per_job: BTreeMap<usize, u32> = BTreeMap::new();
    for t in &log.transfers {
        *per_job.entry(t.job_id).or_default() += 1;
    }
    assert!(per_job.values().all(|&n| n == 3), "{per_job:?}");
}
