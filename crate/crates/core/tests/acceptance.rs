//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

use std::collections::BTreeMap;
use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use fedflow_core::builtin::{generate, Builtin};
use fedflow_core::dag::{Dag, FunctionDef};
use fedflow_core::metrics::MetricsLog;
use fedflow_core::scenario::Scenario;
use fedflow_core::scheduler::{capacity_partition, compute_priorities, SchedulerKind};
use fedflow_core::sim::{run, RunConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Outcome);

fn check(cond: bool, msg: String) -> Outcome {
    if cond {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn simulate(sc: &Scenario, sched: SchedulerKind, tweak: impl FnOnce(&mut RunConfig)) -> Result<MetricsLog, String> {
    let mut cfg = RunConfig::from_scenario(sc);
    cfg.scheduler = sched;
    tweak(&mut cfg);
    run(sc, &cfg).map_err(|e| format!("{} {sched}: {e}", sc.name))
}

fn builtin(b: Builtin, scale: f64) -> Result<Scenario, String> {
    generate(b, scale).map_err(|e| e.to_string())
}

fn margin(better: f64, worse: f64) -> f64 {
    (worse - better) / worse
}

fn partition_exactness() -> Outcome {
    let example = capacity_partition(8, &[5, 2, 1]).map_err(|e| e.to_string())?;
    if example != [5, 2, 1] {
        return Err(format!("partition(8, [5,2,1]) = {example:?}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let m = rng.gen_range(0..=10_000usize);
        let n = rng.gen_range(1..=16usize);
        let mut caps: Vec<u64> = (0..n).map(|_| rng.gen_range(0..=512)).collect();
        if caps.iter().all(|&c| c == 0) {
            caps[0] = 1;
        }
        let parts = capacity_partition(m, &caps).map_err(|e| e.to_string())?;
        if parts.iter().sum::<usize>() != m {
            return Err(format!("sum mismatch for m={m} caps={caps:?}"));
        }
        let total: u64 = caps.iter().sum();
        for (p, c) in parts.iter().zip(&caps) {
            let quota = m as f64 * *c as f64 / total as f64;
            worst = worst.max((*p as f64 - quota).abs());
        }
    }
    check(worst < 1.0, format!("1000 instances, max |M_i - quota| = {worst:.4}"))
}

/// Longest cost path from `t` to any sink, by plain recursion over an edge list.
fn brute_rank(t: usize, edges: &[(usize, usize)], cost: &[f64]) -> f64 {
    let mut best = 0.0_f64;
    for &(u, v) in edges {
        if u == t {
            best = best.max(brute_rank(v, edges, cost));
        }
    }
    cost[t] + best
}

fn priority_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let n = rng.gen_range(1..=20usize);
        let p = rng.gen_range(0.05..0.35);
        let mut edges = Vec::new();
        for v in 0..n {
            for u in 0..v {
                if rng.gen_bool(p) {
                    edges.push((u, v));
                }
            }
        }
        let d: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..50.0)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..500.0)).collect();
        let mut dag = Dag::new();
        let f = dag.add_function(FunctionDef::new("f")).map_err(|e| e.to_string())?;
        for v in 0..n {
            let deps: Vec<usize> = edges.iter().filter(|e| e.1 == v).map(|e| e.0).collect();
            dag.submit_task(f, &deps, &[], 0).map_err(|e| e.to_string())?;
        }
        let table = compute_priorities(&dag, |t| (d[t], w[t])).map_err(|e| e.to_string())?;
        let cost: Vec<f64> = (0..n).map(|t| d[t] + w[t]).collect();
        for t in 0..n {
            let want = brute_rank(t, &edges, &cost);
            let got = table.get(t);
            let rel = (got - want).abs() / want.abs().max(f64::MIN_POSITIVE);
            worst = worst.max(rel);
        }
    }
    check(worst <= 1e-9, format!("500 DAGs, max relative error {worst:.2e}"))
}

fn determinism() -> Outcome {
    let sc = builtin(Builtin::DrugLike, 0.01)?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for i in 0..2 {
        let log = simulate(&sc, SchedulerKind::Dha, |c| c.seed = 7)?;
        let out = dir.path().join(format!("run{i}"));
        log.emit(&out).map_err(|e| e.to_string())?;
        let read = |name: &str| fs::read(out.join(name)).map_err(|e| e.to_string());
        outputs.push((read("summary.csv")?, read("utilization.csv")?));
    }
    check(
        outputs[0] == outputs[1],
        format!(
            "{} tasks, summary {} B, utilization {} B identical",
            sc.workflow.len(),
            outputs[0].0.len(),
            outputs[0].1.len()
        ),
    )
}

fn static_ordering() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for b in [Builtin::DrugLike, Builtin::MontageLike] {
        let sc = builtin(b, 0.05)?;
        let cap = simulate(&sc, SchedulerKind::Capacity, |_| {})?;
        let loc = simulate(&sc, SchedulerKind::Locality, |_| {})?;
        let dha = simulate(&sc, SchedulerKind::Dha, |_| {})?;
        let vs_cap = margin(dha.makespan, cap.makespan);
        let vs_loc = margin(dha.makespan, loc.makespan);
        ok &= vs_cap >= 0.02 && vs_loc >= 0.02 && cap.transfer_gb() < loc.transfer_gb();
        notes.push(format!(
            "{}: makespan C/L/D {:.0}/{:.0}/{:.0} s (DHA -{:.1}% vs C, -{:.1}% vs L), GB C {:.3} < L {:.3}",
            b.as_str(),
            cap.makespan,
            loc.makespan,
            dha.makespan,
            vs_cap * 100.0,
            vs_loc * 100.0,
            cap.transfer_gb(),
            loc.transfer_gb()
        ));
    }
    check(ok, notes.join("; "))
}

fn dynamic_ordering() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for b in [Builtin::DynamicDrug, Builtin::DynamicMontage] {
        let sc = builtin(b, 0.1)?;
        let cap = simulate(&sc, SchedulerKind::Capacity, |_| {})?;
        let loc = simulate(&sc, SchedulerKind::Locality, |_| {})?;
        let dha = simulate(&sc, SchedulerKind::Dha, |_| {})?;
        let fixed = simulate(&sc, SchedulerKind::Dha, |c| c.reschedule = false)?;
        let loc_gain = margin(loc.makespan, cap.makespan);
        let resched_gain = margin(dha.makespan, fixed.makespan);
        ok &= loc_gain >= 0.20 && resched_gain >= 0.10;
        notes.push(format!(
            "{}: L {:.0} vs C {:.0} s (-{:.1}%), DHA {:.0} vs no-resched {:.0} s (-{:.1}%)",
            b.as_str(),
            loc.makespan,
            cap.makespan,
            loc_gain * 100.0,
            dha.makespan,
            fixed.makespan,
            resched_gain * 100.0
        ));
    }
    check(ok, notes.join("; "))
}

fn federated_vs_single() -> Outcome {
    let sc = builtin(Builtin::DrugLike, 0.05)?;
    let largest = sc
        .endpoints
        .iter()
        .max_by_key(|e| e.workers_per_node * e.initial_nodes)
        .map(|e| e.endpoint_id.clone())
        .ok_or("no endpoints")?;
    let single = sc.restrict_to(&largest).map_err(|e| e.to_string())?;
    let fed = simulate(&sc, SchedulerKind::Dha, |_| {})?;
    let one = simulate(&single, SchedulerKind::Dha, |_| {})?;
    let gain = margin(fed.makespan, one.makespan);
    check(
        gain > 0.0,
        format!(
            "federated {:.0} s vs {largest}-only {:.0} s ({:+.1}%), single transfer {:.3} GB",
            fed.makespan,
            one.makespan,
            -gain * 100.0,
            one.transfer_gb()
        ),
    )
}

fn elasticity_pattern() -> Outcome {
    let sc = builtin(Builtin::Elasticity, 1.0)?;
    let log = simulate(&sc, SchedulerKind::Dha, |_| {})?;
    let want: [&[u32]; 3] = [&[0, 60, 100, 0], &[0, 20, 0, 40, 0], &[0, 20, 0, 20, 0]];
    let got: Vec<Vec<u32>> = (0..3).map(|e| log.active_series(e)).collect();
    let ok = got.iter().zip(want).all(|(g, w)| g.as_slice() == w);
    check(ok, format!("active series {got:?}"))
}

fn scheduler_overhead() -> Outcome {
    let sc = builtin(Builtin::DrugLike, 10_000.0 / 24_001.0)?;
    let mut per = BTreeMap::new();
    for k in [SchedulerKind::Capacity, SchedulerKind::Locality, SchedulerKind::Dha] {
        let log = simulate(&sc, k, |_| {})?;
        per.insert(k, log.overhead.per_decision());
    }
    let cap = per[&SchedulerKind::Capacity];
    let ok = per.values().all(|&v| v < 0.01) && per.values().all(|&v| cap <= v);
    check(
        ok,
        format!(
            "{} tasks, s/decision C {:.2e}, L {:.2e}, D {:.2e}",
            sc.workflow.len(),
            cap,
            per[&SchedulerKind::Locality],
            per[&SchedulerKind::Dha]
        ),
    )
}

fn fault_tolerance() -> Outcome {
    let sc = builtin(Builtin::DrugLike, 0.05)?;
    let endpoints = sc.endpoints.len();
    let log = simulate(&sc, SchedulerKind::Dha, |c| {
        c.transfer_failure_rate = 0.3;
        c.seed = 5;
    })?;
    let mut attempts: BTreeMap<usize, u32> = BTreeMap::new();
    for t in &log.transfers {
        let e = attempts.entry(t.job_id).or_default();
        *e = (*e).max(t.attempt);
    }
    let failed_attempts = log.transfers.iter().filter(|t| !t.success).count();
    let max_retries = attempts.values().copied().max().unwrap_or(0);
    let max_task_attempts = RunConfig::from_scenario(&sc).max_task_attempts;
    let exhausted = log.failures.iter().all(|f| {
        let distinct: std::collections::BTreeSet<&String> = f.failed_on.iter().collect();
        distinct.len() >= endpoints || f.attempts >= max_task_attempts
    });
    let clean = simulate(&sc, SchedulerKind::Dha, |c| c.seed = 5)?;
    let clean_failures = clean.transfers.iter().filter(|t| !t.success).count() + clean.tasks_failed;
    check(
        max_retries <= 3 && exhausted && clean_failures == 0 && log.tasks_done + log.tasks_failed + log.tasks_unrunnable == log.tasks_total,
        format!(
            "rate 0.3: {failed_attempts} failed attempts, max retries used {max_retries}, {} terminal task failures all exhausted={exhausted}; rate 0: {clean_failures} failures",
            log.tasks_failed
        ),
    )
}

fn data_manager_audit() -> Outcome {
    let sc = builtin(Builtin::MontageLike, 0.05)?;
    let cfg = RunConfig::from_scenario(&sc);
    let log = simulate(&sc, SchedulerKind::Dha, |_| {})?;
    let dup = log.transfers.iter().filter(|t| t.dst_had_replica).count();
    // Ends sort before starts at equal times, so a retry that begins the
    // instant its predecessor fails is not double counted.
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
    check(
        dup == 0 && peak as usize <= cfg.transfer_concurrency && !log.transfers.is_empty(),
        format!(
            "{} transfer attempts, {dup} to endpoints holding a replica, peak per-pair concurrency {peak} (cap {})",
            log.transfers.len(),
            cfg.transfer_concurrency
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("capacity partition exactness", Duration::from_secs(1), partition_exactness),
        ("priority oracle equivalence", Duration::from_secs(10), priority_oracle),
        ("determinism", Duration::from_secs(30), determinism),
        ("static capacity ordering", Duration::from_secs(240), static_ordering),
        ("dynamic capacity ordering", Duration::from_secs(120), dynamic_ordering),
        ("federated vs single endpoint", Duration::from_secs(120), federated_vs_single),
        ("elasticity pattern", Duration::from_secs(30), elasticity_pattern),
        ("scheduler overhead", Duration::from_secs(300), scheduler_overhead),
        ("fault tolerance", Duration::from_secs(60), fault_tolerance),
        ("data manager audit", Duration::from_secs(60), data_manager_audit),
    ];
    let mut failed = 0;
    for (name, budget, f) in criteria {
        let start = Instant::now();
        let outcome = f();
        let took = start.elapsed();
        let (ok, detail) = match outcome {
            Ok(d) if took <= budget => (true, d),
            Ok(d) => (false, format!("{d}; over budget")),
            Err(d) => (false, d),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "{} {name} [{:.2}s / {}s]: {detail}",
            if ok { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
