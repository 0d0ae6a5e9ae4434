//! Built-in scenarios shaped after the drug-screening and Montage workflows
//! and an elasticity replay.
//!
//! Per-stage fan-out in the generated graphs is an approximation; only the
//! total task counts at scale 1 are meant to be exact.

use std::str::FromStr;

use crate::dag::ResourceKind;
use crate::scenario::{
    CapacityEntry, ClientSpec, Defaults, EndpointEntry, FileDep, FunctionSpec, NetworkSpec, PairLink, Scenario,
    ScenarioError, TaskEntry,
};
use crate::scheduler::SchedulerKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Builtin {
    DrugLike,
    MontageLike,
    Elasticity,
    DynamicDrug,
    DynamicMontage,
}

impl Builtin {
    pub const ALL: [Builtin; 5] = [
        Builtin::DrugLike,
        Builtin::MontageLike,
        Builtin::Elasticity,
        Builtin::DynamicDrug,
        Builtin::DynamicMontage,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Builtin::DrugLike => "drug-like",
            Builtin::MontageLike => "montage-like",
            Builtin::Elasticity => "elasticity",
            Builtin::DynamicDrug => "dynamic-drug",
            Builtin::DynamicMontage => "dynamic-montage",
        }
    }
}

impl FromStr for Builtin {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Builtin::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| ScenarioError::UnknownBuiltin(s.to_string()))
    }
}

/// Builds a builtin scenario with task and worker counts multiplied by
/// `scale`, which must lie in (0, 1].
pub fn generate(name: Builtin, scale: f64) -> Result<Scenario, ScenarioError> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(ScenarioError::Invalid {
            field: "scale",
            entry: name.as_str().to_string(),
            reason: format!("{scale} is outside (0, 1]"),
        });
    }
    let s = match name {
        Builtin::DrugLike => drug(scale, scale, [2000, 384, 48, 52], &[]),
        // half the chains of the static case
        Builtin::DynamicDrug => drug(scale * 0.5, scale, [400, 600, 48, 52], &[(1, 120.0, 600), (0, 540.0, -280)]),
        Builtin::MontageLike => montage(scale, [120, 240, 48, 52], &[]),
        Builtin::DynamicMontage => montage(scale, [40, 240, 48, 52], &[(0, 120.0, 80), (1, 300.0, -168)]),
        Builtin::Elasticity => elasticity(),
    };
    s.validate()?;
    Ok(s)
}

fn workers(n: u32, scale: f64) -> u32 {
    ((n as f64 * scale).round() as u32).max(1)
}

fn scaled_delta(d: i64, scale: f64) -> i64 {
    let v = (d as f64 * scale).round() as i64;
    if v == 0 {
        d.signum()
    } else {
        v
    }
}

// (id, GHz, GB RAM, perf factor)
const SITES: [(&str, f64, f64, f64); 4] = [
    ("taiyi", 2.4, 192.0, 1.0),
    ("qiming", 2.6, 64.0, 1.5),
    ("dept", 2.4, 770.0, 1.05),
    ("lab", 2.2, 128.0, 1.2),
];

/// Four endpoints, one worker per node so capacity moves one worker at a time.
fn sites(base: [u32; 4], scale: f64, trace: &[(usize, f64, i64)]) -> Vec<EndpointEntry> {
    SITES
        .iter()
        .enumerate()
        .map(|(e, &(id, ghz, ram, perf))| {
            let initial = workers(base[e], scale);
            let mut cur = initial as i64;
            let mut peak = cur;
            let capacity_trace: Vec<CapacityEntry> = trace
                .iter()
                .filter(|t| t.0 == e)
                .map(|&(_, time_s, d)| {
                    let delta_workers = scaled_delta(d, scale);
                    cur += delta_workers;
                    peak = peak.max(cur);
                    CapacityEntry { time_s, delta_workers }
                })
                .collect();
            EndpointEntry {
                endpoint_id: id.to_string(),
                cores_per_worker: 1,
                cpu_freq: ghz,
                ram,
                workers_per_node: 1,
                max_nodes: peak as u32,
                initial_nodes: initial,
                idle_timeout: 30.0,
                perf_factor: perf,
                capacity_trace,
            }
        })
        .collect()
}

/// Full mesh with WAN-like links: 80 to 120 MB/s and 2 to 5 s of per-transfer
/// setup latency.
fn wan(endpoints: &[EndpointEntry]) -> NetworkSpec {
    let mut links = Vec::new();
    for (s, a) in endpoints.iter().enumerate() {
        for (d, b) in endpoints.iter().enumerate() {
            if s == d {
                continue;
            }
            links.push(PairLink {
                src: a.endpoint_id.clone(),
                dst: b.endpoint_id.clone(),
                bandwidth_mbps: 80.0 + 10.0 * ((s * 3 + d * 5) % 5) as f64,
                latency_s: 2.0 + ((s + d) % 4) as f64,
                concurrency_penalty: 1.0,
            });
        }
    }
    NetworkSpec {
        default_link: None,
        links,
        client: ClientSpec { dispatch_latency_s: 0.2 },
    }
}

fn function(name: &str, fixed: f64, rate: f64, output_ratio: f64, noise: f64) -> FunctionSpec {
    FunctionSpec {
        name: name.to_string(),
        resource_kind: ResourceKind::Cpu,
        true_fixed_s: fixed,
        true_rate_s_per_mb: rate,
        output_ratio,
        noise,
        cost_hint: None,
    }
}

fn task(id: String, function: &str, deps: Vec<String>) -> TaskEntry {
    TaskEntry {
        id,
        function: function.to_string(),
        deps,
        file_deps: Vec::new(),
        inline_args_b: 0,
        submit_time_s: 0.0,
        endpoint: None,
    }
}

fn run_defaults() -> Defaults {
    Defaults {
        poll_interval_s: 1.0,
        batch_size: 50,
        ..Defaults::default()
    }
}

/// Independent four-stage docking chains joined by one aggregation task.
/// At scale 1: 6000 chains, 24001 tasks.
fn drug(task_scale: f64, worker_scale: f64, base: [u32; 4], trace: &[(usize, f64, i64)]) -> Scenario {
    let chains = ((6000.0 * task_scale).round() as usize).max(1);
    let endpoints = sites(base, worker_scale, trace);
    let network = wan(&endpoints);
    let functions = vec![
        function("prepare", 28.0, 0.1, 2.0, 0.1),
        function("dock", 120.0, 0.0, 0.5, 0.1),
        function("rescore", 250.0, 0.0, 0.5, 0.1),
        function("simulate", 480.0, 0.0, 0.1, 0.1),
        function("aggregate", 60.0, 0.0, 0.0, 0.0),
    ];
    let stages = ["prepare", "dock", "rescore", "simulate"];
    let mut workflow = Vec::with_capacity(chains * 4 + 1);
    for c in 0..chains {
        for (k, stage) in stages.iter().enumerate() {
            let deps = if k == 0 { vec![] } else { vec![format!("{}-{c}", stages[k - 1])] };
            let mut t = task(format!("{stage}-{c}"), stage, deps);
            if k == 0 {
                t.file_deps.push(FileDep {
                    data_id: format!("ligands-{c}"),
                    size_mb: 20.0,
                    locations: vec!["taiyi".into()],
                });
            }
            workflow.push(t);
        }
    }
    workflow.push(task(
        "aggregate".into(),
        "aggregate",
        (0..chains).map(|c| format!("simulate-{c}")).collect(),
    ));
    Scenario {
        name: if trace.is_empty() { "drug-like" } else { "dynamic-drug" }.into(),
        endpoints,
        network,
        functions,
        workflow,
        defaults: run_defaults(),
    }
}

/// Mosaic pipeline: project, pairwise diff-fit, global fit, background
/// correction, table and co-add. At scale 1: n = 2834 images, 11340 tasks.
fn montage(scale: f64, base: [u32; 4], trace: &[(usize, f64, i64)]) -> Scenario {
    let n = ((2834.0 * scale).round() as usize).max(3);
    let endpoints = sites(base, scale, trace);
    let network = wan(&endpoints);
    let functions = vec![
        function("mProject", 8.0, 0.1, 1.0, 0.1),
        function("mDiffFit", 3.0, 0.0, 0.01, 0.1),
        function("mConcatFit", 20.0, 0.0, 0.1, 0.0),
        function("mBgModel", 30.0, 0.0, 1.0, 0.0),
        function("mBackground", 8.0, 0.0, 1.0, 0.1),
        function("mImgtbl", 10.0, 0.0, 0.0005, 0.0),
        function("mAdd", 60.0, 0.0, 0.0, 0.0),
    ];
    let mut workflow = Vec::with_capacity(4 * n + 4);
    for i in 0..n {
        let mut t = task(format!("mProject-{i}"), "mProject", vec![]);
        t.file_deps.push(FileDep {
            data_id: format!("raw-{i}"),
            size_mb: 20.0,
            locations: vec!["qiming".into()],
        });
        workflow.push(t);
    }
    for i in 0..n {
        for (k, off) in [1usize, 2].into_iter().enumerate() {
            let j = (i + off) % n;
            workflow.push(task(
                format!("mDiffFit-{}", 2 * i + k),
                "mDiffFit",
                vec![format!("mProject-{i}"), format!("mProject-{j}")],
            ));
        }
    }
    workflow.push(task(
        "mConcatFit".into(),
        "mConcatFit",
        (0..2 * n).map(|i| format!("mDiffFit-{i}")).collect(),
    ));
    workflow.push(task("mBgModel".into(), "mBgModel", vec!["mConcatFit".into()]));
    for i in 0..n {
        workflow.push(task(
            format!("mBackground-{i}"),
            "mBackground",
            vec![format!("mProject-{i}"), "mBgModel".into()],
        ));
    }
    let backgrounds: Vec<String> = (0..n).map(|i| format!("mBackground-{i}")).collect();
    workflow.push(task("mImgtbl".into(), "mImgtbl", backgrounds.clone()));
    let mut add_deps = backgrounds;
    add_deps.push("mImgtbl".into());
    workflow.push(task("mAdd".into(), "mAdd", add_deps));
    Scenario {
        name: if trace.is_empty() { "montage-like" } else { "dynamic-montage" }.into(),
        endpoints,
        network,
        functions,
        workflow,
        // Many small intermediate files; a wider stream pool per pair.
        defaults: Defaults {
            transfer_concurrency: 8,
            ..run_defaults()
        },
    }
}

/// Two bursts of pinned tasks onto three elastic endpoints of 20-worker
/// nodes (at most 100, 40 and 20 workers), all starting with no nodes.
fn elasticity() -> Scenario {
    let endpoints: Vec<EndpointEntry> = [("ep1", 5u32), ("ep2", 2), ("ep3", 1)]
        .iter()
        .map(|&(id, max_nodes)| EndpointEntry {
            endpoint_id: id.to_string(),
            cores_per_worker: 1,
            cpu_freq: 2.4,
            ram: 128.0,
            workers_per_node: 20,
            max_nodes,
            initial_nodes: 0,
            idle_timeout: 30.0,
            perf_factor: 1.0,
            capacity_trace: vec![],
        })
        .collect();
    let network = wan(&endpoints);
    let functions = vec![
        function("long", 30.0, 0.0, 0.0, 0.0),
        function("medium", 15.0, 0.0, 0.0, 0.0),
        function("short", 10.0, 0.0, 0.0, 0.0),
    ];
    let mut workflow = Vec::new();
    let bursts = [(10.0, [50usize, 20, 10]), (70.0, [200, 80, 40])];
    for (b, (time, counts)) in bursts.iter().enumerate() {
        for (e, (&count, f)) in counts.iter().zip(["long", "medium", "short"]).enumerate() {
            for i in 0..count {
                let mut t = task(format!("b{b}-ep{}-{i}", e + 1), f, vec![]);
                t.submit_time_s = *time;
                t.endpoint = Some(format!("ep{}", e + 1));
                workflow.push(t);
            }
        }
    }
    Scenario {
        name: "elasticity".into(),
        endpoints,
        network,
        functions,
        workflow,
        defaults: Defaults {
            scheduler: SchedulerKind::Dha,
            elasticity: true,
            ..run_defaults()
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_scale_counts() {
        assert_eq!(generate(Builtin::DrugLike, 1.0).unwrap().workflow.len(), 24001);
        assert_eq!(generate(Builtin::MontageLike, 1.0).unwrap().workflow.len(), 11340);
    }

    #[test]
    fn small_drug_keeps_stage_ratios() {
        let s = generate(Builtin::DrugLike, 0.01).unwrap();
        assert_eq!(s.workflow.len(), 241);
        for stage in ["prepare", "dock", "rescore", "simulate"] {
            assert_eq!(s.workflow.iter().filter(|t| t.function == stage).count(), 60);
        }
    }

    #[test]
    fn every_builtin_validates_at_every_scale() {
        for b in Builtin::ALL {
            for scale in [1.0, 0.1, 0.01] {
                let s = generate(b, scale).unwrap();
                Scenario::from_json(&s.to_json()).unwrap();
            }
        }
    }

    #[test]
    fn dynamic_traces_scale() {
        let s = generate(Builtin::DynamicDrug, 0.1).unwrap();
        assert_eq!(s.endpoints[1].capacity_trace[0].delta_workers, 60);
        assert_eq!(s.endpoints[0].capacity_trace[0].delta_workers, -28);
        assert_eq!(s.endpoints[0].initial_nodes, 40);
    }

    #[test]
    fn bad_scale_and_name() {
        assert!(generate(Builtin::DrugLike, 0.0).is_err());
        assert!(generate(Builtin::DrugLike, 1.5).is_err());
        assert!("nope".parse::<Builtin>().is_err());
    }
}
